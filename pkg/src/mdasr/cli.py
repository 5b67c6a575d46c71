"""Command-line entry point: data generation, training, decoding, benchmarks.

Every failure exits nonzero with a single machine-parseable stderr line:
``mdasr-error: <category>: <message>`` where category is one of
config | data | checkpoint | decode | internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import bench as bench_mod
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, config_hash, load_config, resolved_dict
from .ctc import compute_prior
from .scheduler import run as adaptive_run
from .scheduler import vanilla_decode
from .synthdata import load_jsonl, write_corpus
from .training import save_model, load_model, train_ctc_head, train_denoiser


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _fail(category: str, message: str) -> "CliError":
    return CliError(category, message)


def _load_cfg(path: str | None) -> RunConfig:
    try:
        return load_config(path)
    except (ConfigError, FileNotFoundError, OSError) as e:
        raise _fail("config", str(e)) from e


def _load_split(data_dir: str, split: str):
    p = Path(data_dir) / f"{split}.jsonl"
    if not p.exists():
        raise _fail("data", f"missing dataset file {p}")
    return load_jsonl(p)


def _load_model(path: str):
    try:
        return load_model(path)
    except FileNotFoundError as e:
        raise _fail("checkpoint", str(e)) from e
    except CheckpointError as e:
        raise _fail("checkpoint", str(e)) from e


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config)
    paths = write_corpus(cfg.corpus_spec(), args.out)
    meta = {"config_hash": config_hash(cfg), "resolved": resolved_dict(cfg)}
    (Path(args.out) / "corpus.meta.json").write_text(json.dumps(meta, indent=2))
    for split, p in paths.items():
        print(f"wrote {split}: {p}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    train_utts = _load_split(args.data, "train")
    dev_utts = _load_split(args.data, "dev")
    log_path = Path(args.out).with_suffix(".metrics.jsonl")
    if args.which == "ctc":
        if not args.init_from:
            raise _fail("config", "training the ctc head requires --init-from <diffusion checkpoint>")
        model, header = _load_model(args.init_from)
        if header.get("config_hash") != config_hash(cfg):
            raise _fail("config", "config hash mismatch between --init-from checkpoint and --config")
        report = train_ctc_head(cfg, model, train_utts, dev_utts)
        save_model(model, args.out, cfg, extra={"ctc_report": report})
        print(f"dev prior WER: {report['dev_prior_wer']:.4f} (skipped {report['skipped_infeasible']})")
    else:
        causal = args.which == "ar"
        if args.init_from:
            _, header = _load_model(args.init_from)
            if header.get("config_hash") != config_hash(cfg):
                raise _fail("config", "config hash mismatch on resume; refusing")
        model, stats = train_denoiser(
            cfg,
            train_utts,
            dev_utts,
            causal=causal,
            prompt_region=False if args.no_prompt_region else None,
            log_path=log_path,
        )
        save_model(model, args.out, cfg)
        if stats:
            print(f"final dev WER: {stats[-1].dev_wer:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_decode(args) -> int:
    cfg = _load_cfg(args.config)
    model, header = _load_model(args.checkpoint)
    utts = load_jsonl(args.data) if args.data.endswith(".jsonl") else _load_split(args.data, "test")
    if args.utt_id:
        utts = [u for u in utts if u.utt_id == args.utt_id]
        if not utts:
            raise _fail("data", f"utterance id {args.utt_id!r} not found")
    scfg = cfg.scheduler_config(
        tau=args.tau if args.tau is not None else cfg.tau,
        gamma=args.gamma if args.gamma is not None else cfg.gamma,
        use_prior=not args.no_prior,
        use_pruning=not args.no_prune,
        use_cache=not args.no_cache,
    )
    flags = {
        "tau": scfg.tau,
        "gamma": scfg.gamma,
        "no_prior": args.no_prior,
        "no_prune": args.no_prune,
        "no_cache": args.no_cache,
        "vanilla": args.vanilla,
        "workers": args.workers,
    }
    traces = []
    try:
        for u in utts:
            ac = model.acoustic(u.frames, u.duration_s)
            t0 = time.perf_counter_ns()
            if args.vanilla:
                hyp, trace = vanilla_decode(model, ac, scfg, utt_id=u.utt_id)
            else:
                prior = compute_prior(model, u.frames) if scfg.use_prior else None
                hyp, trace = adaptive_run(model, ac, prior, scfg, utt_id=u.utt_id)
            trace.wall_ns = time.perf_counter_ns() - t0
            traces.append(trace)
            print(f"{u.utt_id}\t{hyp}")
    except ValueError as e:
        raise _fail("decode", str(e)) from e
    if args.trace:
        bench_mod.write_traces(args.trace, traces, {"config_hash": config_hash(cfg), "flags": flags})
        print(f"trace: {args.trace}", file=sys.stderr)
    return 0


def _run_dir(base: str, cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    d = Path(base) / f"run-{stamp}-seed{cfg.seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_bench(args) -> int:
    cfg = _load_cfg(args.config)
    testset = _load_split(args.data, args.split)
    model = ar_model = None
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
    if args.ar_checkpoint:
        ar_model, _ = _load_model(args.ar_checkpoint)
    systems = args.systems.split(",") if args.systems else list(bench_mod.KNOWN_SYSTEMS)
    outdir = _run_dir(args.out, cfg)
    try:
        report = bench_mod.bench(
            systems, model, ar_model, testset, cfg, outdir=outdir, workers=args.workers, timing=not args.no_timing
        )
    except bench_mod.BenchError as e:
        raise _fail("checkpoint", str(e)) from e
    for r in report.rows:
        print(
            f"{r.system}: wer={r.wer:.2f}% nfe={r.mean_nfe:.2f} rtf={r.rtf_analog:.4f} steps={r.mean_steps:.2f}"
        )
    print(f"artifacts: {outdir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args.config)
    testset = _load_split(args.data, args.split)
    model, _ = _load_model(args.checkpoint)
    taus = [float(x) for x in args.taus.split(",")]
    outdir = _run_dir(args.out, cfg)
    rows = bench_mod.sweep_tau(taus, model, testset, cfg, outdir=outdir, workers=args.workers)
    for tau, r in rows:
        print(f"tau={tau}: wer={r.wer:.2f}% nfe={r.mean_nfe:.2f} rtf={r.rtf_analog:.4f}")
    print(f"artifacts: {outdir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    testset = _load_split(args.data, args.split)
    model, _ = _load_model(args.checkpoint)
    noprompt = None
    if args.noprompt_checkpoint:
        noprompt, _ = _load_model(args.noprompt_checkpoint)
    outdir = _run_dir(args.out, cfg)
    try:
        report = bench_mod.ablate(model, noprompt, testset, cfg, outdir=outdir, workers=args.workers)
    except bench_mod.BenchError as e:
        raise _fail("checkpoint", str(e)) from e
    for r in report.rows:
        print(f"{r.system}: wer={r.wer:.2f}% nfe={r.mean_nfe:.2f} rtf={r.rtf_analog:.4f}")
    print(f"artifacts: {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdasr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--which", choices=["diffusion", "ctc", "ar"], default="diffusion")
    t.add_argument("--out", required=True)
    t.add_argument("--init-from", default=None, help="checkpoint to extend (ctc) or resume check")
    t.add_argument("--no-prompt-region", action="store_true", help="train the prompt-ablated variant")
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("decode", help="decode a dataset or a single utterance")
    d.add_argument("--config", default=None)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True, help="dataset dir or a .jsonl file")
    d.add_argument("--utt-id", default=None)
    d.add_argument("--tau", type=float, default=None)
    d.add_argument("--gamma", type=int, default=None)
    d.add_argument("--no-prior", action="store_true")
    d.add_argument("--no-prune", action="store_true")
    d.add_argument("--no-cache", action="store_true")
    d.add_argument("--vanilla", action="store_true")
    d.add_argument("--trace", default=None, help="write per-utterance JSONL trace here")
    d.add_argument("--workers", type=int, default=1)
    d.set_defaults(fn=cmd_decode)

    b = sub.add_parser("bench", help="benchmark systems on a split")
    b.add_argument("--config", default=None)
    b.add_argument("--data", required=True)
    b.add_argument("--split", default="test")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--ar-checkpoint", default=None)
    b.add_argument("--systems", default=None, help="comma-separated subset of " + ",".join(bench_mod.KNOWN_SYSTEMS))
    b.add_argument("--out", default="runs")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--no-timing", action="store_true", help="skip single-thread pinning")
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("sweep", help="confidence-threshold sweep")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--taus", default="0.6,0.7,0.8,0.9,0.95")
    s.add_argument("--out", default="runs")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)

    a = sub.add_parser("ablate", help="component ablation table")
    a.add_argument("--config", default=None)
    a.add_argument("--data", required=True)
    a.add_argument("--split", default="test")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--noprompt-checkpoint", default=None)
    a.add_argument("--out", default="runs")
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"mdasr-error: {e.category}: {e}", file=sys.stderr)
        return 2 if e.category == "config" else 1
    except Exception as e:  # pragma: no cover - safety net
        print(f"mdasr-error: internal: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
