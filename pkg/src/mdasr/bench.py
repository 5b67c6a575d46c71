"""Benchmark harness: WER / NFE / RTF-analog reports, threshold sweeps, ablations.

The RTF analog divides decode wall time by synthetic audio duration; absolute
values are meaningless outside this corpus, so reports are read as ratios
between systems. Timing runs are single-threaded by contract; accuracy runs
may fan out across utterances.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash
from .ctc import compute_prior
from .denoiser import AsrModel
from .metrics import corpus_wer
from .scheduler import ScheduleTrace, SchedulerConfig, run, vanilla_decode
from .synthdata import SyntheticUtterance

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

CSV_HEADER = ["system", "wer", "mean_nfe", "rtf_analog", "mean_steps", "n_utts"]

KNOWN_SYSTEMS = ("ctc-prior-only", "vanilla-diffusion", "adaptive", "ar-baseline")


class BenchError(RuntimeError):
    pass


@dataclass
class EvalRow:
    system: str
    wer: float  # percent
    mean_nfe: float
    rtf_analog: float
    mean_steps: float
    n_utts: int


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def row(self, system: str) -> EvalRow:
        for r in self.rows:
            if r.system == system:
                return r
        raise KeyError(system)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow(
                    [r.system, f"{r.wer:.4f}", f"{r.mean_nfe:.4f}", f"{r.rtf_analog:.6f}", f"{r.mean_steps:.4f}", r.n_utts]
                )


def _single_thread_ctx():
    if threadpool_limits is not None:
        return threadpool_limits(limits=1)
    return nullcontext()


def _decode_one(system: str, model: AsrModel, ar_model: AsrModel | None, utt: SyntheticUtterance, scfg: SchedulerConfig):
    """Returns (hyp, trace). Wall time covers acoustic features, prior, decode."""
    t0 = time.perf_counter_ns()
    if system == "ar-baseline":
        ac = ar_model.acoustic(utt.frames, utt.duration_s)
        ids, nfe = ar_model.ar_greedy_decode(ac, ar_model.cfg.max_answer_len)
        trace = ScheduleTrace(utt_id=utt.utt_id, nfe=nfe, initial_len=0)
        trace.transcript = ar_model.vocab.decode(ids)
        trace.wall_ns = time.perf_counter_ns() - t0
        return trace.transcript, trace
    ac = model.acoustic(utt.frames, utt.duration_s)
    if system == "ctc-prior-only":
        prior = compute_prior(model, utt.frames)
        trace = ScheduleTrace(utt_id=utt.utt_id, nfe=0, initial_len=0)
        trace.transcript = model.vocab.decode(prior.tokens)
        trace.wall_ns = time.perf_counter_ns() - t0
        return trace.transcript, trace
    if system == "vanilla-diffusion":
        hyp, trace = vanilla_decode(model, ac, scfg, utt_id=utt.utt_id)
        trace.wall_ns = time.perf_counter_ns() - t0
        return hyp, trace
    if system == "adaptive":
        prior = compute_prior(model, utt.frames) if scfg.use_prior else None
        hyp, trace = run(model, ac, prior, scfg, utt_id=utt.utt_id)
        trace.wall_ns = time.perf_counter_ns() - t0
        return hyp, trace
    raise BenchError(f"unknown system {system!r}")


def decode_system(
    system: str,
    model: AsrModel | None,
    ar_model: AsrModel | None,
    testset: list[SyntheticUtterance],
    scfg: SchedulerConfig,
    workers: int = 1,
    timing: bool = True,
) -> tuple[EvalRow, list[ScheduleTrace]]:
    """Decode a whole split under one system and summarize it."""
    if system == "ar-baseline":
        if ar_model is None:
            raise BenchError("missing checkpoint for system 'ar-baseline'")
    elif model is None:
        raise BenchError(f"missing checkpoint for system {system!r}")
    if timing or workers <= 1:
        with _single_thread_ctx() if timing else nullcontext():
            results = [_decode_one(system, model, ar_model, u, scfg) for u in testset]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda u: _decode_one(system, model, ar_model, u, scfg), testset))
    traces = [t for _, t in results]
    pairs = [(hyp, u.transcript) for (hyp, _), u in zip(results, testset)]
    total_wall_s = sum(t.wall_ns for t in traces) / 1e9
    total_dur = sum(u.duration_s for u in testset)
    row = EvalRow(
        system=system,
        wer=100.0 * corpus_wer(pairs),
        mean_nfe=float(np.mean([t.nfe for t in traces])),
        rtf_analog=total_wall_s / total_dur,
        mean_steps=float(np.mean([t.steps for t in traces])),
        n_utts=len(testset),
    )
    return row, traces


def write_traces(path: str | Path, traces: list[ScheduleTrace], header: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps({"type": "header", **header}) + "\n")
        for t in traces:
            f.write(json.dumps(t.to_record()) + "\n")


def _write_meta(path: Path, cfg: RunConfig, extra: dict) -> None:
    meta = {"config_hash": config_hash(cfg), **extra}
    path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))


def bench(
    systems: list[str],
    model: AsrModel | None,
    ar_model: AsrModel | None,
    testset: list[SyntheticUtterance],
    cfg: RunConfig,
    outdir: str | Path | None = None,
    workers: int = 1,
    timing: bool = True,
) -> EvalReport:
    """Run the requested systems over a split; emit CSV + per-system traces."""
    for s in systems:
        if s not in KNOWN_SYSTEMS:
            raise BenchError(f"unknown system {s!r}; known: {', '.join(KNOWN_SYSTEMS)}")
    scfg = cfg.scheduler_config()
    rows = []
    all_traces = {}
    for s in systems:
        row, traces = decode_system(s, model, ar_model, testset, scfg, workers=workers, timing=timing)
        rows.append(row)
        all_traces[s] = traces
    report = EvalReport(rows)
    if outdir is not None:
        outdir = Path(outdir)
        csv_path = outdir / "bench.csv"
        report.write_csv(csv_path)
        _write_meta(csv_path, cfg, {"systems": systems})
        for s, traces in all_traces.items():
            write_traces(
                outdir / f"traces_{s}.jsonl",
                traces,
                {"config_hash": config_hash(cfg), "system": s, "flags": _flag_dict(scfg)},
            )
    return report


def sweep_tau(
    taus: list[float],
    model: AsrModel,
    testset: list[SyntheticUtterance],
    cfg: RunConfig,
    outdir: str | Path | None = None,
    workers: int = 1,
    timing: bool = True,
) -> list[tuple[float, EvalRow]]:
    """One adaptive bench row per threshold; CSV ready for plotting."""
    out = []
    for tau in taus:
        scfg = cfg.scheduler_config(tau=tau)
        row, _ = decode_system("adaptive", model, None, testset, scfg, workers=workers, timing=timing)
        out.append((tau, row))
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / "sweep_tau.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tau"] + CSV_HEADER[1:])
            for tau, r in out:
                w.writerow([tau, f"{r.wer:.4f}", f"{r.mean_nfe:.4f}", f"{r.rtf_analog:.6f}", f"{r.mean_steps:.4f}", r.n_utts])
        _write_meta(path, cfg, {"taus": taus})
    return out


ABLATION_ROWS = ["full", "w/o prior", "w/o pruning", "w/o prompt-region", "vanilla", "vanilla+confidence"]


def ablate(
    model: AsrModel,
    noprompt_model: AsrModel | None,
    testset: list[SyntheticUtterance],
    cfg: RunConfig,
    outdir: str | Path | None = None,
    workers: int = 1,
    timing: bool = True,
) -> EvalReport:
    """Component knock-outs mirroring the ablation table structure."""
    variants: list[tuple[str, AsrModel | None, str, dict]] = [
        ("full", model, "adaptive", {}),
        ("w/o prior", model, "adaptive", {"use_prior": False}),
        ("w/o pruning", model, "adaptive", {"use_pruning": False}),
        ("w/o prompt-region", noprompt_model, "adaptive", {}),
        ("vanilla", model, "vanilla-diffusion", {}),
        ("vanilla+confidence", model, "adaptive", {"use_prior": False, "use_pruning": False, "use_cache": False}),
    ]
    rows = []
    for name, m, system, overrides in variants:
        if m is None:
            raise BenchError(f"missing checkpoint for ablation row {name!r}")
        scfg = cfg.scheduler_config(**overrides)
        row, _ = decode_system(system, m, None, testset, scfg, workers=workers, timing=timing)
        row.system = name
        rows.append(row)
    report = EvalReport(rows)
    if outdir is not None:
        outdir = Path(outdir)
        path = outdir / "ablation.csv"
        report.write_csv(path)
        _write_meta(path, cfg, {"rows": ABLATION_ROWS})
    return report


def _flag_dict(scfg: SchedulerConfig) -> dict:
    return {
        "tau": scfg.tau,
        "gamma": scfg.gamma,
        "use_prior": scfg.use_prior,
        "use_pruning": scfg.use_pruning,
        "use_cache": scfg.use_cache,
        "fixed_len": scfg.fixed_len,
        "vanilla_steps": scfg.vanilla_steps,
    }
