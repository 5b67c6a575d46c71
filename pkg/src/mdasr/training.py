"""Training loops for the diffusion denoiser, the AR baseline, and the CTC prior.

Single-threaded and deterministic under a fixed seed: data order, noise
draws, and parameter init all come from seeded generators. Learning rate
ramps linearly over the warmup then follows a cosine decay.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import RunConfig, config_hash, resolved_dict
from .ctc import (
    CtcInfeasibleError,
    ctc_head_forward,
    ctc_loss_tensor,
    greedy_decode,
    init_ctc_params,
    min_frames,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import AsrModel, DenoiserConfig, pad_answer
from .encoder import adapted_len, encode
from .metrics import corpus_wer
from .scheduler import SchedulerConfig, vanilla_decode
from .synthdata import SyntheticUtterance
from .vocab import Vocab


class DivergenceError(RuntimeError):
    """Training loss went non-finite."""


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_wer: float
    wall_s: float

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "dev_loss": self.dev_loss,
            "dev_wer": self.dev_wer,
            "wall_s": self.wall_s,
        }


def lr_at(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup to the peak, then cosine decay toward zero."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    if total <= warmup:
        return peak
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def _answer_targets(utts: list[SyntheticUtterance], vocab: Vocab, width: int) -> list[np.ndarray]:
    return [pad_answer(vocab.encode(u.transcript), width, vocab.pad_id) for u in utts]


def eval_dev_loss(model: AsrModel, dev: list[SyntheticUtterance], seed: int, causal: bool = False) -> float:
    """Mean objective over dev with a fixed draw stream (comparable across calls)."""
    vocab = model.vocab
    width = model.cfg.max_answer_len
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xDE7))))
    losses = []
    for u in dev:
        x0 = pad_answer(vocab.encode(u.transcript), width, vocab.pad_id)
        ac = model.acoustic_tensor(u.frames)
        loss = model.ar_loss(x0, ac) if causal else model.diffusion_loss(x0, ac, rng)
        if loss is not None:
            losses.append(loss.item())
    return float(np.mean(losses)) if losses else 0.0


def eval_dev_wer(model: AsrModel, dev: list[SyntheticUtterance], max_utts: int = 32, steps: int = 8) -> float:
    """Cheap per-epoch progress probe: vanilla decode on a dev subsample."""
    if model.cfg.causal:
        pairs = []
        for u in dev[:max_utts]:
            ac = model.acoustic(u.frames, u.duration_s)
            ids, _ = model.ar_greedy_decode(ac, model.cfg.max_answer_len)
            pairs.append((model.vocab.decode(ids), u.transcript))
        return corpus_wer(pairs)
    cfg = SchedulerConfig(fixed_len=model.cfg.max_answer_len, vanilla_steps=steps)
    pairs = []
    for u in dev[:max_utts]:
        ac = model.acoustic(u.frames, u.duration_s)
        hyp, _ = vanilla_decode(model, ac, cfg)
        pairs.append((hyp, u.transcript))
    return corpus_wer(pairs)


def train_denoiser(
    cfg: RunConfig,
    train: list[SyntheticUtterance],
    dev: list[SyntheticUtterance],
    causal: bool = False,
    prompt_region: bool | None = None,
    log_path: str | Path | None = None,
    epochs: int | None = None,
    quiet: bool = False,
) -> tuple[AsrModel, list[EpochStats]]:
    """End-to-end training of encoder + adapter + denoiser (or AR baseline)."""
    vocab = Vocab()
    model = AsrModel(cfg.denoiser_config(causal=causal, prompt_region=prompt_region), vocab)
    model.init_params(cfg.seed)
    epochs = cfg.ar_epochs if causal and epochs is None else (cfg.epochs if epochs is None else epochs)
    width = model.cfg.max_answer_len
    targets = _answer_targets(train, vocab, width)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0x7124, int(causal)))))
    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    stats: list[EpochStats] = []
    log_f = open(log_path, "w") if log_path else None
    try:
        opt_step = 0
        for epoch in range(epochs):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            epoch_losses = []
            for b0 in range(0, n, cfg.batch_size):
                batch = order[b0 : b0 + cfg.batch_size]
                model.store.zero_grad()
                losses = []
                for i in batch:
                    ac = model.acoustic_tensor(train[i].frames)
                    if causal:
                        loss = model.ar_loss(targets[i], ac)
                    else:
                        loss = model.diffusion_loss(targets[i], ac, rng)
                    if loss is not None:
                        losses.append(loss)
                if not losses:
                    continue
                total = losses[0]
                for l in losses[1:]:
                    total = nx.add(total, l)
                total = nx.scale(total, 1.0 / len(losses))
                if not np.isfinite(total.data):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch} batch {b0 // cfg.batch_size}"
                    )
                nx.backward(total)
                lr = lr_at(opt_step, cfg.lr_peak, cfg.warmup_steps, total_steps)
                nx.adam_step(model.store, lr, weight_decay=cfg.weight_decay)
                opt_step += 1
                epoch_losses.append(float(total.data))
            dev_loss = eval_dev_loss(model, dev, cfg.seed, causal=causal)
            dev_wer = eval_dev_wer(model, dev)
            st = EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                dev_loss=dev_loss,
                dev_wer=dev_wer,
                wall_s=time.perf_counter() - t0,
            )
            stats.append(st)
            if log_f:
                log_f.write(json.dumps(st.to_record()) + "\n")
                log_f.flush()
            if not quiet:
                print(
                    f"epoch {epoch}: train_loss={st.train_loss:.4f} "
                    f"dev_loss={st.dev_loss:.4f} dev_wer={st.dev_wer:.4f} ({st.wall_s:.1f}s)"
                )
    finally:
        if log_f:
            log_f.close()
    return model, stats


def train_ctc_head(
    cfg: RunConfig,
    model: AsrModel,
    train: list[SyntheticUtterance],
    dev: list[SyntheticUtterance],
    epochs: int | None = None,
    quiet: bool = False,
) -> dict:
    """Train the CTC branch on the frozen encoder output; reports dev prior WER.

    The encoder comes from the already-trained model and stays fixed; only the
    ctc.* section receives updates. Utterances whose targets cannot fit the
    downsampled frame count are skipped and counted.
    """
    vocab = model.vocab
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xC7C))))
    if "ctc.conv_w" not in model.store:
        init_ctc_params(model.store, model.cfg.d_enc, vocab.n_chars + 1, rng)
    epochs = cfg.ctc_epochs if epochs is None else epochs
    # encoder is frozen here, so its outputs are precomputed once
    enc_outs = [encode(model.store, u.frames).data for u in train]
    targets = [vocab.encode(u.transcript) for u in train]
    feasible = []
    skipped = 0
    for i, (e, t) in enumerate(zip(enc_outs, targets)):
        if adapted_len(e.shape[0]) >= max(1, min_frames(t)):
            feasible.append(i)
        else:
            skipped += 1
    n = len(feasible)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    ctc_names = model.store.names("ctc.")
    opt_step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            batch = [feasible[k] for k in order[b0 : b0 + cfg.batch_size]]
            model.store.zero_grad()
            losses = []
            for i in batch:
                logits = ctc_head_forward(model.store, nx.tensor(enc_outs[i]))
                try:
                    losses.append(ctc_loss_tensor(logits, targets[i], vocab.ctc_blank))
                except CtcInfeasibleError:  # pragma: no cover - filtered above
                    continue
            if not losses:
                continue
            total = losses[0]
            for l in losses[1:]:
                total = nx.add(total, l)
            total = nx.scale(total, 1.0 / len(losses))
            if not np.isfinite(total.data):
                raise DivergenceError(f"non-finite CTC loss at epoch {epoch}")
            nx.backward(total)
            lr = lr_at(opt_step, cfg.lr_peak, min(cfg.warmup_steps, total_steps // 10), total_steps)
            nx.adam_step(model.store, lr, weight_decay=cfg.weight_decay, names=ctc_names)
            opt_step += 1
    dev_wer = eval_prior_wer(model, dev)
    report = {"dev_prior_wer": dev_wer, "skipped_infeasible": skipped, "epochs": epochs}
    if not quiet:
        print(f"ctc prior: dev_wer={dev_wer:.4f} skipped={skipped}")
    return report


def eval_prior_wer(model: AsrModel, utts: list[SyntheticUtterance]) -> float:
    pairs = []
    for u in utts:
        enc = encode(model.store, u.frames).data
        logits = ctc_head_forward(model.store, nx.tensor(enc))
        hyp = greedy_decode(logits.data, model.vocab)
        pairs.append((model.vocab.decode(hyp.tokens), u.transcript))
    return corpus_wer(pairs)


# -- persistence ------------------------------------------------------------


def save_model(model: AsrModel, path: str | Path, cfg: RunConfig, extra: dict | None = None) -> None:
    from .denoiser import config_to_dict

    header = {
        "model_config": config_to_dict(model.cfg),
        "vocab_chars": model.vocab.chars,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "run_config": resolved_dict(cfg),
        "optimizer_step": model.store.step_count,
        "adam_eps": 1e-8,
        "layer_norm_eps": model.cfg.ln_eps,
        "weight_decay": cfg.weight_decay,
    }
    if extra:
        header.update(extra)
    save_checkpoint(path, {k: t.data for k, t in model.store.params.items()}, header)


def load_model(path: str | Path) -> tuple[AsrModel, dict]:
    from .denoiser import config_from_dict

    header, params = load_checkpoint(path)
    cfg = config_from_dict(header["model_config"])
    vocab = Vocab(header["vocab_chars"])
    model = AsrModel(cfg, vocab)
    for name, arr in params.items():
        model.store.add(name, arr)
    if cfg.freeze_encoder:
        model.store.frozen.update(model.store.names("enc."))
    model.store.step_count = int(header.get("optimizer_step", 0))
    return model, header
