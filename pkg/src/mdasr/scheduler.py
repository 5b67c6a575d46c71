"""Prior-guided adaptive denoising engine.

Decoding starts from the CTC prior (or an all-mask state), freezes positions
whose confidence clears the threshold, prunes trailing padding to tighten the
live length, and reuses the speech-prefix cache across steps. Confidence is
the max softmax probability at a position. Once Fixed or Pruned, a position
never changes; the live length never grows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ctc import PriorHypothesis
from .denoiser import AsrModel, SpeechCache
from .encoder import AcousticFeatures

MASKED = 0
FIXED = 1
PRUNED = 2


@dataclass
class SchedulerConfig:
    tau: float = 0.9
    gamma: int = 1
    max_steps: int = 0  # 0 -> 2 x initial answer length
    use_prior: bool = True
    use_pruning: bool = True
    use_cache: bool = True
    fixed_len: int = 128
    vanilla_steps: int = 0  # 0 -> one position per step (fixed_len steps)
    length_margin_frac: float = 0.25
    length_margin_min: int = 2

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class DecodeState:
    ids: np.ndarray  # [L_init], current token at every original position
    status: np.ndarray  # [L_init] int8, MASKED / FIXED / PRUNED
    live_len: int
    cache: SpeechCache | None = None
    step_idx: int = 0

    @property
    def n_masked(self) -> int:
        return int(np.sum(self.status[: self.live_len] == MASKED))


@dataclass
class ScheduleTrace:
    utt_id: str = ""
    fixed_per_step: list[int] = field(default_factory=list)
    pruned_per_step: list[int] = field(default_factory=list)
    content_fixed_per_step: list[int] = field(default_factory=list)
    max_conf_per_step: list[float] = field(default_factory=list)
    mean_conf_per_step: list[float] = field(default_factory=list)
    wall_ns_per_step: list[int] = field(default_factory=list)
    nfe: int = 0
    initial_len: int = 0
    aborted: bool = False
    transcript: str = ""
    wall_ns: int = 0

    @property
    def steps(self) -> int:
        return len(self.fixed_per_step)

    def to_record(self) -> dict:
        return {
            "id": self.utt_id,
            "steps": self.steps,
            "nfe": self.nfe,
            "fixed_per_step": self.fixed_per_step,
            "pruned_per_step": self.pruned_per_step,
            "wall_ns": self.wall_ns,
            "transcript": self.transcript,
            "content_fixed_per_step": self.content_fixed_per_step,
            "initial_len": self.initial_len,
            "aborted": self.aborted,
        }


class SchedulerError(RuntimeError):
    pass


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def init_state(
    model: AsrModel,
    prior: PriorHypothesis | None,
    cfg: SchedulerConfig,
) -> DecodeState:
    """Build the starting lattice.

    With a prior: length = anchor + margin (clamped to the model's answer
    width) and the prior tokens enter as the visible starting state, though
    every position begins Masked (nothing is trusted yet). Without a prior,
    or with an empty one, a fully masked sequence of fixed_len is used.
    """
    mask_id = model.vocab.mask_id
    max_len = model.cfg.max_answer_len
    if cfg.use_prior and prior is not None and prior.length_anchor > 0:
        anchor = prior.length_anchor
        margin = max(cfg.length_margin_min, math.ceil(cfg.length_margin_frac * anchor))
        length = max(1, min(anchor + margin, max_len))
        ids = np.full(length, mask_id, dtype=np.int64)
        n_vis = min(anchor, length)
        ids[:n_vis] = prior.tokens[:n_vis]
    else:
        if cfg.use_prior and prior is None:
            raise SchedulerError("use_prior requires a prior hypothesis")
        length = cfg.fixed_len
        if length > max_len:
            raise SchedulerError(
                f"fixed_len {length} exceeds the model's answer width {max_len}"
            )
        ids = np.full(length, mask_id, dtype=np.int64)
    status = np.full(length, MASKED, dtype=np.int8)
    return DecodeState(ids=ids, status=status, live_len=length)


def _select_fixes(
    conf: np.ndarray, masked_pos: np.ndarray, tau: float, gamma: int
) -> np.ndarray:
    """Positions to decide this step: all above tau, else the top-gamma.

    Ties break toward the lowest position index for deterministic traces."""
    qualified = masked_pos[conf[masked_pos] >= tau]
    if qualified.size:
        return qualified
    order = np.lexsort((masked_pos, -conf[masked_pos]))
    return masked_pos[order[: min(gamma, masked_pos.size)]]


def step(
    state: DecodeState,
    denoise_fn,
    cfg: SchedulerConfig,
    pad_id: int,
    mask_id: int,
    trace: ScheduleTrace | None = None,
) -> DecodeState:
    """One denoising iteration: denoise live positions, fix confident tokens,
    prune trailing padding, remask the rest.

    `denoise_fn(ids, cache, capture_cache) -> (logits, cache_or_None)` is one
    NFE. Pruning removes the maximal trailing run of pad-argmax positions
    anchored at a pad fixed this step; sub-threshold pad-argmax positions
    beyond that anchor fall with it (the tighter length bound).
    """
    live = state.live_len
    masked_pos = np.flatnonzero(state.status[:live] == MASKED)
    if masked_pos.size == 0:
        raise SchedulerError("step() requires at least one masked position")
    t0 = time.perf_counter_ns()
    capture = cfg.use_cache and state.cache is None
    logits, new_cache = denoise_fn(
        state.ids[:live],
        cache=state.cache if cfg.use_cache else None,
        capture_cache=capture,
    )
    if capture and new_cache is not None:
        state.cache = new_cache
    probs = _softmax_rows(logits)
    conf = probs.max(axis=-1)
    argmax = probs.argmax(axis=-1)

    fixes = _select_fixes(conf, masked_pos, cfg.tau, cfg.gamma)
    fix_set = np.zeros(live, dtype=bool)
    fix_set[fixes] = True

    prune_from = live  # nothing pruned by default
    if cfg.use_pruning:
        # walk back over the pad-looking tail; remember the earliest pad that
        # was actually decided this step (the anchor)
        anchor = -1
        j = live - 1
        while j >= 0:
            st = state.status[j]
            if st == FIXED:
                if state.ids[j] != pad_id:
                    break
            elif argmax[j] != pad_id:
                break
            if fix_set[j] and argmax[j] == pad_id:
                anchor = j
            j -= 1
        if anchor >= 0:
            prune_from = anchor

    n_fixed = n_pruned = n_content = 0
    for j in masked_pos:
        if j >= prune_from and (fix_set[j] or argmax[j] == pad_id):
            state.status[j] = PRUNED
            n_pruned += 1
        elif fix_set[j]:
            state.status[j] = FIXED
            state.ids[j] = argmax[j]
            n_fixed += 1
            if argmax[j] != pad_id:
                n_content += 1
    if prune_from < live:
        state.live_len = prune_from
    # undecided positions carry the mask token into the next step; the prior
    # is visible only as the step-1 starting state
    still = state.status[: state.live_len] == MASKED
    state.ids[: state.live_len][still] = mask_id
    state.step_idx += 1

    if trace is not None:
        trace.fixed_per_step.append(n_fixed)
        trace.pruned_per_step.append(n_pruned)
        trace.content_fixed_per_step.append(n_content)
        trace.max_conf_per_step.append(float(conf[masked_pos].max()))
        trace.mean_conf_per_step.append(float(conf[masked_pos].mean()))
        trace.wall_ns_per_step.append(time.perf_counter_ns() - t0)
        trace.nfe += 1
    return state


def _assemble_transcript(state: DecodeState, pad_id: int, vocab) -> str:
    fixed = [
        int(i)
        for p, i in zip(state.status, state.ids)
        if p == FIXED and i != pad_id
    ]
    return vocab.decode(fixed)


def run(
    model: AsrModel,
    acoustic: AcousticFeatures,
    prior: PriorHypothesis | None,
    cfg: SchedulerConfig,
    utt_id: str = "",
) -> tuple[str, ScheduleTrace]:
    """Full adaptive decode of one utterance."""
    denoise_fn = make_denoise_fn(model, acoustic)
    state = init_state(model, prior, cfg)
    trace = ScheduleTrace(utt_id=utt_id, initial_len=state.live_len)
    pad_id, mask_id = model.vocab.pad_id, model.vocab.mask_id
    max_steps = cfg.max_steps if cfg.max_steps > 0 else 2 * state.live_len
    t0 = time.perf_counter_ns()
    while state.n_masked > 0:
        if trace.steps >= max_steps:
            trace.aborted = True
            break
        step(state, denoise_fn, cfg, pad_id, mask_id, trace)
    trace.wall_ns = time.perf_counter_ns() - t0
    trace.transcript = _assemble_transcript(state, pad_id, model.vocab)
    if not trace.aborted:
        total = sum(trace.fixed_per_step) + sum(trace.pruned_per_step)
        if total != trace.initial_len:
            raise SchedulerError(
                f"trace accounting broken: {total} decided != {trace.initial_len} initial"
            )
    return trace.transcript, trace


def vanilla_decode(
    model: AsrModel,
    acoustic: AcousticFeatures,
    cfg: SchedulerConfig,
    utt_id: str = "",
) -> tuple[str, ScheduleTrace]:
    """Fixed-length, fixed-step baseline with low-confidence remasking.

    All-mask start at fixed_len; each of the configured steps fixes the
    k = ceil(remaining / remaining_steps) highest-confidence positions.
    No prior, no pruning, no cache; NFE always equals the step count.
    """
    denoise_fn = make_denoise_fn(model, acoustic)
    length = cfg.fixed_len
    if length > model.cfg.max_answer_len:
        raise SchedulerError(
            f"fixed_len {length} exceeds the model's answer width {model.cfg.max_answer_len}"
        )
    steps = cfg.vanilla_steps if cfg.vanilla_steps > 0 else length
    pad_id, mask_id = model.vocab.pad_id, model.vocab.mask_id
    ids = np.full(length, mask_id, dtype=np.int64)
    status = np.full(length, MASKED, dtype=np.int8)
    trace = ScheduleTrace(utt_id=utt_id, initial_len=length)
    t0 = time.perf_counter_ns()
    for s in range(steps):
        ts = time.perf_counter_ns()
        logits, _ = denoise_fn(ids, cache=None, capture_cache=False)
        trace.nfe += 1  # the step count is the budget; every step costs one call
        masked_pos = np.flatnonzero(status == MASKED)
        remaining = masked_pos.size
        if remaining == 0:
            trace.fixed_per_step.append(0)
            trace.pruned_per_step.append(0)
            trace.content_fixed_per_step.append(0)
            trace.max_conf_per_step.append(0.0)
            trace.mean_conf_per_step.append(0.0)
            trace.wall_ns_per_step.append(time.perf_counter_ns() - ts)
            continue
        probs = _softmax_rows(logits)
        conf = probs.max(axis=-1)
        argmax = probs.argmax(axis=-1)
        k = math.ceil(remaining / (steps - s))
        order = np.lexsort((masked_pos, -conf[masked_pos]))
        chosen = masked_pos[order[:k]]
        status[chosen] = FIXED
        ids[chosen] = argmax[chosen]
        n_content = int(np.sum(argmax[chosen] != pad_id))
        trace.fixed_per_step.append(len(chosen))
        trace.pruned_per_step.append(0)
        trace.content_fixed_per_step.append(n_content)
        trace.max_conf_per_step.append(float(conf[masked_pos].max()))
        trace.mean_conf_per_step.append(float(conf[masked_pos].mean()))
        trace.wall_ns_per_step.append(time.perf_counter_ns() - ts)
    trace.wall_ns = time.perf_counter_ns() - t0
    state = DecodeState(ids=ids, status=status, live_len=length)
    trace.transcript = _assemble_transcript(state, pad_id, model.vocab)
    return trace.transcript, trace


def make_denoise_fn(model: AsrModel, acoustic: AcousticFeatures):
    """Bind a model + acoustic features into the step() callable."""

    def denoise_fn(ids, cache=None, capture_cache=False):
        return model.denoise_logits(ids, acoustic, cache=cache, capture_cache=capture_cache)

    return denoise_fn


def build_speech_cache(
    model: AsrModel, answer_ids: np.ndarray, acoustic: AcousticFeatures
) -> tuple[np.ndarray, SpeechCache]:
    """One full denoise pass that records the prompt+acoustic K/V blocks.

    Returns (logits, cache); the logits are exactly those of an uncached
    call, the approximation starts only at later steps."""
    logits, cache = model.denoise_logits(answer_ids, acoustic, capture_cache=True)
    return logits, cache
