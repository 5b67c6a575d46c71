"""CTC branch: loss/gradient via forward-backward recursions, greedy decoding.

The branch sits on the (frozen) encoder output: a downsampling conv
(kernel 3, stride 2) and a classification head emitting |characters|+1
logits with the blank in the last column. All recursions run in the log
domain, vectorized over the extended label sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import ADAPTER_KERNEL, ADAPTER_STRIDE
from .numerics import ParamStore, Tensor
from .vocab import Vocab

NEG_INF = -np.inf


class CtcInfeasibleError(ValueError):
    """Target cannot be emitted in the given number of frames."""


@dataclass
class PriorHypothesis:
    """Greedy CTC transcript with its derived length anchor."""

    tokens: np.ndarray  # character ids, no blanks
    per_token_confidence: np.ndarray
    length_anchor: int

    @staticmethod
    def empty() -> "PriorHypothesis":
        return PriorHypothesis(
            tokens=np.array([], dtype=np.int64),
            per_token_confidence=np.array([], dtype=np.float64),
            length_anchor=0,
        )


def _extended_labels(target: np.ndarray, blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target: np.ndarray) -> int:
    """Shortest emission for a target: one frame per label plus a blank
    between adjacent repeats."""
    if len(target) == 0:
        return 0
    repeats = int(np.sum(target[1:] == target[:-1]))
    return len(target) + repeats


def _check_feasible(T: int, target: np.ndarray) -> None:
    need = max(1, min_frames(target))
    if T < need:
        raise CtcInfeasibleError(f"target needs at least {need} frames, got {T}")


def _log_probs(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _forward_alphas(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Log-domain alpha lattice over the extended label sequence."""
    T = logp.shape[0]
    S = len(ext)
    skip_ok = np.zeros(S, dtype=bool)
    # skip s-2 -> s allowed iff ext[s] is a non-blank label differing from ext[s-2]
    skip_ok[2:] = (ext[2:] != ext[:-2]) & (ext[2:] != ext[0])
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[NEG_INF], prev[:-1]])
        skip = np.concatenate([[NEG_INF, NEG_INF], prev[:-2]])
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + logp[t, ext]
    return alpha


def _backward_betas(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Log-domain betas, excluding the emission at the current frame."""
    T = logp.shape[0]
    S = len(ext)
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[: S - 2] = (ext[: S - 2] != ext[2:]) & (ext[2:] != ext[0])
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        stay = nxt
        step = np.concatenate([nxt[1:], [NEG_INF]])
        skip = np.concatenate([nxt[2:], [NEG_INF, NEG_INF]])
        skip = np.where(skip_ok, skip, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)
    return beta


def ctc_loss(logits: np.ndarray, target: np.ndarray, blank: int) -> float:
    """-log of the total path probability for the target."""
    target = np.asarray(target, dtype=np.int64)
    _check_feasible(logits.shape[0], target)
    ext = _extended_labels(target, blank)
    alpha = _forward_alphas(_log_probs(logits), ext)
    tail = alpha[-1, -1] if len(ext) == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    return float(-tail)


def ctc_loss_and_grad(
    logits: np.ndarray, target: np.ndarray, blank: int
) -> tuple[float, np.ndarray]:
    """Loss plus its exact gradient w.r.t. the logits (softmax incorporated)."""
    target = np.asarray(target, dtype=np.int64)
    T, V = logits.shape
    _check_feasible(T, target)
    ext = _extended_labels(target, blank)
    logp = _log_probs(logits)
    alpha = _forward_alphas(logp, ext)
    beta = _backward_betas(logp, ext)
    tail = alpha[-1, -1] if len(ext) == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    loss = float(-tail)
    # occupancy gamma[t, c] = P(label c emitted at frame t | target) in log domain
    occ = alpha + beta - tail
    log_gamma = np.full((T, V), NEG_INF)
    for s, c in enumerate(ext):
        log_gamma[:, c] = np.logaddexp(log_gamma[:, c], occ[:, s])
    grad = np.exp(logp) - np.exp(log_gamma)
    return loss, grad.astype(logits.dtype)


def ctc_grad(logits: np.ndarray, target: np.ndarray, blank: int) -> np.ndarray:
    return ctc_loss_and_grad(logits, target, blank)[1]


def alpha_beta_path_total(logits: np.ndarray, target: np.ndarray, blank: int) -> np.ndarray:
    """Per-frame log total path probability: logsumexp_s alpha[t,s]+beta[t,s].

    Constant across frames; used as an internal consistency check."""
    target = np.asarray(target, dtype=np.int64)
    ext = _extended_labels(target, blank)
    logp = _log_probs(logits)
    alpha = _forward_alphas(logp, ext)
    beta = _backward_betas(logp, ext)
    s = alpha + beta
    m = s.max(axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.exp(s - m).sum(axis=1)))


def ctc_loss_tensor(logits: Tensor, target: np.ndarray, blank: int) -> Tensor:
    """ctc_loss as a tape op so the head trains through the usual backward."""
    loss, grad = ctc_loss_and_grad(logits.data, target, blank)
    out_data = np.asarray(loss, dtype=logits.data.dtype)

    def bw():
        g = float(out.grad) * grad
        if logits.grad is None:
            logits.grad = g.astype(logits.data.dtype)
        else:
            logits.grad += g

    out = Tensor(out_data, requires_grad=logits.requires_grad, parents=(logits,), backward_fn=bw)
    return out


def greedy_decode(logits: np.ndarray, vocab: Vocab) -> PriorHypothesis:
    """Best-path decode: per-frame argmax, collapse repeats, drop blanks.

    Confidence per emitted token is the mean softmax probability of the
    frames merged into it."""
    blank = vocab.ctc_blank
    path = np.argmax(logits, axis=-1)
    probs = np.exp(_log_probs(logits))
    frame_conf = probs[np.arange(len(path)), path]
    tokens: list[int] = []
    confs: list[float] = []
    run_sum = 0.0
    run_n = 0
    prev = blank
    for t, c in enumerate(path):
        c = int(c)
        if c == prev:
            if c != blank:
                run_sum += frame_conf[t]
                run_n += 1
            continue
        if prev != blank and run_n:
            confs.append(run_sum / run_n)
        if c != blank:
            tokens.append(c)
            run_sum = frame_conf[t]
            run_n = 1
        else:
            run_sum = 0.0
            run_n = 0
        prev = c
    if prev != blank and run_n:
        confs.append(run_sum / run_n)
    return PriorHypothesis(
        tokens=np.array(tokens, dtype=np.int64),
        per_token_confidence=np.array(confs, dtype=np.float64),
        length_anchor=len(tokens),
    )


# -- head on top of the encoder ------------------------------------------


def init_ctc_params(store: ParamStore, d_enc: int, n_classes: int, rng: np.random.Generator, d_hidden: int = 48) -> None:
    s = 0.02
    store.add("ctc.conv_w", rng.normal(0, s, (ADAPTER_KERNEL * d_enc, d_hidden)).astype(np.float32))
    store.add("ctc.conv_b", np.zeros(d_hidden, dtype=np.float32))
    store.add("ctc.cls_w", rng.normal(0, s, (d_hidden, n_classes)).astype(np.float32))
    store.add("ctc.cls_b", np.zeros(n_classes, dtype=np.float32))


def ctc_head_forward(store: ParamStore, enc_out: Tensor) -> Tensor:
    """Downsampling conv (k=3, s=2) + classifier; blank is the last column."""
    h = nx.conv1d_strided(enc_out, store["ctc.conv_w"], store["ctc.conv_b"], ADAPTER_KERNEL, ADAPTER_STRIDE)
    h = nx.gelu(h)
    return nx.linear(h, store["ctc.cls_w"], store["ctc.cls_b"])


def compute_prior(model, frames: np.ndarray) -> PriorHypothesis:
    """Run the CTC branch of a trained model on raw frames."""
    from .encoder import encode  # local import to avoid cycles

    if "ctc.conv_w" not in model.store:
        raise ValueError("model checkpoint has no CTC section; train the prior first")
    enc = encode(model.store, frames)
    logits = ctc_head_forward(model.store, nx.tensor(enc.data))
    return greedy_decode(logits.data, model.vocab)
