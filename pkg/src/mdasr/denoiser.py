"""Bidirectional transformer denoiser over [prompt ; acoustic ; answer].

The same backbone runs in a causal mode to serve as the autoregressive
baseline. Inference can reuse per-layer key/value blocks for the
prompt+acoustic prefix (the "speech cache"); the answer region is never
cached.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nx
from .encoder import (
    AcousticFeatures,
    adapt,
    adapted_len,
    encode,
    init_adapter_params,
    init_encoder_params,
)
from .numerics import ParamStore, Tensor
from .vocab import Vocab

PROMPT = 0
ANSWER = 1


@dataclass
class TokenSequence:
    """Token ids with per-position region tags (prompt vs answer)."""

    ids: np.ndarray
    regions: np.ndarray

    def answer_ids(self) -> np.ndarray:
        return self.ids[self.regions == ANSWER]

    @staticmethod
    def from_answer(ids: np.ndarray, n_prompt: int, vocab: Vocab) -> "TokenSequence":
        prompt = np.array([vocab.prompt_id(i) for i in range(n_prompt)], dtype=np.int64)
        full = np.concatenate([prompt, np.asarray(ids, dtype=np.int64)])
        regions = np.concatenate(
            [np.full(n_prompt, PROMPT, dtype=np.int8), np.full(len(ids), ANSWER, dtype=np.int8)]
        )
        return TokenSequence(full, regions)


@dataclass
class NoiseDraw:
    t: float
    forced_full: bool = False

    def __post_init__(self):
        if self.forced_full and self.t != 1.0:
            raise ValueError("forced_full draws must have t = 1")


@dataclass
class DenoiserConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 64
    d_enc: int = 32
    d_acoustic: int = 16
    max_answer_len: int = 48
    max_acoustic_len: int = 64
    n_prompt: int = 4
    prompt_region: bool = True
    alpha: float = 0.2  # probability of a forced t=1 draw
    causal: bool = False
    freeze_encoder: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class SpeechCache:
    """Per-layer key/value blocks for the prompt+acoustic prefix only."""

    keys: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    prefix_len: int = 0


def forward_masking(
    seq: TokenSequence, draw: NoiseDraw, rng: np.random.Generator, vocab: Vocab
) -> tuple[TokenSequence, np.ndarray]:
    """Independently replace answer tokens with the mask id at rate t.

    Returns the noised sequence and a boolean mask (over all positions) of
    the positions that were masked. Prompt positions are never touched.
    """
    t = draw.t
    if not 0.0 < t <= 1.0:
        raise ValueError(f"noise level t must lie in (0, 1], got {t}")
    if np.any(seq.ids[seq.regions == ANSWER] == vocab.mask_id):
        raise ValueError("clean sequence already contains mask tokens")
    answer = seq.regions == ANSWER
    hit = answer & (rng.random(len(seq.ids)) < t) if t < 1.0 else answer.copy()
    noised = seq.ids.copy()
    noised[hit] = vocab.mask_id
    return TokenSequence(noised, seq.regions), hit


class AsrModel:
    """Parameter container plus the forward passes used for training and decoding."""

    def __init__(self, cfg: DenoiserConfig, vocab: Vocab):
        self.cfg = cfg
        self.vocab = vocab
        self.store = ParamStore()
        self._nfe = 0
        self._nfe_lock = threading.Lock()

    # -- parameters -----------------------------------------------------

    def init_params(self, seed: int) -> None:
        cfg = self.cfg
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xA0D))))
        s = 0.02
        st = self.store
        init_encoder_params(st, cfg.d_acoustic, cfg.d_enc, rng)
        init_adapter_params(st, cfg.d_enc, cfg.d_model, rng)
        if cfg.freeze_encoder:
            st.frozen.update(st.names("enc."))
        st.add("embed.tok", rng.normal(0, s, (self.vocab.n_input_ids, cfg.d_model)).astype(np.float32))
        st.add("embed.pos_ans", rng.normal(0, s, (cfg.max_answer_len, cfg.d_model)).astype(np.float32))
        st.add("embed.pos_ac", rng.normal(0, s, (cfg.max_acoustic_len, cfg.d_model)).astype(np.float32))
        if cfg.prompt_region:
            st.add("prompt.emb", rng.normal(0, s, (cfg.n_prompt, cfg.d_model)).astype(np.float32))
        d, h = cfg.d_model, 4 * cfg.d_model
        for i in range(cfg.layers):
            p = f"layer{i}."
            st.add(p + "ln1.g", np.ones(d, dtype=np.float32))
            st.add(p + "ln1.b", np.zeros(d, dtype=np.float32))
            st.add(p + "wq", rng.normal(0, s, (d, d)).astype(np.float32))
            st.add(p + "wk", rng.normal(0, s, (d, d)).astype(np.float32))
            st.add(p + "wv", rng.normal(0, s, (d, d)).astype(np.float32))
            st.add(p + "wo", np.zeros((d, d), dtype=np.float32))
            st.add(p + "ln2.g", np.ones(d, dtype=np.float32))
            st.add(p + "ln2.b", np.zeros(d, dtype=np.float32))
            st.add(p + "w1", rng.normal(0, s, (d, h)).astype(np.float32))
            st.add(p + "b1", np.zeros(h, dtype=np.float32))
            st.add(p + "w2", np.zeros((h, d), dtype=np.float32))
            st.add(p + "b2", np.zeros(d, dtype=np.float32))
        st.add("final.g", np.ones(d, dtype=np.float32))
        st.add("final.b", np.zeros(d, dtype=np.float32))
        st.add("head.w", np.zeros((d, self.vocab.n_answer_classes), dtype=np.float32))
        st.add("head.b", np.zeros(self.vocab.n_answer_classes, dtype=np.float32))

    @property
    def n_prompt(self) -> int:
        return self.cfg.n_prompt if self.cfg.prompt_region else 0

    # -- acoustic path --------------------------------------------------

    def acoustic(self, frames: np.ndarray, duration_s: float) -> AcousticFeatures:
        """encode + adapt, detached for decoding."""
        feats = adapt(self.store, encode(self.store, frames))
        if feats.shape[0] > self.cfg.max_acoustic_len:
            raise ValueError(
                f"adapted length {feats.shape[0]} exceeds max_acoustic_len {self.cfg.max_acoustic_len}"
            )
        return AcousticFeatures(features=feats.data, source_duration_s=duration_s)

    def acoustic_tensor(self, frames: np.ndarray) -> Tensor:
        """encode + adapt with the tape kept, for training."""
        feats = adapt(self.store, encode(self.store, frames))
        if feats.shape[0] > self.cfg.max_acoustic_len:
            raise ValueError(
                f"adapted length {feats.shape[0]} exceeds max_acoustic_len {self.cfg.max_acoustic_len}"
            )
        return feats

    # -- transformer core -----------------------------------------------

    def _backbone(
        self,
        x: Tensor,
        mask: np.ndarray | None,
        cache: SpeechCache | None = None,
        capture: SpeechCache | None = None,
    ) -> Tensor:
        """Transformer stack. With `cache`, x holds answer rows only and each
        layer's keys/values are [cached-prefix ; fresh-answer]. With `capture`,
        prefix K/V rows are recorded as a side effect of the full pass."""
        st = self.store
        cfg = self.cfg
        for i in range(cfg.layers):
            p = f"layer{i}."
            h = nx.layer_norm(x, st[p + "ln1.g"], st[p + "ln1.b"], cfg.ln_eps)
            q = nx.matmul(h, st[p + "wq"])
            k = nx.matmul(h, st[p + "wk"])
            v = nx.matmul(h, st[p + "wv"])
            if capture is not None:
                capture.keys.append(k.data[: capture.prefix_len].copy())
                capture.values.append(v.data[: capture.prefix_len].copy())
            if cache is not None:
                k = nx.concat_rows([nx.tensor(cache.keys[i]), k])
                v = nx.concat_rows([nx.tensor(cache.values[i]), v])
            att = nx.multihead_attention(q, k, v, cfg.heads, mask)
            x = nx.add(x, nx.matmul(att, st[p + "wo"]))
            h2 = nx.layer_norm(x, st[p + "ln2.g"], st[p + "ln2.b"], cfg.ln_eps)
            m = nx.gelu(nx.linear(h2, st[p + "w1"], st[p + "b1"]))
            x = nx.add(x, nx.linear(m, st[p + "w2"], st[p + "b2"]))
        return nx.layer_norm(x, st["final.g"], st["final.b"], cfg.ln_eps)

    def _answer_embed(self, answer_ids: np.ndarray) -> Tensor:
        st = self.store
        L = len(answer_ids)
        if L > self.cfg.max_answer_len:
            raise ValueError(f"answer length {L} exceeds max_answer_len {self.cfg.max_answer_len}")
        return nx.add(nx.embed(st["embed.tok"], answer_ids), nx.slice_rows(st["embed.pos_ans"], 0, L))

    def _assemble(self, answer_ids: np.ndarray, acoustic: Tensor) -> tuple[Tensor, int]:
        st = self.store
        t_a = acoustic.shape[0]
        ac = nx.add(acoustic, nx.slice_rows(st["embed.pos_ac"], 0, t_a))
        parts = [ac, self._answer_embed(answer_ids)]
        if self.cfg.prompt_region:
            parts.insert(0, st["prompt.emb"])
        prefix_len = self.n_prompt + t_a
        return nx.concat_rows(parts), prefix_len

    def denoise_tensor(self, answer_ids: np.ndarray, acoustic: Tensor) -> Tensor:
        """Full bidirectional pass; answer-region logits with the tape kept."""
        x, prefix_len = self._assemble(answer_ids, acoustic)
        mask = nx.causal_mask(x.shape[0]) if self.cfg.causal else None
        y = self._backbone(x, mask)
        ans = nx.slice_rows(y, prefix_len, prefix_len + len(answer_ids))
        return nx.linear(ans, self.store["head.w"], self.store["head.b"])

    def denoise_logits(
        self,
        answer_ids: np.ndarray,
        acoustic: AcousticFeatures,
        cache: SpeechCache | None = None,
        capture_cache: bool = False,
    ) -> tuple[np.ndarray, SpeechCache | None]:
        """Inference entry point; one call = one NFE.

        With `cache`, only the answer rows are recomputed and the cached
        prefix K/V blocks are reused (stale w.r.t. the changed answer; the
        documented approximation). With `capture_cache`, a full pass runs and
        the prefix blocks are recorded for later calls.
        """
        if self.cfg.causal:
            raise ValueError("denoise_logits requires a bidirectional (non-causal) model")
        if cache is not None and capture_cache:
            raise ValueError("cannot capture and consume a cache in the same call")
        a_feats = acoustic.features
        with self._nfe_lock:
            self._nfe += 1
        st = self.store
        if cache is not None:
            if cache.prefix_len != self.n_prompt + a_feats.shape[0]:
                raise ValueError(
                    f"cache prefix length {cache.prefix_len} does not match "
                    f"prompt+acoustic length {self.n_prompt + a_feats.shape[0]}"
                )
            x = self._answer_embed(answer_ids)
            y = self._backbone(x, None, cache=cache)
            logits = nx.linear(y, st["head.w"], st["head.b"])
            return logits.data, None
        ac = nx.tensor(a_feats)
        x, prefix_len = self._assemble(answer_ids, ac)
        capture = SpeechCache(prefix_len=prefix_len) if capture_cache else None
        y = self._backbone(x, None, capture=capture)
        ans = nx.slice_rows(y, prefix_len, prefix_len + len(answer_ids))
        logits = nx.linear(ans, st["head.w"], st["head.b"])
        return logits.data, capture

    # -- losses ----------------------------------------------------------

    def diffusion_loss(
        self,
        x0_answer: np.ndarray,
        acoustic: Tensor,
        rng: np.random.Generator,
        alpha: float | None = None,
        draw: NoiseDraw | None = None,
    ) -> Tensor | None:
        """Masked-diffusion objective for one utterance: (1/t) * sum of CE
        over masked answer positions. Returns None when no position was
        masked after one resample (skipped sample)."""
        if len(x0_answer) < 1:
            raise ValueError("answer region must be non-empty")
        alpha = self.cfg.alpha if alpha is None else alpha
        seq = TokenSequence.from_answer(x0_answer, self.n_prompt, self.vocab)
        if draw is None:
            draw = sample_noise(rng, alpha)
        noised, hit = forward_masking(seq, draw, rng, self.vocab)
        if not hit.any():
            draw = sample_noise(rng, alpha)
            noised, hit = forward_masking(seq, draw, rng, self.vocab)
            if not hit.any():
                return None
        answer_sel = hit[seq.regions == ANSWER]
        logits = self.denoise_tensor(noised.answer_ids(), acoustic)
        return nx.cross_entropy_masked(logits, x0_answer, answer_sel, weight=1.0 / draw.t)

    def ar_loss(self, x0_answer: np.ndarray, acoustic: Tensor) -> Tensor:
        """Next-token objective for the causal baseline (mask id doubles as BOS)."""
        if not self.cfg.causal:
            raise ValueError("ar_loss requires a causal model")
        inputs = np.concatenate([[self.vocab.mask_id], x0_answer[:-1]]).astype(np.int64)
        logits = self.denoise_tensor(inputs, acoustic)
        sel = np.ones(len(x0_answer), dtype=bool)
        return nx.cross_entropy_masked(logits, x0_answer, sel, weight=1.0 / len(x0_answer))

    def ar_greedy_decode(self, acoustic: AcousticFeatures, max_len: int) -> tuple[np.ndarray, int]:
        """Left-to-right greedy decode; returns (token ids sans pad, NFE count)."""
        if not self.cfg.causal:
            raise ValueError("ar_greedy_decode requires a causal checkpoint")
        ac = nx.tensor(acoustic.features)
        out: list[int] = []
        nfe = 0
        while len(out) < max_len:
            inputs = np.concatenate([[self.vocab.mask_id], out]).astype(np.int64)
            logits = self.denoise_tensor(inputs, ac)
            nfe += 1
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == self.vocab.pad_id:
                break
            out.append(nxt)
        return np.array(out, dtype=np.int64), nfe

    # -- NFE accounting ---------------------------------------------------

    @property
    def nfe_count(self) -> int:
        return self._nfe

    def reset_nfe(self) -> None:
        with self._nfe_lock:
            self._nfe = 0


def sample_noise(rng: np.random.Generator, alpha: float) -> NoiseDraw:
    """t ~ Uniform(0,1], with probability alpha forced to the maximum t=1."""
    if rng.random() < alpha:
        return NoiseDraw(t=1.0, forced_full=True)
    return NoiseDraw(t=1.0 - rng.random())  # (0, 1]


def pad_answer(ids: np.ndarray, width: int, pad_id: int) -> np.ndarray:
    """Right-pad the clean answer to the training width; pads are real targets."""
    if len(ids) > width:
        raise ValueError(f"transcript length {len(ids)} exceeds answer width {width}")
    out = np.full(width, pad_id, dtype=np.int64)
    out[: len(ids)] = ids
    return out


def config_to_dict(cfg: DenoiserConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> DenoiserConfig:
    return DenoiserConfig(**d)
