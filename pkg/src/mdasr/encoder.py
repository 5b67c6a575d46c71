"""Toy speech encoder and the conv+linear adapter that feeds the denoiser.

The encoder is a small position-wise residual MLP over frames; the adapter
is a temporal conv (kernel 3, stride 2) followed by two linear layers, so
the acoustic frame rate halves on the way into the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParamStore, Tensor

ADAPTER_KERNEL = 3
ADAPTER_STRIDE = 2


@dataclass
class AcousticFeatures:
    """Conditioning features after encoder+adapter."""

    features: np.ndarray  # [T_adapted x d_model]
    source_duration_s: float


def init_encoder_params(store: ParamStore, d_acoustic: int, d_enc: int, rng: np.random.Generator) -> None:
    s = 0.02
    store.add("enc.win", rng.normal(0, s, (d_acoustic, d_enc)).astype(np.float32))
    store.add("enc.bin", np.zeros(d_enc, dtype=np.float32))
    store.add("enc.w1", rng.normal(0, s, (d_enc, 2 * d_enc)).astype(np.float32))
    store.add("enc.b1", np.zeros(2 * d_enc, dtype=np.float32))
    store.add("enc.w2", rng.normal(0, s, (2 * d_enc, d_enc)).astype(np.float32))
    store.add("enc.b2", np.zeros(d_enc, dtype=np.float32))


def init_adapter_params(store: ParamStore, d_enc: int, d_model: int, rng: np.random.Generator) -> None:
    s = 0.02
    store.add("adapt.conv_w", rng.normal(0, s, (ADAPTER_KERNEL * d_enc, d_enc)).astype(np.float32))
    store.add("adapt.conv_b", np.zeros(d_enc, dtype=np.float32))
    store.add("adapt.w1", rng.normal(0, s, (d_enc, d_model)).astype(np.float32))
    store.add("adapt.b1", np.zeros(d_model, dtype=np.float32))
    store.add("adapt.w2", rng.normal(0, s, (d_model, d_model)).astype(np.float32))
    store.add("adapt.b2", np.zeros(d_model, dtype=np.float32))


def encode(store: ParamStore, frames: np.ndarray | Tensor) -> Tensor:
    """Per-frame representation; frame count preserved. Needs >= 3 frames."""
    x = frames if isinstance(frames, Tensor) else nx.tensor(frames)
    if x.shape[0] < ADAPTER_KERNEL:
        raise ValueError(f"encoder input too short: {x.shape[0]} frames < {ADAPTER_KERNEL}")
    h = nx.linear(x, store["enc.win"], store["enc.bin"])
    mid = nx.gelu(nx.linear(h, store["enc.w1"], store["enc.b1"]))
    res = nx.linear(mid, store["enc.w2"], store["enc.b2"])
    return nx.add(h, res)


def adapt(store: ParamStore, enc: Tensor) -> Tensor:
    """Temporal conv (k=3, s=2) then two linear layers into d_model."""
    if enc.shape[0] < ADAPTER_KERNEL:
        raise ValueError(f"adapter input too short: {enc.shape[0]} < {ADAPTER_KERNEL}")
    h = nx.conv1d_strided(enc, store["adapt.conv_w"], store["adapt.conv_b"], ADAPTER_KERNEL, ADAPTER_STRIDE)
    h = nx.gelu(h)
    h = nx.gelu(nx.linear(h, store["adapt.w1"], store["adapt.b1"]))
    return nx.linear(h, store["adapt.w2"], store["adapt.b2"])


def adapted_len(t_frames: int) -> int:
    return nx.conv1d_out_len(t_frames, ADAPTER_KERNEL, ADAPTER_STRIDE)
