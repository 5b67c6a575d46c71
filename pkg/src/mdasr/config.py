"""Flat run configuration: one document drives data, training, and decoding.

Loaded from YAML with strict key checking; the `MDASR_SEED` environment
variable overrides the seed (for CI). Every artifact records the hash of the
fully resolved config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .denoiser import DenoiserConfig
from .scheduler import SchedulerConfig
from .synthdata import CorpusSpec
from .vocab import Vocab

SEED_ENV_VAR = "MDASR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # corpus
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    noise_sigma: float = 0.3
    d_acoustic: int = 16
    frame_rate_hz: float = 25.0
    # model
    d_enc: int = 32
    d_model: int = 64
    layers: int = 4
    heads: int = 4
    n_prompt: int = 4
    prompt_region: bool = True
    max_answer_len: int = 48
    alpha: float = 0.2
    # training
    lr_peak: float = 1e-3
    warmup_steps: int = 200
    batch_size: int = 32
    epochs: int = 12
    ctc_epochs: int = 8
    ar_epochs: int = 8
    weight_decay: float = 0.01
    # decoding
    tau: float = 0.9
    gamma: int = 1
    fixed_len: int = 48
    vanilla_steps: int = 0

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            seed=self.seed,
            n_train=self.n_train,
            n_dev=self.n_dev,
            n_test=self.n_test,
            noise_sigma=self.noise_sigma,
            d_acoustic=self.d_acoustic,
            frame_rate_hz=self.frame_rate_hz,
        )

    def denoiser_config(self, causal: bool = False, prompt_region: bool | None = None) -> DenoiserConfig:
        return DenoiserConfig(
            layers=self.layers,
            heads=self.heads,
            d_model=self.d_model,
            d_enc=self.d_enc,
            d_acoustic=self.d_acoustic,
            max_answer_len=self.max_answer_len,
            n_prompt=self.n_prompt,
            prompt_region=self.prompt_region if prompt_region is None else prompt_region,
            alpha=self.alpha,
            causal=causal,
        )

    def scheduler_config(self, **overrides) -> SchedulerConfig:
        base = dict(
            tau=self.tau,
            gamma=self.gamma,
            fixed_len=self.fixed_len,
            vanilla_steps=self.vanilla_steps,
        )
        base.update(overrides)
        return SchedulerConfig(**base)

    def vocab(self) -> Vocab:
        return Vocab()


def load_config(path: str | Path | None) -> RunConfig:
    """Read a flat YAML config; unknown keys are rejected, env seed wins."""
    data = {}
    if path is not None:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    known = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")
    if not 0.0 < cfg.tau or cfg.gamma < 1:
        raise ConfigError("tau must be positive and gamma >= 1")
    if cfg.d_model % cfg.heads != 0:
        raise ConfigError("d_model must be divisible by heads")
    if cfg.fixed_len < 1:
        raise ConfigError("fixed_len must be >= 1")


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def resolved_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["config_hash"] = config_hash(cfg)
    return d
