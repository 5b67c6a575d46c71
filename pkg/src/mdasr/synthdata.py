"""Deterministic synthetic speech-to-text corpus.

Each character emits 2-4 noisy copies of a fixed per-character prototype
vector, giving a monotonic acoustic-text alignment. Transcripts come from a
seeded character bigram chain, so the corpus is a pure function of its spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import Vocab

EMIT_MIN = 2
EMIT_MAX = 4
TRANSCRIPT_LEN_MIN = 5
TRANSCRIPT_LEN_MAX = 30


@dataclass
class SyntheticUtterance:
    """One synthetic utterance: transcript plus its emitted frame matrix."""

    utt_id: str
    transcript: str
    frames: np.ndarray  # [T_frames x d_acoustic], float32
    duration_s: float
    emit_counts: np.ndarray | None = None  # per-character frame counts (not serialized)


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    noise_sigma: float = 0.3
    d_acoustic: int = 16
    frame_rate_hz: float = 25.0
    vocab: Vocab = field(default_factory=Vocab)


def prototypes(spec: CorpusSpec) -> np.ndarray:
    """Fixed unit-norm random prototype per character, derived from the seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.seed, 0xACC))))
    p = rng.standard_normal((spec.vocab.n_chars, spec.d_acoustic))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return p.astype(np.float32)


def text_to_frames(
    transcript: str,
    spec: CorpusSpec,
    rng: np.random.Generator,
    utt_id: str = "",
    force_k: int | None = None,
) -> SyntheticUtterance:
    """Emit k in [2,4] noisy prototype frames per character (k fixable for tests)."""
    ids = spec.vocab.encode(transcript)
    protos = prototypes(spec)
    if force_k is not None:
        counts = np.full(len(ids), force_k, dtype=np.int64)
    else:
        counts = rng.integers(EMIT_MIN, EMIT_MAX + 1, size=len(ids))
    rows = np.repeat(protos[ids], counts, axis=0)
    noise = rng.standard_normal(rows.shape, dtype=np.float32) * np.float32(spec.noise_sigma)
    frames = (rows + noise).astype(np.float32)
    return SyntheticUtterance(
        utt_id=utt_id,
        transcript=transcript,
        frames=frames,
        duration_s=frames.shape[0] / spec.frame_rate_hz,
        emit_counts=counts,
    )


def _bigram_table(spec: CorpusSpec) -> np.ndarray:
    """Seeded character-bigram transition matrix; space never follows space."""
    v = spec.vocab
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.seed, 0xB16))))
    logits = rng.standard_normal((v.n_chars, v.n_chars)) * 1.5
    space = v.encode(" ")[0]
    logits[space, space] = -np.inf
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _sample_transcript(table: np.ndarray, spec: CorpusSpec, rng: np.random.Generator) -> str:
    v = spec.vocab
    space = int(v.encode(" ")[0])
    length = int(rng.integers(TRANSCRIPT_LEN_MIN, TRANSCRIPT_LEN_MAX + 1))
    non_space = [i for i in range(v.n_chars) if i != space]
    cur = int(rng.choice(non_space))
    out = [cur]
    while len(out) < length:
        cur = int(rng.choice(v.n_chars, p=table[cur]))
        if cur == space and len(out) == length - 1:
            continue  # no trailing space
        out.append(cur)
    return v.decode(out)


# practical ceiling for rejection sampling of unique transcripts; far below the
# combinatorial space but far above any desk-scale corpus
MAX_UNIQUE_TRANSCRIPTS = 200_000


def _sample_unique_transcripts(spec: CorpusSpec) -> list[str]:
    n_total = spec.n_train + spec.n_dev + spec.n_test
    if n_total > MAX_UNIQUE_TRANSCRIPTS:
        raise ValueError(
            f"requested {n_total} transcripts exceeds unique-transcript capacity "
            f"({MAX_UNIQUE_TRANSCRIPTS})"
        )
    table = _bigram_table(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.seed, 0x7E7))))
    seen: set[str] = set()
    out: list[str] = []
    attempts = 0
    budget = 50 * n_total
    while len(out) < n_total:
        attempts += 1
        if attempts > budget:
            raise ValueError(
                f"could not draw {n_total} unique transcripts within {budget} attempts; "
                "requested corpus exceeds unique-transcript capacity"
            )
        t = _sample_transcript(table, spec, rng)
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def gen_corpus(spec: CorpusSpec) -> dict[str, list[SyntheticUtterance]]:
    """Generate disjoint train/dev/test splits, a pure function of the spec."""
    transcripts = _sample_unique_transcripts(spec)
    splits = {
        "train": transcripts[: spec.n_train],
        "dev": transcripts[spec.n_train : spec.n_train + spec.n_dev],
        "test": transcripts[spec.n_train + spec.n_dev :],
    }
    out: dict[str, list[SyntheticUtterance]] = {}
    for split, texts in splits.items():
        utts = []
        for i, text in enumerate(texts):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((spec.seed, 0xF0A, hash_split(split), i)))
            )
            utts.append(text_to_frames(text, spec, rng, utt_id=f"{split}-{i:05d}"))
        out[split] = utts
    return out


def hash_split(split: str) -> int:
    return {"train": 1, "dev": 2, "test": 3}[split]


def save_jsonl(utts: list[SyntheticUtterance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for u in utts:
            rec = {
                "id": u.utt_id,
                "transcript": u.transcript,
                "frames": [[float(x) for x in row] for row in u.frames],
                "duration_s": u.duration_s,
            }
            f.write(json.dumps(rec) + "\n")


def load_jsonl(path: str | Path) -> list[SyntheticUtterance]:
    out = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            frames = np.asarray(rec["frames"], dtype=np.float32)
            out.append(
                SyntheticUtterance(
                    utt_id=rec["id"],
                    transcript=rec["transcript"],
                    frames=frames,
                    duration_s=float(rec["duration_s"]),
                )
            )
    return out


def write_corpus(spec: CorpusSpec, outdir: str | Path) -> dict[str, Path]:
    """gen_corpus + serialization; returns the split file paths."""
    outdir = Path(outdir)
    corpus = gen_corpus(spec)
    paths = {}
    for split, utts in corpus.items():
        p = outdir / f"{split}.jsonl"
        save_jsonl(utts, p)
        paths[split] = p
    return paths
