"""Token vocabulary shared by the dataset, denoiser, and CTC branch."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CHARS = "abcdefghijklmnopqrstuvwxyz "


@dataclass(frozen=True)
class Vocab:
    """Character inventory plus the special ids.

    Layout: characters occupy ids [0, n_chars); the pad id follows, then the
    mask id. The CTC blank is not a token id at all; it is the last column of
    the CTC logit matrix. Prompt positions use a separate learned embedding
    table and get ids past the mask id purely for bookkeeping.
    """

    chars: str = DEFAULT_CHARS
    _index: dict = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("duplicate characters in vocab")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def pad_id(self) -> int:
        return self.n_chars

    @property
    def mask_id(self) -> int:
        return self.n_chars + 1

    @property
    def n_input_ids(self) -> int:
        """Embeddable answer-region ids: characters + pad + mask."""
        return self.n_chars + 2

    @property
    def n_answer_classes(self) -> int:
        """Predictable answer tokens: characters + pad (mask is never a target)."""
        return self.n_chars + 1

    @property
    def ctc_blank(self) -> int:
        """Column index of the blank in CTC logits (blank last)."""
        return self.n_chars

    def prompt_id(self, slot: int) -> int:
        return self.n_input_ids + slot

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self._index[c] for c in text], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in vocab") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i >= self.n_chars:
                raise ValueError(f"id {i} is not a character id")
            out.append(self.chars[i])
        return "".join(out)
