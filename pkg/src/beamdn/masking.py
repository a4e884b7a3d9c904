"""Self-attention blocking mask for [ray group 0 | ray group 1 | ... | object queries]."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class AttentionMask:
    blocked: np.ndarray  # (n, n) bool; True forbids row-query -> column-key
    n_obj: int
    group_sizes: tuple[int, ...]

    @property
    def n_total(self) -> int:
        return self.blocked.shape[0]

    @property
    def n_ray(self) -> int:
        return self.n_total - self.n_obj

    def additive(self) -> np.ndarray:
        """0 / -inf bias to add to attention logits."""
        return np.where(self.blocked, -np.inf, 0.0)

    def dump(self) -> str:
        return "\n".join("".join("1" if b else "0" for b in row) for row in self.blocked) + "\n"


def build_attention_mask(n_obj: int, group_sizes: Sequence[int]) -> AttentionMask:
    if n_obj < 0:
        raise ValueError("n_obj must be >= 0")
    sizes = tuple(int(s) for s in group_sizes)
    if any(s < 1 for s in sizes):
        raise ValueError("every ray group needs at least one query")
    n_ray = sum(sizes)
    n = n_ray + n_obj
    group_id = np.repeat(np.arange(len(sizes)), sizes)
    blocked = np.zeros((n, n), dtype=bool)
    if n_ray:
        blocked[:n_ray, :n_ray] = group_id[:, None] != group_id[None, :]
        blocked[n_ray:, :n_ray] = True
    blocked.setflags(write=False)
    return AttentionMask(blocked, int(n_obj), sizes)
