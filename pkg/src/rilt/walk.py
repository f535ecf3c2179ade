"""Reproducible lattice walk paths.

Randomness comes from numpy's Philox counter-based generator keyed by
``(seed, stream)``; draw number ``i`` of a stream depends only on the key and
``i``, so replicas can be produced in any order or in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .increment_law import IncrementLaw

MASK64 = (1 << 64) - 1


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed & MASK64, stream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def alias_table(probs) -> tuple[np.ndarray, np.ndarray]:
    """Walker alias table: (acceptance thresholds, alias indices)."""
    probs = np.asarray(probs, dtype=float)
    k = len(probs)
    scaled = probs * k / probs.sum()
    accept = np.ones(k)
    alias = np.arange(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    return accept, alias


def sample_alias(accept: np.ndarray, alias: np.ndarray, u: np.ndarray) -> np.ndarray:
    # one uniform per draw: integer part picks the column, fraction the coin
    k = len(accept)
    v = u * k
    col = np.minimum(v.astype(np.int64), k - 1)
    return np.where(v - col < accept[col], col, alias[col])


@dataclass(frozen=True, eq=False)
class WalkPath:
    positions: np.ndarray  # (n+1, 2) int64, positions[0] == (0, 0)
    law_id: str = ""
    seed: int = 0
    stream: int = 0

    @property
    def n(self) -> int:
        return len(self.positions) - 1

    def scaled_position(self, t: float) -> np.ndarray:
        """X_{floor(nt)} / sqrt(n)."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0, 1]")
        if self.n < 1:
            raise ValueError("scaled view needs n >= 1")
        return self.positions[int(np.floor(self.n * t))] / np.sqrt(self.n)

    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    def dump(self, path: str | Path) -> None:
        """Little-endian int32 (x, y) pairs."""
        Path(path).write_bytes(self.positions.astype("<i4").tobytes())

    @classmethod
    def load(cls, path: str | Path, **kw) -> WalkPath:
        pos = np.frombuffer(Path(path).read_bytes(), dtype="<i4").reshape(-1, 2).astype(np.int64)
        return cls(positions=pos, **kw)


def simulate(law: IncrementLaw, n: int, seed: int, stream: int = 0) -> WalkPath:
    if n < 0:
        raise ValueError("n must be >= 0")
    accept, alias = alias_table(law.probs)
    u = philox(seed, stream).random(n)
    steps = law.points[sample_alias(accept, alias, u)]
    pos = np.zeros((n + 1, 2), dtype=np.int64)
    np.cumsum(steps, axis=0, out=pos[1:])
    return WalkPath(positions=pos, law_id=law.digest, seed=seed, stream=stream)


def simulate_many(law: IncrementLaw, n: int, seed: int, streams) -> list[WalkPath]:
    return [simulate(law, n, seed, s) for s in streams]
