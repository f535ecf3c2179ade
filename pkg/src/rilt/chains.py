"""Intersection counts B_k(n, x) and their renormalized versions.

B_k(n, x) counts time tuples 0 <= i_1 < ... < i_k <= n with
X_{i_j} = X_{i_{j-1}} + x_j.  Counting sweeps the path once, keeping for each
level j a tally H_j[site] of j-chains whose last time sits at that site:

    for j = k .. 2:  H_j[X_i] += H_{j-1}[X_i - x_j]
    H_1[X_i] += 1

Sites are packed into 64-bit keys and resolved to dense ids once per path,
so the sweep itself only touches integer arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numba
import numpy as np

from .walk import WalkPath

Offsets = tuple[tuple[int, int], ...]

_SHIFT = np.int64(1 << 32)


def pack(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.int64)
    return (p[..., 0] << 32) + p[..., 1]


@dataclass(frozen=True)
class ChainSpec:
    k: int
    offsets: Offsets = ()

    def __post_init__(self):
        offs = tuple((int(a), int(b)) for a, b in self.offsets)
        object.__setattr__(self, "offsets", offs)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(offs) != self.k - 1:
            raise ValueError(f"k={self.k} needs {self.k - 1} offsets, got {len(offs)}")

    def drop(self, A) -> ChainSpec:
        """Spec for x_{A^c}: offsets with indices (2..k) in A removed."""
        keep = tuple(x for i, x in enumerate(self.offsets, start=2) if i not in A)
        return ChainSpec(self.k - len(A), keep)

    def head(self) -> ChainSpec:
        """x_{k^c} = (x_2, ..., x_{k-1})."""
        return ChainSpec(self.k - 1, self.offsets[:-1])


@numba.njit(cache=True)
def _sweep(site_ids, lookup, n_sites, k):
    # lookup[i, j] = id of X_i - x_{j+2}, or -1 if never visited
    n1 = site_ids.shape[0]
    H = np.zeros((k, n_sites + 1), dtype=np.int64)  # last column absorbs misses
    inc = np.zeros(n1, dtype=np.int64)
    for i in range(n1):
        s = site_ids[i]
        for j in range(k - 1, 0, -1):
            src = lookup[i, j - 1]
            add = H[j - 1, src] if src >= 0 else 0
            if j == k - 1:
                inc[i] = add
            H[j, s] += add
        H[0, s] += 1
    return inc


def _site_tables(positions: np.ndarray, offsets: Offsets):
    keys = pack(positions)
    uniq, ids = np.unique(keys, return_inverse=True)
    lookup = np.full((len(positions), max(len(offsets), 1)), -1, dtype=np.int64)
    for j, off in enumerate(offsets):
        q = keys - pack(np.array(off))
        pos = np.searchsorted(uniq, q)
        pos_c = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos_c] == q
        lookup[:, j] = np.where(hit, pos_c, -1)
    return ids.astype(np.int64), lookup, len(uniq)


@dataclass(frozen=True, eq=False)
class ChainCounter:
    spec: ChainSpec
    increments: np.ndarray  # increments[i] = B_k(i) - B_k(i-1); increments[0] = B_k(0)
    running: np.ndarray  # B_k(i, x) for i = 0..n

    @property
    def n(self) -> int:
        return len(self.running) - 1

    def chains_ending_at(self) -> np.ndarray:
        """Number of k-chains whose last time is exactly i (one per time for k = 1)."""
        if self.spec.k == 1:
            return np.ones(self.n + 1, dtype=np.int64)
        return self.increments


def count_chains(path: WalkPath | np.ndarray, spec: ChainSpec) -> ChainCounter:
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path, dtype=np.int64)
    if len(pos) == 0:
        raise ValueError("empty path")
    n = len(pos) - 1
    if spec.k == 1:
        running = np.arange(n + 1, dtype=np.int64)
        inc = np.ones(n + 1, dtype=np.int64)
        inc[0] = 0
        return ChainCounter(spec, inc, running)
    ids, lookup, n_sites = _site_tables(pos, spec.offsets)
    inc = _sweep(ids, lookup, n_sites, spec.k)
    return ChainCounter(spec, inc, np.cumsum(inc))


def count_brute(positions, spec: ChainSpec) -> int:
    """B_k(n, x) by enumerating all increasing k-tuples of times."""
    pos = [tuple(map(int, p)) for p in np.asarray(positions)]
    n = len(pos) - 1
    if spec.k == 1:
        return n
    total = 0
    for times in combinations(range(n + 1), spec.k):
        ok = True
        for j in range(1, spec.k):
            a, b = pos[times[j - 1]], pos[times[j]]
            dx, dy = spec.offsets[j - 1]
            if b[0] != a[0] + dx or b[1] != a[1] + dy:
                ok = False
                break
        total += ok
    return total


def subsets(k: int):
    """All A subset {2..k} in bitmask order (bit i-2 set when i in A)."""
    idx = list(range(2, k + 1))
    for mask in range(1 << (k - 1)):
        yield tuple(i for b, i in enumerate(idx) if mask >> b & 1)


def count_family(path: WalkPath | np.ndarray, spec: ChainSpec) -> dict[ChainSpec, ChainCounter]:
    """Counters for every reduced spec x_{A^c}, A subset {2..k}."""
    out: dict[ChainSpec, ChainCounter] = {}
    for A in subsets(spec.k):
        sub = spec.drop(A)
        if sub not in out:
            out[sub] = count_chains(path, sub)
    return out


@dataclass(frozen=True, eq=False)
class RenormalizedSeries:
    spec: ChainSpec
    m: int
    values: np.ndarray  # B~_{k,m}(i, x), i = 0..n

    @property
    def n(self) -> int:
        return len(self.values) - 1


def _gm_values(kernel, m: int, offsets: Offsets) -> np.ndarray:
    if not offsets:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(kernel.Gn(m, np.array(offsets)), dtype=float))


def renormalize(family: dict[ChainSpec, ChainCounter], spec: ChainSpec, kernel, m: int) -> RenormalizedSeries:
    """B~_{k,m}(j, x) = sum_A (-1)^|A| prod_{i in A} G_m(x_i) B_{k-|A|}(j, x_{A^c}).

    Subset products are built incrementally over bitmasks, each product
    extending the one without its highest index.
    """
    k = spec.k
    g = _gm_values(kernel, m, spec.offsets)
    n_masks = 1 << (k - 1)
    prod = np.ones(n_masks)
    total = None
    for mask in range(n_masks):
        if mask:
            hi = mask.bit_length() - 1
            prod[mask] = prod[mask ^ (1 << hi)] * g[hi]
        A = tuple(i + 2 for i in range(k - 1) if mask >> i & 1)
        sub = spec.drop(A)
        if sub not in family:
            raise KeyError(f"missing sub-counter for k={sub.k}, offsets={sub.offsets} (A={A})")
        term = (-1) ** len(A) * prod[mask] * family[sub].running.astype(float)
        total = term if total is None else total + term
    return RenormalizedSeries(spec, m, total)


def renormalize_powerset(family, spec: ChainSpec, kernel, m: int, j: int) -> float:
    """Reference B~_{k,m}(j, x) by explicit subset enumeration, one time j."""
    g = dict(zip(range(2, spec.k + 1), _gm_values(kernel, m, spec.offsets)))
    acc = 0.0
    for size in range(spec.k):
        for A in combinations(range(2, spec.k + 1), size):
            coef = (-1) ** size
            for i in A:
                coef *= g[i]
            acc += coef * float(family[spec.drop(A)].running[j])
    return acc


def renormalized_series(path, spec: ChainSpec, kernel, m: int | None = None) -> RenormalizedSeries:
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path)
    m = len(pos) - 1 if m is None else m
    return renormalize(count_family(path, spec), spec, kernel, m)


def beta(series: RenormalizedSeries, n: int | None = None) -> float:
    """beta~_k(n, y / sqrt(n)) = B~_{k,n}(n, y) / n for lattice offsets y."""
    n = series.n if n is None else n
    if n == 0:
        raise ValueError("beta needs n >= 1")
    if series.m != n:
        raise ValueError(f"beta needs the series renormalized at m = n = {n}, got m = {series.m}")
    return float(series.values[n]) / n


def beta2_at_zero(path, kernel) -> float:
    """beta~_2(n, 0) = B_2(n, 0)/n - G_n(0)."""
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path)
    n = len(pos) - 1
    b2 = count_chains(pos, ChainSpec(2, ((0, 0),))).running[-1]
    return b2 / n - float(kernel.Gn(n, (0, 0)))


def expected_b2_at_zero(return_probs: np.ndarray, n: int) -> float:
    """E B_2(n, 0) = sum_{d=1}^n (n + 1 - d) p(d, 0, 0)."""
    d = np.arange(1, n + 1)
    return float(((n + 1 - d) * return_probs[1 : n + 1]).sum())
