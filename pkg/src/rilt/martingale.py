"""Correctors U~ that turn the renormalized counts into martingales.

For k = 2 the corrector is U~_2(j, x) = sum_{i<j} G_n(X_j - X_i - x) at a fixed
horizon n.  For general k it is

    U~_{k,m}(j, x) = sum_{i=0}^{j} G_m(X_j - X_i - x_k) dB~_{k-1,m}(i, x_{k^c})
                     - G_m(x_k) dB~_{k-1,m}(0, x_{k^c})

where the level-one count contributes one chain at every time i >= 0, so
dB_1(0) = 1.  The subtracted constant makes M_0 = 0; at k = 2 the expression
is exactly the k = 2 corrector.  The variant with the i = 0 term dropped and
no constant (``convention="literal"``) is kept for comparison: it is a
martingale for k = 2 only up to the sum range, and for k >= 3 it carries a
drift of -G_m(x_2)...G_m(x_{k-1}) p(1, 0, X_{n-1} - x_k)-type terms.

Kernel modes: ``"cached-G"`` uses G_m = G - G^(sqrt(m) e1) with the log
stand-in for the off-lattice value; ``"exact-G"`` uses G_m = G.  Any constant
shift of G leaves the martingale property intact, so exact checks use
``"exact-G"`` and never touch the off-lattice approximation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .chains import ChainSpec, count_family, renormalize, subsets
from .kernel import PotentialKernelTable
from .walk import WalkPath


class ShiftedKernel:
    """G_m = G - shift, exposed with the ``Gn(m, x)`` interface used by renormalize."""

    def __init__(self, table: PotentialKernelTable, shift: float):
        self.table = table
        self.shift = float(shift)

    def __call__(self, x):
        return self.table(x) - self.shift

    def Gn(self, m, x):
        return self(x)


def kernel_for(table: PotentialKernelTable, m: int, mode: str) -> ShiftedKernel:
    if mode == "exact-G":
        return ShiftedKernel(table, 0.0)
    if mode == "cached-G":
        return ShiftedKernel(table, float(table.G_hat_scaled(m)))
    raise ValueError(f"unknown mode {mode!r}")


@numba.njit(cache=True)
def _pair_sums(pos, w, vals, R, ox, oy, shift):
    # out[j] = sum_{i<j} w[i] * (G(X_j - X_i - off) - shift)
    n1 = pos.shape[0]
    out = np.zeros(n1)
    for j in range(n1):
        acc = 0.0
        xj = pos[j, 0] - ox + R
        yj = pos[j, 1] - oy + R
        for i in range(j):
            if w[i] != 0.0:
                acc += w[i] * (vals[xj - pos[i, 0], yj - pos[i, 1]] - shift)
        out[j] = acc
    return out


def _fits(table: PotentialKernelTable, pos: np.ndarray, off) -> bool:
    span = pos.max(axis=0) - pos.min(axis=0)
    return bool(np.all(span + np.abs(np.asarray(off)) <= table.radius))


def pair_sums(pos: np.ndarray, weights: np.ndarray, gm: ShiftedKernel, off) -> np.ndarray:
    """S(j) = sum_{i<j} w_i G_m(X_j - X_i - off) for every j."""
    pos = np.asarray(pos, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    table = gm.table
    if _fits(table, pos, off):
        return _pair_sums(pos, weights, table.values, table.radius, int(off[0]), int(off[1]), gm.shift)
    out = np.zeros(len(pos))
    for j in range(1, len(pos)):
        out[j] = weights[:j] @ gm(pos[j] - pos[:j] - np.asarray(off))
    return out


def final_pair_sum(pos: np.ndarray, weights: np.ndarray, gm: ShiftedKernel, off) -> float:
    """S(n) only, in O(n)."""
    pos = np.asarray(pos, dtype=np.int64)
    d = pos[-1] - pos[:-1] - np.asarray(off)
    return float(np.asarray(weights, dtype=float)[:-1] @ gm(d)) if len(d) else 0.0


def corrector_u2(path: WalkPath | np.ndarray, x, table: PotentialKernelTable, n: int | None = None, mode="cached-G"):
    """U~_2(j, x) = sum_{i<j} G_n(X_j - X_i - x), j = 0..len-1, at fixed horizon n."""
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path, dtype=np.int64)
    n = len(pos) - 1 if n is None else n
    gm = kernel_for(table, max(n, 1), mode)
    return pair_sums(pos, np.ones(len(pos)), gm, x)


def head_increments(family, spec: ChainSpec, gm: ShiftedKernel, m: int, convention: str = "chain") -> np.ndarray:
    """dB~_{k-1,m}(i, x_{k^c}) for i = 0..n.

    ``chain``: the level-one count has one chain at each time i >= 0.
    ``literal``: B_{k-1}(-1) = 0 and B~_{1,m}(i) = i, so every increment at i = 0 vanishes.
    """
    head = spec.head()
    g = np.atleast_1d(gm(np.array(head.offsets))) if head.offsets else np.zeros(0)
    total = None
    for A in subsets(head.k):
        sub = head.drop(A)
        counter = family[ChainSpec(sub.k, sub.offsets)]
        coef = (-1) ** len(A) * np.prod([g[i - 2] for i in A]) if A else 1.0
        inc = counter.chains_ending_at().astype(float)
        if convention == "literal":
            inc = inc.copy()
            inc[0] = 0.0
        elif convention != "chain":
            raise ValueError(convention)
        total = coef * inc if total is None else total + coef * inc
    return total


def corrector_uk(
    path: WalkPath | np.ndarray,
    spec: ChainSpec,
    table: PotentialKernelTable,
    m: int,
    n: int | None = None,
    mode: str = "cached-G",
    convention: str = "chain",
    family=None,
) -> np.ndarray:
    """U~_{k,m}(j, x) for j = 0..n (see module docstring for the conventions)."""
    if spec.k < 2:
        raise ValueError("corrector needs k >= 2")
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path, dtype=np.int64)
    if n is not None:
        pos = pos[: n + 1]
    gm = kernel_for(table, m, mode)
    family = count_family(pos, spec) if family is None else family
    dB = head_increments(family, spec, gm, m, convention)
    if len(dB) != len(pos):
        raise ValueError("family does not match path length")
    xk = spec.offsets[-1]
    below = pair_sums(pos, dB, gm, xk)
    g_minus = float(gm(np.array([-xk[0], -xk[1]])))
    out = below + g_minus * dB
    if convention == "chain":
        out -= float(gm(np.array(xk))) * dB[0]
    else:
        # literal sum starts at i = 1
        out -= dB[0] * np.asarray(gm(pos - pos[0] - np.asarray(xk)))
        out[0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class MartingaleSeries:
    spec: ChainSpec
    m: int
    U: np.ndarray
    M: np.ndarray
    mode: str
    convention: str = "chain"


def martingale_series(
    path, spec: ChainSpec, table: PotentialKernelTable, m: int | None = None, mode="cached-G", convention="chain"
) -> MartingaleSeries:
    pos = path.positions if isinstance(path, WalkPath) else np.asarray(path, dtype=np.int64)
    m = len(pos) - 1 if m is None else m
    family = count_family(pos, spec)
    gm = kernel_for(table, max(m, 1), mode)
    Bt = renormalize(family, spec, gm, m).values
    U = corrector_uk(pos, spec, table, max(m, 1), mode=mode, convention=convention, family=family)
    return MartingaleSeries(spec=spec, m=m, U=U, M=U + Bt, mode=mode, convention=convention)


def martingale_final(pos: np.ndarray, spec: ChainSpec, gm: ShiftedKernel, m: int, convention="chain") -> float:
    """M_n = U~_{k,m}(n) + B~_{k,m}(n) at the last time only, in O(n 2^k)."""
    pos = np.asarray(pos, dtype=np.int64)
    family = count_family(pos, spec)
    Bt = renormalize(family, spec, gm, m).values[-1]
    dB = head_increments(family, spec, gm, m, convention)
    xk = spec.offsets[-1]
    U = final_pair_sum(pos, dB, gm, xk) + float(gm(np.array([-xk[0], -xk[1]]))) * dB[-1]
    if convention == "chain":
        U -= float(gm(np.array(xk))) * dB[0]
    else:
        U -= dB[0] * float(gm(pos[-1] - pos[0] - np.asarray(xk)))
    return float(U + Bt)


def exact_onestep_check(
    prefix, spec: ChainSpec, table: PotentialKernelTable, m: int | None = None, mode="exact-G", convention="chain"
) -> float:
    """|E[M_n - M_{n-1} | F_{n-1}]| by enumerating the next step over the law's atoms.

    ``prefix`` holds X_0..X_{n-1}; the law is taken from the table.
    """
    pos = prefix.positions if isinstance(prefix, WalkPath) else np.asarray(prefix, dtype=np.int64)
    n = len(pos)
    m = n if m is None else m
    gm = kernel_for(table, max(m, 1), mode)
    before = martingale_final(pos, spec, gm, m, convention)
    law = table.law
    after = 0.0
    ext = np.vstack([pos, pos[-1:]])
    for step, p in zip(law.points, law.probs):
        ext[-1] = pos[-1] + step
        after += p * martingale_final(ext, spec, gm, m, convention)
    return abs(after - before)


def perturbed(table: PotentialKernelTable, site, eps: float) -> PotentialKernelTable:
    """Copy of the table with G raised by eps at one site (fault injection)."""
    values = table.values.copy()
    R = table.radius
    values[site[0] + R, site[1] + R] += eps
    return PotentialKernelTable(
        law=table.law,
        radius=R,
        values=values,
        quadrature_spec=table.quadrature_spec,
        quadrature_error=table.quadrature_error,
        kappa=table.kappa,
        kappa_fit_range=table.kappa_fit_range,
        extra=dict(table.extra),
    )
