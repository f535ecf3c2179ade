"""Walk/Brownian coupling by per-coordinate Skorokhod embedding, and the
mollified Brownian intersection functionals.

Each coordinate of a product-form walk is embedded in its own Brownian path,
sampled on a grid of step ``delta``.  For step k a level b is drawn from the
two-point mixture of the 1D factor (P(b = |a|) = q(a) + q(-a)); the path runs
from its value at the previous stopping time until it has moved b away, and
the walk moves by +-b in the crossing direction.  The exit direction of a
symmetric interval is a fair coin, so the walk law is exact; grid overshoot
only enters the coupling distance.  Exits are detected at b - rho sqrt(delta),
with rho = -zeta(1/2)/sqrt(2 pi) the mean overshoot of a Gaussian random walk,
so the clock keeps unit mean per unit of variance instead of drifting.

Gaussian increments come from Philox chunks of fixed size, so a second pass
can regenerate the same path to measure sup |X^n - W^n| without storing the
fine grid.  Only a decimated copy of the path is kept.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb

import numba
import numpy as np
from scipy import integrate

from .increment_law import IncrementLaw, LawError
from .walk import WalkPath, alias_table, philox, sample_alias

log = logging.getLogger(__name__)

CHUNK = 1 << 20
MAX_DELTA = 2.0**-6
OVERSHOOT_RHO = 0.5825971579390106


class CouplingError(ValueError):
    pass


def embedding_levels(law: IncrementLaw) -> tuple[np.ndarray, np.ndarray]:
    """Levels b >= 0 and their probabilities for the 1D factor of a product law."""
    if law.factor is None:
        raise CouplingError(
            f"law {law.name!r} is not a product of two identical 1D laws; "
            "the Skorokhod coupling only handles product-form laws"
        )
    q = dict(law.factor)
    if any(q.get(-a, Fraction(0)) != p for a, p in q.items()):
        raise CouplingError("1D factor is not symmetric")
    levels = sorted({abs(a) for a in q})
    probs = [q[b] if b == 0 else 2 * q[b] for b in levels]
    var = sum(p * b * b for b, p in zip(levels, probs))
    if var != 1:
        raise CouplingError(f"1D factor has variance {var}, need 1 for a unit-mean clock")
    return np.array(levels, dtype=np.int64), np.array([float(p) for p in probs])


@numba.njit(cache=True)
def _embed_chunk(z, start, b_val, levels, shift, k, anchor, T, X, store_every, store, n_store):
    """Advance one coordinate through a chunk of grid increments.

    Returns (b_val, k, anchor, n_store).  T[k] records the grid index of the
    k-th stopping time, X[k] the walk coordinate.  Zero levels are consumed
    without moving time.
    """
    n = levels.shape[0]
    for idx in range(z.shape[0]):
        g = start + idx
        while k < n and levels[k] == 0:
            k += 1
            T[k] = T[k - 1]
            X[k] = X[k - 1]
        b_val += z[idx]
        if (g + 1) % store_every == 0 and n_store < store.shape[0]:
            store[n_store] = b_val
            n_store += 1
        if k < n:
            d = b_val - anchor
            lev = levels[k]
            thr = lev - shift
            if d >= thr or d <= -thr:
                k += 1
                T[k] = g + 1
                X[k] = X[k - 1] + (lev if d > 0 else -lev)
                anchor = b_val
    while k < n and levels[k] == 0:
        k += 1
        T[k] = T[k - 1]
        X[k] = X[k - 1]
    return b_val, k, anchor, n_store


@numba.njit(cache=True)
def _sup_chunk(zx, zy, start, bx, by, X, Y, per_unit, n_grid, best):
    # best = max over grid points g <= n_grid of |X_{floor(g/per_unit)} - B(g)|
    for idx in range(zx.shape[0]):
        g = start + idx + 1
        bx += zx[idx]
        by += zy[idx]
        if g > n_grid:
            break
        k = g // per_unit
        dx = X[k] - bx
        dy = Y[k] - by
        r = dx * dx + dy * dy
        if r > best:
            best = r
    return bx, by, best


@dataclass(frozen=True, eq=False)
class CoupledPath:
    walk: WalkPath
    bm: np.ndarray  # (m+1, 2) Brownian samples every ``store_step`` time units, bm[0] = 0
    store_step: float
    embed_times: np.ndarray  # (2, n+1) stopping times in time units
    delta: float
    seed: int
    stream: int
    sup_distance: float = field(default=float("nan"))  # sup_{s<=1} |X^n_s - W^n_s|

    @property
    def n(self) -> int:
        return self.walk.n

    def scaled_bm(self) -> np.ndarray:
        """W^n on [0, 1] at times i * store_step / n."""
        m = int(round(self.n / self.store_step))
        return self.bm[: m + 1] / np.sqrt(self.n)

    def scaled_walk(self) -> np.ndarray:
        return self.walk.positions / np.sqrt(self.n)


def _coordinate_streams(stream: int) -> tuple[int, int, int]:
    # levels, x-path, y-path
    return 3 * stream, 3 * stream + 1, 3 * stream + 2


def couple(
    law: IncrementLaw,
    n: int,
    delta: float = MAX_DELTA,
    seed: int = 0,
    stream: int = 0,
    store_step: float | None = None,
    measure: bool = True,
    compensate: bool = True,
) -> CoupledPath:
    """Coupled (walk, Brownian) pair driven by the same grid path.

    ``store_step`` (time units) sets the spacing of the retained Brownian
    samples; by default it is the largest power of two giving at least
    max(n, 2^15) samples on [0, n], but never finer than ``delta``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0 < delta <= MAX_DELTA:
        raise CouplingError(f"delta={delta} must lie in (0, 2^-6]")
    per_unit = 1.0 / delta
    if abs(per_unit - round(per_unit)) > 1e-9:
        raise CouplingError("1/delta must be an integer")
    per_unit = int(round(per_unit))
    levels, probs = embedding_levels(law)
    if n == 0:
        walk = WalkPath(np.zeros((1, 2), dtype=np.int64), law.digest, seed, stream)
        return CoupledPath(walk, np.zeros((1, 2)), 1.0, np.zeros((2, 1)), delta, seed, stream, 0.0)
    if store_step is None:
        m = max(n, 1 << 15)
        store_step = max(float(2.0 ** np.floor(np.log2(n / m))), delta)
    store_every = int(round(store_step * per_unit))
    if store_every < 1 or abs(store_every - store_step * per_unit) > 1e-9:
        raise CouplingError("store_step must be a positive multiple of delta")
    n_grid = n * per_unit
    n_store = n_grid // store_every

    s_lev, s_x, s_y = _coordinate_streams(stream)
    accept, alias = alias_table(probs)
    lev_idx = sample_alias(accept, alias, philox(seed, s_lev).random(2 * n))
    lev = levels[lev_idx].reshape(2, n)
    sd = np.sqrt(delta)
    shift = OVERSHOOT_RHO * sd if compensate else 0.0

    T = np.zeros((2, n + 1), dtype=np.int64)
    X = np.zeros((2, n + 1), dtype=np.int64)
    store = np.zeros((2, n_store + 1))
    used = np.zeros(2, dtype=np.int64)
    for c, s in enumerate((s_x, s_y)):
        gen = philox(seed, s)
        b_val, k, anchor, filled, start = 0.0, 0, 0.0, 0, 0
        view = store[c, 1:]
        while k < n or start < n_grid:
            z = gen.standard_normal(CHUNK) * sd
            b_val, k, anchor, filled = _embed_chunk(
                z, start, b_val, lev[c], shift, k, anchor, T[c], X[c], store_every, view, filled
            )
            start += CHUNK
        used[c] = start

    sup = float("nan")
    if measure:
        gx, gy = philox(seed, s_x), philox(seed, s_y)
        bx = by = best = 0.0
        start = 0
        while start < n_grid:
            zx = gx.standard_normal(CHUNK) * sd
            zy = gy.standard_normal(CHUNK) * sd
            bx, by, best = _sup_chunk(zx, zy, start, bx, by, X[0], X[1], per_unit, n_grid, best)
            start += CHUNK
        sup = float(np.sqrt(best) / np.sqrt(n))

    walk = WalkPath(np.ascontiguousarray(X.T), law.digest, seed, stream)
    return CoupledPath(
        walk=walk,
        bm=np.ascontiguousarray(store.T),
        store_step=store_step,
        embed_times=T * delta,
        delta=delta,
        seed=seed,
        stream=stream,
        sup_distance=sup,
    )


# -- mollifier ---------------------------------------------------------------


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = (r > 0.5) & (r < 1.0)
    ri = r[inside]
    out[inside] = np.exp(-1.0 / ((ri - 0.5) * (1.0 - ri)))
    return out


@lru_cache(maxsize=1)
def mollifier_constants() -> tuple[float, float]:
    """(c, l(f)): normalization of the bump and l(f) = (1/pi) int f(y) log(1/|y|) dy."""
    mass, _ = integrate.quad(lambda r: 2 * np.pi * r * _bump(r), 0.5, 1.0, epsabs=1e-15, epsrel=1e-13)
    c = 1.0 / mass
    lf, _ = integrate.quad(lambda r: 2 * r * c * _bump(r) * np.log(1.0 / r), 0.5, 1.0, epsabs=1e-15, epsrel=1e-13)
    return c, lf


@dataclass(frozen=True)
class Mollifier:
    """f_tau(x) = tau^-2 f(x / tau) with f a radial bump on 1/2 < |y| < 1."""

    tau: float

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau={self.tau} must lie in (0, 1]")

    @property
    def c(self) -> float:
        return mollifier_constants()[0]

    @property
    def l(self) -> float:
        """l(f_tau) = l(f) + (1/pi) log(1/tau)."""
        return mollifier_constants()[1] + np.log(1.0 / self.tau) / np.pi

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1]) / self.tau
        return self.c * _bump(r) / self.tau**2


def mollifier(tau: float) -> Mollifier:
    return Mollifier(tau)


@numba.njit(cache=True, inline="always")
def _f(r2, tau, c):
    t2 = tau * tau
    if r2 <= 0.25 * t2 or r2 >= t2:
        return 0.0
    r = np.sqrt(r2) / tau
    return c * np.exp(-1.0 / ((r - 0.5) * (1.0 - r))) / t2


@numba.njit(cache=True)
def _chain_dp_cells(pts, tau, c, w, kmax):
    """a_j[i] = sum_{l<i} f(P_i - P_l) a_{j-1}[l] w, a_1 = 1; returns I_j = w sum_i a_j[i].

    Earlier points are kept in per-cell linked lists (cell side tau), so
    only the 3x3 neighbourhood of each point is scanned.
    """
    m = pts.shape[0]
    x0 = pts[:, 0].min()
    y0 = pts[:, 1].min()
    nx = int((pts[:, 0].max() - x0) / tau) + 1
    ny = int((pts[:, 1].max() - y0) / tau) + 1
    head = -np.ones(nx * ny, dtype=np.int64)
    nxt = -np.ones(m, dtype=np.int64)
    a = np.zeros((kmax + 1, m))
    a[1, :] = 1.0
    I = np.zeros(kmax + 1)
    for i in range(m):
        cx = int((pts[i, 0] - x0) / tau)
        cy = int((pts[i, 1] - y0) / tau)
        for ux in range(max(cx - 1, 0), min(cx + 2, nx)):
            for uy in range(max(cy - 1, 0), min(cy + 2, ny)):
                l = head[ux * ny + uy]
                while l >= 0:
                    dx = pts[i, 0] - pts[l, 0]
                    dy = pts[i, 1] - pts[l, 1]
                    f = _f(dx * dx + dy * dy, tau, c)
                    if f != 0.0:
                        for j in range(2, kmax + 1):
                            a[j, i] += f * a[j - 1, l] * w
                    l = nxt[l]
        cell = cx * ny + cy
        nxt[i] = head[cell]
        head[cell] = i
        for j in range(2, kmax + 1):
            I[j] += a[j, i] * w
    I[1] = 1.0
    return I


@numba.njit(cache=True)
def _pair_sum_direct(pts, tau, c, w):
    m = pts.shape[0]
    acc = 0.0
    for i in range(m):
        for l in range(i):
            dx = pts[i, 0] - pts[l, 0]
            dy = pts[i, 1] - pts[l, 1]
            acc += _f(dx * dx + dy * dy, tau, c)
    return acc * w * w


def chain_integrals(points: np.ndarray, tau: float, weight: float, kmax: int) -> np.ndarray:
    """I_1..I_kmax (index 0 unused); I_1 = 1 by the level-one convention."""
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    pts = np.ascontiguousarray(points, dtype=float)
    c = mollifier_constants()[0]
    return _chain_dp_cells(pts, float(tau), c, float(weight), int(kmax))


def pair_integral_direct(points: np.ndarray, tau: float, weight: float) -> float:
    """O(m^2) reference for I_2."""
    c = mollifier_constants()[0]
    return float(_pair_sum_direct(np.ascontiguousarray(points, dtype=float), float(tau), c, float(weight)))


def binomial_assemble(I: np.ndarray, centering: float, k: int) -> tuple[float, np.ndarray]:
    """sum_j C(k-1, j) (-1)^j centering^j I_{k-j}; returns (value, components)."""
    comps = np.array([comb(k - 1, j) * (-1) ** j * centering**j * I[k - j] for j in range(k)])
    return float(comps.sum()), comps


@dataclass(frozen=True, eq=False)
class MollifiedEstimate:
    k: int
    tau: float
    grid_step: float
    value: float
    components: np.ndarray  # j-indexed terms of the binomial expansion
    l_f_tau: float


def mollified_gamma(bm: np.ndarray, tau: float, k: int, min_resolution: float = 8.0) -> MollifiedEstimate:
    """int F_tau(x) gamma~_k(1, x) dx from a Brownian path sampled uniformly on [0, 1].

    ``bm`` holds W at t_i = i / m, i = 0..m.
    """
    bm = np.asarray(bm, dtype=float)
    m = len(bm) - 1
    if m < 1:
        raise ValueError("need at least two samples")
    dt = 1.0 / m
    if tau / np.sqrt(dt) < min_resolution:
        raise CouplingError(f"grid too coarse: tau/sqrt(dt) = {tau / np.sqrt(dt):.2f} < {min_resolution}")
    I = chain_integrals(bm, tau, dt, k)
    lf = Mollifier(tau).l
    value, comps = binomial_assemble(I, lf, k)
    return MollifiedEstimate(k=k, tau=tau, grid_step=dt, value=value, components=comps, l_f_tau=lf)


def brownian_path(m: int, seed: int, stream: int = 0) -> np.ndarray:
    """Standard planar Brownian motion on [0, 1] at m + 1 uniform times."""
    z = philox(seed, stream).standard_normal((m, 2)) / np.sqrt(m)
    out = np.zeros((m + 1, 2))
    np.cumsum(z, axis=0, out=out[1:])
    return out


def clock_calibration(path: CoupledPath) -> np.ndarray:
    """T^c_n / n for both coordinates (should be near 1)."""
    return path.embed_times[:, -1] / path.n


def check_product(law: IncrementLaw) -> None:
    try:
        embedding_levels(law)
    except CouplingError as e:
        raise LawError(str(e)) from e
