"""Potential kernel G(x) = sum_{n>=1} [p(n,0,x) - p(n,0,e1)] of a planar walk.

Two independent routes:

* spectral: G(x) = (2 pi)^-2 int phi/(1-phi) (cos(theta.x) - cos(theta_1)) dtheta
  over [-pi, pi]^2.  The square is cut into four triangles with a vertex at
  the origin and each triangle is integrated in polar coordinates with
  tensor Gauss-Legendre rules.  In those coordinates the integrand times the
  Jacobian is analytic (1 - phi and the cosine difference both vanish to
  second order at theta = 0), so no singular correction is needed.
* time sum: exact convolution powers of the law summed to a horizon N, with
  the tail removed by fitting S(N) = G + a/N + b/N^2 + ... (the summands
  decay like (1 - |x|^2) / (4 pi n^2) for symmetric laws).

The (P_1 - I) G = -p(1, 0, .) identity ties the two to the martingale checks.
"""
from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .increment_law import IncrementLaw, LawError, aperiodicity_margin, one_minus_phi

log = logging.getLogger(__name__)

E1 = np.array([1, 0])
MAX_BOX = 4096
CACHE_MAGIC = b"RILTKRN1"


class KernelError(RuntimeError):
    pass


# ---------------------------------------------------------------- transition probabilities


@dataclass
class TransitionGrid:
    """p(n, 0, x) for 1 <= n <= N.

    Product laws keep the one-dimensional factors q_n (p = q_n(x1) q_n(x2));
    other laws keep the full two-dimensional slices.
    """

    law: IncrementLaw
    horizon: int
    factors: list[np.ndarray] | None = None  # q_n on [-nJ, nJ]
    slices: list[np.ndarray] | None = None  # p_n on [-nJ, nJ]^2

    @property
    def max_jump(self) -> int:
        return self.law.max_jump

    def slice(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.horizon:
            raise IndexError(n)
        if self.slices is not None:
            return self.slices[n - 1]
        q = self.factors[n - 1]
        return np.outer(q, q)

    def p(self, n: int, x) -> np.ndarray:
        """p(n, 0, x) for an (..., 2) array of points; zero outside the reachable box."""
        x = np.asarray(x, dtype=np.int64)
        r = n * self.max_jump
        inside = np.all(np.abs(x) <= r, axis=-1)
        xc = np.clip(x, -r, r) + r
        if self.slices is not None:
            vals = self.slices[n - 1][xc[..., 0], xc[..., 1]]
        else:
            q = self.factors[n - 1]
            vals = q[xc[..., 0]] * q[xc[..., 1]]
        return np.where(inside, vals, 0.0)


def _factor_array(law: IncrementLaw) -> np.ndarray:
    q = dict(law.factor)
    j = max(abs(a) for a in q)
    return np.array([float(q.get(a, 0)) for a in range(-j, j + 1)])


def _law_array(law: IncrementLaw) -> np.ndarray:
    j = law.max_jump
    arr = np.zeros((2 * j + 1, 2 * j + 1))
    for (a, b), p in law.atoms:
        arr[a + j, b + j] = float(p)
    return arr


def transition_probabilities(law: IncrementLaw, N: int) -> TransitionGrid:
    """Exact repeated convolution (in doubles) up to horizon N."""
    j = law.max_jump
    side = 2 * N * j + 1
    if law.factor is not None:
        q1 = _factor_array(law)
        out, q = [], np.ones(1)
        for _ in range(N):
            q = np.convolve(q, q1)
            out.append(q)
        return TransitionGrid(law=law, horizon=N, factors=out)
    if side > MAX_BOX:
        raise KernelError(
            f"transition box {side}x{side} exceeds {MAX_BOX}x{MAX_BOX}; "
            f"the last slice alone needs {side * side * 8 / 2**20:.0f} MiB"
        )
    total = sum((2 * n * j + 1) ** 2 for n in range(1, N + 1)) * 8
    if total > 2**31:
        raise KernelError(f"storing {N} slices needs {total / 2**20:.0f} MiB")
    base = _law_array(law)
    out, p = [], np.ones((1, 1))
    for _ in range(N):
        p = _conv2(p, base)
        out.append(p)
    return TransitionGrid(law=law, horizon=N, slices=out)


def _conv2(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    ka, kb = k.shape
    out = np.zeros((a.shape[0] + ka - 1, a.shape[1] + kb - 1))
    for i in range(ka):
        for j in range(kb):
            if k[i, j]:
                out[i : i + a.shape[0], j : j + a.shape[1]] += k[i, j] * a
    return out


def return_probabilities(law: IncrementLaw, N: int) -> np.ndarray:
    """p(n, 0, 0) for n = 0..N (entry 0 is 1)."""
    out = np.empty(N + 1)
    out[0] = 1.0
    if law.factor is not None:
        q1 = _factor_array(law)
        q = np.ones(1)
        for n in range(1, N + 1):
            q = np.convolve(q, q1)
            out[n] = q[len(q) // 2] ** 2
        return out
    grid = transition_probabilities(law, N)
    for n in range(1, N + 1):
        out[n] = grid.p(n, (0, 0))
    return out


def kernel_timesum(law: IncrementLaw, x, horizons=(1000, 2000, 4000, 8000, 16000), order: int = 3):
    """G(x) from the time series, tail removed by a polynomial fit in 1/N.

    ``x`` may be one point or an (m, 2) array; partial sums for all points
    share one pass over the horizons.
    """
    pts = np.asarray(x, dtype=np.int64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    N = max(horizons)
    marks = set(horizons)
    partial = {}
    acc = np.zeros(len(pts))
    reach = int(np.abs(pts).max(initial=1))
    if law.factor is not None:
        q1 = _factor_array(law)
        J = len(q1) // 2
        R = N * J + max(reach, 1) + J
        q = np.zeros(2 * R + 1)
        q[R] = 1.0
        for n in range(1, N + 1):
            q = np.convolve(q, q1, mode="same")
            acc += q[R + pts[:, 0]] * q[R + pts[:, 1]] - q[R + 1] * q[R]
            if n in marks:
                partial[n] = acc.copy()
    else:
        grid = transition_probabilities(law, N)
        for n in range(1, N + 1):
            acc += grid.p(n, pts) - float(grid.p(n, E1))
            if n in marks:
                partial[n] = acc.copy()
    ns = np.array(sorted(partial), dtype=float)
    S = np.array([partial[int(n)] for n in ns])
    A = np.vander(1.0 / ns, order + 1, increasing=True)
    out = np.linalg.lstsq(A, S, rcond=None)[0][0]
    return float(out[0]) if single else out


# ---------------------------------------------------------------- spectral route


@dataclass(frozen=True)
class QuadratureSpec:
    rule: str = "polar-triangle-gauss-legendre"
    n_radial: int = 128
    n_angular: int = 128

    def as_dict(self) -> dict:
        return {"rule": self.rule, "n_radial": self.n_radial, "n_angular": self.n_angular}

    @classmethod
    def for_reach(cls, reach: int) -> QuadratureSpec:
        """Node counts for points with |x1| + |x2| <= reach.

        The phase theta.x spans about pi * reach along each triangle; Gauss
        rules resolve that with roughly half as many nodes, plus a margin.
        """
        n = 64 + int(math.ceil(math.pi * max(reach, 1) / 2))
        return cls(n_radial=n, n_angular=n)


def quadrature_nodes(law: IncrementLaw, spec: QuadratureSpec):
    """Nodes theta_j and weights w_j with G(x) = sum_j w_j (cos theta_j.x - cos theta_j1).

    Only the right (theta_1 = pi edge) and top (theta_2 = pi edge) triangles
    are laid out; the opposite two are their images under theta -> -theta,
    which leaves the integrand of a symmetric law unchanged.
    """
    if not law.is_symmetric():
        raise LawError("spectral kernel needs a symmetric law")
    gs, ws = np.polynomial.legendre.leggauss(spec.n_radial)
    ga, wa = np.polynomial.legendre.leggauss(spec.n_angular)
    s = 0.5 * (gs + 1.0)
    ws = 0.5 * ws
    alpha = ga * np.pi / 4
    wa = wa * np.pi / 4
    A, S = np.meshgrid(alpha, s, indexing="ij")
    rmax = np.pi / np.cos(A)
    r = S * rmax
    right = np.stack([r * np.cos(A), r * np.sin(A)], axis=-1).reshape(-1, 2)
    jac = (np.outer(wa, ws) * rmax**2 * S).ravel()
    theta = np.concatenate([right, right[:, ::-1]])
    jac = 2.0 * np.concatenate([jac, jac])
    omp = one_minus_phi(law, theta)
    w = jac * (1.0 - omp) / omp / (2 * np.pi) ** 2
    return theta, w


def _check_aperiodic(law: IncrementLaw) -> None:
    if aperiodicity_margin(law, 128) <= 0:
        raise LawError(f"law {law.name!r} is not strongly aperiodic; 1 - phi has zeros off 2 pi Z^2")


def kernel_spectral(law: IncrementLaw, x, spec: QuadratureSpec | None = None, chunk: int = 1 << 22) -> np.ndarray:
    """G at an (m, 2) array of points (or a single point) by quadrature."""
    _check_aperiodic(law)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if spec is None:
        spec = QuadratureSpec.for_reach(int(np.abs(pts).sum(axis=1).max()) + 1)
    theta, w = quadrature_nodes(law, spec)
    out = np.zeros(len(pts))
    step = max(1, chunk // len(theta))
    for a in range(0, len(pts), step):
        p = pts[a : a + step]
        # cos(u) - cos(v) = -2 sin((u+v)/2) sin((u-v)/2), exact zero at x = e1
        plus = theta @ ((p + E1) / 2).T
        minus = theta @ ((p - E1) / 2).T
        out[a : a + step] = -2.0 * (w @ (np.sin(plus) * np.sin(minus)))
    return out if np.ndim(x) > 1 else out[0]


def _spectral_box(law: IncrementLaw, radius: int, spec: QuadratureSpec, chunk: int = 1 << 15) -> np.ndarray:
    """G on [-R, R] x [0, R] through one complex matrix product per node chunk."""
    theta, w = quadrature_nodes(law, spec)
    xs = np.arange(-radius, radius + 1)
    ys = np.arange(0, radius + 1)
    T = np.zeros((len(xs), len(ys)))
    for a in range(0, len(theta), chunk):
        th = theta[a : a + chunk]
        e1 = np.exp(1j * np.outer(th[:, 0], xs))
        e2 = np.exp(1j * np.outer(th[:, 1], ys)) * w[a : a + chunk, None]
        T += (e1.T @ e2).real
    return T - T[radius + 1, 0]


# ---------------------------------------------------------------- table


@dataclass
class PotentialKernelTable:
    """Dense G values on the box [-R, R]^2 plus sparse extra points.

    ``kappa`` is the constant of G(x) ~ kappa + (1/pi) log(1/|x|); it is NaN
    until :func:`fit_kappa` has been run (``build_kernel`` does it by default).
    """

    law: IncrementLaw
    radius: int
    values: np.ndarray  # shape (2R+1, 2R+1), values[x1+R, x2+R]
    quadrature_spec: QuadratureSpec
    quadrature_error: float = float("nan")
    kappa: float = float("nan")
    kappa_fit_range: tuple[float, float] | None = None
    extra: dict[tuple[int, int], float] = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        """G at lattice points; points off the box go through the slow spectral path."""
        x = np.asarray(x, dtype=np.int64)
        R = self.radius
        inside = np.all(np.abs(x) <= R, axis=-1)
        if np.all(inside):
            return self.values[x[..., 0] + R, x[..., 1] + R]
        flat = x.reshape(-1, 2)
        flat_in = inside.reshape(-1)
        out = np.empty(len(flat))
        out[flat_in] = self.values[flat[flat_in, 0] + R, flat[flat_in, 1] + R]
        miss = [tuple(map(int, p)) for p in flat[~flat_in]]
        todo = sorted({p for p in miss if p not in self.extra})
        if todo:
            log.info("kernel cache miss on %d points beyond radius %d; spectral slow path", len(todo), R)
            self.extra.update(zip(todo, kernel_spectral(self.law, np.array(todo))))
        out[~flat_in] = [self.extra[p] for p in miss]
        return out.reshape(x.shape[:-1]) if x.ndim > 1 else out[0]

    def G_hat_scaled(self, n) -> np.ndarray:
        """Stand-in for G(sqrt(n) e1) from the log asymptotic: kappa - log(n) / (2 pi)."""
        if np.isnan(self.kappa):
            raise KernelError("kappa not fitted")
        return self.kappa - np.log(n) / (2 * np.pi)

    def Gn(self, n, x) -> np.ndarray:
        """G_n(x) = G(x) - G(sqrt(n) e1)."""
        if np.any(np.asarray(n) < 1):
            raise ValueError("n must be >= 1")
        return self(x) - self.G_hat_scaled(n)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """All cached (point, value) pairs, box first."""
        R = self.radius
        g = np.arange(-R, R + 1)
        X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = self.values.reshape(-1)
        if self.extra:
            ex = np.array(list(self.extra.keys()), dtype=np.int64)
            X = np.concatenate([X, ex])
            vals = np.concatenate([vals, np.array(list(self.extra.values()))])
        return X, vals

    def add_points(self, pts) -> None:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        outside = pts[np.any(np.abs(pts) > self.radius, axis=1)]
        new = sorted({tuple(map(int, p)) for p in outside} - set(self.extra))
        if new:
            self.extra.update(zip(new, kernel_spectral(self.law, np.array(new))))

    # -- persistence: magic, header length, JSON header, then (int32, int32, float64) records
    def save(self, path: str | Path) -> None:
        X, vals = self.points()
        header = json.dumps(
            {
                "law": self.law.digest,
                "law_atoms": self.law.to_json(),
                "quadrature_spec": self.quadrature_spec.as_dict(),
                "radius": self.radius,
                "quadrature_error": self.quadrature_error,
                "kappa": self.kappa,
                "kappa_fit_range": self.kappa_fit_range,
            }
        ).encode()
        rec = np.empty(len(X), dtype=[("x", "<i4"), ("y", "<i4"), ("g", "<f8")])
        rec["x"], rec["y"], rec["g"] = X[:, 0], X[:, 1], vals
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(rec.tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path, law: IncrementLaw) -> PotentialKernelTable:
        raw = Path(path).read_bytes()
        if raw[:8] != CACHE_MAGIC:
            raise KernelError(f"{path}: not a kernel cache file")
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12 : 12 + hlen])
        if header["law"] != law.digest:
            raise KernelError(f"{path}: cache built for law {header['law']}, not {law.digest}")
        rec = np.frombuffer(raw[12 + hlen :], dtype=[("x", "<i4"), ("y", "<i4"), ("g", "<f8")])
        R = header["radius"]
        side = 2 * R + 1
        box = rec[: side * side]
        values = box["g"].reshape(side, side).copy()
        extra = {(int(a), int(b)): float(g) for a, b, g in rec[side * side :]}
        fr = header["kappa_fit_range"]
        return cls(
            law=law,
            radius=R,
            values=values,
            quadrature_spec=QuadratureSpec(**header["quadrature_spec"]),
            quadrature_error=header["quadrature_error"],
            kappa=header["kappa"],
            kappa_fit_range=tuple(fr) if fr else None,
            extra=extra,
        )


def cache_dir() -> Path:
    return Path(os.environ.get("RILT_CACHE_DIR", Path.home() / ".cache" / "rilt"))


def cache_path(law: IncrementLaw, radius: int, spec: QuadratureSpec, kappa_ring) -> Path:
    tag = f"{spec.n_radial}x{spec.n_angular}"
    ring = "none" if kappa_ring is None else f"{kappa_ring[0]}-{kappa_ring[1]}"
    return cache_dir() / f"kernel-{law.digest}-R{radius}-{tag}-k{ring}.bin"


def ring_points(r_min: float, r_max: float, count: int, seed: int = 0) -> np.ndarray:
    """Distinct lattice points with r_min <= |x| <= r_max, drawn uniformly by area."""
    rng = np.random.default_rng(seed)
    pts: set[tuple[int, int]] = set()
    while len(pts) < count:
        r = np.sqrt(rng.uniform(r_min**2, r_max**2, 4 * count))
        a = rng.uniform(0, 2 * np.pi, 4 * count)
        cand = np.rint(np.stack([r * np.cos(a), r * np.sin(a)], axis=1)).astype(np.int64)
        norm = np.hypot(*cand.T)
        for p in cand[(norm >= r_min) & (norm <= r_max)]:
            pts.add((int(p[0]), int(p[1])))
            if len(pts) == count:
                break
    return np.array(sorted(pts), dtype=np.int64)


def build_kernel(
    law: IncrementLaw,
    radius: int = 64,
    kappa_ring: tuple[float, float] | None = (32.0, 64.0),
    ring_count: int = 200,
    use_cache: bool = True,
) -> PotentialKernelTable:
    """Tabulate G on [-R, R]^2 and fit kappa on ``kappa_ring``.

    Ring points beyond the box are evaluated individually and kept in the
    table's sparse part.
    """
    _check_aperiodic(law)
    spec = QuadratureSpec.for_reach(2 * radius + 2)
    path = cache_path(law, radius, spec, kappa_ring)
    if use_cache and path.exists():
        return PotentialKernelTable.load(path, law)
    half = _spectral_box(law, radius, spec)
    values = np.empty((2 * radius + 1, 2 * radius + 1))
    values[:, radius:] = half
    values[:, :radius] = half[::-1, :0:-1]
    # error estimate: rerun a coarser rule on the hardest points and the origin
    probe = np.array([[radius, radius], [radius, 0], [0, 0], [radius // 2, radius // 3]])
    coarse = QuadratureSpec(n_radial=int(0.75 * spec.n_radial), n_angular=int(0.75 * spec.n_angular))
    err = float(np.abs(kernel_spectral(law, probe, coarse) - values[probe[:, 0] + radius, probe[:, 1] + radius]).max())
    table = PotentialKernelTable(law=law, radius=radius, values=values, quadrature_spec=spec, quadrature_error=err)
    if kappa_ring is not None:
        table.add_points(ring_points(*kappa_ring, ring_count))
        fit_kappa(table, *kappa_ring)
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.save(path)
    return table


# ---------------------------------------------------------------- estimates


@dataclass
class KappaFit:
    kappa: float
    shells: np.ndarray  # shell centre radii
    residual: np.ndarray  # max |G + log|x|/pi - kappa| per shell
    count: int


def fit_kappa(table: PotentialKernelTable, r_min: float, r_max: float, shell_width: float = 0.0) -> KappaFit:
    """kappa = mean of G(x) + log|x|/pi over the cached points of the ring.

    Residuals are grouped into shells of width ``shell_width`` (default:
    one tenth of the ring). The table's kappa is updated.
    """
    X, vals = table.points()
    norm = np.hypot(X[:, 0], X[:, 1])
    sel = (norm >= r_min) & (norm <= r_max)
    if sel.sum() < 50:
        raise KernelError(f"only {int(sel.sum())} cached points in ring [{r_min}, {r_max}]; need >= 50")
    adj = vals[sel] + np.log(norm[sel]) / np.pi
    kappa = float(adj.mean())
    width = shell_width or (r_max - r_min) / 10
    edges = np.arange(r_min, r_max + width, width)
    shells, resid = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (norm[sel] >= a) & (norm[sel] < b)
        if m.any():
            shells.append(0.5 * (a + b))
            resid.append(np.abs(adj[m] - kappa).max())
    table.kappa = kappa
    table.kappa_fit_range = (float(r_min), float(r_max))
    return KappaFit(kappa=kappa, shells=np.array(shells), residual=np.array(resid), count=int(sel.sum()))


def shell_residual(table: PotentialKernelTable, kappa: float, r: float, half_width: float) -> float:
    """max |G(x) + log|x|/pi - kappa| over cached points with ||x| - r| <= half_width."""
    X, vals = table.points()
    norm = np.hypot(X[:, 0], X[:, 1])
    m = np.abs(norm - r) <= half_width
    if not m.any():
        raise KernelError(f"no cached points near |x| = {r}")
    return float(np.abs(vals[m] + np.log(norm[m]) / np.pi - kappa).max())


def generator_residual(table: PotentialKernelTable, z) -> np.ndarray:
    """|sum_y p(1,0,y) G(z+y) - G(z) + p(1,0,z)| at each point z."""
    z = np.atleast_2d(np.asarray(z, dtype=np.int64))
    law = table.law
    pg = sum(p * table(z + pt) for pt, p in zip(law.points, law.probs))
    table_law = {tuple(map(int, pt)): p for pt, p in zip(law.points, law.probs)}
    p1 = np.array([table_law.get((int(a), int(b)), 0.0) for a, b in z])
    return np.abs(pg - table(z) + p1)


@dataclass
class HolderReport:
    max_ratio: float
    worst_pair: tuple[tuple[int, int], tuple[int, int]]
    ratios: np.ndarray


def kernel_holder_check(table: PotentialKernelTable, pairs) -> HolderReport:
    """max over distinct pairs of |G(x)-G(y)| / (|x-y| / min(1+|x|, 1+|y|))^(2/3)."""
    pairs = np.asarray(pairs, dtype=np.int64)
    x, y = pairs[:, 0], pairs[:, 1]
    keep = np.any(x != y, axis=1)
    x, y = x[keep], y[keep]
    scale = np.minimum(1 + np.hypot(*x.T), 1 + np.hypot(*y.T))
    ratio = np.abs(table(x) - table(y)) / (np.hypot(*(x - y).T) / scale) ** (2 / 3)
    i = int(np.argmax(ratio))
    return HolderReport(
        max_ratio=float(ratio[i]),
        worst_pair=(tuple(map(int, x[i])), tuple(map(int, y[i]))),
        ratios=ratio,
    )


def random_pairs(radius: int, count: int, seed: int = 0) -> np.ndarray:
    """Pairs of distinct lattice points in the disc of the given radius, half of them nearest neighbours."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = rng.integers(-radius, radius + 1, size=2)
        if rng.random() < 0.5:
            y = x + rng.integers(-2, 3, size=2)
        else:
            y = rng.integers(-radius, radius + 1, size=2)
        if np.hypot(*x) <= radius and np.hypot(*y) <= radius and np.any(x != y):
            out.append((x, y))
    return np.array(out)


def round_scaled(x, n: int) -> np.ndarray:
    """Nearest lattice point to x * sqrt(n); ties go toward -infinity."""
    v = np.asarray(x, dtype=float) * np.sqrt(n)
    return np.ceil(v - 0.5).astype(np.int64)
