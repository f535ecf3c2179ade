"""Step distributions on Z^2 and the hypothesis checklist they must satisfy.

Probabilities are kept as exact rationals. The default law is the product of
two copies of the one-dimensional law q with q(0)=3/16, q(+-1)=3/8,
q(+-2)=1/32, which has unit variance per coordinate.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

Point = tuple[int, int]

DEFAULT_1D: dict[int, Fraction] = {
    0: Fraction(3, 16),
    1: Fraction(3, 8),
    -1: Fraction(3, 8),
    2: Fraction(1, 32),
    -2: Fraction(1, 32),
}


class LawError(ValueError):
    pass


@dataclass(frozen=True)
class IncrementLaw:
    """Finite-support law on Z^2.

    ``factor`` is set when the law is the product of two identical
    one-dimensional laws; the Brownian coupling and the fast transition
    probabilities rely on it.
    """

    atoms: tuple[tuple[Point, Fraction], ...]
    name: str = "custom"
    factor: tuple[tuple[int, Fraction], ...] | None = field(default=None, compare=False)
    # finite support: every moment exists, so the moment exponent is unbounded
    moment_note: str = field(default="finite support; 2+delta moments for every delta", compare=False)

    def __post_init__(self):
        if not self.atoms:
            raise LawError("law has no atoms")
        merged: dict[Point, Fraction] = {}
        for (dx, dy), p in self.atoms:
            p = Fraction(p)
            if p < 0:
                raise LawError(f"negative probability at {(dx, dy)}")
            if p == 0:
                continue
            merged[(int(dx), int(dy))] = merged.get((int(dx), int(dy)), Fraction(0)) + p
        total = sum(merged.values(), Fraction(0))
        if total != 1:
            raise LawError(f"probabilities sum to {total}, not 1")
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))

    @classmethod
    def product(cls, q: dict[int, Fraction], name: str = "product") -> IncrementLaw:
        atoms = tuple(((a, b), pa * pb) for a, pa in q.items() for b, pb in q.items())
        return cls(atoms=atoms, name=name, factor=tuple(sorted(q.items())))

    @classmethod
    def from_json(cls, path: str | Path) -> IncrementLaw:
        rows = json.loads(Path(path).read_text())
        atoms = tuple(((int(r["dx"]), int(r["dy"])), Fraction(int(r["num"]), int(r["den"]))) for r in rows)
        law = cls(atoms=atoms, name=Path(path).stem)
        q = _detect_product(law)
        if q is not None:
            object.__setattr__(law, "factor", q)
        return law

    def to_json(self) -> str:
        return json.dumps(
            [{"dx": x, "dy": y, "num": p.numerator, "den": p.denominator} for (x, y), p in self.atoms]
        )

    @cached_property
    def points(self) -> np.ndarray:
        return np.array([pt for pt, _ in self.atoms], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, p in self.atoms])

    @property
    def max_jump(self) -> int:
        return int(np.abs(self.points).max())

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def prob(self, pt: Point) -> Fraction:
        return dict(self.atoms).get((int(pt[0]), int(pt[1])), Fraction(0))

    def generates_lattice(self) -> bool:
        """Whether the walk can reach every point of Z^2."""
        return _generates_z2([pt for pt, _ in self.atoms])

    def is_symmetric(self) -> bool:
        table = dict(self.atoms)
        return all(table.get((-x, -y), Fraction(0)) == p for (x, y), p in self.atoms)


def _generates_z2(points: list[Point]) -> bool:
    # subgroup generated by the support; index = gcd of all 2x2 minors
    # taken over differences (the walk may also use the atoms themselves)
    vecs = [np.array(p) for p in points]
    vecs += [np.array(a) - np.array(b) for a in points for b in points]
    g = 0
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            g = math.gcd(g, int(vecs[i][0] * vecs[j][1] - vecs[i][1] * vecs[j][0]))
            if g == 1:
                return True
    return False


def _detect_product(law: IncrementLaw):
    table = dict(law.atoms)
    xs = sorted({x for (x, _) in table})
    marg = {x: sum((p for (a, _), p in table.items() if a == x), Fraction(0)) for x in xs}
    ys = sorted({y for (_, y) in table})
    marg_y = {y: sum((p for (_, b), p in table.items() if b == y), Fraction(0)) for y in ys}
    if marg != marg_y:
        return None
    for a in xs:
        for b in xs:
            if table.get((a, b), Fraction(0)) != marg[a] * marg[b]:
                return None
    return tuple(sorted(marg.items()))


def default_law() -> IncrementLaw:
    return IncrementLaw.product(DEFAULT_1D, name="default")


def builtin_law(name: str) -> IncrementLaw:
    """Named laws. Only "default" satisfies all four hypotheses."""
    quarter = Fraction(1, 4)
    if name == "default":
        return default_law()
    if name == "srw":
        return IncrementLaw(atoms=tuple((pt, quarter) for pt in [(1, 0), (-1, 0), (0, 1), (0, -1)]), name="srw")
    if name == "diagonal":
        return IncrementLaw(atoms=tuple((pt, quarter) for pt in [(1, 1), (1, -1), (-1, 1), (-1, -1)]), name="diagonal")
    if name == "king":
        pts = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
        return IncrementLaw(atoms=tuple((pt, Fraction(1, 8)) for pt in pts), name="king")
    raise LawError(f"unknown law {name!r}")


def resolve_law(spec: str) -> IncrementLaw:
    """Built-in name or path to a JSON law file."""
    if Path(spec).suffix == ".json" or Path(spec).exists():
        return IncrementLaw.from_json(spec)
    return builtin_law(spec)


def characteristic_function(law: IncrementLaw, theta) -> np.ndarray | float:
    """phi(theta) = sum_x p(x) cos(theta . x); ``theta`` has trailing axis 2."""
    if not law.is_symmetric():
        raise LawError("characteristic function is complex for a non-symmetric law")
    theta = np.asarray(theta, dtype=float)
    phase = theta @ law.points.T
    out = np.cos(phase) @ law.probs
    return float(out) if out.ndim == 0 else out


def one_minus_phi(law: IncrementLaw, theta) -> np.ndarray:
    """1 - phi(theta) without cancellation near theta = 0."""
    theta = np.asarray(theta, dtype=float)
    s = np.sin(0.5 * (theta @ law.points.T))
    return 2.0 * (s * s) @ law.probs


@dataclass(frozen=True)
class LawValidationReport:
    mean: tuple[Fraction, Fraction]
    covariance: tuple[tuple[Fraction, Fraction], tuple[Fraction, Fraction]]
    symmetric: bool
    aperiodicity_margin: float
    phi_grid_resolution: int
    generates_lattice: bool = True
    normalized_margin: float = float("nan")

    @property
    def compliant(self) -> bool:
        identity = ((Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))
        return (
            self.mean == (0, 0)
            and self.covariance == identity
            and self.symmetric
            and self.aperiodicity_margin > 0
        )

    def failures(self) -> list[str]:
        out = []
        if self.mean != (0, 0):
            out.append("mean")
        if self.covariance != ((1, 0), (0, 1)):
            out.append("covariance")
        if not self.symmetric:
            out.append("symmetry")
        if not self.aperiodicity_margin > 0:
            out.append("strong aperiodicity")
        return out

    def as_dict(self) -> dict:
        return {
            "mean": [str(m) for m in self.mean],
            "covariance": [[str(c) for c in row] for row in self.covariance],
            "symmetric": self.symmetric,
            "aperiodicity_margin": self.aperiodicity_margin,
            "phi_grid_resolution": self.phi_grid_resolution,
            "generates_lattice": self.generates_lattice,
            "normalized_margin": self.normalized_margin,
            "compliant": self.compliant,
        }


def _phi_scan(law: IncrementLaw, grid_resolution: int):
    if grid_resolution < 64:
        raise LawError("grid_resolution must be >= 64")
    t = np.linspace(-np.pi, np.pi, grid_resolution + 1)
    th = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    # distance to the nearest point of 2 pi Z^2 (the grid only reaches the corners)
    dist = np.hypot(*(th - 2 * np.pi * np.round(th / (2 * np.pi))).T)
    keep = dist >= 2 * np.pi / grid_resolution
    # complex form so that non-symmetric laws are handled too
    phi = np.abs(np.exp(1j * (th[keep] @ law.points.T)) @ law.probs)
    return phi, dist[keep]


def aperiodicity_margin(law: IncrementLaw, grid_resolution: int = 256) -> float:
    """1 - max |phi| over [-pi, pi]^2 minus balls of radius 2 pi / resolution around 2 pi Z^2."""
    phi, _ = _phi_scan(law, grid_resolution)
    return float(max(0.0, 1.0 - phi.max()))


def normalized_aperiodicity_margin(law: IncrementLaw, grid_resolution: int = 256) -> float:
    """min of (1 - |phi(theta)|) / min(1, dist(theta, 2 pi Z^2)^2) over the same grid.

    The plain margin is dominated by the quadratic dip of 1 - phi at the
    excluded ball's edge; this ratio stays of order one for strongly
    aperiodic laws and drops to 0 when |phi| = 1 somewhere off 2 pi Z^2.
    """
    phi, dist = _phi_scan(law, grid_resolution)
    return float(max(0.0, ((1.0 - phi) / np.minimum(dist * dist, 1.0)).min()))


def validate(law: IncrementLaw, grid_resolution: int = 256) -> LawValidationReport:
    mean = tuple(sum((p * pt[c] for pt, p in law.atoms), Fraction(0)) for c in range(2))
    cov = tuple(
        tuple(sum((p * pt[a] * pt[b] for pt, p in law.atoms), Fraction(0)) - mean[a] * mean[b] for b in range(2))
        for a in range(2)
    )
    return LawValidationReport(
        mean=mean,
        covariance=cov,
        symmetric=law.is_symmetric(),
        aperiodicity_margin=aperiodicity_margin(law, grid_resolution),
        phi_grid_resolution=grid_resolution,
        generates_lattice=law.generates_lattice(),
        normalized_margin=normalized_aperiodicity_margin(law, grid_resolution),
    )
