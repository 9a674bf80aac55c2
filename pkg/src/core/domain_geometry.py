# src/core/domain_geometry.py
"""
Plane domains invariant under subalgebras of the Euclidean algebra with dilations.

Generators are a d/dx1 + b d/dx2 from the span of
    X1 = d/dx1, X2 = d/dx2, J12 = -x2 d/dx1 + x1 d/dx2, D12 = x1 d/dx1 + x2 d/dx2.
Each catalogued subalgebra has an absolute invariant and a short list of
generic domains; check_domain_invariance flows sampled points and tests
that interior points stay inside and boundary points stay on the boundary.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import IndeterminateError, UnsupportedError
from .expr_core import equivalent

logger = logging.getLogger(__name__)

x1, x2 = sp.symbols("x1 x2", real=True)

CLOSED_FORM_TOL = 1e-8
NUMERIC_TOL = 1e-6
WINDOW = 1e6


@dataclass(frozen=True)
class PlanarGenerator:
    a: sp.Expr
    b: sp.Expr
    name: str = "g"

    def __post_init__(self):
        object.__setattr__(self, "a", sp.sympify(self.a))
        object.__setattr__(self, "b", sp.sympify(self.b))

    @classmethod
    def combination(cls, weights: Dict[str, float], name: Optional[str] = None) -> "PlanarGenerator":
        """sum of weight * basis generator, e.g. {'J12': 1, 'D12': beta}"""
        unknown = set(weights) - set(BASIS)
        if unknown:
            raise UnsupportedError(f"not in the basis X1, X2, J12, D12: {sorted(unknown)}")
        a = sum((sp.sympify(c) * BASIS[n].a for n, c in weights.items()), sp.S.Zero)
        b = sum((sp.sympify(c) * BASIS[n].b for n, c in weights.items()), sp.S.Zero)
        label = name or " + ".join(n if c == 1 else f"{c}*{n}" for n, c in weights.items())
        return cls(a, b, label)

    def apply(self, expr: sp.Expr) -> sp.Expr:
        return self.a * sp.diff(expr, x1) + self.b * sp.diff(expr, x2)

    @property
    def is_affine(self) -> bool:
        return all(sp.Poly(c, x1, x2).total_degree() <= 1 if c.is_polynomial(x1, x2) else False
                   for c in (self.a, self.b))

    def matrix(self) -> np.ndarray:
        """Augmented 3x3 generator of x' = A x + c"""
        rows = []
        for c in (self.a, self.b):
            rows.append([float(sp.diff(c, x1)), float(sp.diff(c, x2)), float(c.subs({x1: 0, x2: 0}))])
        rows.append([0.0, 0.0, 0.0])
        return np.array(rows)

    def flow(self, points: np.ndarray, s: float) -> np.ndarray:
        """Image of an (N, 2) array of points after group parameter s"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_affine:
            M = expm(s * self.matrix())
            homogeneous = np.hstack([points, np.ones((len(points), 1))])
            return (homogeneous @ M.T)[:, :2]
        return self._numeric_flow(points, s)

    def _numeric_flow(self, points: np.ndarray, s: float) -> np.ndarray:
        if s == 0:
            return points.copy()
        f = sp.lambdify((x1, x2), (self.a, self.b), modules="numpy")
        n = len(points)

        def rhs(_, y):
            p, q = y[:n], y[n:]
            a, b = f(p, q)
            return np.concatenate([np.broadcast_to(a, p.shape), np.broadcast_to(b, q.shape)])

        def escape(_, y):
            return WINDOW - np.max(np.abs(y))
        escape.terminal = True

        sol = solve_ivp(rhs, (0.0, s), np.concatenate([points[:, 0], points[:, 1]]), method="DOP853",
                        rtol=1e-10, atol=1e-12, events=escape)
        if sol.t_events[0].size or not sol.success:
            raise IndeterminateError(f"flow of {self.name} leaves the numeric window",
                                     {"s": s, "window": WINDOW})
        end = sol.y[:, -1]
        return np.column_stack([end[:n], end[n:]])

    @property
    def flow_tol(self) -> float:
        return CLOSED_FORM_TOL if self.is_affine else NUMERIC_TOL

    def text(self) -> str:
        return f"{self.name} = ({self.a})*d/dx1 + ({self.b})*d/dx2"


BASIS: Dict[str, PlanarGenerator] = {
    "X1": PlanarGenerator(1, 0, "X1"),
    "X2": PlanarGenerator(0, 1, "X2"),
    "J12": PlanarGenerator(-x2, x1, "J12"),
    "D12": PlanarGenerator(x1, x2, "D12"),
}


def spiral_generator(beta: float) -> PlanarGenerator:
    return PlanarGenerator.combination({"J12": 1, "D12": beta}, name=f"J12+{beta:g}*D12")


# ---------------------------------------------------------------------------
# Subalgebras and invariants
# ---------------------------------------------------------------------------

SUBALGEBRAS = ("X1", "J12", "D12", "J12+bD12", "X1,X2", "X1,D12", "J12,D12")


def subalgebra(sub_id: str, beta: float = 0.3) -> Tuple[PlanarGenerator, ...]:
    if sub_id not in SUBALGEBRAS:
        raise UnsupportedError(f"unknown subalgebra '{sub_id}'; known: {', '.join(SUBALGEBRAS)}")
    if sub_id == "J12+bD12":
        return (spiral_generator(beta),)
    return tuple(BASIS[name] for name in sub_id.split(","))


def absolute_invariant(sub_id: str, beta=sp.Symbol("beta", positive=True)) -> sp.Expr:
    """
    Generating absolute invariant of a catalogued subalgebra (1 for the
    two-dimensional ones, which have none). The spiral invariant is
    r exp(beta atan(x1/x2)), valid on x2 > 0.
    """
    table = {
        "X1": x2,
        "J12": x1 ** 2 + x2 ** 2,
        "D12": x1 / x2,
        "J12+bD12": sp.sqrt(x1 ** 2 + x2 ** 2) * sp.exp(beta * sp.atan(x1 / x2)),
        "X1,X2": sp.S.One,
        "X1,D12": sp.S.One,
        "J12,D12": sp.S.One,
    }
    if sub_id not in table:
        raise UnsupportedError(f"no invariant catalogued for '{sub_id}'")
    invariant = table[sub_id]
    generators = (PlanarGenerator.combination({"J12": 1, "D12": beta}, "J12+bD12"),) \
        if sub_id == "J12+bD12" else subalgebra(sub_id)
    for g in generators:
        if not equivalent(g.apply(invariant), 0):
            raise UnsupportedError(f"{g.name} does not annihilate {invariant}")
    return invariant


def invariant_drift(g: PlanarGenerator, invariant: sp.Expr, points: np.ndarray,
                    s_values: Sequence[float]) -> float:
    """Max |I(flow_s(p)) - I(p)| over points and parameters"""
    f = sp.lambdify((x1, x2), invariant, modules="numpy")
    points = np.asarray(points, dtype=float)
    base = f(points[:, 0], points[:, 1])
    worst = 0.0
    for s in s_values:
        moved = g.flow(points, s)
        worst = max(worst, float(np.max(np.abs(f(moved[:, 0], moved[:, 1]) - base))))
    return worst


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

@dataclass
class PlanarDomain:
    """
    family      strip, half-plane, disc-interior, disc-exterior, annulus, wedge,
                spiral-band, full-plane, polygon
    relations   boundary lies in the union of {F = 0}
    """
    family: str
    params: Dict[str, float]
    contains: Callable[[np.ndarray, np.ndarray], np.ndarray]
    relations: Tuple[sp.Expr, ...]
    sampler: Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray]]
    vertices: Optional[np.ndarray] = None
    notes: List[str] = field(default_factory=list)

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.vertices is not None:
            return _segment_distance(points, self.vertices)
        if not self.relations:
            return np.zeros(len(points))
        values = []
        for F in self.relations:
            f = sp.lambdify((x1, x2), F, modules="numpy")
            values.append(np.abs(np.broadcast_to(f(points[:, 0], points[:, 1]), (len(points),))))
        return np.min(np.vstack(values), axis=0)

    def inside(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.contains(points[:, 0], points[:, 1]), dtype=bool)

    def sample(self, n: int, seed: int = 20240611) -> Tuple[np.ndarray, np.ndarray]:
        """(interior points, boundary points)"""
        return self.sampler(np.random.default_rng(seed), n)

    def text(self) -> str:
        params = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({params})"


def _segment_distance(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    best = np.full(len(points), np.inf)
    for p, q in zip(vertices, np.roll(vertices, -1, axis=0)):
        d = q - p
        t = np.clip(((points - p) @ d) / (d @ d), 0.0, 1.0)
        nearest = p + t[:, None] * d
        best = np.minimum(best, np.linalg.norm(points - nearest, axis=1))
    return best


def _box(rng, n, lo=-3.0, hi=3.0):
    return rng.uniform(lo, hi, n)


def strip(C1: float = 0.5, C2: float = 2.0) -> PlanarDomain:
    def sampler(rng, n):
        interior = np.column_stack([_box(rng, n), rng.uniform(C1, C2, n)])
        edge = np.where(rng.random(n) < 0.5, C1, C2)
        return interior, np.column_stack([_box(rng, n), edge])
    return PlanarDomain("strip", {"C1": C1, "C2": C2}, lambda p, q: (q > C1) & (q < C2),
                        (x2 - C1, x2 - C2), sampler)


def half_plane(C: float = 0.0) -> PlanarDomain:
    def sampler(rng, n):
        interior = np.column_stack([_box(rng, n), C + rng.uniform(0.05, 3.0, n)])
        return interior, np.column_stack([_box(rng, n), np.full(n, C)])
    return PlanarDomain("half-plane", {"C": C}, lambda p, q: q > C, (x2 - C,), sampler)


def _radial(rng, n, r_lo, r_hi):
    theta = rng.uniform(-math.pi, math.pi, n)
    r = rng.uniform(r_lo, r_hi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def disc_interior(C2: float = 4.0) -> PlanarDomain:
    def sampler(rng, n):
        return _radial(rng, n, 0.0, math.sqrt(C2) * 0.98), _radial(rng, n, math.sqrt(C2), math.sqrt(C2))
    return PlanarDomain("disc-interior", {"C2": C2}, lambda p, q: p * p + q * q < C2,
                        (x1 ** 2 + x2 ** 2 - C2,), sampler)


def disc_exterior(C1: float = 1.0) -> PlanarDomain:
    def sampler(rng, n):
        return _radial(rng, n, math.sqrt(C1) * 1.02, 3.0 * math.sqrt(C1)), \
            _radial(rng, n, math.sqrt(C1), math.sqrt(C1))
    return PlanarDomain("disc-exterior", {"C1": C1}, lambda p, q: p * p + q * q > C1,
                        (x1 ** 2 + x2 ** 2 - C1,), sampler)


def annulus(C1: float = 1.0, C2: float = 4.0) -> PlanarDomain:
    r1, r2 = math.sqrt(C1), math.sqrt(C2)

    def sampler(rng, n):
        edge = _radial(rng, n, 1.0, 1.0) * np.where(rng.random(n) < 0.5, r1, r2)[:, None]
        return _radial(rng, n, r1 * 1.01, r2 * 0.99), edge
    return PlanarDomain("annulus", {"C1": C1, "C2": C2}, lambda p, q: (p * p + q * q > C1) & (p * p + q * q < C2),
                        (x1 ** 2 + x2 ** 2 - C1, x1 ** 2 + x2 ** 2 - C2), sampler)


def wedge(C1: float = -1.0, C2: float = 2.0) -> PlanarDomain:
    """C1 < x1/x2 < C2 on x2 > 0"""
    def sampler(rng, n):
        q = rng.uniform(0.1, 3.0, n)
        interior = np.column_stack([q * rng.uniform(C1, C2, n), q])
        q = rng.uniform(0.1, 3.0, n)
        edge = np.column_stack([q * np.where(rng.random(n) < 0.5, C1, C2), q])
        return interior, edge

    def contains(p, q):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (q > 0) & (p / q > C1) & (p / q < C2)
    return PlanarDomain("wedge", {"C1": C1, "C2": C2}, contains, (x1 - C1 * x2, x1 - C2 * x2), sampler)


def spiral_band(C1: float = 1.0, C2: float = 2.0, beta: float = 0.3) -> PlanarDomain:
    """
    Points between the spirals r = C1 exp(beta theta) and r = C2 exp(beta theta).
    z = log r - beta atan2(x2, x1) - log C1 jumps by 2 pi beta across the negative
    x1 axis, so membership uses z mod 2 pi beta and the relations use sin(z/(2 beta)).
    """
    width = math.log(C2 / C1)
    if not 0 < width < 2 * math.pi * beta:
        raise UnsupportedError("spiral band needs 0 < log(C2/C1) < 2 pi beta")

    def z_of(p, q, C):
        return np.log(np.hypot(p, q)) - beta * np.arctan2(q, p) - math.log(C)

    def contains(p, q):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.mod(z_of(p, q, C1), 2 * math.pi * beta) < width

    def sampler(rng, n):
        theta = rng.uniform(-math.pi + 0.01, math.pi - 0.01, n)
        z = rng.uniform(0.02 * width, 0.98 * width, n)
        r = C1 * np.exp(z + beta * theta)
        interior = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        theta = rng.uniform(-math.pi + 0.01, math.pi - 0.01, n)
        r = np.where(rng.random(n) < 0.5, C1, C2) * np.exp(beta * theta)
        return interior, np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    def relation(C):
        z = sp.log(sp.sqrt(x1 ** 2 + x2 ** 2)) - beta * sp.atan2(x2, x1) - math.log(C)
        return sp.sin(z / (2 * beta))

    domain = PlanarDomain("spiral-band", {"C1": C1, "C2": C2, "beta": beta}, contains,
                          (relation(C1), relation(C2)), sampler)
    domain.notes.append("atan2 seam on the negative x1 axis is absorbed by the periodic relations")
    return domain


def full_plane() -> PlanarDomain:
    def sampler(rng, n):
        return np.column_stack([_box(rng, n), _box(rng, n)]), np.empty((0, 2))
    return PlanarDomain("full-plane", {}, lambda p, q: np.ones(np.shape(p), dtype=bool), (), sampler)


def polygon(vertices: Sequence[Tuple[float, float]] = ((0, 1), (1, 1), (0, 2))) -> PlanarDomain:
    """Convex polygon, counter-clockwise or not; a negative-control fixture"""
    V = np.asarray(vertices, dtype=float)
    edges = list(zip(V, np.roll(V, -1, axis=0)))
    orientation = np.sign(sum((q[0] - p[0]) * (q[1] + p[1]) for p, q in edges)) or 1.0

    def contains(p, q):
        ok = np.ones(np.shape(p), dtype=bool)
        for a, b in edges:
            cross = (b[0] - a[0]) * (q - a[1]) - (b[1] - a[1]) * (p - a[0])
            ok &= -orientation * cross > 0
        return ok

    def sampler(rng, n):
        w = rng.dirichlet(np.ones(len(V)), n) * 0.98 + 0.02 / len(V)
        interior = w @ V
        which = rng.integers(0, len(V), n)
        t = rng.random(n)[:, None]
        edge = V[which] * (1 - t) + np.roll(V, -1, axis=0)[which] * t
        return interior, edge

    lines = tuple((b[1] - a[1]) * (x1 - a[0]) - (b[0] - a[0]) * (x2 - a[1]) for a, b in edges)
    return PlanarDomain("polygon", {"n": float(len(V))}, contains, lines, sampler, vertices=V)


def generic_domains(sub_id: str, beta: float = 0.3) -> List[PlanarDomain]:
    """Generic invariant domains of a catalogued subalgebra with representative parameters"""
    catalogue = {
        "X1": lambda: [strip(0.5, 2.0), half_plane(1.0)],
        "J12": lambda: [disc_interior(4.0), disc_exterior(1.0), annulus(1.0, 4.0)],
        "D12": lambda: [wedge(-1.0, 2.0), half_plane(0.0)],
        "J12+bD12": lambda: [spiral_band(1.0, 2.0, beta)],
        "X1,X2": lambda: [full_plane()],
        "X1,D12": lambda: [half_plane(0.0)],
        "J12,D12": lambda: [full_plane()],
    }
    if sub_id not in catalogue:
        raise UnsupportedError(f"unknown subalgebra '{sub_id}'; known: {', '.join(SUBALGEBRAS)}")
    return catalogue[sub_id]()


@dataclass
class DomainVerdict:
    domain: str
    generator: str
    invariant: bool
    escaped: int
    boundary_drift: float
    tol: float

    def text(self) -> str:
        mark = "✅" if self.invariant else "❌"
        return (f"{mark} {self.domain} under {self.generator}: "
                f"{self.escaped} interior point(s) escaped, boundary drift {self.boundary_drift:.2e}")


def check_domain_invariance(domain: PlanarDomain, g: PlanarGenerator, s_range: float = 1.0, n: int = 100,
                            steps: int = 10, seed: int = 20240611) -> DomainVerdict:
    interior, edge = domain.sample(n, seed)
    tol = g.flow_tol
    escaped, drift = 0, 0.0
    for s in np.linspace(-s_range, s_range, 2 * steps + 1):
        if s == 0:
            continue
        escaped += int(np.count_nonzero(~domain.inside(g.flow(interior, s))))
        if len(edge):
            moved = g.flow(edge, s)
            drift = max(drift, float(np.max(domain.boundary_distance(moved))))
    verdict = DomainVerdict(domain.text(), g.name, escaped == 0 and drift < tol, escaped, drift, tol)
    logger.info(verdict.text())
    return verdict


def check_catalogue(beta: float = 0.3, s_range: float = 1.0, n: int = 100,
                    seed: int = 20240611) -> List[DomainVerdict]:
    """Every generic domain against every generator of its subalgebra"""
    out = []
    for sub_id in SUBALGEBRAS:
        for domain in generic_domains(sub_id, beta):
            for g in subalgebra(sub_id, beta):
                out.append(check_domain_invariance(domain, g, s_range, n, seed=seed))
    return out
