# src/core/numerics.py
"""
Numerical validation of symbolic results.

- residual_on_grid: plug a closed-form solution into a PDE on a grid
- the flux ODE phi' = phi^2 (q0 + lam w phi) of the exponential and inner
  reductions, its implicit first integral and the far-field quadratic
- lambda_scan: the similarity exponent picked by far-field matching
- mol_solve: method of lines for the polar problem and its mass balance
- lift_residual / group_spot_check: reduced solutions and operator flows
  pushed back into the parent problem
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp, trapezoid
from scipy.sparse import diags
from tqdm import tqdm

from .config import Settings
from .errors import ConstructionError, NumericalError, UnsupportedError
from .expr_core import VariableContext, dsl_str, is_zero, proportional, substitute
from .invariance import solve_locus
from .pde_dsl import BvpSpec
from .prolongation import VectorField, prolong

logger = logging.getLogger(__name__)

BLOWUP = 1e6
REPEATED_ROOT_TOL = 1e-12


# ---------------------------------------------------------------------------
# Closed-form solutions
# ---------------------------------------------------------------------------

def with_solution(expr: sp.Expr, solution: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Replace u and its jets by the solution and its derivatives"""
    expr = sp.sympify(expr)
    bindings = {}
    for s in ctx.dependent_atoms(expr):
        index = ctx.jet_index(s)
        bindings[s] = sp.diff(solution, *[ctx.symbol(v) for v in index]) if index else solution
    return expr.subs(bindings, simultaneous=True) if bindings else expr


def _function_bindings(ctx: VariableContext, functions: Optional[Dict[str, sp.Expr]]) -> Dict[sp.Expr, sp.Expr]:
    return {ctx.declared_application(name): sp.sympify(value) for name, value in (functions or {}).items()}


def _parameter_values(ctx: VariableContext, values: Optional[Dict[str, float]]) -> Dict[sp.Symbol, float]:
    return {ctx.symbol(name): value for name, value in (values or {}).items()}


@dataclass
class GridResidual:
    max_abs: float
    evaluated: int
    singular: int

    def __float__(self):
        return self.max_abs


def residual_on_grid(solution: sp.Expr, pde: Union[BvpSpec, sp.Expr], grid: Dict[str, Sequence[float]],
                     values: Optional[Dict[str, float]] = None, ctx: Optional[VariableContext] = None,
                     functions: Optional[Dict[str, sp.Expr]] = None) -> GridResidual:
    """
    Max |PDE residual| of a closed-form solution over a tensor grid.

    Derivatives are symbolic; parameters are bound from `values`, opaque
    functions from `functions` (name -> expression in the declared
    arguments). Points where the residual is not finite are skipped.
    """
    if isinstance(pde, BvpSpec):
        bvp = pde.resolved()
        ctx, residual = bvp.ctx, bvp.equation
    else:
        if ctx is None:
            raise ConstructionError("a bare residual needs its VariableContext")
        residual = sp.sympify(pde)
    solution = ctx.rebind(sp.sympify(solution))
    residual = with_solution(residual, solution, ctx)
    if functions:
        residual = substitute(residual, _function_bindings(ctx, functions), ctx, normal=False)
    residual = residual.doit().subs(_parameter_values(ctx, values))

    names = [v for v in ctx.independents if v in grid]
    missing = [v for v in ctx.independents if v not in grid and residual.has(ctx.symbol(v))]
    if missing:
        raise ConstructionError(f"grid has no values for {', '.join(missing)}")
    leftover = residual.free_symbols - {ctx.symbol(v) for v in names}
    if leftover:
        raise ConstructionError(f"unbound symbols in the residual: {sorted(s.name for s in leftover)}")

    f = sp.lambdify([ctx.symbol(v) for v in names], residual, modules="numpy")
    mesh = np.meshgrid(*[np.asarray(grid[v], dtype=float) for v in names], indexing="ij")
    with np.errstate(all="ignore"):
        out = np.broadcast_to(np.asarray(f(*mesh), dtype=complex), mesh[0].shape)
    finite = np.isfinite(out) & (np.abs(out.imag) <= 1e-12 * (1 + np.abs(out.real)))
    singular = int(out.size - np.count_nonzero(finite))
    if not np.any(finite):
        raise NumericalError("the residual is singular at every grid point", {"points": int(out.size)})
    if singular:
        logger.warning(f"⚠️ {singular} singular grid point(s) skipped")
    worst = float(np.max(np.abs(out.real[finite])))
    logger.info(f"📐 residual on {out.size} points: max {worst:.3e}")
    return GridResidual(worst, int(out.size) - singular, singular)


def example2_solution(ctx: VariableContext, C0=2, C1=1) -> sp.Expr:
    """u = (C0 + C1 exp(-lam1 x) + lam2 (m+1) t)^(1/(1+m)) of the reaction-diffusion-convection problem"""
    m, lam1, lam2 = ctx.symbols("m", "lam1", "lam2")
    t, x = ctx.t, ctx.space_symbols[0]
    return (C0 + C1 * sp.exp(-lam1 * x) + lam2 * (m + 1) * t) ** (1 / (1 + m))


def derive_boundary_function(solution: sp.Expr, bvp: BvpSpec, function: str) -> sp.Expr:
    """Solve the finite condition that mentions `function` for it on the given solution"""
    bvp = bvp.resolved()
    ctx = bvp.ctx
    target = ctx.declared_application(function)
    for bc in bvp.finite_bcs:
        if not bc.relation.has(target):
            continue
        coordinate, value = solve_locus(bc.locus, ctx)
        relation = with_solution(bc.relation, solution, ctx).subs(coordinate, value)
        roots = sp.solve(relation, target)
        if len(roots) != 1:
            raise ConstructionError(f"cannot solve {dsl_str(relation)} = 0 for {dsl_str(target)}")
        return sp.simplify(roots[0])
    raise ConstructionError(f"no boundary condition mentions {function}")


def holds_on_solution(expr: sp.Expr, solution: sp.Expr, ctx: VariableContext,
                      functions: Optional[Dict[str, sp.Expr]] = None, locus: Optional[sp.Expr] = None,
                      settings: Optional[Settings] = None) -> bool:
    """expr vanishes identically once u, the opaque functions and (optionally) the locus are substituted"""
    settings = settings or Settings()
    value = with_solution(expr, solution, ctx)
    if functions:
        value = substitute(value, _function_bindings(ctx, functions), ctx, normal=False)
    if locus is not None:
        coordinate, at = solve_locus(locus, ctx)
        value = value.subs(coordinate, at)
    return is_zero(sp.simplify(value.doit()), ctx, seed=settings.seed, samples=settings.samples,
                   tol=settings.tol)


# ---------------------------------------------------------------------------
# Flux ODE: phi' = phi^2 (q0 + lam w phi)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FarFieldRoots:
    """Roots of lam phi^2 + q0 phi + 1 = 0"""
    q0: float
    lam: float
    roots: Tuple[float, ...]
    repeated: bool

    @property
    def positive(self) -> Optional[float]:
        """The positive root reached from small w*phi (the smaller one when both are positive)"""
        candidates = [r for r in self.roots if r > 0]
        return min(candidates) if candidates else None

    @property
    def negative(self) -> Tuple[float, ...]:
        return tuple(r for r in self.roots if r < 0)


def phi_infinity(q0: float, lam: float) -> FarFieldRoots:
    if lam == 0:
        if q0 == 0:
            raise NumericalError("q0 = lam = 0: the far-field equation has no root")
        return FarFieldRoots(q0, lam, (-1.0 / q0,), False)
    disc = q0 * q0 - 4 * lam
    if disc < -REPEATED_ROOT_TOL:
        raise NumericalError(f"complex far-field roots: real profiles need lam <= q0^2/4 = {q0 * q0 / 4:g}",
                             {"q0": q0, "lam": lam})
    if abs(disc) <= REPEATED_ROOT_TOL:
        return FarFieldRoots(q0, lam, (-2.0 / q0,), True)
    q_lam = math.sqrt(disc)
    roots = tuple(sorted(((-q0 + q_lam) / (2 * lam), (-q0 - q_lam) / (2 * lam))))
    return FarFieldRoots(q0, lam, roots, False)


@dataclass
class OdeProfile:
    """
    Solution of phi' = phi^2 (q0 + lam w phi) sampled on a log grid.

    Internally psi = w*phi as a function of s = log w, which turns the ODE
    into the autonomous psi_s = psi (lam psi^2 + q0 psi + 1).
    """
    q0: float
    lam: float
    s: np.ndarray
    psi: np.ndarray
    dense: Optional[Callable] = None
    blowup: Optional[float] = None
    far_field_mismatch: Optional[float] = None
    variable: str = "omega"
    tol: float = 1e-8

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.s)

    @property
    def phi(self) -> np.ndarray:
        return self.psi / self.omega

    @property
    def roots(self) -> FarFieldRoots:
        return phi_infinity(self.q0, self.lam)

    @property
    def bounded(self) -> bool:
        return self.blowup is None

    def value(self, w) -> np.ndarray:
        """phi at arbitrary points inside the integrated range"""
        if self.dense is None:
            raise NumericalError("profile was integrated without dense output")
        w = np.asarray(w, dtype=float)
        s = np.log(w.ravel())
        if np.any(s < self.s[0] - 1e-12) or np.any(s > self.s[-1] + 1e-12):
            raise NumericalError(f"{self.variable} outside the integrated range",
                                 {"range": (float(self.omega[0]), float(self.omega[-1]))})
        return (self.dense(s)[0] / w.ravel()).reshape(w.shape)

    @property
    def C(self) -> Optional[float]:
        try:
            return float(np.median(implicit_constant(self)))
        except NumericalError:
            return None

    def table(self) -> Tuple[Tuple[str, str], List[Tuple[float, float]]]:
        return (self.variable, "phi"), list(zip(self.omega.tolist(), self.phi.tolist()))


def _integrate(q0: float, lam: float, w0: float, phi0: float, w_end: float, rtol: float,
               samples: int, variable: str) -> OdeProfile:
    if w0 <= 0 or w_end <= w0:
        raise NumericalError(f"need 0 < {variable}0 < {variable}_end", {"start": w0, "end": w_end})
    if phi0 <= 0:
        raise NumericalError("the starting value must be positive", {variable: w0})

    def rhs(s, y):
        psi = y[0]
        return [psi * (lam * psi * psi + q0 * psi + 1.0)]

    def escape(s, y):
        return BLOWUP - abs(y[0])
    escape.terminal = True

    s0, s1 = math.log(w0), math.log(w_end)
    sol = solve_ivp(rhs, (s0, s1), [w0 * phi0], method="DOP853", rtol=rtol, atol=rtol * 1e-3,
                    dense_output=True, events=escape)
    if sol.status == -1:
        raise NumericalError(f"integration failed: {sol.message}", {variable: float(math.exp(sol.t[-1]))})
    blowup = float(math.exp(sol.t_events[0][0])) if sol.t_events[0].size else None
    s_stop = sol.t[-1]
    s_grid = np.linspace(s0, s_stop, samples)
    psi = sol.sol(s_grid)[0]
    if blowup is not None:
        logger.info(f"⚠️ lam = {lam:g}: profile blows up at {variable} = {blowup:.4g}")
    return OdeProfile(q0, lam, s_grid, psi, sol.sol, blowup, None, variable, rtol)


def integrate_profile(q0: float, lam: float, start: Tuple[float, float] = (0.1, 1.0), end: float = 50.0,
                      tol: float = 1e-8, samples: int = 400) -> OdeProfile:
    """phi(omega) from phi(start[0]) = start[1] up to omega = end"""
    return _integrate(q0, lam, start[0], start[1], end, tol * 1e-3, samples, "omega")


def implicit_constant(profile: OdeProfile) -> np.ndarray:
    """
    First integral of the flux ODE along the profile.

    General case: log C with C = phi / sqrt(P) * |R|^(q0 / (2 q_lam)),
    P = lam psi^2 + q0 psi + 1, R = (q_lam + q0 + 2 lam psi)/(q_lam - q0 - 2 lam psi).
    lam = 0: 1/phi + q0 w. q0 = 0: 1/phi^2 + lam w^2. lam = q0^2/4 (a = -2/q0):
    log|psi/(psi - a)|/a^2 - 1/(a (psi - a)) - lam s.
    """
    q0, lam = profile.q0, profile.lam
    psi, s, w, phi = profile.psi, profile.s, profile.omega, profile.phi
    if lam == 0:
        return 1.0 / phi + q0 * w
    if q0 == 0:
        return 1.0 / phi ** 2 + lam * w ** 2
    disc = q0 * q0 - 4 * lam
    if disc < -REPEATED_ROOT_TOL:
        raise NumericalError("no real first integral for lam > q0^2/4", {"q0": q0, "lam": lam})
    if abs(disc) <= REPEATED_ROOT_TOL:
        a = -2.0 / q0
        gap = psi - a
        if np.any(gap == 0) or np.any(np.sign(gap) != np.sign(gap[0])):
            where = float(w[np.argmax(np.sign(gap) != np.sign(gap[0]))])
            raise NumericalError("trajectory crosses the repeated root", {profile.variable: where})
        return np.log(np.abs(psi / gap)) / a ** 2 - 1.0 / (a * gap) - lam * s

    q_lam = math.sqrt(disc)
    P = lam * psi ** 2 + q0 * psi + 1.0
    bad = P <= 0
    if np.any(bad):
        raise NumericalError("square-root argument is not positive",
                             {profile.variable: float(w[np.argmax(bad)])})
    num = q_lam + q0 + 2 * lam * psi
    den = q_lam - q0 - 2 * lam * psi
    R = num / den
    flips = np.sign(R) != np.sign(R[0])
    if np.any(flips) or np.any(R == 0):
        raise NumericalError("the bracketed ratio changes sign along the trajectory",
                             {profile.variable: float(w[np.argmax(flips | (R == 0))])})
    if R[0] < 0:
        logger.debug("🔍 bracketed ratio is negative; using its modulus (constant phase absorbed in C)")
    return np.log(phi) - 0.5 * np.log(P) + q0 / (2 * q_lam) * np.log(np.abs(R))


def implicit_residual(profile: OdeProfile) -> float:
    """Max deviation of the first integral from its median along the profile"""
    if not profile.bounded:
        raise NumericalError("profile blew up", {profile.variable: profile.blowup})
    values = implicit_constant(profile)
    deviation = float(np.max(np.abs(values - np.median(values))))
    logger.info(f"📐 first integral varies by {deviation:.3e} (q0 = {profile.q0:g}, lam = {profile.lam:g})")
    return deviation


def asymptote_deviation(profile: OdeProfile, beyond: float = 30.0) -> float:
    """Max |w phi / phi_inf - 1| for w > beyond, phi_inf the positive far-field root"""
    root = profile.roots.positive
    if root is None:
        raise NumericalError("no positive far-field root", {"q0": profile.q0, "lam": profile.lam})
    mask = profile.omega > beyond
    if not np.any(mask):
        raise NumericalError(f"profile does not reach {profile.variable} = {beyond:g}")
    return float(np.max(np.abs(profile.psi[mask] / root - 1.0)))


def solve_inner_ode(q0: float, lam: float, y_range: Tuple[float, float] = (1e-6, 1e60), tol: float = 1e-8,
                    V0: float = 1.0, samples: int = 400) -> OdeProfile:
    """
    V^-2 V_y = lam y V + q0 from a regularized start V(y0) = V0.

    The far-field mismatch is |V (-q0 y)/2 - 1| at the end of the range;
    it is infinite when the profile blows up first.
    """
    profile = _integrate(q0, lam, y_range[0], V0, y_range[1], tol, samples, "y")
    if profile.bounded and q0 < 0:
        profile.far_field_mismatch = abs(profile.psi[-1] * (-q0) / 2.0 - 1.0)
    else:
        profile.far_field_mismatch = math.inf
    return profile


@dataclass
class LambdaScan:
    q0: float
    grid: np.ndarray
    mismatch: np.ndarray
    best: float
    blowups: List[float] = field(default_factory=list)

    @property
    def target(self) -> float:
        return self.q0 ** 2 / 4

    def table(self) -> Tuple[Tuple[str, str], List[Tuple[float, float]]]:
        return ("lam", "mismatch"), list(zip(self.grid.tolist(), self.mismatch.tolist()))


def default_lambda_grid(q0: float, points: int = 20) -> np.ndarray:
    """points equally spaced values in (0, q0^2/2]; q0^2/4 is always a node for even counts"""
    top = q0 * q0 / 2
    return np.round(np.linspace(top / points, top, points), 12)


def lambda_scan(q0: float, grid: Optional[Sequence[float]] = None, y_range: Tuple[float, float] = (1e-6, 1e60),
                tol: float = 1e-8, show_progress: bool = False) -> LambdaScan:
    """Similarity exponent minimizing the far-field mismatch against V ~ 2/(-q0 y)"""
    grid = default_lambda_grid(q0) if grid is None else np.round(np.asarray(grid, dtype=float), 12)
    if grid.size == 0:
        raise NumericalError("empty lam grid")
    mismatch = np.full(grid.shape, math.inf)
    blowups = []
    for i, lam in enumerate(tqdm(grid, desc="lam scan", disable=not show_progress)):
        try:
            profile = solve_inner_ode(q0, float(lam), y_range, tol)
        except NumericalError as exc:
            logger.warning(f"⚠️ lam = {lam:g}: {exc}")
            continue
        if not profile.bounded:
            blowups.append(float(lam))
        mismatch[i] = profile.far_field_mismatch
    if not np.any(np.isfinite(mismatch)):
        raise NumericalError("no lam in the grid gives a bounded profile", {"q0": q0})
    best = float(grid[int(np.argmin(mismatch))])
    logger.info(f"✅ lam scan for q0 = {q0:g}: best {best:g} (q0^2/4 = {q0 * q0 / 4:g})")
    return LambdaScan(q0, grid, mismatch, best, blowups)


# ---------------------------------------------------------------------------
# Method of lines for v_t = (v^-2 v_theta)_theta - 1/v
# ---------------------------------------------------------------------------

@dataclass
class MolSolution:
    """Polar problem on [0, pi/2 - delta]; v = 1/w, mass = integral of v cos(theta)"""
    q0: float
    theta: np.ndarray
    times: np.ndarray
    v: np.ndarray          # shape (len(times), len(theta))
    mass: np.ndarray
    metadata: Dict[str, object] = field(default_factory=dict)

    def mass_rate(self, start_fraction: float = 0.5) -> float:
        """Slope of the mass over the tail of the run"""
        mask = self.times >= self.times[-1] * start_fraction
        return float(np.polyfit(self.times[mask], self.mass[mask], 1)[0])

    def table(self) -> Tuple[Tuple[str, str], List[Tuple[float, float]]]:
        return ("t", "mass"), list(zip(self.times.tolist(), self.mass.tolist()))


def _check_polar(reduced, tol_settings: Optional[Settings] = None):
    ctx = reduced.ctx
    if ctx.time is None or len(ctx.space) != 1:
        raise UnsupportedError(f"{reduced.name}: method of lines needs (t, theta) problems")
    theta = ctx.space[0]
    v, v_t = ctx.u, ctx.jet((ctx.time,))
    v_th, v_thth = ctx.jet((theta,)), ctx.jet((theta, theta))
    expected = v_t - (v ** -2 * v_thth - 2 * v ** -3 * v_th ** 2 - 1 / v)
    seed = (tol_settings or Settings()).seed
    if not proportional(reduced.equations[0], expected, ctx, seed=seed):
        raise UnsupportedError(f"{reduced.name}: equation is not v_t = (v^-2 v_theta)_theta - 1/v")


def mol_solve(q0: float, n: int = 200, delta: float = 1e-2, t_end: float = 0.5, samples: int = 51,
              tol: float = 1e-8, reduced=None, initial: Optional[Callable] = None) -> MolSolution:
    """
    Integrate the polar problem in w = 1/v: w_t = w^2 (w_thth + w).

    The flux condition v^-2 v_theta = q0 at theta = 0 becomes w_theta = -q0;
    cos(theta) v_theta / v = 1 is imposed at the last node as
    w_theta = -w / cos(theta). Both enter through ghost nodes.
    """
    if reduced is not None:
        _check_polar(reduced)
    if n < 4 or not 0 < delta < math.pi / 2:
        raise NumericalError("need n >= 4 and 0 < delta < pi/2", {"n": n, "delta": delta})
    theta = np.linspace(0.0, math.pi / 2 - delta, n + 1)
    h = theta[1] - theta[0]
    cos_end = math.cos(theta[-1])
    if initial is None:
        w0 = np.cos(theta) * (1.0 - q0 * np.sin(theta))
    else:
        w0 = 1.0 / np.asarray(initial(theta), dtype=float)
    if np.any(w0 <= 0):
        raise NumericalError("initial profile must be positive",
                             {"theta": float(theta[np.argmax(w0 <= 0)])})

    def rhs(t, w):
        left = w[1] + 2 * h * q0
        right = w[-2] - 2 * h * w[-1] / cos_end
        padded = np.concatenate(([left], w, [right]))
        lap = (padded[2:] - 2 * padded[1:-1] + padded[:-2]) / (h * h)
        return w * w * (lap + w)

    def positivity(t, w):
        return float(np.min(w))
    positivity.terminal = True
    positivity.direction = -1

    sparsity = diags([1, 1, 1], [-1, 0, 1], shape=(n + 1, n + 1))
    times = np.linspace(0.0, t_end, samples)
    logger.info(f"[Step 1/2] method of lines: {n + 1} nodes, delta = {delta:g}, t_end = {t_end:g}")
    sol = solve_ivp(rhs, (0.0, t_end), w0, method="BDF", t_eval=times, rtol=tol, atol=tol * 1e-2,
                    jac_sparsity=sparsity, events=positivity)
    if sol.t_events[0].size:
        w_bad = sol.y_events[0][0]
        raise NumericalError("solution lost positivity",
                             {"t": float(sol.t_events[0][0]), "theta": float(theta[int(np.argmin(w_bad))])})
    if not sol.success:
        raise NumericalError(f"time integration failed: {sol.message}", {"t": float(sol.t[-1])})

    w = sol.y.T
    v = 1.0 / w
    logger.info("[Step 2/2] mass series")
    mass = np.array([trapezoid(np.cos(theta) / row, theta) for row in w])
    metadata = {
        "n": n,
        "delta": delta,
        "t_end": t_end,
        "left": "v^-2 v_theta = q0 via ghost node",
        "right": f"cos(theta) v_theta / v = 1 at theta = pi/2 - {delta:g}",
        "tol": tol,
    }
    result = MolSolution(q0, theta, sol.t, v, mass, metadata)
    logger.info(f"✅ mass rate {result.mass_rate():.5f} (expected {-q0:g})")
    return result


# ---------------------------------------------------------------------------
# Back to the parent problem
# ---------------------------------------------------------------------------

def _difference(f: Callable, var: str, h: float) -> Callable:
    def g(point):
        up, down = dict(point), dict(point)
        up[var] = point[var] + h
        down[var] = point[var] - h
        return (f(up) - f(down)) / (2 * h)
    return g


def lift_residual(ansatz, equation: sp.Expr, profile: Callable, points: Dict[str, np.ndarray],
                  values: Optional[Dict[str, float]] = None, h: float = 1e-3) -> float:
    """
    Max |parent residual| of u = U(x, phi(I(x))) on the given points.

    `ansatz` reduces to one invariant and `profile` evaluates phi there;
    jets of u come from central differences of the lifted solution.
    """
    parent = ansatz.parent
    if len(ansatz.invariants) != 1:
        raise UnsupportedError("lifting is implemented for reductions to one invariant")
    (name, invariant), = ansatz.invariants.items()
    bound = _parameter_values(parent, values)
    old = [parent.symbol(v) for v in parent.independents]
    U = sp.lambdify(old + [ansatz.ctx.u], sp.sympify(ansatz.U).subs(bound), modules="numpy")
    I = sp.lambdify(old, sp.sympify(invariant).subs(bound), modules="numpy")

    def lifted(point):
        args = [point[v] for v in parent.independents]
        return U(*args, profile(I(*args)))

    equation = sp.sympify(equation).subs(bound)
    jets = parent.dependent_atoms(equation)
    if max((len(parent.jet_index(s)) for s in jets), default=0) > 2:
        raise UnsupportedError("lifting supports equations of order <= 2")
    leftover = equation.free_symbols - set(jets) - set(old)
    if leftover:
        raise ConstructionError(f"unbound symbols: {sorted(s.name for s in leftover)}")
    F = sp.lambdify(old + jets, equation, modules="numpy")

    point = {v: np.asarray(points[v], dtype=float) for v in parent.independents}
    jet_values = []
    for s in jets:
        g = lifted
        for var in parent.jet_index(s):
            g = _difference(g, var, h)
        jet_values.append(g(point))
    residual = F(*[point[v] for v in parent.independents], *jet_values)
    worst = float(np.max(np.abs(residual)))
    logger.info(f"📐 lifted residual over {np.size(residual)} points: {worst:.3e}")
    return worst


@dataclass
class GroupSpotCheck:
    operator: str
    points: int
    max_locus: float
    max_relation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_locus < self.tol and self.max_relation < self.tol


def group_spot_check(X: VectorField, bvp: BvpSpec, values: Optional[Dict[str, float]] = None,
                     functions: Optional[Dict[str, sp.Expr]] = None, s_max: float = 0.1, points: int = 8,
                     seed: int = 20240611, tol: float = 1e-4) -> GroupSpotCheck:
    """
    Flow points of every finite boundary manifold along the first prolongation of X
    for |s| <= s_max and measure how far they drift off the locus and the relation.
    """
    bvp = bvp.resolved()
    ctx = bvp.ctx
    bound = _parameter_values(ctx, values)
    bindings = _function_bindings(ctx, functions)

    def prepare(expr):
        expr = sp.sympify(expr)
        if bindings:
            expr = substitute(expr, bindings, ctx, normal=False)
        return expr.doit().subs(bound)

    X = VectorField(prepare(ctx.rebind(sp.sympify(X.xi0))), tuple(prepare(ctx.rebind(sp.sympify(c))) for c in X.xi),
                    prepare(ctx.rebind(sp.sympify(X.eta))), X.conditional, X.name)
    first = prolong(X, 1, ctx)
    first_jets = [ctx.jet(index) for index in first.sigma if len(index) == 1]
    state = [ctx.symbol(v) for v in ctx.independents] + [ctx.u] + first_jets
    coefficients = X.coefficients(ctx)
    speeds = [coefficients.get(v, sp.S.Zero) for v in ctx.independents] + [X.eta]
    speeds += [first.sigma[ctx.jet_index(j)] for j in first_jets]
    velocity = sp.lambdify(state, [sp.sympify(c) for c in speeds], modules="numpy")

    rng = np.random.default_rng(seed)
    worst_locus, worst_relation, count = 0.0, 0.0, 0
    for bc in bvp.finite_bcs:
        locus, relation = prepare(bc.locus), prepare(bc.relation)
        coordinate, value = solve_locus(locus, ctx)
        top = ctx.jet_atoms(relation)
        if not top:
            raise UnsupportedError(f"relation {dsl_str(relation)} has no derivative to solve for")
        solved = sp.solve(relation, top[-1])
        if len(solved) != 1:
            raise UnsupportedError(f"cannot solve {dsl_str(relation)} = 0 for {top[-1]}")
        L = sp.lambdify(state, locus, modules="numpy")
        B = sp.lambdify(state, relation, modules="numpy")
        for _ in range(points):
            start = {s: rng.uniform(0.3, 2.0) for s in state}
            start[coordinate] = float(value.subs({k: v for k, v in start.items() if k != coordinate}))
            start[top[-1]] = float(solved[0].subs({k: v for k, v in start.items() if k != top[-1]}))
            y0 = [start[s] for s in state]
            for direction in (1, -1):
                sol = solve_ivp(lambda s, y: np.asarray(velocity(*y), dtype=float) * direction,
                                (0.0, s_max), y0, method="DOP853", rtol=1e-10, atol=1e-12)
                if not sol.success:
                    raise NumericalError(f"flow of {X.name} failed: {sol.message}", {"start": y0})
                end = sol.y[:, -1]
                worst_locus = max(worst_locus, abs(float(L(*end))))
                worst_relation = max(worst_relation, abs(float(B(*end))))
            count += 1
    check = GroupSpotCheck(X.name, count, worst_locus, worst_relation, tol)
    icon = "✅" if check.passed else "❌"
    logger.info(f"{icon} {X.name} flow: locus drift {worst_locus:.2e}, relation drift {worst_relation:.2e}")
    return check
