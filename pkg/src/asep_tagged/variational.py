"""Obstacle calculus-of-variations problem behind the upper-tail bounds.

Minimize the Bernoulli entropy of the slope,

    K(v) = int_a^b  v' log(v'/rho) + (1 - v') log((1-v')/(1-rho)) du,

over nondecreasing 1-Lipschitz ``v`` with ``v(a) = 0`` staying below a
strictly convex, strictly increasing obstacle ``H``.  Two routes are
implemented and cross-checked: the closed-form minimizers (follow a tangent
line, then the obstacle, then the slope-``rho`` tangent) and a discrete
solver for the exponentially penalized relaxation

    K(v) + int exp(-lambda (H - v)) du,

whose Euler-Lagrange equation is v'' = lambda v'(1-v') exp(-lambda (H-v)).
The relaxation is jointly convex in the grid values, so a damped Newton
iteration with an active-set prefix (slopes clamped at the lower bound eps)
finds the global optimum; uniqueness of the limit is inherited from strict
convexity of the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded

from .model import DomainError, ModelParams, bernoulli_entropy, flux_G


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle problem data: interval [a, b], obstacle H (with derivative)
    and target slope rho."""

    a: float
    b: float
    H: Callable[[float], float]
    dH: Callable[[float], float]
    rho: float

    def __post_init__(self):
        if self.b <= self.a:
            raise DomainError("need a < b")
        if not 0.0 < self.rho < 1.0:
            raise DomainError("rho must lie in (0, 1)")
        self.validate()

    def validate(self, n: int = 64) -> None:
        """Spot-check H >= 0, strict growth and midpoint convexity."""
        us = np.linspace(self.a, self.b, n)
        vals = np.array([self.H(u) for u in us])
        if np.any(vals < -1e-12):
            raise DomainError("obstacle must be nonnegative")
        if np.any(np.diff(vals) < -1e-12):
            raise DomainError("obstacle must be increasing")
        mids = np.array([self.H(0.5 * (x + y)) for x, y in zip(us, us[1:])])
        if np.any(mids > 0.5 * (vals[:-1] + vals[1:]) + 1e-12):
            raise DomainError("obstacle must be convex")


def upper_tail_obstacle(A: float, params: ModelParams, problem: int) -> ObstacleSpec:
    """The obstacle ``H(u) = G(u - A)`` of the two upper-tail problems.

    Problem 1 (A >= gamma) lives on [A - gamma, A + gamma] where G(. - A)
    is strictly increasing; Problem 2 (gamma(1-rho) < A < gamma) on
    [0, A + gamma].
    """
    g = params.gamma
    if problem == 1:
        if A < g:
            raise DomainError("problem 1 requires A >= gamma")
        a = A - g
    elif problem == 2:
        if not g * (1.0 - params.rho) < A < g:
            raise DomainError("problem 2 requires gamma(1-rho) < A < gamma")
        a = 0.0
    else:
        raise DomainError("problem must be 1 or 2")

    def H(u: float) -> float:
        return flux_G(u - A, params)

    def dH(u: float) -> float:
        z = u - A
        if z < -g:
            return 0.0
        if z > g:
            return 1.0
        return 0.5 * (1.0 + z / g)

    return ObstacleSpec(a=a, b=A + g, H=H, dH=dH, rho=params.rho)


def _bisect(f, lo, hi, tol=1e-12, max_iter=200):
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        return None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if hi - lo < tol:
            return mid
        if fm * flo <= 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def critical_points(spec: ObstacleSpec) -> tuple[float | None, float | None]:
    """Solve ``H'(u) = rho`` (z_rho) and ``H'(u) = H(u)/(u - a)`` (y_tan)
    by monotone bisection to 1e-12; None when no solution exists in [a, b]."""
    z_rho = _bisect(lambda u: spec.dH(u) - spec.rho, spec.a, spec.b)

    def tangency(u: float) -> float:
        return spec.dH(u) * (u - spec.a) - spec.H(u)

    # tangency gap is negative near a (H(a) >= 0) and grows by convexity
    y_tan = _bisect(tangency, spec.a + 1e-14, spec.b)
    return z_rho, y_tan


@dataclass(frozen=True)
class Piece:
    """One segment of a piecewise function: linear or analytic."""

    lo: float
    hi: float
    value: Callable[[float], float]
    slope: Callable[[float], float]
    analytic: bool


@dataclass(frozen=True)
class PiecewiseFn:
    """Continuous piecewise function with slope evaluator, v(start) = 0."""

    pieces: tuple[Piece, ...]

    @property
    def lo(self) -> float:
        return self.pieces[0].lo

    @property
    def hi(self) -> float:
        return self.pieces[-1].hi

    def value(self, u: float) -> float:
        if u <= self.lo:
            return self.pieces[0].value(self.lo)
        for pc in self.pieces:
            if u <= pc.hi:
                return pc.value(u)
        return self.pieces[-1].value(self.hi)

    def slope(self, u: float) -> float:
        for pc in self.pieces:
            if u <= pc.hi:
                return pc.slope(u)
        return self.pieces[-1].slope(self.hi)

    def knot_positions(self) -> list[float]:
        return [self.pieces[0].lo] + [pc.hi for pc in self.pieces]


def _line(lo: float, hi: float, v_lo: float, s: float) -> Piece:
    return Piece(lo, hi, lambda u, v=v_lo, a=lo, s=s: v + s * (u - a),
                 lambda u, s=s: s, analytic=False)


def _curve(lo: float, hi: float, f, df) -> Piece:
    return Piece(lo, hi, f, df, analytic=True)


def general_minimizer(spec: ObstacleSpec) -> PiecewiseFn:
    """Closed-form minimizer assembled from the structure cases.

    Cases, detected with 1e-10 tolerances:
      1. H(u) >= rho (u - a) everywhere: the free line of slope rho.
      2. H(a) = 0, H'(a) < rho, z_rho < b: obstacle then slope-rho tangent.
      3. H(a) = 0, H'(b) <= rho: the obstacle itself.
      4. H(a) > 0, H'(a) < rho, y_tan < z_rho < b: tangent line from (a, 0),
         obstacle, then slope-rho tangent.
    Anything else is rejected rather than guessed.
    """
    a, b, rho = spec.a, spec.b, spec.rho
    z_rho, y_tan = critical_points(spec)
    tol = 1e-10
    us = np.linspace(a, b, 512)
    free_line_ok = all(spec.H(u) >= rho * (u - a) - tol for u in us)
    if free_line_ok:
        return PiecewiseFn((_line(a, b, 0.0, rho),))

    h_a = spec.H(a)
    if h_a <= tol and spec.dH(b) <= rho + tol:
        return PiecewiseFn((_curve(a, b, spec.H, spec.dH),))

    if h_a <= tol and spec.dH(a) < rho and z_rho is not None and z_rho < b - tol:
        return PiecewiseFn(
            (
                _curve(a, z_rho, spec.H, spec.dH),
                _line(z_rho, b, spec.H(z_rho), rho),
            )
        )

    if (
        h_a > tol
        and spec.dH(a) < rho
        and y_tan is not None
        and z_rho is not None
        and y_tan < z_rho - tol
        and z_rho < b - tol
    ):
        s0 = spec.dH(y_tan)
        return PiecewiseFn(
            (
                _line(a, y_tan, 0.0, s0),
                _curve(y_tan, z_rho, spec.H, spec.dH),
                _line(z_rho, b, spec.H(z_rho), rho),
            )
        )

    raise DomainError("obstacle outside the four supported structure cases")


def analytic_minimizer(problem: int, A: float, params: ModelParams) -> PiecewiseFn:
    """Closed-form minimizer of the upper-tail problems on [0, A + gamma].

    Problem 1 (A >= gamma): follow ``G(. - A)`` (identically zero up to
    A - gamma) to ``z_rho = gamma(2 rho - 1) + A``, then the slope-rho
    tangent.  Problem 2: the tangent line of slope ``1 - A/gamma`` up to
    ``y_tan = gamma - A``, then the obstacle, then the slope-rho tangent.
    Both start at 0 at the left endpoint and stay below the obstacle.
    """
    g, rho = params.gamma, params.rho
    z_rho = g * (2.0 * rho - 1.0) + A

    def H(u: float) -> float:
        return flux_G(u - A, params)

    def dH(u: float) -> float:
        z = u - A
        if z < -g:
            return 0.0
        if z > g:
            return 1.0
        return 0.5 * (1.0 + z / g)

    if problem == 1:
        if A < g:
            raise DomainError("problem 1 requires A >= gamma")
        return PiecewiseFn(
            (
                _curve(0.0, z_rho, H, dH),
                _line(z_rho, A + g, H(z_rho), rho),
            )
        )
    if problem == 2:
        if not g * (1.0 - rho) < A < g:
            raise DomainError("problem 2 requires gamma(1-rho) < A < gamma")
        y_tan = g - A
        return PiecewiseFn(
            (
                _line(0.0, y_tan, 0.0, 1.0 - A / g),
                _curve(y_tan, z_rho, H, dH),
                _line(z_rho, A + g, H(z_rho), rho),
            )
        )
    raise DomainError("problem must be 1 or 2")


def cost_K(
    v: PiecewiseFn,
    params: ModelParams,
    lo: float | None = None,
    hi: float | None = None,
) -> float:
    """Entropy cost of the slope of ``v``: exact on linear pieces, adaptive
    quadrature (abs tol 1e-10) on analytic ones."""
    rho = params.rho
    total = 0.0
    lo = v.lo if lo is None else lo
    hi = v.hi if hi is None else hi
    for pc in v.pieces:
        a, b = max(pc.lo, lo), min(pc.hi, hi)
        if b - a <= 0.0:
            continue
        if pc.analytic:
            val, _ = quad(
                lambda u: bernoulli_entropy(min(1.0, max(0.0, pc.slope(u))), rho),
                a,
                b,
                epsabs=1e-10,
                limit=200,
            )
            total += val
        else:
            s = pc.slope(0.5 * (a + b))
            if s < -1e-12 or s > 1.0 + 1e-12:
                raise DomainError(f"slope {s} outside [0, 1]")
            total += (b - a) * bernoulli_entropy(min(1.0, max(0.0, s)), rho)
    return total


@dataclass
class RegularizedSolution:
    """Discrete minimizer of the penalized problem on a uniform grid."""

    grid: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    el_residual: float
    iterations: int
    clamped_prefix: int

    def value(self, u: float) -> float:
        return float(np.interp(u, self.grid, self.values))

    def cost(self, params: ModelParams) -> float:
        h = np.array([bernoulli_entropy(min(1.0, max(0.0, s)), params.rho)
                      for s in self.slopes])
        return float(np.sum(h) * (self.grid[1] - self.grid[0]))


def _entropy_dh(s: np.ndarray, rho: float) -> np.ndarray:
    return np.log(s / rho) - np.log((1.0 - s) / (1.0 - rho))


def _entropy_d2h(s: np.ndarray) -> np.ndarray:
    return 1.0 / (s * (1.0 - s))


def solve_lambda_regularized(
    spec: ObstacleSpec,
    lam: float,
    delta: float,
    eps: float,
    grid_step: float,
    max_iter: int = 200,
) -> RegularizedSolution:
    """Minimize the penalized functional over grid functions on [a+delta, b].

    Constraints: slopes in [eps, 1-eps], v(a+delta) in [0, min(H(a+delta),
    delta)].  The boundary value optimizes to its lower bound 0 (the penalty
    is increasing in any uniform shift), and by convexity of the solution the
    slope bound can only bind on an initial run, so the active set is a
    prefix: slopes there are pinned at eps and a damped Newton iteration
    solves the strictly convex reduced problem on the tail.  Returns the
    solution with its discrete Euler-Lagrange residual
    max_i | [h'(s_{i+1}) - h'(s_i)]/step - lam exp(-lam (H_i - v_i)) |
    over unclamped interior nodes.
    """
    if lam <= 0.0 or grid_step <= 0.0:
        raise DomainError("lambda and grid step must be positive")
    a = spec.a + delta
    if eps <= 0.0 or eps > spec.dH(a) + 1e-15:
        raise DomainError("need 0 < eps <= H'(a + delta)")
    n = max(8, int(round((spec.b - a) / grid_step)))
    grid = np.linspace(a, spec.b, n + 1)
    step = grid[1] - grid[0]
    Hv = np.array([spec.H(u) for u in grid])
    rho = spec.rho

    def objective(v: np.ndarray) -> float:
        s = np.diff(v) / step
        with np.errstate(over="ignore"):
            ent = np.sum(s * np.log(s / rho) + (1.0 - s) * np.log((1.0 - s) / (1.0 - rho)))
            pen = np.sum(np.exp(-lam * (Hv - v)))
        return step * (ent + pen)

    # feasible start: slopes capped by H' pointwise keep v below the obstacle
    dH_mid = np.array([spec.dH(0.5 * (x + y)) for x, y in zip(grid, grid[1:])])
    s = np.clip(np.minimum(rho, dH_mid), eps, 1.0 - 1e-9)
    v = np.concatenate(([0.0], np.cumsum(s) * step))

    def grad_hess(v: np.ndarray):
        s = np.clip(np.diff(v) / step, 1e-14, 1.0 - 1e-14)
        dh = _entropy_dh(s, rho)
        pen = lam * np.exp(-lam * (Hv - v))
        grad = np.zeros(n + 1)
        grad[1:] += dh
        grad[:-1] -= dh
        grad += step * pen
        d2 = _entropy_d2h(s) / step
        diag = np.zeros(n + 1)
        diag[1:] += d2
        diag[:-1] += d2
        diag += step * lam * pen
        return grad, diag, -d2

    clamp = 0  # slopes s[0:clamp] pinned at eps
    iters = 0
    for _outer in range(64):
        # damped Newton on free values v[clamp+1 .. n] (prefix fixed)
        for _ in range(max_iter):
            iters += 1
            grad, diag, off = grad_hess(v)
            free = np.arange(clamp + 1, n + 1)
            g_norm = float(np.max(np.abs(grad[free])))
            if g_norm < 1e-12 * max(1.0, lam * step):
                break
            m = free.size
            ab = np.zeros((3, m))
            ab[1] = diag[free]
            if m > 1:
                ab[0, 1:] = off[free[:-1]]
                ab[2, : m - 1] = off[free[:-1]]
            dlt = solve_banded((1, 1), ab, -grad[free])
            t_step = 1.0
            accepted = False
            for _ls in range(50):
                v_try = v.copy()
                v_try[free] += t_step * dlt
                s_try = np.diff(v_try) / step
                if np.all(s_try > 1e-13) and np.all(s_try < 1.0 - 1e-13):
                    g_try, _, _ = grad_hess(v_try)
                    if float(np.max(np.abs(g_try[free]))) < g_norm or objective(
                        v_try
                    ) < objective(v):
                        accepted = True
                        break
                t_step *= 0.5
            if not accepted:
                break  # stalled in float noise; outer loop may re-clamp
            v = v_try
        s = np.diff(v) / step
        # pin the whole initial run of sub-eps slopes (active set is a prefix
        # because the solution is convex)
        above = np.nonzero(s > eps * (1.0 + 1e-12))[0]
        want = int(above[0]) if above.size else n
        if want > clamp:
            shift = v[want] - eps * step * want
            v[want:] -= shift  # preserve tail slopes across the re-clamp
            v[: want + 1] = eps * step * np.arange(want + 1)
            clamp = want
            continue
        break

    s = np.diff(v) / step
    dh = _entropy_dh(np.clip(s, 1e-14, 1 - 1e-14), rho)
    pen = lam * np.exp(-lam * (Hv - v))
    interior = np.arange(max(1, clamp + 1), n)
    if interior.size:
        resid = float(np.max(np.abs((dh[interior] - dh[interior - 1]) / step
                                    - pen[interior])))
    else:
        resid = 0.0
    return RegularizedSolution(
        grid=grid, values=v, slopes=s, el_residual=resid,
        iterations=iters, clamped_prefix=clamp,
    )


def random_admissible_competitor(
    spec: ObstacleSpec, rng: np.random.Generator, n_knots: int = 24
) -> PiecewiseFn:
    """Random nondecreasing 1-Lipschitz function below the obstacle.

    Draw random slopes in [0, 1], integrate, then clip pointwise below H
    (H has slopes in [0, 1] in all our instances, so the clip preserves
    admissibility).
    """
    xs = np.linspace(spec.a, spec.b, n_knots + 1)
    slopes = rng.uniform(0.0, 1.0, n_knots)
    vals = np.concatenate(([0.0], np.cumsum(slopes) * np.diff(xs)))
    hs = np.array([spec.H(u) for u in xs])
    vals = np.minimum(vals, hs)
    vals = np.maximum.accumulate(vals)
    pieces = tuple(
        _line(x0, x1, v0, (v1 - v0) / (x1 - x0))
        for x0, x1, v0, v1 in zip(xs, xs[1:], vals, vals[1:])
    )
    return PiecewiseFn(pieces)
