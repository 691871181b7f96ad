"""Macroscopic layer: entropic Burgers solutions via Hopf-Lax and the
explicit piecewise evolutions of the deviation strategies.

The conservation law is ``d_t rho + gamma d_u [rho(1-rho)] = 0``.  Its
entropic solution is evaluated through the variational formula

    v(t, u) = sup_y { v(0, y) - t G((y - u)/t) },

where ``v`` is the cumulative mass and ``G`` the three-branch penalty of
:func:`asep_tagged.model.flux_G`.  For piecewise-linear initial cumulatives
the supremum is computed exactly per knot interval (linear objective against
a piecewise-quadratic penalty), so no grid bias enters acceptance checks;
a brute-force grid supremum serves as the independent oracle in tests.

Closed-form evolutions: down steps of the density (left value above right
value) open into rarefaction fans spanning the characteristic speeds
``gamma (1 - 2 rho)`` of their edge densities, up steps travel as entropic
shocks at the Rankine-Hugoniot speed ``gamma (1 - L - R)``, and up-ramps of
slope ``1/(2 gamma)`` sharpen into a shock at exactly t = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .model import DomainError, ModelParams, StrategyRegime, flux_G
from .profiles import KNOT_TOL, CumulativeProfile, Profile, build_strategy_profile


def hopf_lax_value(
    v0: CumulativeProfile,
    t: float,
    u: float,
    params: ModelParams,
) -> tuple[float, float]:
    """Exact Hopf-Lax supremum and its smallest maximizer ``b(t, u)``.

    Requires slope-0 tails (clip the initial profile to a window first).
    Outside ``[u - gamma t, u + gamma t]`` extended by the knot span the
    objective is monotone, so the search is restricted there; within each
    knot interval the objective is linear minus a quadratic and the interior
    stationary point sits at ``y = u + t gamma (2 s - 1)`` for slope ``s``.
    """
    if t <= 0.0:
        raise DomainError("Hopf-Lax requires t > 0")
    if not v0.has_compact_slopes():
        raise DomainError("initial cumulative must have slope-0 tails (clip first)")
    g = params.gamma
    lo = min(u - g * t, v0.lo)
    hi = max(u + g * t, v0.hi)
    cuts = sorted(
        {lo, hi, u - g * t, u + g * t, *(x for x, _ in v0.knots if lo <= x <= hi)}
    )

    def objective(y: float) -> float:
        return v0.value(y) - t * flux_G((y - u) / t, params)

    best_val = -math.inf
    best_y = lo
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= 0.0:
            continue
        candidates = [a, b]
        za, zb = (a - u) / t, (b - u) / t
        # extra candidates are harmless (the true objective is evaluated at
        # each), so the branch gate is generous against division dust
        if za >= -g - 1e-9 and zb <= g + 1e-9:
            # v0 is quadratic here (density linear), the penalty quadratic:
            # the stationary point solves dens(y) = (1 + (y-u)/(t g)) / 2
            da = v0.density(a)
            dm = v0.density(0.5 * (a + b))
            m = 2.0 * (dm - da) / (b - a)
            inv = 1.0 / (2.0 * t * g)
            denom = m - inv
            if abs(denom) > 1e-13:
                y_star = (0.5 - u * inv - da + m * a) / denom
                if a < y_star < b:
                    candidates.append(y_star)
        for y in sorted(candidates):
            val = objective(y)
            if val > best_val:
                best_val = val
                best_y = y
    return best_val, best_y


def hopf_lax_brute(
    v0: CumulativeProfile,
    t: float,
    u: float,
    params: ModelParams,
    n_grid: int = 10_000,
) -> float:
    """Grid-supremum oracle: dense grid joined with the knots."""
    g = params.gamma
    lo = min(u - g * t, v0.lo)
    hi = max(u + g * t, v0.hi)
    ys = [lo + (hi - lo) * i / n_grid for i in range(n_grid + 1)]
    ys += [x for x, _ in v0.knots] + [u - g * t, u + g * t]
    return max(v0.value(y) - t * flux_G((y - u) / t, params) for y in ys)


def entropic_density(
    v0: CumulativeProfile,
    t: float,
    grid: list[float],
    params: ModelParams,
    h: float = 1.0 / 512.0,
) -> Profile:
    """Density recovered by symmetric difference quotients of the Hopf-Lax
    value at spacing ``h``, clamped to [0, 1]."""
    vals = []
    for u in grid:
        vp, _ = hopf_lax_value(v0, t, u + 0.5 * h, params)
        vm, _ = hopf_lax_value(v0, t, u - 0.5 * h, params)
        vals.append(min(1.0, max(0.0, (vp - vm) / h)))
    knots = tuple(zip(grid, vals))
    return Profile(knots=knots, left_tail=vals[0], right_tail=vals[-1])


def _fan(center: float, hi_density: float, lo_density: float, t: float, g: float):
    """Rarefaction fan piece of a down step at ``center``: density decreases
    linearly from ``hi_density`` to ``lo_density`` across the characteristic
    span [center + g(1-2 hi) t, center + g(1-2 lo) t]."""
    a = center + g * (1.0 - 2.0 * hi_density) * t
    b = center + g * (1.0 - 2.0 * lo_density) * t
    return (a, b, hi_density, lo_density)


def closed_form_evolution(
    regime: StrategyRegime,
    A: float,
    eps: float,
    t: float,
    params: ModelParams,
) -> Profile:
    """Entropic evolution of the strategy profile at time ``t`` in (0, 1].

    Exact knot lists for the four entropic regimes; the nonentropic blocking
    regime is handled by :func:`lower_nonentropic_evolution` instead.
    """
    regime.require(A, params)
    if not 0.0 < t <= 1.0:
        raise DomainError("closed forms cover 0 < t <= 1")
    g, rho = params.gamma, params.rho

    if regime is StrategyRegime.UPPER_FAR:
        ae = A + eps
        ramp_lo = ae - g * (1.0 - t)
        ramp_hi = ae + g * (1.0 - t) * (2.0 * rho - 1.0)
        pieces = [
            _fan(0.0, rho, 0.0, t, g),
            (g * t, ramp_lo, 0.0, 0.0),
            (ramp_lo, ramp_hi, 0.0, rho),
        ]
        return Profile.from_pieces(pieces, left_tail=rho, right_tail=rho)

    if regime is StrategyRegime.UPPER_NEAR:
        if not 0.0 <= eps < g - A:
            raise DomainError("near-upper regime needs 0 <= eps < gamma - A")
        ae = A + eps
        plateau = 1.0 - ae / g
        ell = g - ae + (2.0 * ae - g) * t
        r = ae - g + 2.0 * rho * g + (1.0 - 2.0 * rho) * g * t
        fan = _fan(0.0, rho, plateau, t, g)
        pieces = [
            fan,
            (fan[1], ell, plateau, plateau),
            (ell, r, plateau, rho),
        ]
        return Profile.from_pieces(pieces, left_tail=rho, right_tail=rho)

    if regime is StrategyRegime.LOWER_MID:
        ae = A * (1.0 - eps)
        plateau = 1.0 - ae / g
        shock = (ae - rho * g) * t
        fan = _fan(g, plateau, rho, t, g)
        pieces = [
            (shock, fan[0], plateau, plateau),
            fan,
        ]
        return Profile.from_pieces(pieces, left_tail=rho, right_tail=rho)

    if regime is StrategyRegime.LOWER_NEG:
        a0 = A - g - eps
        fan = _fan(a0, rho, 0.0, t, g)
        shock = g * (1.0 - rho) * t
        pieces = [
            fan,
            (fan[1], shock, 0.0, 0.0),
        ]
        return Profile.from_pieces(pieces, left_tail=rho, right_tail=rho)

    raise DomainError(f"no entropic closed form for regime {regime}")


def nonentropic_step_evolution(L: float, R: float, t: float, params: ModelParams) -> Profile:
    """Step profile (L left, R right of the origin at t=0) rigidly translated
    at the Rankine-Hugoniot speed ``gamma (1 - L - R)``.

    For ``L > R`` this weak solution keeps a down step that the entropic
    solution would open into a fan; its dynamical price is
    :func:`asep_tagged.model.jv_step_cost`.
    """
    if not params.is_totally_asymmetric:
        raise DomainError("nonentropic step solutions are used for gamma = 1 only")
    if not (0.0 <= R <= L <= 1.0):
        raise DomainError(f"need 1 >= L >= R >= 0, got L={L}, R={R}")
    speed = params.gamma * (1.0 - L - R)
    from .profiles import riemann_profile

    return riemann_profile(L, R, at=speed * t)


def lower_nonentropic_evolution(
    A: float,
    eps: float,
    t: float,
    params: ModelParams,
) -> Profile:
    """Blocking-strategy profile at time ``t``: the plateau of density
    ``1 - A(1-eps)`` on a window of width rho translating at speed
    ``A(1-eps) - rho`` (both interfaces share the Rankine-Hugoniot speed, so
    the profile moves rigidly; the trailing down step is nonentropic)."""
    StrategyRegime.LOWER_NONENTROPIC.require(A, params)
    ae = A * (1.0 - eps)
    rho = params.rho
    shift = (ae - rho) * t
    return Profile.from_pieces(
        [(shift, rho + shift, 1.0 - ae, 1.0 - ae)],
        left_tail=rho,
        right_tail=rho,
    )


class EvolutionKind(Enum):
    CLOSED_FORM = "closed_form"
    NONENTROPIC = "nonentropic"
    HOPF_LAX = "hopf_lax"


@dataclass(frozen=True)
class Evolution:
    """Descriptor for a density evolution rho(t, u) with profile access.

    ``CLOSED_FORM`` uses the exact knot lists above, ``NONENTROPIC`` the
    translated blocking profile, ``HOPF_LAX`` differentiates the variational
    formula from an arbitrary (clipped) initial profile.
    """

    kind: EvolutionKind
    params: ModelParams
    regime: StrategyRegime | None = None
    A: float = 0.0
    eps: float = 0.0
    initial: Profile | None = None
    window: tuple[float, float] | None = None
    h: float = 1.0 / 512.0

    @staticmethod
    def closed_form(regime: StrategyRegime, A: float, eps: float, params: ModelParams):
        if regime is StrategyRegime.LOWER_NONENTROPIC:
            return Evolution(EvolutionKind.NONENTROPIC, params, regime, A, eps)
        return Evolution(EvolutionKind.CLOSED_FORM, params, regime, A, eps)

    @staticmethod
    def hopf_lax(initial: Profile, window: tuple[float, float], params: ModelParams,
                 h: float = 1.0 / 512.0):
        return Evolution(EvolutionKind.HOPF_LAX, params, initial=initial,
                         window=window, h=h)

    def profile(self, t: float) -> Profile:
        if self.kind is EvolutionKind.CLOSED_FORM:
            return closed_form_evolution(self.regime, self.A, self.eps, t, self.params)
        if self.kind is EvolutionKind.NONENTROPIC:
            return lower_nonentropic_evolution(self.A, self.eps, t, self.params)
        lo, hi = self.window
        v0 = self.initial.clip(lo, hi).cumulative()
        n = max(8, int(round((hi - lo) / self.h)))
        grid = [lo + (hi - lo) * i / n for i in range(n + 1)]
        return entropic_density(v0, t, grid, self.params, self.h)

    def initial_profile(self) -> Profile:
        if self.kind is EvolutionKind.CLOSED_FORM:
            return build_strategy_profile(self.regime, self.A, self.eps, self.params)
        if self.kind is EvolutionKind.NONENTROPIC:
            return build_strategy_profile(
                StrategyRegime.LOWER_NONENTROPIC, self.A, self.eps, self.params
            )
        return self.initial


class MassEquationError(DomainError):
    """The tagged-velocity mass equation has no (or no unique) solution."""


def tagged_velocity(
    evolution: Evolution | Profile,
    rho0: Profile,
    t: float,
    params: ModelParams,
    tol: float = 1e-10,
) -> float:
    """Solve the mass equation locating the tagged particle at time ``t``.

    The mass to the left of the tagged particle is conserved, so its
    position ``v`` solves ``int_{-inf}^{v} rho(t, z) dz = int_{-inf}^0
    rho0(z) dz``.  For profiles with equal constant left tails both sides
    are anchored at a quiet point ``a`` far left of every structure, where
    the mass balance over [a, .] gains exactly the equilibrium influx
    ``gamma d (1-d) t`` through ``a``:

        [C_t(v) - C_t(a)] - [C_0(0) - C_0(a)] - gamma d (1-d) t = 0.

    Solved by monotone bisection to ``tol``; a flat crossing (zero density
    through the level) raises :class:`MassEquationError`.
    """
    prof_t = evolution.profile(t) if isinstance(evolution, Evolution) else evolution
    d = rho0.left_tail
    if abs(prof_t.left_tail - d) > 1e-12:
        raise MassEquationError("profiles must share the far-left density")
    spans = [k[0] for k in prof_t.knots] + [k[0] for k in rho0.knots] + [0.0]
    a = min(spans) - 1.0
    b = max(spans) + params.gamma * t + 1.0
    influx = params.gamma * d * (1.0 - d) * t
    target = rho0.mass_between(a, 0.0) + influx

    def F(v: float) -> float:
        return prof_t.mass_between(a, v) - target

    fa, fb = F(a), F(b)
    if fa > 0.0 or fb < 0.0:
        raise MassEquationError("mass equation has no crossing in the search window")
    lo_v, hi_v = a, b
    while hi_v - lo_v > tol:
        mid = 0.5 * (lo_v + hi_v)
        if F(mid) < 0.0:
            lo_v = mid
        else:
            hi_v = mid
    v = 0.5 * (lo_v + hi_v)
    # uniqueness: the crossing is flat iff the density vanishes through it
    probe = max(tol * 10.0, 1e-8)
    if abs(F(v - probe)) < 1e-13 and abs(F(v + probe)) < 1e-13:
        raise MassEquationError("mass equation crossing is not unique (flat level set)")
    return v


def weak_solution_residual(
    density_at,
    test_fn,
    params: ModelParams,
    t_range: tuple[float, float] = (0.0, 1.0),
    u_range: tuple[float, float] = (-3.0, 3.0),
    n_t: int = 201,
    n_u: int = 801,
) -> float:
    """Quadrature of ``rho d_t phi + gamma rho(1-rho) d_u phi`` over space-time.

    ``density_at(t, u)`` evaluates the candidate solution, ``test_fn`` must
    provide ``value/dt/du`` callables compactly supported in the open
    space-time box.  Vanishes (up to quadrature error) iff the field is a
    distributional solution of the conservation law.
    """
    import numpy as np

    ts = np.linspace(*t_range, n_t)
    us = np.linspace(*u_range, n_u)
    g = params.gamma
    total = np.zeros((n_t, n_u))
    for i, tt in enumerate(ts):
        row = np.array([density_at(tt, uu) for uu in us])
        total[i] = row * test_fn.dt(tt, us) + g * row * (1.0 - row) * test_fn.du(tt, us)
    inner = np.trapezoid(total, us, axis=1)
    return float(np.trapezoid(inner, ts))
