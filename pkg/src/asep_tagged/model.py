"""Model parameters and closed-form rate functions for the tagged particle in ASEP.

Conventions used throughout the package:

* particles jump right with probability ``p in (1/2, 1]`` and left with
  ``q = 1 - p``; the single-particle drift is ``gamma = p - q``;
* the background Bernoulli density is ``rho in (0, 1)``;
* macroscopic time is fixed to 1 unless stated otherwise, so a "velocity"
  ``A`` is the same thing as a macroscopic displacement;
* infinite costs are returned as ``math.inf`` (never raised), so rate curves
  can be tabulated.  Exceptions are reserved for precondition violations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

INF = math.inf

#: tolerance used for exact algebraic identities (drift identity etc.)
DRIFT_TOL = 1e-12


class DomainError(ValueError):
    """A rate/cost was requested outside the domain where it is defined."""


@dataclass(frozen=True)
class ModelParams:
    """Jump bias ``p`` and background density ``rho``.

    ``q``, ``gamma`` are derived so that ``p + q == 1`` holds exactly.
    """

    p: float
    rho: float

    def __post_init__(self):
        if not 0.5 < self.p <= 1.0:
            raise DomainError(f"p must lie in (1/2, 1], got {self.p}")
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def gamma(self) -> float:
        return self.p - self.q

    @property
    def is_totally_asymmetric(self) -> bool:
        return self.p == 1.0

    @property
    def typical_velocity(self) -> float:
        """Law-of-large-numbers velocity of the tagged particle."""
        return self.gamma * (1.0 - self.rho)

    @property
    def equilibrium_flux(self) -> float:
        """Stationary particle flux ``gamma * rho * (1 - rho)``."""
        return self.gamma * self.rho * (1.0 - self.rho)


@dataclass(frozen=True)
class TiltedRates:
    """Tagged-particle jump rates after an exponential tilt.

    ``p_prime = p * c`` and ``q_prime = q / c`` where the tilt constant ``c``
    is chosen so that the free drift ``p_prime - q_prime`` equals the target
    velocity.
    """

    p_prime: float
    q_prime: float
    c: float

    @property
    def drift(self) -> float:
        return self.p_prime - self.q_prime

    @property
    def total(self) -> float:
        return self.p_prime + self.q_prime


class StrategyRegime(enum.Enum):
    """Deviation regimes, each with its own optimal lower-bound strategy."""

    UPPER_FAR = "upper_far"                    # A >= gamma
    UPPER_NEAR = "upper_near"                  # gamma(1-rho) < A < gamma
    LOWER_NONENTROPIC = "lower_nonentropic"    # gamma = 1, 0 <= A < 1-rho
    LOWER_MID = "lower_mid"                    # 0 < A < gamma(1-rho)
    LOWER_NEG = "lower_neg"                    # A < 0 (gamma < 1)

    def admits(self, A: float, params: ModelParams) -> bool:
        g, rho = params.gamma, params.rho
        if self is StrategyRegime.UPPER_FAR:
            return A >= g
        if self is StrategyRegime.UPPER_NEAR:
            return g * (1.0 - rho) < A < g
        if self is StrategyRegime.LOWER_NONENTROPIC:
            return params.is_totally_asymmetric and 0.0 <= A < 1.0 - rho
        if self is StrategyRegime.LOWER_MID:
            return 0.0 < A < g * (1.0 - rho)
        if self is StrategyRegime.LOWER_NEG:
            return A < 0.0 and not params.is_totally_asymmetric
        raise AssertionError(self)

    def require(self, A: float, params: ModelParams) -> None:
        if not self.admits(A, params):
            raise DomainError(
                f"velocity A={A} not admissible for regime {self.value} "
                f"(gamma={params.gamma}, rho={params.rho})"
            )

    def tilted_target(self, A: float, eps: float) -> float | None:
        """Velocity for the tagged-rate tilt, or None if the regime uses none.

        The slack conventions are frozen per regime: A + eps/2 for the far
        upper regime, A - eps/2 for negative velocities.  The two middle
        regimes change only the initial profile.
        """
        if self is StrategyRegime.UPPER_FAR:
            return A + eps / 2.0
        if self is StrategyRegime.LOWER_NEG:
            return A - eps / 2.0
        return None

    def profile_velocity(self, A: float, eps: float) -> float:
        """Slack-adjusted velocity used to build the initial profile.

        A + eps for the near upper regime, A * (1 - eps) for the lower
        regimes, A + eps for the far upper one (the vacuum stretch ends at
        A - gamma + eps).
        """
        if self in (StrategyRegime.UPPER_FAR, StrategyRegime.UPPER_NEAR):
            return A + eps
        if self in (StrategyRegime.LOWER_MID, StrategyRegime.LOWER_NONENTROPIC):
            return A * (1.0 - eps)
        if self is StrategyRegime.LOWER_NEG:
            return A  # profile uses A - gamma - eps directly
        raise AssertionError(self)


def classify_regime(A: float, params: ModelParams) -> StrategyRegime:
    """Pick the regime whose range contains the velocity ``A``."""
    g, rho = params.gamma, params.rho
    if A >= g:
        return StrategyRegime.UPPER_FAR
    if A > g * (1.0 - rho):
        return StrategyRegime.UPPER_NEAR
    if A < 0.0:
        return StrategyRegime.LOWER_NEG
    if params.is_totally_asymmetric and A < 1.0 - rho:
        return StrategyRegime.LOWER_NONENTROPIC
    if 0.0 < A < g * (1.0 - rho):
        return StrategyRegime.LOWER_MID
    raise DomainError(f"A={A} sits on a regime boundary (gamma={g}, rho={rho})")


def tilt_constant(A: float, params: ModelParams) -> TiltedRates:
    """Tilt ``c = (A + sqrt(A^2 + 4pq)) / (2p)`` and the rates ``(pc, q/c)``.

    The drift identity ``pc - q/c == A`` holds exactly by construction.
    """
    p, q = params.p, params.q
    s = math.sqrt(A * A + 4.0 * p * q)
    c = (A + s) / (2.0 * p)
    if c <= 0.0:
        # only reachable for p == 1 and A <= 0: a pure birth process cannot
        # drift left, so the tilt degenerates
        raise DomainError(f"tilt undefined for p={p}, A={A}")
    return TiltedRates(p_prime=p * c, q_prime=q / c, c=c)


def rate_IZ(A: float, params: ModelParams) -> float:
    """Rate function of the tagged particle's free birth-death walk.

    ``A log c - pc - q/c + 1`` with the tilt constant of :func:`tilt_constant`.
    Strictly convex with a unique zero at ``A = gamma``.  For a pure birth
    walk (p = 1) the value is ``A log A - A + 1`` for A > 0, 1 at A = 0 and
    infinite for A < 0.
    """
    p, q = params.p, params.q
    if q == 0.0:
        if A < 0.0:
            return INF
        if A == 0.0:
            return 1.0
        return A * math.log(A) - A + 1.0
    tilt = tilt_constant(A, params)
    return A * math.log(tilt.c) - tilt.p_prime - tilt.q_prime + 1.0


def rate_poisson(a: float, rho: float, t: float = 1.0) -> float:
    """Poisson large-deviation rate ``a log(a / ((1-rho) t)) - a + (1-rho) t``.

    This is the exact tagged-particle rate function in TASEP.  Values below 0
    are impossible (rate is infinite); ``a = 0`` costs ``(1-rho) t``.
    """
    if t <= 0.0:
        raise DomainError(f"t must be positive, got {t}")
    if a < 0.0:
        return INF
    mean = (1.0 - rho) * t
    if a == 0.0:
        return mean
    return a * math.log(a / mean) - a + mean


def rate_I_gamma(A: float, params: ModelParams) -> float:
    """Upper-tail rate function of the tagged particle, two branches.

    For ``A >= gamma`` the optimal strategy combines a rate tilt with a
    vacuum stretch, giving ``rate_IZ(A) - A log(1-rho) - gamma rho``.  For
    ``gamma (1-rho) < A < gamma`` no tilt is needed and the cost is Poisson
    shaped, ``A log(A / (gamma (1-rho))) - A + gamma (1-rho)``.  The branches
    agree at ``A = gamma``.
    """
    g, rho = params.gamma, params.rho
    if A <= g * (1.0 - rho):
        raise DomainError(
            f"I_gamma defined only above the typical velocity "
            f"gamma(1-rho)={g * (1.0 - rho)}, got A={A}"
        )
    if A >= g:
        return rate_IZ(A, params) - A * math.log(1.0 - rho) - g * rho
    m = g * (1.0 - rho)
    return A * math.log(A / m) - A + m


def jv_step_cost(L: float, R: float) -> float:
    """Jensen-Varadhan dynamical cost of a persisting down step (TASEP).

    A step profile with densities ``L >= R`` travelling at the
    Rankine-Hugoniot speed ``1 - L - R`` is a weak but nonentropic solution;
    keeping it costs ``L - R + L R log(R/L) + (1-L)(1-R) log((1-L)/(1-R))``
    per unit time.  Entropic steps (L == R, trivially) cost nothing.
    """
    if not (0.0 <= R <= L <= 1.0):
        raise DomainError(f"need 1 >= L >= R >= 0, got L={L}, R={R}")
    out = L - R
    if R > 0.0 and L > 0.0:
        out += L * R * math.log(R / L)
    if L < 1.0 and R < 1.0:
        out += (1.0 - L) * (1.0 - R) * math.log((1.0 - L) / (1.0 - R))
    return out


def lower_bound_J1(A: float, params: ModelParams) -> float:
    """Entropy cost of the blocking strategy for ``0 < A < gamma(1-rho)``.

    Equals the entropy of the plateau profile of density ``1 - A/gamma`` on
    ``[0, gamma)``:
    ``gamma [ (1-A/g) log((1-A/g)/rho) + (A/g) log(A/(g(1-rho))) ]``.
    A lower bound for the (unknown) lower-tail rate; vanishes as A approaches
    the typical velocity and tends to ``-gamma log rho`` as A -> 0.
    """
    g, rho = params.gamma, params.rho
    if not 0.0 < A < g * (1.0 - rho):
        raise DomainError(f"J1 needs 0 < A < gamma(1-rho), got A={A}")
    x = A / g
    return g * ((1.0 - x) * math.log((1.0 - x) / rho) + x * math.log(A / (g * (1.0 - rho))))


def lower_bound_J2(A: float, params: ModelParams) -> float:
    """Entropy cost of the vacuum-plus-tilt strategy for ``A < 0``.

    ``(A - gamma) log(1-rho) + rate_IZ(A)``: the first term is the cost of
    emptying ``[A - gamma, 0)``, the second the cost of re-rating the tagged
    walk to drift A.  Positive for all A < 0; its A -> 0 limit is
    ``-gamma log(1-rho) - 2 sqrt(pq) + 1``.
    """
    if A >= 0.0:
        raise DomainError(f"J2 needs A < 0, got A={A}")
    if params.is_totally_asymmetric:
        raise DomainError("J2 undefined for TASEP (left deviations impossible)")
    g, rho = params.gamma, params.rho
    return (A - g) * math.log(1.0 - rho) + rate_IZ(A, params)


def flux_G(z: float, params: ModelParams) -> float:
    """Convex conjugate of the hole flux: the Hopf-Lax penalty kernel.

    Three branches: 0 below ``-gamma``, ``(gamma/4)(1 + z/gamma)^2`` on
    ``[-gamma, gamma]`` and ``z`` above ``gamma``.
    """
    g = params.gamma
    if z < -g:
        return 0.0
    if z > g:
        return z
    w = 1.0 + z / g
    return 0.25 * g * w * w


def flux_L(r: float, params: ModelParams) -> float:
    """Negative particle flux ``-gamma r (1-r)`` on [0, 1], +inf outside."""
    if r < 0.0 or r > 1.0:
        return INF
    return -params.gamma * r * (1.0 - r)


def bernoulli_entropy(x: float, rho: float) -> float:
    """Relative entropy of Bern(x) against Bern(rho), with 0 log 0 = 0."""
    if x < 0.0 or x > 1.0:
        raise DomainError(f"density {x} outside [0, 1]")
    out = 0.0
    if x > 0.0:
        out += x * math.log(x / rho)
    if x < 1.0:
        out += (1.0 - x) * math.log((1.0 - x) / (1.0 - rho))
    return out


def bernoulli_entropy_antiderivative(x: float, rho: float) -> float:
    """Antiderivative in x of :func:`bernoulli_entropy`, used for exact
    integration of the entropy of piecewise-linear profiles.

    Built from ``int x log x dx = x^2 log(x)/2 - x^2/4``.
    """
    if x < 0.0 or x > 1.0:
        raise DomainError(f"density {x} outside [0, 1]")
    y = 1.0 - x
    out = -0.25 * x * x + 0.25 * y * y
    if x > 0.0:
        out += 0.5 * x * x * math.log(x)
    if y > 0.0:
        out -= 0.5 * y * y * math.log(y)
    out -= 0.5 * x * x * math.log(rho)
    out += 0.5 * y * y * math.log(1.0 - rho)
    return out
