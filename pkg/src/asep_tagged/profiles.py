"""Macroscopic density profiles: piecewise-linear knots, cumulatives, entropy.

A :class:`Profile` is piecewise linear between knots, with constant tails on
either side.  A jump discontinuity is encoded by two knots sharing the same
position (left value first, right value second); knot positions are compared
with a 1e-12 merge tolerance.  Profile values at a jump are taken
right-continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import (
    DomainError,
    ModelParams,
    StrategyRegime,
    bernoulli_entropy,
    bernoulli_entropy_antiderivative,
)

KNOT_TOL = 1e-12


@dataclass(frozen=True)
class Profile:
    """Piecewise-linear density profile with constant tails."""

    knots: tuple[tuple[float, float], ...]
    left_tail: float
    right_tail: float

    def __post_init__(self):
        for _, v in self.knots:
            if v < -KNOT_TOL or v > 1.0 + KNOT_TOL:
                raise DomainError(f"density {v} outside [0, 1]")
        for t in (self.left_tail, self.right_tail):
            if t < 0.0 or t > 1.0:
                raise DomainError(f"tail density {t} outside [0, 1]")
        us = [u for u, _ in self.knots]
        for a, b in zip(us, us[1:]):
            if b < a - KNOT_TOL:
                raise DomainError("knot positions must be nondecreasing")
        # at most two knots may share a position (that encodes a jump)
        for a, b, c in zip(us, us[1:], us[2:]):
            if c - a <= KNOT_TOL:
                raise DomainError("more than two knots at one position")

    @staticmethod
    def constant(value: float) -> "Profile":
        return Profile(knots=(), left_tail=value, right_tail=value)

    @staticmethod
    def from_pieces(
        pieces: list[tuple[float, float, float, float]],
        left_tail: float,
        right_tail: float,
    ) -> "Profile":
        """Build from contiguous pieces ``(u0, u1, v0, v1)``.

        Zero-width pieces are dropped; jumps appear wherever consecutive
        pieces (or a tail and a piece) disagree.
        """
        knots: list[tuple[float, float]] = []
        prev_val = left_tail
        for u0, u1, v0, v1 in pieces:
            if u1 - u0 <= KNOT_TOL:
                continue
            if not knots or abs(prev_val - v0) > KNOT_TOL or knots[-1][0] < u0 - KNOT_TOL:
                knots.append((u0, prev_val))
                knots.append((u0, v0))
            knots.append((u1, v1))
            prev_val = v1
        if abs(prev_val - right_tail) > KNOT_TOL:
            if knots:
                knots.append((knots[-1][0], right_tail))
        # prune redundant duplicates (same position, same value)
        cleaned: list[tuple[float, float]] = []
        for u, v in knots:
            if cleaned and abs(cleaned[-1][0] - u) <= KNOT_TOL and abs(cleaned[-1][1] - v) <= KNOT_TOL:
                continue
            cleaned.append((u, v))
        return Profile(knots=tuple(cleaned), left_tail=left_tail, right_tail=right_tail)

    def value(self, u: float) -> float:
        """Density at ``u`` (right-continuous at jumps)."""
        ks = self.knots
        if not ks or u < ks[0][0]:
            return self.left_tail
        if u >= ks[-1][0]:
            return self.right_tail
        for (u0, v0), (u1, v1) in zip(ks, ks[1:]):
            if u0 <= u < u1:
                if u1 - u0 <= KNOT_TOL:
                    continue
                return v0 + (v1 - v0) * (u - u0) / (u1 - u0)
        return self.right_tail

    def segments(self, lo: float, hi: float) -> list[tuple[float, float, float, float]]:
        """Linear segments ``(u0, u1, v0, v1)`` covering ``[lo, hi]``."""
        if hi < lo:
            raise DomainError("empty window")
        ks = list(self.knots)
        out: list[tuple[float, float, float, float]] = []
        if not ks:
            return [(lo, hi, self.left_tail, self.left_tail)]
        first, last = ks[0][0], ks[-1][0]
        if lo < first:
            out.append((lo, min(first, hi), self.left_tail, self.left_tail))
        for (u0, v0), (u1, v1) in zip(ks, ks[1:]):
            if u1 - u0 <= KNOT_TOL:
                continue
            a, b = max(u0, lo), min(u1, hi)
            if b - a <= KNOT_TOL:
                continue
            s = (v1 - v0) / (u1 - u0)
            out.append((a, b, v0 + s * (a - u0), v0 + s * (b - u0)))
        if hi > last:
            out.append((max(last, lo), hi, self.right_tail, self.right_tail))
        return out

    def clip(self, lo: float, hi: float) -> "Profile":
        """Restrict to ``[lo, hi]`` with vacuum outside (compact support)."""
        return Profile.from_pieces(self.segments(lo, hi), left_tail=0.0, right_tail=0.0)

    def cumulative(self, anchor: float | None = None) -> "CumulativeProfile":
        """Integrated density anchored to value 0 at ``anchor``.

        Defaults to the first knot (or 0 for a constant profile).  The
        cumulative is exact: linear over constant density pieces, quadratic
        over ramps (endpoint densities are stored per segment).
        """
        ks = self.knots
        if anchor is None:
            anchor = ks[0][0] if ks else 0.0
        if not ks:
            return CumulativeProfile(
                knots=((anchor, 0.0),), densities=(),
                left_slope=self.left_tail, right_slope=self.right_tail,
            )
        lo = min(anchor, ks[0][0])
        hi = max(anchor, ks[-1][0])
        xs: list[float] = [lo]
        vs: list[float] = [0.0]
        dens: list[tuple[float, float]] = []
        acc = 0.0
        for u0, u1, v0, v1 in self.segments(lo, hi):
            acc += 0.5 * (v0 + v1) * (u1 - u0)
            xs.append(u1)
            vs.append(acc)
            dens.append((v0, v1))
        cum = CumulativeProfile(
            knots=tuple(zip(xs, vs)), densities=tuple(dens),
            left_slope=self.left_tail, right_slope=self.right_tail,
        )
        shift = cum.value(anchor)
        if shift != 0.0:
            cum = CumulativeProfile(
                knots=tuple((x, v - shift) for x, v in cum.knots),
                densities=cum.densities,
                left_slope=self.left_tail, right_slope=self.right_tail,
            )
        return cum

    def mass_between(self, lo: float, hi: float) -> float:
        return sum(0.5 * (v0 + v1) * (u1 - u0) for u0, u1, v0, v1 in self.segments(lo, hi))


def _interp(xs: list[float], vs: list[float], u: float) -> float:
    if u <= xs[0]:
        return vs[0]
    if u >= xs[-1]:
        return vs[-1]
    for (x0, y0), (x1, y1) in zip(zip(xs, vs), zip(xs[1:], vs[1:])):
        if x0 <= u <= x1:
            if x1 - x0 <= KNOT_TOL:
                return y1
            return y0 + (y1 - y0) * (u - x0) / (x1 - x0)
    return vs[-1]


@dataclass(frozen=True)
class CumulativeProfile:
    """Nondecreasing 1-Lipschitz integral of a density profile.

    Between consecutive knots the value interpolates exactly: linear where
    the underlying density is constant and quadratic across density ramps
    (``densities[i]`` holds the endpoint densities of segment i).  Beyond
    the knots the value extends with the constant tail slopes.
    """

    knots: tuple[tuple[float, float], ...]
    densities: tuple[tuple[float, float], ...]
    left_slope: float
    right_slope: float

    def __post_init__(self):
        if len(self.densities) != max(0, len(self.knots) - 1):
            raise DomainError("need one density pair per knot interval")
        for d0, d1 in self.densities:
            if not (-1e-9 <= d0 <= 1.0 + 1e-9 and -1e-9 <= d1 <= 1.0 + 1e-9):
                raise DomainError("cumulative slopes must lie in [0, 1]")
        for (x0, y0), (x1, y1) in zip(self.knots, self.knots[1:]):
            dx, dy = x1 - x0, y1 - y0
            if dy < -1e-9:
                raise DomainError("cumulative profile must be nondecreasing")
            if dy > dx + 1e-9:
                raise DomainError("cumulative profile must be 1-Lipschitz")

    @property
    def lo(self) -> float:
        return self.knots[0][0]

    @property
    def hi(self) -> float:
        return self.knots[-1][0]

    def _segment(self, i: int, u: float) -> float:
        (x0, y0), (x1, _) = self.knots[i], self.knots[i + 1]
        d0, d1 = self.densities[i]
        w = x1 - x0
        s = u - x0
        return y0 + d0 * s + 0.5 * (d1 - d0) * s * s / w

    def value(self, u: float) -> float:
        ks = self.knots
        if u <= ks[0][0]:
            return ks[0][1] + self.left_slope * (u - ks[0][0])
        if u >= ks[-1][0]:
            return ks[-1][1] + self.right_slope * (u - ks[-1][0])
        for i in range(len(ks) - 1):
            if ks[i][0] <= u <= ks[i + 1][0]:
                return self._segment(i, u)
        return ks[-1][1]

    def density(self, u: float) -> float:
        """Right-continuous derivative of the cumulative."""
        ks = self.knots
        if u < ks[0][0]:
            return self.left_slope
        if u >= ks[-1][0]:
            return self.right_slope
        for i in range(len(ks) - 1):
            x0, x1 = ks[i][0], ks[i + 1][0]
            if x0 <= u < x1:
                d0, d1 = self.densities[i]
                return d0 + (d1 - d0) * (u - x0) / (x1 - x0)
        return self.right_slope

    def has_compact_slopes(self) -> bool:
        return self.left_slope == 0.0 and self.right_slope == 0.0


def relative_entropy_K(
    profile: Profile,
    params: ModelParams,
    window: tuple[float, float],
) -> float:
    """Entropy cost of replacing equilibrium Bern(rho) by ``profile``.

    Integrates ``x log(x/rho) + (1-x) log((1-x)/(1-rho))`` over the window,
    in closed form on each linear piece (no quadrature), with the 0 log 0
    convention.  The window must contain all knots.
    """
    lo, hi = window
    ks = profile.knots
    if ks and (ks[0][0] < lo - KNOT_TOL or ks[-1][0] > hi + KNOT_TOL):
        raise DomainError("window must contain all profile knots")
    rho = params.rho
    total = 0.0
    for u0, u1, v0, v1 in profile.segments(lo, hi):
        width = u1 - u0
        if width <= KNOT_TOL:
            continue
        if abs(v1 - v0) <= KNOT_TOL:
            total += width * bernoulli_entropy(0.5 * (v0 + v1), rho)
        else:
            slope = (v1 - v0) / width
            total += (
                bernoulli_entropy_antiderivative(v1, rho)
                - bernoulli_entropy_antiderivative(v0, rho)
            ) / slope
    return total


def build_strategy_profile(
    regime: StrategyRegime,
    A: float,
    eps: float,
    params: ModelParams,
) -> Profile:
    """Initial density profile of the optimal lower-bound strategy.

    Slack conventions per regime (frozen in :meth:`StrategyRegime.profile_velocity`):
    the far upper regime empties ``[0, A - gamma + eps)``; the near upper
    regime uses plateau velocity ``A + eps``; the lower regimes use
    ``A (1 - eps)``; negative velocities empty ``[A - gamma - eps, 0)``.
    """
    regime.require(A, params)
    if eps < 0.0:
        raise DomainError(f"eps must be nonnegative, got {eps}")
    g, rho = params.gamma, params.rho

    if regime is StrategyRegime.UPPER_FAR:
        a0 = A - g + eps
        return Profile.from_pieces(
            [
                (0.0, a0, 0.0, 0.0),
                (a0, a0 + 2.0 * rho * g, 0.0, rho),
            ],
            left_tail=rho,
            right_tail=rho,
        )

    if regime is StrategyRegime.UPPER_NEAR:
        if not 0.0 <= eps < g - A:
            raise DomainError(f"near-upper regime needs 0 <= eps < gamma - A, got {eps}")
        Ae = A + eps
        plateau = 1.0 - Ae / g
        return Profile.from_pieces(
            [
                (0.0, g - Ae, plateau, plateau),
                (g - Ae, Ae - g + 2.0 * rho * g, plateau, rho),
            ],
            left_tail=rho,
            right_tail=rho,
        )

    if regime is StrategyRegime.LOWER_MID:
        if not 0.0 <= eps < 1.0:
            raise DomainError(f"lower regimes need 0 <= eps < 1, got {eps}")
        Ae = A * (1.0 - eps)
        plateau = 1.0 - Ae / g
        return Profile.from_pieces(
            [(0.0, g, plateau, plateau)],
            left_tail=rho,
            right_tail=rho,
        )

    if regime is StrategyRegime.LOWER_NONENTROPIC:
        if not 0.0 <= eps < 1.0:
            raise DomainError(f"lower regimes need 0 <= eps < 1, got {eps}")
        Ae = A * (1.0 - eps)
        return Profile.from_pieces(
            [(0.0, rho, 1.0 - Ae, 1.0 - Ae)],
            left_tail=rho,
            right_tail=rho,
        )

    if regime is StrategyRegime.LOWER_NEG:
        return Profile.from_pieces(
            [(A - g - eps, 0.0, 0.0, 0.0)],
            left_tail=rho,
            right_tail=rho,
        )

    raise AssertionError(regime)


def riemann_profile(L: float, R: float, at: float = 0.0) -> Profile:
    """Step profile with density ``L`` left of ``at`` and ``R`` right of it."""
    if not (0.0 <= L <= 1.0 and 0.0 <= R <= 1.0):
        raise DomainError("step densities must lie in [0, 1]")
    if abs(L - R) <= KNOT_TOL:
        return Profile.constant(L)
    return Profile(knots=((at, L), (at, R)), left_tail=L, right_tail=R)
