"""Batch experiment drivers: tail estimators, LLN and goodness-of-fit checks,
cumulant estimation and flux-dominance audits.

All estimators shard randomness per trajectory from a single experiment
seed, report standard errors, and are deterministic for a fixed
configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    INF,
    DomainError,
    ModelParams,
    StrategyRegime,
    classify_regime,
    lower_bound_J1,
    lower_bound_J2,
    rate_I_gamma,
    rate_IZ,
    rate_poisson,
    tilt_constant,
)
from .profiles import Profile, build_strategy_profile, relative_entropy_K, riemann_profile
from .simulator import (
    DynamicsSpec,
    HoleSlowdown,
    default_radius,
    simulate_batch,
)


def _poisson_log_mass(lam: float, lo: int, hi: int) -> float:
    """log sum_{j=lo..hi} Poisson(lam) pmf, accumulated in log space with
    early termination once terms are negligible past the mode."""
    out = -INF
    for j in range(lo, hi + 1):
        term = -lam + j * math.log(lam) - math.lgamma(j + 1.0)
        out = float(np.logaddexp(out, term))
        if j > lam and term < out - 45.0:
            break
    return out


def exact_poisson_log_tail(A: float, rho: float, N: int, side: str = "upper") -> float:
    """log P(Poisson((1-rho) N) >= ceil(AN)) (or <= floor(AN)), summed
    directly in log space.  The exact law of the tagged particle in TASEP."""
    lam = (1.0 - rho) * N
    pad = int(40.0 * math.sqrt(lam) + 25.0)
    if side == "upper":
        k = int(math.ceil(A * N - 1e-9))
        if k <= 0:
            return 0.0
        if k > lam:
            return _poisson_log_mass(lam, k, k + pad)
        below = _poisson_log_mass(lam, 0, k - 1)
        return math.log1p(-math.exp(below))
    if side == "lower":
        k = int(math.floor(A * N + 1e-9))
        if k < 0:
            return -INF
        if k < lam:
            return _poisson_log_mass(lam, 0, k)
        above = _poisson_log_mass(lam, k + 1, k + 1 + pad)
        return math.log1p(-math.exp(above))
    raise DomainError(f"side must be upper or lower, got {side}")


def exact_poisson_tail(A: float, rho: float, N: int, side: str = "upper") -> float:
    """P(Poisson((1-rho) N) >= ceil(AN)) or (<= floor(AN)); TASEP oracle."""
    return float(math.exp(exact_poisson_log_tail(A, rho, N, side)))


@dataclass
class TailEstimate:
    """Tail probability estimate with error bars and the implied rate."""

    p_hat: float
    stderr: float
    ci95: tuple[float, float]
    rate_hat: float
    n_trajectories: int
    n_hits: int
    effective_sample_size: float | None = None
    q_frequency: float | None = None
    boundary_fraction: float = 0.0
    low_hits_warning: bool = False
    zero_hits: bool = False

    @staticmethod
    def from_weighted(weights: np.ndarray, hits: np.ndarray, N: int,
                      ess: float | None = None,
                      q_freq: float | None = None,
                      boundary_fraction: float = 0.0) -> "TailEstimate":
        m = weights.size
        vals = weights * hits
        p_hat = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else INF
        n_hits = int(hits.sum())
        if n_hits == 0:
            # rule-of-three upper confidence bound instead of a bare zero
            return TailEstimate(
                p_hat=0.0, stderr=0.0, ci95=(0.0, 3.0 / m), rate_hat=INF,
                n_trajectories=m, n_hits=0, effective_sample_size=ess,
                q_frequency=q_freq, boundary_fraction=boundary_fraction,
                low_hits_warning=True, zero_hits=True,
            )
        lo = max(0.0, p_hat - 1.96 * stderr)
        hi = min(1.0, p_hat + 1.96 * stderr)
        return TailEstimate(
            p_hat=p_hat, stderr=stderr, ci95=(lo, hi),
            rate_hat=-math.log(p_hat) / N if p_hat > 0 else INF,
            n_trajectories=m, n_hits=n_hits, effective_sample_size=ess,
            q_frequency=q_freq, boundary_fraction=boundary_fraction,
            low_hits_warning=n_hits < 10,
        )


def _event_hits(displacement: np.ndarray, A: float, N: int, side: str) -> np.ndarray:
    if side == "upper":
        return displacement >= A * N - 1e-9
    return displacement <= A * N + 1e-9


def estimate_tail_direct(
    A: float,
    params: ModelParams,
    N: int,
    M: int,
    seed: int,
    side: str = "upper",
    R: float | None = None,
    left_radius: float | None = None,
    horizon: float = 1.0,
) -> TailEstimate:
    """Plain Monte Carlo frequency of the tail event with binomial errors."""
    R = default_radius(A, params) if R is None else R
    if left_radius is None and params.is_totally_asymmetric and side == "upper":
        # in TASEP the tagged law does not depend on the configuration
        # behind it (gap chain autonomy), so the left window can be minimal
        left_radius = 4.0 / N
    res = simulate_batch(
        Profile.constant(params.rho), DynamicsSpec.plain(params),
        N, M, horizon, seed, params, R, left_radius=left_radius,
    )
    hits = _event_hits(res.displacement, A, N, side)
    return TailEstimate.from_weighted(
        np.ones(M), hits, N, boundary_fraction=float(res.boundary.mean())
    )


def estimate_tail_importance(
    A: float,
    params: ModelParams,
    N: int,
    M: int,
    seed: int,
    eps: float = 0.05,
    regime: StrategyRegime | None = None,
    side: str | None = None,
    R: float | None = None,
    horizon: float = 1.0,
) -> TailEstimate:
    """Importance-sampled tail estimate under the regime's tilted measure.

    Samples initial states from the tilted profile, runs tilted tagged rates
    where the regime prescribes them (far-upper and negative regimes), or
    the slowed-hole dynamics for the blocking regime at A = 0, and averages
    ``exp(-log dQ/dP) 1{event}``.  Also reports the effective sample size
    and the frequency of the target event under the tilted measure itself.
    """
    regime = classify_regime(A, params) if regime is None else regime
    regime.require(A, params)
    if side is None:
        side = "upper" if regime in (StrategyRegime.UPPER_FAR, StrategyRegime.UPPER_NEAR) else "lower"
    R = default_radius(A, params) if R is None else R

    if regime is StrategyRegime.LOWER_NONENTROPIC:
        if A != 0.0:
            raise DomainError(
                "importance sampling for the blocking regime is implemented "
                "for A = 0 only (the slowed-hole construction)"
            )
        profile = build_strategy_profile(regime, 0.0, 0.0, params)
        spec = DynamicsSpec(
            p=params.p, q=params.q,
            hole=HoleSlowdown(
                seek_right_of=int(math.floor(params.rho * N)),
                left_rate=params.rho - eps,
                expiry=horizon * N,
            ),
        )
    else:
        profile = build_strategy_profile(regime, A, eps, params)
        spec = DynamicsSpec.plain(params)
        target = regime.tilted_target(A, eps)
        if target is not None:
            rates = tilt_constant(target, params)
            spec = DynamicsSpec.tilted(params, rates.p_prime, rates.q_prime)

    res = simulate_batch(profile, spec, N, M, horizon, seed, params, R)
    hits = _event_hits(res.displacement, A, N, side)
    weights = np.exp(-res.log_weight)
    ess = float(weights.sum() ** 2 / np.sum(weights**2))
    if ess < 10.0:
        pass  # degenerate-weight flag surfaces through the field below
    est = TailEstimate.from_weighted(
        weights, hits, N, ess=ess, q_freq=float(hits.mean()),
        boundary_fraction=float(res.boundary.mean()),
    )
    est.low_hits_warning = est.low_hits_warning or ess < 10.0
    return est


@dataclass
class LLNReport:
    """Empirical velocity statistics for one lattice scale."""

    N: int
    target: float
    mean: float
    std: float
    fraction_within: float
    threshold: float
    quantiles: dict[str, float] = field(default_factory=dict)
    boundary_fraction: float = 0.0


def lln_check(
    params: ModelParams,
    N_list: list[int],
    M: int,
    seed: int,
    start: str = "equilibrium",
    A: float | None = None,
    eps: float = 0.05,
    threshold: float = 0.02,
    R: float | None = None,
    left_radius: float | None = None,
) -> list[LLNReport]:
    """Law-of-large-numbers audit of the tagged velocity.

    Starts: ``equilibrium`` (target gamma(1-rho)), ``step`` (all sites left
    of the origin filled; the lead particle travels at gamma) or
    ``profile`` (the regime strategy profile for A; target is the
    slack-adjusted velocity from the hydrodynamic mass equation).
    """
    reports = []
    for N in N_list:
        if start == "equilibrium":
            profile = Profile.constant(params.rho)
            target = params.typical_velocity
            spec = DynamicsSpec.plain(params)
            rad = default_radius(target, params) if R is None else R
            lrad = left_radius
        elif start == "step":
            profile = riemann_profile(1.0, 0.0)
            target = params.gamma
            spec = DynamicsSpec.plain(params)
            rad = (params.gamma + 1.5) if R is None else R
            lrad = 1.3 if left_radius is None else left_radius
        elif start == "profile":
            regime = classify_regime(A, params)
            profile = build_strategy_profile(regime, A, eps, params)
            target = regime.profile_velocity(A, eps)
            spec = DynamicsSpec.plain(params)
            rad = default_radius(A, params) if R is None else R
            lrad = left_radius
        else:
            raise DomainError(f"unknown start {start}")
        res = simulate_batch(profile, spec, N, M, 1.0, seed, params, rad, left_radius=lrad)
        v = res.displacement / N
        dev = np.abs(v - target)
        reports.append(
            LLNReport(
                N=N, target=target, mean=float(v.mean()), std=float(v.std()),
                fraction_within=float((dev <= threshold).mean()),
                threshold=threshold,
                quantiles={
                    "p50": float(np.quantile(dev, 0.5)),
                    "p90": float(np.quantile(dev, 0.9)),
                    "p99": float(np.quantile(dev, 0.99)),
                },
                boundary_fraction=float(res.boundary.mean()),
            )
        )
    return reports


@dataclass
class PoissonLawReport:
    """TASEP exactness audit: the tagged path is a Poisson process."""

    t: float
    M: int
    mean: float
    mean_over_target: float
    variance_over_mean: float
    chi2_stat: float
    chi2_pvalue: float
    chi2_dof: int
    increment_correlation: float
    increment_corr_stderr: float


def poisson_law_test(
    params: ModelParams,
    t: float,
    M: int,
    seed: int,
) -> PoissonLawReport:
    """Goodness of fit of the tagged displacement against Poisson((1-rho)t).

    Runs at lattice scale 1 (microscopic time t), records the half-time
    position for the independent-increments check, and pools chi-square
    bins to expected count >= 5.
    """
    from scipy import stats

    if not params.is_totally_asymmetric:
        raise DomainError("the exact Poisson law holds for TASEP only")
    R = t + 6.0 * math.sqrt(t) + 16.0
    res = simulate_batch(
        Profile.constant(params.rho), DynamicsSpec.plain(params),
        N=1, M=M, horizon=t, seed=seed, params=params,
        R=R, left_radius=8.0, snapshot_times=(t / 2.0,),
    )
    x = res.displacement
    lam = (1.0 - params.rho) * t
    mean = float(x.mean())
    var = float(x.var(ddof=1))

    counts = np.bincount(x.astype(int), minlength=int(lam + 8 * math.sqrt(lam)))
    ks = np.arange(counts.size)
    expected = M * np.exp(ks * math.log(lam) - lam - np.array([math.lgamma(k + 1.0) for k in ks]))
    # pool bins (low and high ends) to expected count >= 5
    obs_bins, exp_bins = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            obs_bins.append(acc_o)
            exp_bins.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    if obs_bins:
        obs_bins[-1] += acc_o
        exp_bins[-1] += acc_e
    obs = np.array(obs_bins)
    expv = np.array(exp_bins) * (M / sum(exp_bins))
    chi2 = float(np.sum((obs - expv) ** 2 / expv))
    dof = len(obs_bins) - 1
    pval = float(stats.chi2.sf(chi2, dof))

    half = res.snapshot_tagged[:, 0]
    inc = x - half
    corr = float(np.corrcoef(half, inc)[0, 1])
    return PoissonLawReport(
        t=t, M=M, mean=mean, mean_over_target=mean / lam,
        variance_over_mean=var / mean, chi2_stat=chi2, chi2_pvalue=pval,
        chi2_dof=dof, increment_correlation=corr,
        increment_corr_stderr=1.0 / math.sqrt(M),
    )


@dataclass
class CumulantReport:
    """Empirical scaled cumulant and its Legendre transform (upper-bound
    diagnostic: the transform bounds the rate from below via Chebyshev)."""

    lambdas: np.ndarray
    values: np.ndarray
    N: int
    convex_violation: float
    edge_flag: bool

    def legendre(self, A: float) -> float:
        return float(np.max(self.lambdas * A - self.values))

    def legendre_at_edge(self, A: float) -> bool:
        i = int(np.argmax(self.lambdas * A - self.values))
        return i in (0, self.lambdas.size - 1)


def estimate_cumulant(
    lambdas: np.ndarray,
    displacement: np.ndarray,
    N: int,
) -> CumulantReport:
    """Empirical pressure Lambda_N(l) = (1/N) log mean exp(l X_N), evaluated
    with log-sum-exp so no overflow can occur."""
    from scipy.special import logsumexp

    lambdas = np.asarray(lambdas, dtype=float)
    M = displacement.size
    vals = np.array(
        [(logsumexp(lam * displacement) - math.log(M)) / N for lam in lambdas]
    )
    mids = 0.5 * (vals[:-2] + vals[2:]) - vals[1:-1]
    convex_violation = float(max(0.0, -(mids.min())) if mids.size else 0.0)
    return CumulantReport(
        lambdas=lambdas, values=vals, N=N,
        convex_violation=convex_violation, edge_flag=False,
    )


@dataclass
class FluxDominanceReport:
    """Entropic flux-dominance audit.

    For each trajectory, the entropic Hopf-Lax cumulative computed from the
    trajectory's own sampled initial configuration is compared with the
    microscopic mass left of each checkpoint: the microscopic mass may not
    fall more than eps_test below the entropic value (beating the entropic
    flux is superexponentially unlikely).
    """

    n_checks: int
    n_violations: int
    worst_gap: float
    ts: tuple[float, ...]
    ells: tuple[float, ...]
    eps_test: float


def flux_dominance_check(
    profile: Profile,
    params: ModelParams,
    N: int,
    M: int,
    seed: int,
    ts: tuple[float, ...] = (0.5, 1.0),
    ells: tuple[float, ...] = (-1.5, -0.75, 0.0, 0.75, 1.5),
    eps_test: float = 0.05,
    R: float = 2.2,
) -> FluxDominanceReport:
    res = simulate_batch(
        profile, DynamicsSpec.plain(params), N, M, max(ts), seed, params, R,
        snapshot_times=ts, flux_ells=ells,
    )
    micro = res.snapshot_masses / N
    gap = res.flux_predictions - micro  # positive gap = mass deficit
    violations = int((gap > eps_test).sum())
    return FluxDominanceReport(
        n_checks=int(gap.size), n_violations=violations,
        worst_gap=float(gap.max()), ts=ts, ells=ells, eps_test=eps_test,
    )


def rates_table(params: ModelParams, A_grid: np.ndarray) -> list[dict]:
    """Tabulate every closed-form rate curve over a velocity grid."""
    rows = []
    g, rho = params.gamma, params.rho
    for A in A_grid:
        row: dict[str, float | None] = {"A": float(A)}
        row["I_Z"] = rate_IZ(A, params)
        row["I_gamma"] = rate_I_gamma(A, params) if A > g * (1 - rho) + 1e-12 else None
        try:
            regime = classify_regime(A, params)
            prof = build_strategy_profile(regime, A, 0.0, params)
            lo = min(k[0] for k in prof.knots) - 1.0
            hi = max(k[0] for k in prof.knots) + 1.0
            row["K_profile"] = relative_entropy_K(prof, params, (lo, hi))
        except DomainError:
            row["K_profile"] = None
        row["J1"] = (
            lower_bound_J1(A, params) if 0.0 < A < g * (1.0 - rho) else None
        )
        row["J2"] = (
            lower_bound_J2(A, params)
            if A < 0.0 and not params.is_totally_asymmetric
            else None
        )
        row["poisson_rate_t1"] = rate_poisson(A, rho) if params.is_totally_asymmetric else None
        rows.append(row)
    return rows
