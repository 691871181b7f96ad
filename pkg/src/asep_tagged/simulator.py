"""Exact continuous-time simulation of nearest-neighbor ASEP with a tagged particle.

The dynamics is simulated by uniformized kinetic Monte Carlo: every particle
carries exponential attempt clocks at its jump rates and attempts onto
occupied sites are rejected (which, by memorylessness, is exactly the
"clock reset" dynamics of the generator).  Trajectories are reproducible:
the random stream is keyed by (seed, trajectory index), so batch results do
not depend on thread scheduling.

The lattice is truncated to a window of sites; sites outside are vacuum
initially and walled off during the run.  A tagged particle reaching the
window edge aborts the trajectory with a boundary flag rather than wrapping.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import DomainError, ModelParams
from .profiles import Profile

WORKERS_ENV = "ASEP_TAGGED_WORKERS"


def configure_workers() -> None:
    """Apply the worker-count environment variable to the kernel backend."""
    val = os.environ.get(WORKERS_ENV)
    if val:
        K.set_threads(int(val))


@dataclass(frozen=True)
class LatticeState:
    """Occupancy window with a tagged particle.

    ``occupancy[i]`` is the occupation of lattice site ``lo_site + i``;
    ``tagged_site`` is a lattice site (occupied), ``scale`` the number of
    sites per macroscopic unit.
    """

    lo_site: int
    occupancy: np.ndarray
    tagged_site: int
    scale: int

    def __post_init__(self):
        if not self.occupancy[self.tagged_site - self.lo_site]:
            raise DomainError("tagged site must be occupied")

    @property
    def hi_site(self) -> int:
        return self.lo_site + self.occupancy.size - 1

    def particle_positions(self) -> np.ndarray:
        return np.nonzero(self.occupancy)[0] + self.lo_site

    @property
    def n_particles(self) -> int:
        return int(self.occupancy.sum())


@dataclass(frozen=True)
class HoleSlowdown:
    """Slow the first hole right of ``seek_right_of`` to left-jump rate
    ``left_rate`` until micro time ``expiry`` (its right rate stays 0;
    requires totally asymmetric bulk)."""

    seek_right_of: int
    left_rate: float
    expiry: float


@dataclass(frozen=True)
class DynamicsSpec:
    """Bulk rates plus optional tagged-rate tilt and hole override."""

    p: float
    q: float
    tagged_right: float | None = None
    tagged_left: float | None = None
    hole: HoleSlowdown | None = None

    def __post_init__(self):
        for r in (self.p, self.q, self.tagged_right, self.tagged_left):
            if r is not None and r < 0.0:
                raise DomainError("rates must be nonnegative")
        if self.hole is not None and self.q != 0.0:
            raise DomainError("hole slowdown implemented for totally asymmetric bulk only")

    @property
    def p_tagged(self) -> float:
        return self.p if self.tagged_right is None else self.tagged_right

    @property
    def q_tagged(self) -> float:
        return self.q if self.tagged_left is None else self.tagged_left

    @property
    def is_tilted(self) -> bool:
        return self.p_tagged != self.p or self.q_tagged != self.q

    @staticmethod
    def plain(params: ModelParams) -> "DynamicsSpec":
        return DynamicsSpec(p=params.p, q=params.q)

    @staticmethod
    def tilted(params: ModelParams, p_prime: float, q_prime: float) -> "DynamicsSpec":
        return DynamicsSpec(p=params.p, q=params.q, tagged_right=p_prime, tagged_left=q_prime)


@dataclass
class Trajectory:
    """Recorded outcome of one simulated trajectory."""

    tagged_path: list[tuple[float, int]]
    final_state: LatticeState
    tagged_start: int
    log_initial_weight: float
    log_dynamic_weight: float
    occupancy_integral_right: float
    occupancy_integral_left: float
    n_jumps_right: int
    n_jumps_left: int
    boundary_violation: bool
    end_time: float
    tracked_sites: tuple[int, ...] = ()
    currents: dict[int, int] = field(default_factory=dict)
    snapshots: list[tuple[float, LatticeState]] = field(default_factory=list)
    hole_jumps: int = 0
    hole_final_site: int | None = None
    path_overflow: bool = False

    @property
    def displacement(self) -> int:
        return self.final_state.tagged_site - self.tagged_start

    @property
    def log_weight(self) -> float:
        return self.log_initial_weight + self.log_dynamic_weight


def _site_probs(profile: Profile, N: int, lo_site: int, n_sites: int, rho: float):
    sites = np.arange(lo_site, lo_site + n_sites)
    probs = np.array([profile.value(x / N) for x in sites], dtype=np.float64)
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise DomainError("profile densities must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        lw1 = np.where(probs > 0.0, np.log(probs / rho), 0.0)
        lw0 = np.where(probs < 1.0, np.log((1.0 - probs) / (1.0 - rho)), 0.0)
    return probs, lw1, lw0


def window_sites(
    N: int,
    radius: float,
    left_radius: float | None = None,
) -> tuple[int, int]:
    """Window [lo_site, hi_site] in lattice units for the given radii."""
    lo = -int(math.ceil((radius if left_radius is None else left_radius) * N))
    hi = int(math.ceil(radius * N))
    return lo, hi


def default_radius(A: float, params: ModelParams) -> float:
    """Default truncation radius: target plus free drift plus a safety pad.

    Far particles cannot reach the action region within one macroscopic time
    unit, so truncation error shows up only through the (flagged) boundary
    events.
    """
    return abs(A) + params.gamma + 2.0


def sample_initial(
    profile: Profile,
    N: int,
    R: float,
    seed: int,
    params: ModelParams,
    left_radius: float | None = None,
    traj_index: int = 0,
) -> tuple[LatticeState, float]:
    """Draw an initial state from the local-equilibrium measure of ``profile``.

    Site 0 is forced occupied (the tagged particle); every other window site
    x is an independent Bernoulli(profile(x/N)).  Returns the state together
    with the log likelihood ratio of the drawn configuration against
    equilibrium Bernoulli(rho), the tagged site excluded.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    lo, hi = window_sites(N, R, left_radius)
    n_sites = hi - lo + 1
    probs, lw1, lw0 = _site_probs(profile, N, lo, n_sites, params.rho)
    forced = -lo  # interior index of site 0
    occ = np.zeros(n_sites + 2, dtype=np.uint8)
    occ[0] = occ[-1] = 1
    state = np.uint64(K.stream_key(np.uint64(seed), np.int64(traj_index), K.TAG_SAMPLE))
    _, logw, _ = K.sample_occupancy(state, probs, forced, occ, lw1, lw0)
    return (
        LatticeState(lo_site=lo, occupancy=occ[1:-1].copy(), tagged_site=0, scale=N),
        float(logw),
    )


def simulate(
    state: LatticeState,
    spec: DynamicsSpec,
    horizon: float,
    seed: int,
    *,
    snapshot_times: tuple[float, ...] = (),
    tracked_sites: tuple[int, ...] = (),
    record_path: bool = True,
    log_initial_weight: float = 0.0,
    traj_index: int = 0,
    check_current_identity: bool = False,
) -> Trajectory:
    """Run one trajectory to macroscopic time ``horizon`` (micro N*horizon).

    ``snapshot_times`` are macroscopic.  For unscaled (microscopic-time)
    runs use a state with ``scale = 1``.
    """
    N = state.scale
    T = horizon * N
    if T <= 0:
        raise DomainError("horizon must be positive")
    occ = np.zeros(state.occupancy.size + 2, dtype=np.uint8)
    occ[0] = occ[-1] = 1
    occ[1:-1] = state.occupancy
    pos = np.empty(int(occ.sum()) - 2, dtype=np.int64)
    n = K._positions_from_occ(occ, pos)
    t_idx0 = state.tagged_site - state.lo_site + 1
    ti = int(np.searchsorted(pos[:n], t_idx0))
    if pos[ti] != t_idx0:
        raise DomainError("tagged site not found among particles")

    hole_idx = np.int64(-1)
    hole_rate = spec.p
    hole_expiry = math.inf
    if spec.hole is not None:
        seek = spec.hole.seek_right_of - state.lo_site + 1
        hole_idx = np.int64(K._find_hole_right_of(occ, seek))
        if hole_idx < 0:
            raise DomainError("no hole found right of the requested site")
        hole_rate = spec.hole.left_rate
        hole_expiry = spec.hole.expiry

    snap_micro = np.array([s * N for s in snapshot_times], dtype=np.float64)
    snap_mass_idx = np.zeros(0, dtype=np.int64)
    snap_mass = np.zeros((snap_micro.size, 0), dtype=np.float64)
    snap_tag = np.zeros(snap_micro.size, dtype=np.float64)
    snap_occ = np.zeros((snap_micro.size, occ.size), dtype=np.uint8)
    track_bond = len(tracked_sites) > 0
    bond_j = np.zeros(occ.size if track_bond else 0, dtype=np.int64)
    cap = int(4 * (spec.p_tagged + spec.q_tagged) * T + 64) if record_path else 0
    path_t = np.zeros(cap, dtype=np.float64)
    path_x = np.zeros(cap, dtype=np.int64)
    out = np.zeros(K.N_OUT, dtype=np.float64)

    rng = np.uint64(K.stream_key(np.uint64(seed), np.int64(traj_index), K.TAG_DYNAMICS))
    K.evolve(
        rng, occ, pos, n, ti,
        spec.p, spec.q, spec.p_tagged, spec.q_tagged,
        hole_idx, hole_rate, hole_expiry,
        float(T), True,
        snap_micro, snap_mass_idx, snap_mass, snap_tag, snap_occ,
        snap_micro.size > 0, track_bond, bond_j, path_t, path_x, out,
    )

    path_len = int(out[K.OUT_PATH_LEN])
    final = LatticeState(
        lo_site=state.lo_site,
        occupancy=occ[1:-1].copy(),
        tagged_site=int(out[K.OUT_TAGGED_IDX]) + state.lo_site - 1,
        scale=N,
    )
    snapshots = [
        (
            float(snap_micro[i] / N),
            LatticeState(
                lo_site=state.lo_site,
                occupancy=snap_occ[i, 1:-1].copy(),
                tagged_site=int(snap_tag[i]) + state.lo_site - 1,
                scale=N,
            ),
        )
        for i in range(snap_micro.size)
        if snap_micro[i] <= out[K.OUT_END_TIME]
    ]
    currents = {
        x: int(bond_j[x - state.lo_site + 1]) for x in tracked_sites
    } if track_bond else {}

    nr, nl = int(out[K.OUT_NRIGHT]), int(out[K.OUT_NLEFT])
    logdw = 0.0
    if spec.p_tagged != spec.p:
        logdw += nr * math.log(spec.p_tagged / spec.p)
    if spec.q > 0.0 and spec.q_tagged != spec.q:
        logdw += nl * math.log(spec.q_tagged / spec.q)
    logdw -= (spec.p_tagged - spec.p) * out[K.OUT_OCC_RIGHT_INT]
    logdw -= (spec.q_tagged - spec.q) * out[K.OUT_OCC_LEFT_INT]
    if spec.hole is not None:
        logdw += out[K.OUT_HOLE_JUMPS] * math.log(spec.hole.left_rate / spec.p)
        logdw -= (spec.hole.left_rate - spec.p) * out[K.OUT_HOLE_OCC_INT]

    traj = Trajectory(
        tagged_path=[
            (float(path_t[i] / N), int(path_x[i]) + state.lo_site - 1)
            for i in range(path_len)
        ],
        final_state=final,
        tagged_start=state.tagged_site,
        log_initial_weight=log_initial_weight,
        log_dynamic_weight=float(logdw),
        occupancy_integral_right=float(out[K.OUT_OCC_RIGHT_INT]),
        occupancy_integral_left=float(out[K.OUT_OCC_LEFT_INT]),
        n_jumps_right=nr,
        n_jumps_left=nl,
        boundary_violation=bool(out[K.OUT_BOUNDARY]),
        end_time=float(out[K.OUT_END_TIME] / N),
        tracked_sites=tuple(tracked_sites),
        currents=currents,
        snapshots=snapshots,
        hole_jumps=int(out[K.OUT_HOLE_JUMPS]),
        hole_final_site=(int(out[K.OUT_HOLE_IDX]) + state.lo_site - 1)
        if spec.hole is not None
        else None,
        path_overflow=bool(out[K.OUT_PATH_OVERFLOW]),
    )
    if check_current_identity and track_bond:
        _assert_current_identity(state, traj)
    return traj


def _assert_current_identity(initial: LatticeState, traj: Trajectory) -> None:
    """Check J_t(y) - J_t(x) = sum_{z in (x, y]} (eta_0(z) - eta_t(z))."""
    sites = sorted(traj.tracked_sites)
    eta0 = initial.occupancy
    eta1 = traj.final_state.occupancy
    for x, y in zip(sites, sites[1:]):
        mass = int(
            eta0[x + 1 - initial.lo_site: y + 1 - initial.lo_site].sum()
            - eta1[x + 1 - initial.lo_site: y + 1 - initial.lo_site].sum()
        )
        if traj.currents[y] - traj.currents[x] != mass:
            raise AssertionError(
                f"current-mass identity violated between sites {x} and {y}"
            )


def current(trajectory: Trajectory, x: int, t: float | None = None) -> int:
    """Net signed crossings of bond (x, x+1) up to the end of the run."""
    if x not in trajectory.currents:
        raise KeyError(f"site {x} was not registered as tracked before simulation")
    return trajectory.currents[x]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atoms (position, mass 1/N) of the rescaled particle configuration."""

    positions: np.ndarray  # macroscopic atom positions
    mass: float            # mass per atom (1/N)

    @property
    def total_mass(self) -> float:
        return self.positions.size * self.mass

    def integrate(self, f) -> float:
        return float(np.sum(f(self.positions)) * self.mass)


def empirical_measure(state: LatticeState) -> EmpiricalMeasure:
    return EmpiricalMeasure(
        positions=state.particle_positions() / state.scale,
        mass=1.0 / state.scale,
    )


def _triangle_family(radius: float, levels: int = 8, per_level: int = 8):
    """The frozen test-function family of the measure distance.

    Level l in 0..levels-1 holds ``per_level`` unit-height triangular bumps
    of half-width (radius+1) * 2^-l centered on an evenly spaced grid
    covering [-(radius+1), radius+1]; 64 functions total, weighted 2^-j.
    """
    span = radius + 1.0
    fams = []
    for level in range(levels):
        width = span * (2.0 ** -level)
        for k in range(per_level):
            center = -span + (2 * k + 1) * span / per_level
            fams.append((center, width))
    return fams


def measure_distance(mu: EmpiricalMeasure, nu, radius: float = 4.0) -> float:
    """Weighted sum of test-function discrepancies between two measures.

    ``nu`` may be another :class:`EmpiricalMeasure` or a callable
    ``nu(center, width) -> integral of the triangular bump``.
    """
    total = 0.0
    for j, (c, w) in enumerate(_triangle_family(radius), start=1):
        def bump(x, c=c, w=w):
            return np.maximum(0.0, 1.0 - np.abs(x - c) / w)

        a = mu.integrate(bump)
        b = nu.integrate(bump) if isinstance(nu, EmpiricalMeasure) else nu(c, w)
        total += abs(a - b) * (0.5 ** j)
    return total


def profile_bump_integral(profile: Profile, c: float, w: float, n_grid: int = 2000) -> float:
    """Integral of the triangular bump against a density profile (for tests)."""
    xs = np.linspace(c - w, c + w, n_grid)
    vals = np.array([profile.value(x) for x in xs])
    bump = np.maximum(0.0, 1.0 - np.abs(xs - c) / w)
    return float(np.trapezoid(vals * bump, xs))


def to_zero_range(state: LatticeState) -> np.ndarray:
    """Gaps ahead of the tagged particle: gap i = pos_i - pos_{i-1} - 1."""
    pos = state.particle_positions()
    ahead = pos[pos >= state.tagged_site]
    return np.diff(ahead) - 1


def from_zero_range(gaps: np.ndarray, tagged_site: int, scale: int = 1,
                    pad: int = 2) -> LatticeState:
    """Inverse of :func:`to_zero_range` (vacuum behind the tagged particle)."""
    positions = [tagged_site]
    for g in gaps:
        positions.append(positions[-1] + int(g) + 1)
    lo = tagged_site - pad
    occ = np.zeros(positions[-1] - lo + 1 + pad, dtype=np.uint8)
    for x in positions:
        occ[x - lo] = 1
    return LatticeState(lo_site=lo, occupancy=occ, tagged_site=tagged_site, scale=scale)


def simulate_slowed_hole(
    N: int,
    eps: float,
    seed: int,
    params: ModelParams,
    horizon: float = 1.0,
    R: float = 2.5,
    traj_index: int = 0,
) -> Trajectory:
    """Blocking construction: full block on [0, rho), first hole beyond
    ``floor(rho N)`` slowed to left rate ``rho - eps`` up to macro time 1.

    Requires totally asymmetric dynamics and ``0 < eps < rho``.
    """
    if not params.is_totally_asymmetric:
        raise DomainError("slowed-hole construction requires gamma = 1")
    if not 0.0 < eps < params.rho:
        raise DomainError(f"need 0 < eps < rho, got eps={eps}")
    from .model import StrategyRegime
    from .profiles import build_strategy_profile

    profile = build_strategy_profile(StrategyRegime.LOWER_NONENTROPIC, 0.0, 0.0, params)
    state, logiw = sample_initial(profile, N, R, seed, params, traj_index=traj_index)
    spec = DynamicsSpec(
        p=params.p,
        q=params.q,
        hole=HoleSlowdown(
            seek_right_of=int(math.floor(params.rho * N)),
            left_rate=params.rho - eps,
            expiry=horizon * N,
        ),
    )
    return simulate(
        state, spec, horizon, seed, log_initial_weight=logiw,
        record_path=False, traj_index=traj_index,
    )


@dataclass
class BatchResult:
    """Vector outputs of a reproducible trajectory batch."""

    displacement: np.ndarray      # tagged displacement in sites, one per trajectory
    log_weight: np.ndarray        # log dQ/dP (initial + dynamic)
    boundary: np.ndarray          # boundary-violation flags
    snapshot_tagged: np.ndarray | None = None   # (m, n_times) tagged displacement
    snapshot_masses: np.ndarray | None = None   # (m, n_times, n_ells) counts <= ell*N
    flux_predictions: np.ndarray | None = None  # (m, n_times, n_ells) Hopf-Lax values
    hole_final: np.ndarray | None = None


def simulate_batch(
    profile: Profile,
    spec: DynamicsSpec,
    N: int,
    M: int,
    horizon: float,
    seed: int,
    params: ModelParams,
    R: float,
    left_radius: float | None = None,
    snapshot_times: tuple[float, ...] = (),
    flux_ells: tuple[float, ...] = (),
) -> BatchResult:
    """Simulate ``M`` independent trajectories from ``profile`` in parallel.

    Initial states are sampled per trajectory; weights accumulate both the
    initial likelihood ratio and the dynamic (tilt/hole) Radon-Nikodym term.
    When ``flux_ells`` is given, the entropic Hopf-Lax prediction computed
    from each trajectory's own initial configuration is recorded alongside
    the microscopic mass counts at the snapshot times.
    """
    configure_workers()
    lo, hi = window_sites(N, R, left_radius)
    n_sites = hi - lo + 1
    probs, lw1, lw0 = _site_probs(profile, N, lo, n_sites, params.rho)
    forced = -lo
    T = horizon * N

    hole_seek = np.int64(-1)
    hole_rate, hole_expiry = spec.p, math.inf
    if spec.hole is not None:
        hole_seek = np.int64(spec.hole.seek_right_of - lo + 1)
        hole_rate = spec.hole.left_rate
        hole_expiry = spec.hole.expiry

    need_times = spec.is_tilted or spec.hole is not None
    snap_micro = np.array([s * N for s in snapshot_times], dtype=np.float64)
    ells = np.array(flux_ells, dtype=np.float64)
    mass_idx = np.array(
        [int(math.floor(e * N)) - lo + 1 for e in flux_ells], dtype=np.int64
    )

    out_x = np.zeros(M, dtype=np.float64)
    out_logw = np.zeros(M, dtype=np.float64)
    out_flags = np.zeros(M, dtype=np.float64)
    out_masses = np.zeros((M, snap_micro.size, ells.size + 1), dtype=np.float64)
    out_preds = np.zeros((M, snap_micro.size, max(ells.size, 1)), dtype=np.float64)
    out_hole = np.zeros(M, dtype=np.float64)

    K.batch_run(
        np.uint64(seed), M, probs, lw1, lw0, forced,
        spec.p, spec.q, spec.p_tagged, spec.q_tagged,
        hole_seek, hole_rate, hole_expiry,
        float(T), need_times,
        snap_micro, mass_idx, ells, params.gamma, float(N), lo,
        out_x, out_logw, out_flags, out_masses, out_preds, out_hole,
    )
    return BatchResult(
        displacement=out_x,
        log_weight=out_logw,
        boundary=out_flags.astype(bool),
        snapshot_tagged=out_masses[:, :, 0] if snap_micro.size else None,
        snapshot_masses=out_masses[:, :, 1:] if snap_micro.size and ells.size else None,
        flux_predictions=out_preds if ells.size else None,
        hole_final=(out_hole + lo - 1) if spec.hole is not None else None,
    )
