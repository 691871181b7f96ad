"""Tagged-particle ASEP simulator and rare-event toolkit."""

from .model import (
    DomainError,
    ModelParams,
    StrategyRegime,
    TiltedRates,
    classify_regime,
    flux_G,
    flux_L,
    jv_step_cost,
    lower_bound_J1,
    lower_bound_J2,
    rate_I_gamma,
    rate_IZ,
    rate_poisson,
    tilt_constant,
)
from .profiles import (
    CumulativeProfile,
    Profile,
    build_strategy_profile,
    relative_entropy_K,
    riemann_profile,
)

__all__ = [
    "DomainError",
    "ModelParams",
    "StrategyRegime",
    "TiltedRates",
    "classify_regime",
    "flux_G",
    "flux_L",
    "jv_step_cost",
    "lower_bound_J1",
    "lower_bound_J2",
    "rate_I_gamma",
    "rate_IZ",
    "rate_poisson",
    "tilt_constant",
    "Profile",
    "CumulativeProfile",
    "build_strategy_profile",
    "relative_entropy_K",
    "riemann_profile",
]

__version__ = "0.1.0"
