"""Mixture-law diffusions: local volatility that reproduces lognormal or normal mixtures."""

from .localvol import LocalVolModel, general_coefficient_oracle, sigma_mix_squared
from .market import MixtureSpec, YieldCurve, load_config, mixture_cdf, mixture_density
from .pricing import bs_call, implied_vol, mixture_call, mixture_implied_vol

__version__ = "0.1.0"

__all__ = [
    "LocalVolModel",
    "MixtureSpec",
    "YieldCurve",
    "bs_call",
    "general_coefficient_oracle",
    "implied_vol",
    "load_config",
    "mixture_call",
    "mixture_cdf",
    "mixture_density",
    "mixture_implied_vol",
    "sigma_mix_squared",
]
