"""Black-Scholes machinery, closed-form mixture prices and implied volatility.

All Black-Scholes functions take the *total* volatility ``V`` over the
option's life (``sigma * sqrt(tau)``) and integrated rates ``Rd``, ``Rf``, so
time-dependent coefficients need no special handling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .localvol import LocalVolModel
from .market import integrated_rate


# scipy's ndtr is erfc-based and accurate to a few ulps in both tails
norm_cdf = ndtr


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


class ImpliedVolError(ValueError):
    """Price outside the open no-arbitrage interval."""

    def __init__(self, msg: str, bound: str):
        super().__init__(msg)
        self.bound = bound


class StepSizeError(ArithmeticError):
    """Finite-difference step dominated by rounding error."""


@dataclass(frozen=True)
class OptionQuote:
    T: float
    K: float
    price: float
    kind: str = "call"

    def __post_init__(self):
        if self.T <= 0 or self.K <= 0:
            raise ValueError("quotes need T > 0 and K > 0")
        if self.kind != "call":
            raise ValueError("only call quotes are supported")


@dataclass(frozen=True)
class SmilePoint:
    """One implied-volatility observation; ``implied_vol`` is annualized."""

    t: float
    T: float
    K: float
    implied_vol: float
    price: float = math.nan
    std_error: float = math.nan
    status: str = "ok"

    def __post_init__(self):
        if not self.t < self.T:
            raise ValueError("smile point needs t < T")
        if self.status == "ok" and not self.implied_vol > 0:
            raise ValueError("implied volatility must be positive")


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------


def _d1(s, K, Rd, Rf, V):
    return (np.log(s / K) + Rd - Rf + 0.5 * V * V) / V


def bs_call(s, K, tau, Rd, Rf, V):
    """Carry-adjusted Black-Scholes call.

    ``s e^{-Rf} N(d1) - K e^{-Rd} N(d2)`` with ``V`` the total volatility.
    ``V = 0`` returns the discounted intrinsic value.
    """
    s, K, Rd, Rf, V = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, K, Rd, Rf, V)))
    if np.any(s <= 0) or np.any(K < 0):
        raise ValueError("bs_call needs s > 0 and K >= 0")
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("bs_call needs tau > 0")
    if np.any(V < 0):
        raise ValueError("total volatility must be nonnegative")
    fwd_leg = s * np.exp(-Rf)
    strike_leg = K * np.exp(-Rd)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = _d1(s, K, Rd, Rf, V)
        price = fwd_leg * norm_cdf(d1) - strike_leg * norm_cdf(d1 - V)
    price = np.where(K == 0, fwd_leg, price)
    price = np.where((V == 0) & (K > 0), np.maximum(fwd_leg - strike_leg, 0.0), price)
    return price if price.ndim else float(price)


def bs_put(s, K, tau, Rd, Rf, V):
    """Put from parity; same conventions as :func:`bs_call`."""
    c = bs_call(s, K, tau, Rd, Rf, V)
    return c - np.asarray(s) * np.exp(-np.asarray(Rf)) + np.asarray(K) * np.exp(-np.asarray(Rd))


def bs_vega(s, K, Rd, Rf, V):
    """Derivative of the call in total volatility."""
    return s * np.exp(-Rf) * norm_pdf(_d1(s, K, Rd, Rf, V))


def call_bounds(s, K, Rd, Rf):
    """Open no-arbitrage interval for a call price."""
    s = np.asarray(s, dtype=float)
    lower = np.maximum(s * np.exp(-np.asarray(Rf)) - np.asarray(K) * np.exp(-np.asarray(Rd)), 0.0)
    return lower, s * np.exp(-np.asarray(Rf)) + 0.0 * lower


def implied_vol(price, s, K, tau, Rd, Rf, tol: float = 1e-13, max_iter: int = 200):
    """Total implied volatility ``V`` with ``bs_call(V) = price``.

    Bisection-safeguarded Newton on the bracket ``[1e-9, 5 sqrt(tau) + 5]``,
    vectorized over broadcast inputs. Raises :class:`ImpliedVolError` when a
    price sits on or outside the no-arbitrage bounds; ``bound`` names which.
    Divide by ``sqrt(tau)`` for the annualized figure.
    """
    price, s, K, tau, Rd, Rf = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (price, s, K, tau, Rd, Rf)))
    lo_b, hi_b = call_bounds(s, K, Rd, Rf)
    if np.any(~np.isfinite(price)):
        raise ImpliedVolError("non-finite price", "lower")
    if np.any(price <= lo_b):
        i = np.argmax(price <= lo_b)
        raise ImpliedVolError(
            f"price {price.flat[i]:.6g} at or below lower bound {lo_b.flat[i]:.6g}", "lower")
    if np.any(price >= hi_b):
        i = np.argmax(price >= hi_b)
        raise ImpliedVolError(
            f"price {price.flat[i]:.6g} at or above upper bound {hi_b.flat[i]:.6g}", "upper")

    lo = np.full(price.shape, 1e-9)
    hi = 5.0 * np.sqrt(tau) + 5.0
    # vega peaks at V = sqrt(2 |ln(F/K)|): Newton from there is well behaved
    x = np.clip(np.sqrt(2.0 * np.abs(np.log(s / K) + Rd - Rf)), 0.05, None)
    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        fx = bs_call(s, K, tau, Rd, Rf, x) - price
        fx = np.asarray(fx)
        # relative accuracy, floored at the rounding level of bs_call itself
        done = np.abs(fx) <= tol * price + 4e-16 * s
        if np.all(done | (hi - lo <= 4e-16 * hi)):
            break
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        vega = bs_vega(s, K, Rd, Rf, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / vega
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), step))
    return x if x.ndim else float(x)


# ---------------------------------------------------------------------------
# mixture prices
# ---------------------------------------------------------------------------


def _mixture_terms(model: LocalVolModel, T: float):
    if not model.spec.lognormal_mode:
        raise ValueError("closed-form mixture prices need a lognormal-mixture model")
    if T <= 0:
        raise ValueError("maturity must be positive")
    Rd = integrated_rate(model.curve, 0.0, T, "domestic")
    Rf = integrated_rate(model.curve, 0.0, T, "foreign")
    V = np.sqrt(model.spec.variances(T))
    return Rd, Rf, V


def mixture_call(model: LocalVolModel, K, T: float):
    """``sum_i lambda_i BSCall(s0, K, T, Rd(T), Rf(T), V_i(T))``."""
    Rd, Rf, V = _mixture_terms(model, T)
    K = np.asarray(K, dtype=float)
    if np.any(K <= 0):
        raise ValueError("strikes must be positive")
    prices = np.stack([bs_call(model.s0, K, T, Rd, Rf, v) for v in V], axis=-1)
    out = prices @ np.asarray(model.spec.weights)
    return out if out.ndim else float(out)


def mixture_put(model: LocalVolModel, K, T: float):
    Rd, Rf, V = _mixture_terms(model, T)
    K = np.asarray(K, dtype=float)
    prices = np.stack([bs_put(model.s0, K, T, Rd, Rf, v) for v in V], axis=-1)
    out = prices @ np.asarray(model.spec.weights)
    return out if out.ndim else float(out)


def mixture_implied_vol(model: LocalVolModel, K, T: float):
    """Annualized implied volatility of :func:`mixture_call` prices."""
    Rd, Rf, _ = _mixture_terms(model, T)
    price = mixture_call(model, K, T)
    return np.asarray(implied_vol(price, model.s0, K, T, Rd, Rf)) / math.sqrt(T)


# ---------------------------------------------------------------------------
# implied density
# ---------------------------------------------------------------------------


def implied_density(price_fn: Callable, T: float, K: float, h: float, Rd: float) -> float:
    """Density recovered from the second strike-derivative of call prices.

    ``p_T(K) = e^{Rd} d^2C/dK^2``, by a central second difference with step
    ``h``. A step so small that rounding swamps the difference raises
    :class:`StepSizeError`; the check compares the ``h`` and ``2h``
    estimates (Richardson) against the rounding bound.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if K - 2 * h <= 0:
        raise ValueError("step too large for this strike")

    def second_diff(step):
        c = np.asarray(price_fn(np.array([K - step, K, K + step])), dtype=float)
        return (c[0] - 2 * c[1] + c[2]) / step ** 2, float(np.max(np.abs(c)))

    d1, scale = second_diff(h)
    d2, _ = second_diff(2 * h)
    rounding = 4.0 * np.finfo(float).eps * scale / h ** 2
    richardson_gap = abs(d1 - d2)
    if rounding > 1e-3 * max(abs(d1), 1e-300) or (
            richardson_gap > 0.5 * max(abs(d1), abs(d2)) and rounding > 1e-2 * richardson_gap):
        raise StepSizeError(
            f"h={h:g} too small: rounding bound {rounding:.3e}, Richardson gap {richardson_gap:.3e}")
    return math.exp(Rd) * d1
