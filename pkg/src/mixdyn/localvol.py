"""Drift and diffusion coefficients that make a diffusion track a mixture law.

The closed forms cover the two cases where component drifts coincide with
the mixture drift (normal mixtures with the Lambda-averaged drift, lognormal
mixtures with drift ``r(t) y``). :func:`general_coefficient_oracle`
recovers the squared diffusion coefficient from the density curve alone, by
integrating the Fokker-Planck equation twice, and is used to cross-check
both closed forms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .market import (
    MixtureSpec,
    YieldCurve,
    T_MIN,
    component_moments,
    lambda_weights,
    mixture_density,
)


class OracleConvergenceError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, msg: str, achieved: float):
        super().__init__(f"{msg} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class LocalVolModel:
    """A mixture specification together with its rate curve.

    In lognormal mode the diffusion is ``dS = r(t) S dt + sigma_mix(t, S) S dW``
    with ``r = r_d - r_f``. In normal mode the curve is unused.
    """

    spec: MixtureSpec
    curve: YieldCurve = field(default_factory=YieldCurve.flat)

    @property
    def mode(self) -> str:
        return "lognormal-mixture" if self.spec.lognormal_mode else "normal-mixture"

    @property
    def s0(self) -> float:
        return self.spec.s0

    @classmethod
    def from_config(cls, path) -> "LocalVolModel":
        from .market import load_config

        spec, curve = load_config(path)
        return cls(spec, curve)

    def density(self, t, y):
        return mixture_density(self.spec, self.curve, t, y)

    def weights(self, t, y):
        return lambda_weights(self.spec, self.curve, t, y)


def _require(model: LocalVolModel, lognormal: bool):
    if model.spec.lognormal_mode != lognormal:
        want = "lognormal" if lognormal else "normal"
        raise ValueError(f"operation needs a {want}-mixture model, got {model.mode}")


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def sigma_mix_squared(model: LocalVolModel, t: float, y):
    """``sigma_mix(t, y)^2 = sum_i Lambda_i(t, y) nu_i(t)^2`` (percentage variance)."""
    _require(model, True)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("sigma_mix needs y > 0")
    nu2 = model.spec.vols_at(t) ** 2
    if t <= model.spec.epsilon:
        out = np.full(y.shape, model.spec.reg_level ** 2)
    else:
        out = lambda_weights(model.spec, model.curve, t, y) @ nu2
    return out if out.ndim else float(out)


class LogSigmaEvaluator:
    """Fast ``sigma_mix^2`` in log-level for a fixed model.

    Simulation calls this once per time step with a large vector of log
    levels; only the Gaussian kernels in ``x = ln S`` are needed because the
    ``1/S`` Jacobian and the normalization constant cancel inside Lambda.
    """

    def __init__(self, model: LocalVolModel):
        _require(model, True)
        self.model = model
        spec = model.spec
        self._loglam = np.log(np.maximum(np.asarray(spec.weights), 1e-300))

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        spec = self.model.spec
        if t <= spec.epsilon or spec.m == 1:
            return np.full(x.shape, float(spec.vols_at(t)[0] ** 2 if spec.m == 1 else spec.reg_level ** 2))
        loc, var = component_moments(spec, self.model.curve, t)
        nu2 = spec.vols_at(t) ** 2
        c = self._loglam - 0.5 * np.log(var)
        if spec.m == 2:
            # logistic form avoids the (n, m) temporaries
            d = (c[1] - c[0]) - 0.5 * (x - loc[1]) ** 2 / var[1] + 0.5 * (x - loc[0]) ** 2 / var[0]
            w1 = 0.5 * (1.0 + np.tanh(0.5 * d))
            return nu2[0] + (nu2[1] - nu2[0]) * w1
        lp = c - 0.5 * (x[:, None] - loc) ** 2 / var
        lp -= lp.max(axis=1, keepdims=True)
        w = np.exp(lp)
        return (w @ nu2) / w.sum(axis=1)


def sigma_mix_squared_dy(model: LocalVolModel, t: float, y):
    """Slope ``d sigma_mix^2 / dy``; zero on the regularization segment."""
    _require(model, True)
    y = np.asarray(y, dtype=float)
    if t <= model.spec.epsilon or model.spec.m == 1:
        out = np.zeros(y.shape)
        return out if out.ndim else float(out)
    loc, var = component_moments(model.spec, model.curve, t)
    lam = lambda_weights(model.spec, model.curve, t, y)
    g = -(np.log(y)[..., None] - loc) / (var * y[..., None])
    gbar = (lam * g).sum(axis=-1, keepdims=True)
    out = (lam * (g - gbar)) @ (model.spec.vols_at(t) ** 2)
    return out if out.ndim else float(out)


def normal_mixture_coefficients(model: LocalVolModel, t: float, y):
    """Drift ``sum Lambda_i mu_i(t)`` and squared diffusion ``sum Lambda_i sigma_i(t)^2``."""
    _require(model, False)
    lam = lambda_weights(model.spec, None, t, y)
    mu = model.spec.drifts_at(t)
    sig2 = model.spec.vols_at(t) ** 2
    f = lam @ mu
    s2 = lam @ sig2
    if np.ndim(f) == 0:
        return float(f), float(s2)
    return f, s2


def normal_mixture_coefficients_dy(model: LocalVolModel, t: float, y):
    """Slopes in ``y`` of the normal-mixture drift and squared diffusion."""
    _require(model, False)
    y = np.asarray(y, dtype=float)
    if t <= model.spec.epsilon or model.spec.m == 1:
        return np.zeros(y.shape), np.zeros(y.shape)
    loc, var = component_moments(model.spec, None, t)
    lam = lambda_weights(model.spec, None, t, y)
    g = -(y[..., None] - loc) / var
    dlam = lam * (g - (lam * g).sum(axis=-1, keepdims=True))
    return dlam @ model.spec.drifts_at(t), dlam @ (model.spec.vols_at(t) ** 2)


def exp_transform_coefficients(model: LocalVolModel, t: float, s):
    """Coefficients of ``S = exp(Y)`` for a normal-mixture ``Y``.

    Returns ``(s (f + sigma^2 / 2), s sigma)`` evaluated at ``ln s``.
    """
    _require(model, False)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("exp transform needs s > 0")
    f, s2 = normal_mixture_coefficients(model, t, np.log(s))
    drift = s * (f + 0.5 * s2)
    diff = s * np.sqrt(s2)
    if drift.ndim == 0:
        return float(drift), float(diff)
    return drift, diff


# ---------------------------------------------------------------------------
# general quadrature oracle
# ---------------------------------------------------------------------------


def _kernel_time_derivative(model: LocalVolModel, t: float):
    """Rates of change of each component's location and variance."""
    spec = model.spec
    v2dot = spec.vols_at(t) ** 2
    if spec.lognormal_mode:
        r = model.curve.forward_rate(t, "net")
        locdot = r - 0.5 * v2dot
    else:
        locdot = spec.drifts_at(t)
    return locdot, v2dot


def _q_and_dqdt(model: LocalVolModel, t: float, analytic: bool):
    """Mixture density in the Gaussian coordinate and its time derivative."""
    spec = model.spec
    lam = np.asarray(spec.weights)
    curve = model.curve if spec.lognormal_mode else None

    def q_at(tt, z):
        loc, var = component_moments(spec, curve, tt)
        return lam @ (np.exp(-0.5 * (z - loc) ** 2 / var) / np.sqrt(2 * math.pi * var))

    if analytic:
        loc, var = component_moments(spec, curve, t)
        locdot, vardot = _kernel_time_derivative(model, t)

        def dq(z):
            u = z - loc
            k = np.exp(-0.5 * u * u / var) / np.sqrt(2 * math.pi * var)
            return lam @ (k * (u / var * locdot + 0.5 * (u * u / var ** 2 - 1.0 / var) * vardot))
    else:
        h = 1e-6 * max(t, 1.0)

        # one-sided second-order stencil: rates are right-continuous at pillars
        def dq(z):
            return (-3.0 * q_at(t, z) + 4.0 * q_at(t + h, z) - q_at(t + 2 * h, z)) / (2 * h)

    return (lambda z: q_at(t, z)), dq


def general_coefficient_oracle(
    model: LocalVolModel,
    f: Callable[[float, float], float],
    t: float,
    y: float,
    lower: float | None = None,
    analytic: bool = True,
    epsrel: float = 1e-11,
) -> float:
    """Squared diffusion coefficient that makes a diffusion with drift ``f`` track the mixture.

    Evaluates

        sigma^2(t, y) p(t, y) = 2 [ int_b^y int_b^x dp/dt(u) du dx + int_b^y f(t, x) p(t, x) dx ]

    The double integral is folded into ``int_b^y (y - u) dp/dt(u) du``. Both
    integrals run in the Gaussian coordinate (``ln`` level for the lognormal
    mixture) with the lower end truncated at ``min_i(loc_i - 8 sd_i)`` unless
    ``lower`` is given in level units.

    ``f`` takes ``(t, level)`` and returns the drift in level units.
    """
    spec = model.spec
    if t < T_MIN:
        raise ValueError("oracle needs t > 0")
    curve = model.curve if spec.lognormal_mode else None
    loc, var = component_moments(spec, curve, t)
    sd = np.sqrt(var)
    if spec.lognormal_mode:
        if y <= 0:
            raise ValueError("lognormal oracle needs y > 0")
        z_hi = math.log(y)
        to_level = math.exp
    else:
        z_hi = float(y)
        to_level = float
    z_lo = float(np.min(loc - 8.0 * sd))
    if lower is not None:
        if spec.lognormal_mode:
            z_lo = math.log(lower) if lower > 0 else z_lo
        else:
            z_lo = float(lower)
    if z_hi <= z_lo:
        raise ValueError("evaluation point lies below the truncated lower bound")

    q, dq = _q_and_dqdt(model, t, analytic)
    if not analytic:
        # difference quotients carry ~1e-10 relative noise
        epsrel = max(epsrel, 1e-8)
    brk = [float(p) for p in np.concatenate((loc, loc - 2 * sd, loc + 2 * sd)) if z_lo < p < z_hi]

    def g1(z):
        return (y - to_level(z)) * dq(z)

    def g2(z):
        return f(t, to_level(z)) * q(z)

    total = 0.0
    for g in (g1, g2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(g, z_lo, z_hi, points=brk or None, epsabs=0.0,
                                      epsrel=epsrel, limit=500)
        if err > max(1e3 * epsrel * abs(val), 1e-300):
            raise OracleConvergenceError("coefficient quadrature did not converge", err)
        total += val
    p_y = mixture_density(spec, curve, t, y)
    return 2.0 * total / p_y


def lognormal_drift(model: LocalVolModel) -> Callable[[float, float], float]:
    """The risk-neutral drift ``r(t) y`` of the lognormal-mixture diffusion."""
    return lambda t, y: model.curve.forward_rate(t, "net") * y


def normal_mixture_drift(model: LocalVolModel) -> Callable[[float, float], float]:
    """The Lambda-averaged drift of the normal-mixture diffusion."""
    return lambda t, y: normal_mixture_coefficients(model, t, y)[0]
