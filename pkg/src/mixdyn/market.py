"""Deterministic curves, mixture specifications and mixture densities.

Everything here is immutable. Times are year fractions (ACT/365), volatilities
are annualized, and rates enter only through discount factors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp, ndtr

# below this time the marginal is treated as the point mass at s0
T_MIN = 1e-12
DEFAULT_EPSILON = 1e-4
VOL_FLOOR = 1e-6

LOG_2PI = math.log(2.0 * math.pi)


class ExtrapolationError(ValueError):
    """Requested time lies beyond the last curve pillar."""


class PointMassError(ValueError):
    """The marginal at t=0 is a Dirac mass and has no density."""


# ---------------------------------------------------------------------------
# yield curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class YieldCurve:
    """Domestic and foreign discount factors on a pillar grid.

    Discount factors are interpolated log-linearly (piecewise-flat forward
    rates). Beyond the last pillar the curve raises unless
    ``extrapolation="flat-forward"`` was requested explicitly, in which case
    the last forward rate of each leg is continued.
    """

    maturities: tuple[float, ...]
    domestic: tuple[float, ...]
    foreign: tuple[float, ...]
    extrapolation: str = "none"

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        if len(mats) == 0:
            raise ValueError("curve needs at least one pillar")
        if len(self.domestic) != len(mats) or len(self.foreign) != len(mats):
            raise ValueError("pillar columns have different lengths")
        if mats[0] <= 0 or np.any(np.diff(mats) <= 0):
            raise ValueError("pillar maturities must be positive and strictly increasing")
        for leg in (self.domestic, self.foreign):
            arr = np.asarray(leg, dtype=float)
            if np.any(arr <= 0) or np.any(arr > 1):
                raise ValueError("discount factors must lie in (0, 1]")
        if self.extrapolation not in ("none", "flat-forward"):
            raise ValueError(f"unknown extrapolation policy {self.extrapolation!r}")

    @classmethod
    def from_pillars(cls, pillars: Sequence[Sequence[float]], extrapolation: str = "none") -> "YieldCurve":
        rows = [tuple(float(v) for v in p) for p in pillars]
        return cls(
            maturities=tuple(r[0] for r in rows),
            domestic=tuple(r[1] for r in rows),
            foreign=tuple(r[2] for r in rows),
            extrapolation=extrapolation,
        )

    @classmethod
    def flat(cls, rd: float = 0.0, rf: float = 0.0, horizon: float = 30.0) -> "YieldCurve":
        """Constant continuously-compounded rates, one pillar at ``horizon``."""
        return cls((horizon,), (math.exp(-rd * horizon),), (math.exp(-rf * horizon),),
                   extrapolation="flat-forward")

    @property
    def last_pillar(self) -> float:
        return self.maturities[-1]

    def _log_df(self, leg: str, t):
        if leg == "domestic":
            dfs = self.domestic
        elif leg == "foreign":
            dfs = self.foreign
        else:
            raise ValueError(f"unknown leg {leg!r}")
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("negative time")
        knots = np.concatenate(([0.0], self.maturities))
        logs = np.concatenate(([0.0], np.log(dfs)))
        beyond = t > self.last_pillar * (1 + 1e-12)
        if np.any(beyond) and self.extrapolation == "none":
            raise ExtrapolationError(
                f"t={float(np.max(t))} beyond last pillar {self.last_pillar}")
        out = np.interp(t, knots, logs)
        if np.any(beyond):
            slope = (logs[-1] - logs[-2]) / (knots[-1] - knots[-2])
            out = np.where(beyond, logs[-1] + slope * (t - knots[-1]), out)
        return out

    def discount(self, t, leg: str = "domestic"):
        """Discount factor ``exp(-R_leg(0, t))``."""
        return np.exp(self._log_df(leg, t))

    def forward_rate(self, t, leg: str = "net"):
        """Instantaneous forward rate, right-continuous at pillars."""
        if leg == "net":
            return self.forward_rate(t, "domestic") - self.forward_rate(t, "foreign")
        t = np.asarray(t, dtype=float)
        if self.extrapolation == "none" and np.any(t > self.last_pillar * (1 + 1e-12)):
            raise ExtrapolationError(f"t={float(np.max(t))} beyond last pillar {self.last_pillar}")
        knots = np.concatenate(([0.0], self.maturities))
        idx = np.clip(np.searchsorted(knots, t, side="right"), 1, len(knots) - 1)
        lo, hi = knots[idx - 1], knots[idx]
        out = -(self._log_df(leg, hi) - self._log_df(leg, lo)) / (hi - lo)
        return out if out.ndim else float(out)


def integrated_rate(curve: YieldCurve, a, t, leg: str = "net"):
    """Integrated short rate ``R(a, t) = -ln(df(t) / df(a))``.

    ``leg`` is ``"domestic"``, ``"foreign"`` or ``"net"``; the net leg is the
    FX drift ``R_d - R_f``.
    """
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(a > t):
        raise ValueError("integrated_rate needs a <= t")
    if leg == "net":
        val = (integrated_rate(curve, a, t, "domestic") - integrated_rate(curve, a, t, "foreign"))
        return val
    val = curve._log_df(leg, a) - curve._log_df(leg, t)
    return val if val.ndim else float(val)


# ---------------------------------------------------------------------------
# volatility / drift curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepCurve:
    """Piecewise-constant function of time.

    ``levels[k]`` holds on ``(breaks[k-1], breaks[k]]`` with ``breaks[-1]``
    conventionally ``inf``; a single level gives a constant curve.
    """

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.levels) or not self.levels:
            raise ValueError("breaks and levels must have equal, nonzero length")
        b = np.asarray(self.breaks, dtype=float)
        if np.any(b <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("interval ends must be positive and increasing")
        if not math.isinf(self.breaks[-1]):
            object.__setattr__(self, "breaks", tuple(self.breaks[:-1]) + (math.inf,))

    @classmethod
    def constant(cls, level: float) -> "StepCurve":
        return cls((math.inf,), (float(level),))

    @property
    def kind(self) -> str:
        return "constant" if len(self.levels) == 1 else "piecewise-constant"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks[:-1]), t, side="left")
        return np.asarray(self.levels)[idx]

    def _cum(self, power: int):
        ends = np.asarray(self.breaks[:-1], dtype=float)
        lv = np.asarray(self.levels, dtype=float) ** power
        starts = np.concatenate(([0.0], ends))
        cum = np.concatenate(([0.0], np.cumsum(lv[:-1] * np.diff(starts))))
        return starts, lv, cum

    def integral(self, t, power: int = 1):
        """Exact ``int_0^t level(s)**power ds``."""
        t = np.asarray(t, dtype=float)
        starts, lv, cum = self._cum(power)
        idx = np.searchsorted(starts, t, side="right") - 1
        idx = np.clip(idx, 0, len(lv) - 1)
        return cum[idx] + lv[idx] * (t - starts[idx])

    def to_json(self):
        if self.kind == "constant":
            return self.levels[0]
        return {"breaks": [b for b in self.breaks[:-1]], "levels": list(self.levels)}

    @classmethod
    def from_json(cls, obj) -> "StepCurve":
        if isinstance(obj, (int, float)):
            return cls.constant(float(obj))
        levels = [float(v) for v in obj["levels"]]
        breaks = [float(b) for b in obj.get("breaks", [])]
        if len(breaks) == len(levels) - 1:
            breaks.append(math.inf)
        return cls(tuple(breaks), tuple(levels))


@dataclass(frozen=True)
class VolCurve:
    """Volatility curve with a common regularization level on ``[0, epsilon]``.

    ``reg_level`` is filled in by :class:`MixtureSpec`; a standalone curve
    without it simply reports its own first level on the initial segment.
    The switch at ``epsilon`` is a jump, so the integrated variance is exact
    and continuous but the instantaneous level is not.
    """

    shape: StepCurve
    epsilon: float = DEFAULT_EPSILON
    reg_level: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if min(self.shape.levels) < VOL_FLOOR:
            raise ValueError(f"volatility levels must be >= {VOL_FLOOR}")
        if self.reg_level is not None and self.reg_level < VOL_FLOOR:
            raise ValueError("regularization level too small")

    @classmethod
    def constant(cls, level: float, epsilon: float = DEFAULT_EPSILON) -> "VolCurve":
        return cls(StepCurve.constant(level), epsilon)

    @classmethod
    def piecewise(cls, ends: Sequence[float], levels: Sequence[float],
                  epsilon: float = DEFAULT_EPSILON) -> "VolCurve":
        return cls(StepCurve(tuple(float(e) for e in ends), tuple(float(v) for v in levels)), epsilon)

    @property
    def kind(self) -> str:
        return self.shape.kind

    @property
    def _reg(self) -> float:
        if self.reg_level is not None:
            return self.reg_level
        return float(self.shape(self.epsilon * (1 + 1e-12) + 1e-300))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.epsilon, self._reg, self.shape(t))

    def integrated_variance(self, t):
        return integrated_variance(self, t)


def integrated_variance(c: VolCurve, t):
    """``V(t)^2 = int_0^t nu(s)^2 ds`` including the regularization segment."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("integrated_variance needs t >= 0")
    eps = c.epsilon
    head = c._reg ** 2 * np.minimum(t, eps)
    tail = np.where(t > eps, c.shape.integral(t, 2) - c.shape.integral(eps, 2), 0.0)
    out = head + tail
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GaussianComponent:
    """Arithmetic Brownian instrumental process ``dX = mu(t) dt + sigma(t) dW``."""

    drift: StepCurve
    vol: VolCurve
    drift_reg: float | None = None

    def mu(self, t):
        t = np.asarray(t, dtype=float)
        if self.drift_reg is None:
            return self.drift(t)
        return np.where(t <= self.vol.epsilon, self.drift_reg, self.drift(t))

    def mean(self, t):
        """``m(t) = int_0^t mu(s) ds``."""
        t = np.asarray(t, dtype=float)
        eps = self.vol.epsilon
        reg = self.drift_reg if self.drift_reg is not None else float(self.drift(eps + 1e-300))
        return reg * np.minimum(t, eps) + np.where(
            t > eps, self.drift.integral(t) - self.drift.integral(eps), 0.0)

    def variance(self, t):
        return integrated_variance(self.vol, t)


# ---------------------------------------------------------------------------
# mixture specification
# ---------------------------------------------------------------------------


Component = Union[VolCurve, GaussianComponent]


@dataclass(frozen=True)
class MixtureSpec:
    """Weights and instrumental components of a mixture diffusion.

    ``support="positive"`` gives the lognormal mixture (components are
    :class:`VolCurve`); ``support="real"`` gives the normal mixture
    (components are :class:`GaussianComponent`, started at ``s0``).

    On construction every component is rewritten to share ``epsilon`` and the
    regularization level ``sqrt(sum_i lambda_i nu_i(eps+)^2)``.
    """

    weights: tuple[float, ...]
    components: tuple[Component, ...]
    s0: float = 1.0
    support: str = "positive"
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0 or len(w) != len(self.components):
            raise ValueError("need one weight per component and at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to one")
        if self.support not in ("positive", "real"):
            raise ValueError(f"unknown support {self.support!r}")
        if self.support == "positive":
            if self.s0 <= 0:
                raise ValueError("positive support needs s0 > 0")
            if not all(isinstance(c, VolCurve) for c in self.components):
                raise TypeError("lognormal mixtures take VolCurve components")
        elif not all(isinstance(c, GaussianComponent) for c in self.components):
            raise TypeError("normal mixtures take GaussianComponent components")

        eps = float(self.epsilon)
        probe = eps * (1 + 1e-12) + 1e-300
        vols = [c if isinstance(c, VolCurve) else c.vol for c in self.components]
        nu_bar = math.sqrt(sum(float(l) * float(v.shape(probe)) ** 2 for l, v in zip(w, vols)))
        new_vols = [replace(v, epsilon=eps, reg_level=nu_bar) for v in vols]
        if self.support == "positive":
            comps = tuple(new_vols)
        else:
            mu_bar = sum(float(l) * float(c.drift(probe)) for l, c in zip(w, self.components))
            comps = tuple(replace(c, vol=v, drift_reg=mu_bar) for c, v in zip(self.components, new_vols))
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def lognormal(cls, weights, vols, s0: float, epsilon: float = DEFAULT_EPSILON) -> "MixtureSpec":
        """Constant (or already built) volatilities for each component."""
        comps = tuple(v if isinstance(v, VolCurve) else VolCurve.constant(float(v), epsilon) for v in vols)
        return cls(tuple(weights), comps, s0=s0, support="positive", epsilon=epsilon)

    @classmethod
    def normal(cls, weights, drifts, vols, s0: float = 0.0,
               epsilon: float = DEFAULT_EPSILON) -> "MixtureSpec":
        comps = []
        for mu, sig in zip(drifts, vols):
            mu = mu if isinstance(mu, StepCurve) else StepCurve.constant(float(mu))
            sig = sig if isinstance(sig, VolCurve) else VolCurve.constant(float(sig), epsilon)
            comps.append(GaussianComponent(mu, sig))
        return cls(tuple(weights), tuple(comps), s0=s0, support="real", epsilon=epsilon)

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def lognormal_mode(self) -> bool:
        return self.support == "positive"

    @property
    def vol_curves(self) -> tuple[VolCurve, ...]:
        return tuple(c if isinstance(c, VolCurve) else c.vol for c in self.components)

    @property
    def reg_level(self) -> float:
        return self.vol_curves[0].reg_level

    def vols_at(self, t) -> np.ndarray:
        """Component volatilities at time ``t``, shape ``(m,)``."""
        return np.array([float(v(t)) for v in self.vol_curves])

    def variances(self, t) -> np.ndarray:
        """Component integrated variances ``V_i(t)^2``, shape ``(..., m)``."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.asarray(integrated_variance(v, t)) for v in self.vol_curves], axis=-1)

    def drifts_at(self, t) -> np.ndarray:
        if self.lognormal_mode:
            raise ValueError("component drifts are only defined for normal mixtures")
        return np.array([float(c.mu(t)) for c in self.components])

    def means(self, t) -> np.ndarray:
        """Component means in the normal mixture, shape ``(..., m)``."""
        t = np.asarray(t, dtype=float)
        return self.s0 + np.stack([np.asarray(c.mean(t)) for c in self.components], axis=-1)


# ---------------------------------------------------------------------------
# densities and weights
# ---------------------------------------------------------------------------


def component_moments(spec: MixtureSpec, curve: YieldCurve | None, t):
    """Location and variance of each component in its Gaussian coordinate.

    For the lognormal mixture the coordinate is ``ln y``, with location
    ``ln s0 + R(t) - V_i(t)^2 / 2``.
    """
    var = spec.variances(t)
    if spec.lognormal_mode:
        R = integrated_rate(curve, 0.0, t) if curve is not None else 0.0
        loc = math.log(spec.s0) + np.asarray(R)[..., None] - 0.5 * var
    else:
        loc = spec.means(t)
    return loc, var


def _check_point(spec: MixtureSpec, t, y):
    if np.any(np.asarray(t) < T_MIN):
        raise PointMassError("density undefined at t=0 (point mass at s0)")
    if spec.lognormal_mode and np.any(np.asarray(y) <= 0):
        raise ValueError("lognormal mixture density needs y > 0")


def component_logpdf(spec: MixtureSpec, curve: YieldCurve | None, t: float, y) -> np.ndarray:
    """``log p_i(t, y)`` for every component; shape ``y.shape + (m,)``."""
    _check_point(spec, t, y)
    y = np.asarray(y, dtype=float)
    loc, var = component_moments(spec, curve, t)
    z = np.log(y) if spec.lognormal_mode else y
    z = z[..., None]
    lp = -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (z - loc) ** 2 / var
    if spec.lognormal_mode:
        lp = lp - z
    return lp


def mixture_density(spec: MixtureSpec, curve: YieldCurve | None, t: float, y):
    """Mixture density ``sum_i lambda_i p_i(t, y)`` on the model support."""
    lp = component_logpdf(spec, curve, t, y)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(spec.weights))
    out = np.exp(logsumexp(lp + logw, axis=-1))
    return out if out.ndim else float(out)


def mixture_cdf(spec: MixtureSpec, curve: YieldCurve | None, t: float, y):
    """Mixture distribution function; used as the goodness-of-fit oracle."""
    y = np.asarray(y, dtype=float)
    if np.any(np.asarray(t) < T_MIN):
        return np.where(y >= spec.s0, 1.0, 0.0)
    loc, var = component_moments(spec, curve, t)
    if spec.lognormal_mode:
        with np.errstate(divide="ignore"):
            z = np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -np.inf)
    else:
        z = y
    u = (z[..., None] - loc) / np.sqrt(var)
    out = ndtr(u) @ np.asarray(spec.weights)
    return out if out.ndim else float(out)


def lambda_weights(spec: MixtureSpec, curve: YieldCurve | None, t: float, y) -> np.ndarray:
    """State-dependent weights ``Lambda_i(t, y) = lambda_i p_i / sum_j lambda_j p_j``.

    Returns an array of shape ``y.shape + (m,)``. For ``t <= epsilon`` the
    prior weights are returned unchanged.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(spec.weights)
    if spec.lognormal_mode and np.any(y <= 0):
        raise ValueError("lognormal mixture needs y > 0")
    if t <= spec.epsilon or t < T_MIN or spec.m == 1:
        return np.broadcast_to(lam, y.shape + lam.shape).copy()
    lp = component_logpdf(spec, curve, t, y)
    with np.errstate(divide="ignore"):
        lp = lp + np.log(lam)
    lp = lp - lp.max(axis=-1, keepdims=True)
    w = np.exp(lp)
    return w / w.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def curve_from_json(obj) -> YieldCurve:
    return YieldCurve.from_pillars(obj["pillars"], obj.get("extrapolation", "none"))


def curve_to_json(curve: YieldCurve) -> dict:
    return {
        "pillars": [[t, d, f] for t, d, f in zip(curve.maturities, curve.domestic, curve.foreign)],
        "extrapolation": curve.extrapolation,
    }


def spec_to_json(spec: MixtureSpec) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mode": "lognormal" if spec.lognormal_mode else "normal",
        "s0": spec.s0,
        "epsilon": spec.epsilon,
        "weights": list(spec.weights),
        "vols": [v.shape.to_json() for v in spec.vol_curves],
    }
    if not spec.lognormal_mode:
        doc["drifts"] = [c.drift.to_json() for c in spec.components]
    return doc


def spec_from_json(doc: dict) -> MixtureSpec:
    mode = doc.get("mode", "lognormal")
    eps = float(doc.get("epsilon", DEFAULT_EPSILON))
    vols = [VolCurve(StepCurve.from_json(v), eps) for v in doc["vols"]]
    weights = [float(w) for w in doc["weights"]]
    if mode == "lognormal":
        return MixtureSpec.lognormal(weights, vols, float(doc["s0"]), eps)
    if mode == "normal":
        drifts = [StepCurve.from_json(d) for d in doc.get("drifts", [0.0] * len(vols))]
        return MixtureSpec.normal(weights, drifts, vols, float(doc.get("s0", 0.0)), eps)
    raise ValueError(f"unknown mode {mode!r}")


def load_config(path) -> tuple[MixtureSpec, YieldCurve]:
    """Read a model document; ``curve`` may be inline or a path relative to it."""
    path = Path(path)
    doc = json.loads(path.read_text())
    spec = spec_from_json(doc)
    cdoc = doc.get("curve")
    if cdoc is None:
        curve = YieldCurve.flat()
    elif isinstance(cdoc, str):
        cpath = (path.parent / cdoc) if not Path(cdoc).is_absolute() else Path(cdoc)
        curve = curve_from_json(json.loads(cpath.read_text()))
    else:
        curve = curve_from_json(cdoc)
    return spec, curve


def dump_config(spec: MixtureSpec, curve: YieldCurve | None, path=None) -> str:
    doc = spec_to_json(spec)
    if curve is not None:
        doc["curve"] = curve_to_json(curve)
    text = json.dumps(doc, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


DATA_DIR = Path(__file__).parent / "data"


def eurusd_2003_curve() -> YieldCurve:
    """EUR/USD discount factors of 10 Feb 2003."""
    return curve_from_json(json.loads((DATA_DIR / "eurusd_2003_curve.json").read_text()))
