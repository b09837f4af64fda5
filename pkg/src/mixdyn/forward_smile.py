"""Conditional future smiles ``K -> V(t, T, K)`` given ``S_t`` at its expected level.

The local-vol engine restarts the diffusion at ``(t, S_bar_t)`` (it is
Markov) and prices every strike off one shared ensemble. The uncertain-vol
engine is closed form: conditional on ``S_t`` alone the transition law is a
lognormal mixture weighted by the posterior ``Lambda_k(t, S_bar_t)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .localvol import LocalVolModel
from .market import integrated_rate, lambda_weights
from .pricing import ImpliedVolError, SmilePoint, bs_call, call_bounds, implied_vol
from .simulation import SimConfig, simulate_local_vol

ENGINES = ("local-vol", "uncertain-vol")
PRICING = ("cv", "otm", "call")


def expected_spot(model: LocalVolModel, t: float) -> float:
    """``S_bar_t = s0 exp(R_d(0, t) - R_f(0, t))``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return model.s0
    return model.s0 * math.exp(integrated_rate(model.curve, 0.0, t, "net"))


@dataclass
class ForwardSmileRequest:
    """One row of a conditional smile table.

    ``sim`` supplies path count, step, scheme and seed; its time window and
    start level are overwritten with ``(t, T, S_bar_t)``. ``scenario`` pins
    the uncertain-vol engine to a known component. ``pricing="otm"`` prices
    strikes below the conditioning level through puts and parity with the
    exact forward; ``pricing="cv"`` (default) uses the terminal level as a
    control variate for every strike. ``spot`` overrides the conditioning
    level.
    """

    model: LocalVolModel
    t: float
    T: float
    moneyness: np.ndarray
    sim: SimConfig | None = None
    engine: str = "local-vol"
    scenario: int | None = None
    pricing: str = "cv"
    spot: float | None = None
    force_mc: bool = False

    def __post_init__(self):
        self.moneyness = np.atleast_1d(np.asarray(self.moneyness, dtype=float))
        if not 0 <= self.t < self.T:
            raise ValueError("need 0 <= t < T")
        if np.any(self.moneyness <= 0):
            raise ValueError("moneyness values must be positive")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.pricing not in PRICING:
            raise ValueError(f"unknown pricing {self.pricing!r}")
        if self.scenario is not None and self.engine != "uncertain-vol":
            raise ValueError("a known scenario only makes sense for the uncertain-vol engine")

    @property
    def level(self) -> float:
        return expected_spot(self.model, self.t) if self.spot is None else float(self.spot)


def _rates(model: LocalVolModel, t: float, T: float):
    return (integrated_rate(model.curve, t, T, "domestic"),
            integrated_rate(model.curve, t, T, "foreign"))


def _invert(req: ForwardSmileRequest, strikes, prices, ses, Rd, Rf):
    tau = req.T - req.t
    level = req.level
    out = []
    lo, hi = call_bounds(level, strikes, Rd, Rf)
    for K, c, se, a, b in zip(strikes, prices, ses, np.atleast_1d(lo), np.atleast_1d(hi)):
        margin = 0.0 if not np.isfinite(se) else se
        if not a + margin < c < b - margin:
            out.append(SmilePoint(req.t, req.T, float(K), math.nan, float(c), float(se), "na"))
            continue
        try:
            v = implied_vol(c, level, K, tau, Rd, Rf) / math.sqrt(tau)
        except ImpliedVolError:
            out.append(SmilePoint(req.t, req.T, float(K), math.nan, float(c), float(se), "na"))
            continue
        out.append(SmilePoint(req.t, req.T, float(K), float(v), float(c), float(se)))
    return out


def _closed_form_prices(req: ForwardSmileRequest, strikes, Rd, Rf, post):
    spec = req.model.spec
    var = spec.variances(req.T) - spec.variances(req.t)
    V = np.sqrt(np.maximum(var, 0.0))
    prices = sum(w * np.asarray(bs_call(req.level, strikes, req.T - req.t, Rd, Rf, v))
                 for w, v in zip(post, V))
    return np.asarray(prices)


def conditional_future_smile(req: ForwardSmileRequest) -> list[SmilePoint]:
    """Annualized implied vols ``V(t, T, K)`` for ``K = moneyness * S_bar_t``."""
    model = req.model
    if not model.spec.lognormal_mode:
        raise ValueError("conditional smiles need a lognormal-mixture model")
    level = req.level
    strikes = req.moneyness * level
    Rd, Rf = _rates(model, req.t, req.T)
    nan_se = np.full(strikes.shape, math.nan)

    if req.engine == "uncertain-vol":
        if req.scenario is not None:
            post = np.zeros(model.spec.m)
            post[req.scenario] = 1.0
        else:
            post = lambda_weights(model.spec, model.curve, req.t, level)
        return _invert(req, strikes, _closed_form_prices(req, strikes, Rd, Rf, post), nan_se, Rd, Rf)

    if (req.t == 0 or model.spec.m == 1) and not req.force_mc:
        # at t = 0 the marginals are the mixture itself; with one component
        # the diffusion is geometric Brownian motion
        post = np.asarray(model.spec.weights)
        return _invert(req, strikes, _closed_form_prices(req, strikes, Rd, Rf, post), nan_se, Rd, Rf)

    if req.sim is None:
        raise ValueError("the local-vol engine needs a SimConfig for t > 0")
    cfg = dataclasses.replace(req.sim, t_start=req.t, horizon=req.T, s_start=level, record_every=None)
    ens = simulate_local_vol(model, cfg)
    prices, ses = price_strikes(ens.terminal(), strikes, level, Rd, Rf, req.pricing)
    return _invert(req, strikes, prices, ses, Rd, Rf)


def price_strikes(s_T: np.ndarray, strikes, level: float, Rd: float, Rf: float,
                  pricing: str = "cv") -> tuple[np.ndarray, np.ndarray]:
    """Discounted call prices and standard errors from one terminal sample.

    ``pricing="call"`` is the plain sample mean. ``"otm"`` prices strikes
    below ``level`` as puts and converts with ``C = P + level e^{-Rf} - K e^{-Rd}``.
    ``"cv"`` subtracts ``beta (mean(S_T) - F)`` with the exact forward
    ``F = level e^{Rd - Rf}`` and the variance-minimizing ``beta`` per strike.
    """
    disc = math.exp(-Rd)
    prices, ses = [], []
    n = s_T.size
    fwd = level * math.exp(Rd - Rf)
    ds = s_T - s_T.mean()
    for K in np.atleast_1d(strikes):
        if pricing == "cv":
            pay = np.maximum(s_T - K, 0.0)
            beta = float(ds @ (pay - pay.mean()) / (ds @ ds))
            adj = pay - beta * (s_T - fwd)
            prices.append(disc * adj.mean())
            ses.append(disc * adj.std(ddof=1) / math.sqrt(n))
            continue
        if pricing == "otm" and K < level:
            pay = np.maximum(K - s_T, 0.0)
            p = disc * pay.mean()
            c = p + level * math.exp(-Rf) - K * disc
        else:
            pay = np.maximum(s_T - K, 0.0)
            c = disc * pay.mean()
        prices.append(c)
        ses.append(disc * pay.std(ddof=1) / math.sqrt(n))
    return np.array(prices), np.array(ses)


@dataclass
class FlatteningReport:
    times: np.ndarray
    excursions: np.ndarray
    monotone_decreasing: bool
    extras: dict = field(default_factory=dict)


def smile_flattening_metric(surface) -> FlatteningReport:
    """Per-row ``max - min`` implied vol; NA points are skipped.

    ``surface`` is a list of rows of :class:`SmilePoint` sharing ``(t, T)``
    within a row. Whether the excursion shrinks row by row is reported, not
    enforced.
    """
    times, exc = [], []
    for row in surface:
        if len({(p.t, p.T) for p in row}) != 1:
            raise ValueError("each row must share (t, T)")
        vols = np.array([p.implied_vol for p in row if p.status == "ok"])
        times.append(row[0].t)
        exc.append(float(vols.max() - vols.min()) if vols.size else math.nan)
    exc = np.array(exc)
    finite = exc[np.isfinite(exc)]
    return FlatteningReport(np.array(times), exc, bool(np.all(np.diff(finite) <= 0)))
