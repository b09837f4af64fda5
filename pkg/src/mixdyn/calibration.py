"""Fit lognormal-mixture weights and vols to implied-volatility quotes.

The objective is computable in closed form (mixture call plus implied-vol
inversion), so a bounded trust-region least-squares solver with
finite-difference Jacobians does the work. Weights live on the simplex
through a floored softmax; vols are box-constrained.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .localvol import LocalVolModel
from .market import DEFAULT_EPSILON, MixtureSpec, YieldCurve, integrated_rate
from .pricing import ImpliedVolError, SmilePoint, bs_call, call_bounds, implied_vol, mixture_call

N_STARTS = 8
DEFAULT_PENALTY = 1e-4


class InfeasibleQuoteError(ValueError):
    """Quotes outside the no-arbitrage bounds; ``diagnostics`` lists each one."""

    def __init__(self, diagnostics: list[dict]):
        lines = "; ".join(f"T={d['T']:g} K={d['K']:g}: {d['reason']}" for d in diagnostics)
        super().__init__(f"{len(diagnostics)} infeasible quote(s): {lines}")
        self.diagnostics = diagnostics


@dataclass
class CalibrationProblem:
    """Market quotes plus the model family to fit.

    ``quotes`` are :class:`SmilePoint` objects seen from ``t = 0``. A quote
    with a finite ``price`` is matched on that price in price-space loss;
    otherwise its price is generated from the implied vol.
    """

    quotes: list
    m: int
    s0: float
    curve: YieldCurve = field(default_factory=YieldCurve.flat)
    bounds: tuple[float, float] = (0.01, 2.0)
    weight_floor: float = 1e-6
    loss: str = "vol-space"
    epsilon: float = DEFAULT_EPSILON
    penalty: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one component")
        lo, hi = self.bounds
        if not 0 < lo < hi:
            raise ValueError("vol bounds must satisfy 0 < lo < hi")
        if not 0 <= self.weight_floor < 1.0 / self.m:
            raise ValueError("weight floor must lie in [0, 1/m)")
        if self.loss not in ("vol-space", "price-space"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.quotes:
            raise ValueError("no quotes")
        if any(q.t != 0 for q in self.quotes):
            raise ValueError("calibration quotes must be seen from t = 0")

    @property
    def n_params(self) -> int:
        return 2 * self.m - 1


@dataclass
class CalibrationResult:
    spec: MixtureSpec
    loss_value: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    penalty: float = 0.0
    rejected: list = field(default_factory=list)
    starts: list = field(default_factory=list)


def load_quotes_csv(path) -> list[SmilePoint]:
    """Read a ``T,K,implied_vol`` CSV into quotes seen from ``t = 0``."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SmilePoint(0.0, float(row["T"]), float(row["K"]), float(row["implied_vol"])))
    return out


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------


def _weights(theta: np.ndarray, floor: float) -> np.ndarray:
    z = np.concatenate(([0.0], theta))
    z = np.exp(z - z.max())
    w = floor + (1.0 - floor * z.size) * z / z.sum()
    return w / w.sum()


def _unpack(x: np.ndarray, m: int, floor: float):
    return _weights(x[: m - 1], floor), x[m - 1:]


def _pack(weights, vols, floor: float) -> np.ndarray:
    w = (np.asarray(weights, dtype=float) - floor) / (1.0 - floor * len(weights))
    w = np.maximum(w, 1e-12)
    theta = np.log(w[1:]) - np.log(w[0])
    return np.concatenate((theta, vols))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def _market_data(problem: CalibrationProblem, strict: bool):
    """Per-quote arrays and the list of rejected quotes."""
    keep, rejected = [], []
    for q in problem.quotes:
        Rd = integrated_rate(problem.curve, 0.0, q.T, "domestic")
        Rf = integrated_rate(problem.curve, 0.0, q.T, "foreign")
        if math.isfinite(q.price):
            price = q.price
        elif q.implied_vol > 0 and math.isfinite(q.implied_vol):
            price = bs_call(problem.s0, q.K, q.T, Rd, Rf, q.implied_vol * math.sqrt(q.T))
        else:
            rejected.append({"T": q.T, "K": q.K, "reason": "no finite price or implied vol"})
            continue
        lo, hi = call_bounds(problem.s0, q.K, Rd, Rf)
        if not float(lo) < price < float(hi):
            side = "lower" if price <= lo else "upper"
            rejected.append({"T": q.T, "K": q.K, "price": price, "bound": side,
                             "reason": f"price {price:.6g} outside ({float(lo):.6g}, {float(hi):.6g})"})
            continue
        vol = q.implied_vol
        if not (vol > 0 and math.isfinite(vol)):
            vol = implied_vol(price, problem.s0, q.K, q.T, Rd, Rf) / math.sqrt(q.T)
        keep.append((q.T, q.K, vol, price, Rd, Rf))
    if rejected and strict:
        raise InfeasibleQuoteError(rejected)
    if not keep:
        raise ValueError("no feasible quotes left")
    T, K, vol, price, Rd, Rf = (np.array(c) for c in zip(*keep))
    return {"T": T, "K": K, "vol": vol, "price": price, "Rd": Rd, "Rf": Rf}, rejected


def _model_spec(problem: CalibrationProblem, weights, vols) -> MixtureSpec:
    return MixtureSpec.lognormal(weights, vols, problem.s0, problem.epsilon)


def _quote_residuals(problem: CalibrationProblem, data: dict, weights, vols) -> np.ndarray:
    model = LocalVolModel(_model_spec(problem, weights, vols), problem.curve)
    out = np.empty(data["T"].size)
    for T in np.unique(data["T"]):
        sel = data["T"] == T
        prices = np.atleast_1d(mixture_call(model, data["K"][sel], float(T)))
        if problem.loss == "price-space":
            out[sel] = prices - data["price"][sel]
            continue
        try:
            iv = implied_vol(prices, problem.s0, data["K"][sel], float(T), data["Rd"][sel], data["Rf"][sel])
            out[sel] = np.asarray(iv) / math.sqrt(T) - data["vol"][sel]
        except ImpliedVolError:
            # far-wing price rounds onto a bound: fall back to a price residual
            out[sel] = (prices - data["price"][sel]) * 1e3
    return out


def _starts(problem: CalibrationProblem, data: dict, init: MixtureSpec | None, seed: int):
    lo, hi = problem.bounds
    atm = float(np.median(data["vol"]))
    starts = []
    if init is not None:
        v = np.clip(init.vols_at(max(problem.epsilon * 2, 1.0)), lo, hi)
        starts.append(_pack(init.weights, v, problem.weight_floor))
    # a deterministic spread around the median vol, then seeded random starts
    m = problem.m
    spread = np.clip(atm * np.geomspace(0.7, 2.5, m) if m > 1 else np.array([atm]), lo, hi)
    starts.append(_pack(np.full(m, 1.0 / m), spread, problem.weight_floor))
    k = 0
    while len(starts) < N_STARTS:
        rng = np.random.default_rng([seed, k])
        k += 1
        w = rng.dirichlet(np.ones(m))
        v = np.sort(np.exp(rng.uniform(math.log(lo), math.log(hi), m)))
        v = np.clip(v, lo * (1 + 1e-9), hi * (1 - 1e-9))
        starts.append(_pack(w, v, problem.weight_floor))
    return starts


def calibrate(problem: CalibrationProblem, init: MixtureSpec | None = None,
              strict: bool = True, seed: int = 0) -> CalibrationResult:
    """Least-squares fit of ``(lambda, nu)`` with eight deterministic starts.

    When there are fewer quotes than free parameters a Tikhonov term pulls
    the weights toward ``1/m`` (strength ``problem.penalty``, default 1e-4).
    Components in the result are sorted by increasing vol.
    """
    data, rejected = _market_data(problem, strict)
    m = problem.m
    lo, hi = problem.bounds
    n_quotes = data["T"].size
    alpha = problem.penalty
    if alpha is None:
        alpha = DEFAULT_PENALTY if n_quotes < problem.n_params else 0.0
    if n_quotes < problem.n_params and alpha <= 0:
        raise ValueError(f"{n_quotes} quotes cannot pin down {problem.n_params} parameters without a penalty")
    floor = problem.weight_floor

    def fun(x):
        w, v = _unpack(x, m, floor)
        r = _quote_residuals(problem, data, w, v)
        if alpha > 0:
            r = np.concatenate((r, math.sqrt(alpha) * (w - 1.0 / m)))
        return r

    lb = np.concatenate((np.full(m - 1, -50.0), np.full(m, lo)))
    ub = np.concatenate((np.full(m - 1, 50.0), np.full(m, hi)))
    best = None
    trace = []
    for x0 in _starts(problem, data, init, seed):
        x0 = np.clip(x0, lb + 1e-12, ub - 1e-12)
        res = least_squares(fun, x0, bounds=(lb, ub), method="trf", xtol=1e-10, ftol=1e-12,
                            gtol=1e-15, x_scale="jac", max_nfev=2000)
        trace.append({"cost": float(2.0 * res.cost), "nfev": int(res.nfev), "status": int(res.status)})
        if best is None or res.cost < best.cost:
            best = res

    w, v = _unpack(best.x, m, floor)
    order = np.argsort(v, kind="stable")
    w, v = w[order], v[order]
    assert abs(w.sum() - 1.0) < 1e-14 and np.all(w >= floor * (1 - 1e-12))
    spec = _model_spec(problem, w, v)
    resid = _quote_residuals(problem, data, w, v)
    pen = float(alpha * np.sum((w - 1.0 / m) ** 2)) if alpha > 0 else 0.0
    return CalibrationResult(
        spec=spec,
        loss_value=float(resid @ resid),
        iterations=int(best.nfev),
        converged=bool(best.status > 0),
        residuals=resid,
        penalty=pen,
        rejected=rejected,
        starts=trace,
    )
