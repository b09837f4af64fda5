"""Monte Carlo engines for the mixture diffusions and the uncertain-volatility model.

Paths are generated in fixed-size blocks. Each block draws from its own
Philox (counter-based) stream keyed by ``(seed, stream, block)``, so results
do not depend on how blocks are scheduled across workers. Brownian
increments and scenario labels use disjoint stream ids.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .localvol import (
    LocalVolModel,
    LogSigmaEvaluator,
    normal_mixture_coefficients,
    normal_mixture_coefficients_dy,
    sigma_mix_squared,
    sigma_mix_squared_dy,
)
from .market import integrated_rate

SCHEMES = ("euler-log", "euler-level", "milstein-level")

BROWNIAN_STREAM = 0
LABEL_STREAM = 1


@dataclass(frozen=True)
class SimConfig:
    """Time grid, path count and random stream for one simulation run.

    ``record_every`` thins the stored grid (in steps); ``None`` keeps only the
    start and the horizon. ``s_start`` defaults to the model's ``s0``.
    """

    n_paths: int
    dt: float = 1e-3
    scheme: str = "euler-log"
    seed: int = 0
    t_start: float = 0.0
    s_start: float | None = None
    horizon: float = 1.0
    record_every: int | None = None
    block_size: int = 50_000
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if not self.horizon > self.t_start >= 0:
            raise ValueError("need 0 <= t_start < horizon")
        span = self.horizon - self.t_start
        n = round(span / self.dt)
        if n < 1 or abs(n * self.dt - span) > 1e-9 * max(1.0, span):
            raise ValueError(f"dt={self.dt} does not divide the interval {span}")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be a positive step count")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be positive")

    @property
    def n_steps(self) -> int:
        return round((self.horizon - self.t_start) / self.dt)

    def record_steps(self) -> np.ndarray:
        n = self.n_steps
        if self.record_every is None:
            return np.array([0, n])
        ks = np.arange(0, n + 1, self.record_every)
        return ks if ks[-1] == n else np.append(ks, n)


@dataclass
class PathEnsemble:
    """Simulated trajectories on the recorded grid.

    ``avg_variance[:, j]`` holds the running integral of the squared
    (percentage, in lognormal mode) diffusion coefficient up to ``grid[j]``.
    Rejected paths (level scheme hitting zero) are stored as ``nan``.
    """

    grid: np.ndarray
    paths: np.ndarray
    avg_variance: np.ndarray
    labels: np.ndarray | None = None
    rejected: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def rejection_fraction(self) -> float:
        return self.rejected / self.n_paths

    def valid(self) -> np.ndarray:
        return np.isfinite(self.paths[:, -1])

    def terminal(self) -> np.ndarray:
        """Terminal levels of the surviving paths."""
        return self.paths[self.valid(), -1]

    def terminal_avg_variance(self) -> np.ndarray:
        return self.avg_variance[self.valid(), -1]

    def at(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[j] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the recorded grid")
        return self.paths[:, j]


def _stream(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def _normals(gen: np.random.Generator, n: int) -> np.ndarray:
    # inverse-CDF keeps one uniform per normal, so substreams stay aligned
    return ndtri(gen.random(n))


def _blocks(cfg: SimConfig):
    starts = range(0, cfg.n_paths, cfg.block_size)
    return [(b, min(cfg.block_size, cfg.n_paths - s)) for b, s in enumerate(starts)]


def _run_blocks(cfg: SimConfig, one_block: Callable[[int, int], tuple]):
    blocks = _blocks(cfg)
    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(lambda bn: one_block(*bn), blocks))
    else:
        parts = [one_block(b, n) for b, n in blocks]
    paths = np.concatenate([p[0] for p in parts])
    avg = np.concatenate([p[1] for p in parts])
    labels = None if parts[0][2] is None else np.concatenate([p[2] for p in parts])
    rejected = int(sum(p[3] for p in parts))
    return paths, avg, labels, rejected


def _rate_steps(model: LocalVolModel, times: np.ndarray) -> np.ndarray:
    """Exact ``R(t_k, t_{k+1})`` for each step (log-linear discount factors)."""
    if not model.spec.lognormal_mode:
        return np.zeros(len(times) - 1)
    R = np.asarray(integrated_rate(model.curve, 0.0, times, "net"))
    return np.diff(R)


def simulate_local_vol(model: LocalVolModel, cfg: SimConfig) -> PathEnsemble:
    """Simulate the mixture diffusion.

    Lognormal mode: ``dS = r S dt + sigma_mix(t, S) S dW``; ``euler-log``
    steps ``ln S`` and cannot leave the positive half-line. Normal mode:
    ``dY = f(t, Y) dt + sigma_f(t, Y) dW`` with level schemes only.

    The running variance uses the left-endpoint rule, matching the Euler
    measure.
    """
    lognormal = model.spec.lognormal_mode
    if not lognormal and cfg.scheme == "euler-log":
        raise ValueError("euler-log needs a positive process; use a level scheme for normal mixtures")
    s_start = model.s0 if cfg.s_start is None else float(cfg.s_start)
    if lognormal and s_start <= 0:
        raise ValueError("lognormal simulation needs a positive start")
    n = cfg.n_steps
    times = cfg.t_start + cfg.dt * np.arange(n + 1)
    times[-1] = cfg.horizon
    rsteps = _rate_steps(model, times)
    rec = cfg.record_steps()
    rec_pos = {int(k): j for j, k in enumerate(rec)}
    fast = LogSigmaEvaluator(model) if lognormal else None

    def one_block(b: int, nb: int):
        gen = _stream(cfg.seed, BROWNIAN_STREAM, b)
        out = np.empty((nb, len(rec)))
        acc = np.empty((nb, len(rec)))
        v = np.zeros(nb)
        if cfg.scheme == "euler-log":
            state = np.full(nb, math.log(s_start))
        else:
            state = np.full(nb, s_start)
        alive = np.ones(nb, dtype=bool)

        def level():
            return np.exp(state) if cfg.scheme == "euler-log" else state

        out[:, 0] = level()
        acc[:, 0] = 0.0
        sdt = math.sqrt(cfg.dt)
        for k in range(n):
            t = times[k]
            dt = times[k + 1] - t
            z = _normals(gen, nb)
            if cfg.scheme == "euler-log":
                s2 = fast(t, state)
                state = state + rsteps[k] - 0.5 * s2 * dt + np.sqrt(s2 * dt) * z
            elif lognormal:
                safe = np.where(alive, state, 1.0)
                s2 = np.asarray(sigma_mix_squared(model, t, safe))
                sig = np.sqrt(s2)
                diff = sig * safe
                new = safe + safe * rsteps[k] + diff * sdt * z
                if cfg.scheme == "milstein-level":
                    dsig = np.asarray(sigma_mix_squared_dy(model, t, safe)) / (2 * sig)
                    new += 0.5 * diff * (sig + safe * dsig) * dt * (z * z - 1.0)
                alive &= new > 0
                state = np.where(alive, new, np.nan)
                s2 = np.where(alive, s2, np.nan)
            else:
                f, s2 = normal_mixture_coefficients(model, t, state)
                sig = np.sqrt(s2)
                new = state + f * dt + sig * sdt * z
                if cfg.scheme == "milstein-level":
                    _, ds2 = normal_mixture_coefficients_dy(model, t, state)
                    new += 0.5 * sig * (ds2 / (2 * sig)) * dt * (z * z - 1.0)
                state = new
            v = v + s2 * dt
            j = rec_pos.get(k + 1)
            if j is not None:
                out[:, j] = level()
                acc[:, j] = v
        return out, acc, None, int(nb - alive.sum())

    paths, avg, _, rejected = _run_blocks(cfg, one_block)
    return PathEnsemble(times[rec], paths, avg, None, rejected, cfg.seed,
                        {"engine": "local-vol", "scheme": cfg.scheme, "mode": model.mode})


def simulate_uncertain_vol(model: LocalVolModel, cfg: SimConfig,
                           label_probs=None) -> PathEnsemble:
    """Geometric Brownian motion with a volatility curve drawn at random.

    Each path picks component ``k`` with probability ``label_probs[k]``
    (default: the mixture weights) from a stream independent of the Brownian
    one. All curves equal the regularization level before ``epsilon``, so
    drawing up front is equivalent in law to drawing at ``epsilon``. With
    ``euler-log`` each step uses the exact integrated variance of the drawn
    curve, so the scheme is exact in law.
    """
    spec = model.spec
    if not spec.lognormal_mode:
        raise ValueError("uncertain-volatility model needs a lognormal-mixture model")
    probs = np.asarray(spec.weights if label_probs is None else label_probs, dtype=float)
    if probs.shape != (spec.m,) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-10:
        raise ValueError("label probabilities must be a distribution over components")
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    s_start = model.s0 if cfg.s_start is None else float(cfg.s_start)
    n = cfg.n_steps
    times = cfg.t_start + cfg.dt * np.arange(n + 1)
    times[-1] = cfg.horizon
    rsteps = _rate_steps(model, times)
    dvar = np.diff(spec.variances(times), axis=0)  # (n, m)
    vols = np.stack([spec.vols_at(t) for t in times[:-1]])  # left-endpoint levels
    rec = cfg.record_steps()
    rec_pos = {int(k): j for j, k in enumerate(rec)}

    def one_block(b: int, nb: int):
        lab = np.searchsorted(cdf, _stream(cfg.seed, LABEL_STREAM, b).random(nb), side="right")
        lab = np.minimum(lab, spec.m - 1)
        gen = _stream(cfg.seed, BROWNIAN_STREAM, b)
        out = np.empty((nb, len(rec)))
        acc = np.empty((nb, len(rec)))
        v = np.zeros(nb)
        logs = cfg.scheme == "euler-log"
        state = np.full(nb, math.log(s_start) if logs else s_start)
        alive = np.ones(nb, dtype=bool)
        out[:, 0] = s_start
        acc[:, 0] = 0.0
        for k in range(n):
            dt = times[k + 1] - times[k]
            z = _normals(gen, nb)
            if logs:
                dv = dvar[k][lab]
                state = state + rsteps[k] - 0.5 * dv + np.sqrt(dv) * z
            else:
                sig = vols[k][lab]
                dv = sig * sig * dt
                new = state + state * rsteps[k] + sig * state * math.sqrt(dt) * z
                if cfg.scheme == "milstein-level":
                    new += 0.5 * sig * sig * state * dt * (z * z - 1.0)
                alive &= new > 0
                state = np.where(alive, new, np.nan)
            v = v + dv
            j = rec_pos.get(k + 1)
            if j is not None:
                out[:, j] = np.exp(state) if logs else state
                acc[:, j] = np.where(alive, v, np.nan)
        return out, acc, lab, int(nb - alive.sum())

    paths, avg, labels, rejected = _run_blocks(cfg, one_block)
    return PathEnsemble(times[rec], paths, avg, labels, rejected, cfg.seed,
                        {"engine": "uncertain-vol", "scheme": cfg.scheme, "mode": model.mode})


def mc_price(ensemble: PathEnsemble, payoff: Callable[[np.ndarray], np.ndarray],
             discount: float = 1.0) -> tuple[float, float]:
    """Discounted sample mean of a terminal payoff and its standard error.

    Rejected paths are excluded.
    """
    x = ensemble.terminal()
    if x.size == 0:
        raise ValueError("empty ensemble")
    vals = discount * np.asarray(payoff(x), dtype=float) * np.ones_like(x)
    if vals.size == 1:
        return float(vals[0]), math.nan
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def save_ensemble(ensemble: PathEnsemble, path) -> None:
    """Binary dump (numpy ``.npz``) for large runs."""
    extra = {} if ensemble.labels is None else {"labels": ensemble.labels}
    np.savez_compressed(path, grid=ensemble.grid, paths=ensemble.paths,
                        avg_variance=ensemble.avg_variance,
                        rejected=np.array(ensemble.rejected), seed=np.array(ensemble.seed), **extra)


def load_ensemble(path) -> PathEnsemble:
    with np.load(path) as z:
        labels = z["labels"] if "labels" in z.files else None
        return PathEnsemble(z["grid"], z["paths"], z["avg_variance"], labels,
                            int(z["rejected"]), int(z["seed"]))
