"""Verification checks for the mixture diffusions.

Instantaneous versus terminal correlation between the process and its
squared diffusion coefficient, the Bayes identity linking the local-vol and
uncertain-vol models, quadrature versions of the zero-covariance moments, and
a Crank-Nicolson Fokker-Planck solver that evolves the density independently
of the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.linalg import solve_banded

from .localvol import (
    LocalVolModel,
    normal_mixture_coefficients,
    sigma_mix_squared,
    sigma_mix_squared_dy,
)
from .market import (
    MixtureSpec,
    component_moments,
    integrated_rate,
    lambda_weights,
    mixture_cdf,
    mixture_density,
)
from .simulation import PathEnsemble

SIGNIFICANCE = 3.0  # standard errors


class DegenerateError(ValueError):
    """Correlation undefined because one variable is (numerically) constant."""


class FokkerPlanckError(ArithmeticError):
    """The PDE step produced negative densities; refine the grid or the time step."""


@dataclass
class CorrelationReport:
    estimate: float
    std_error: float
    n: int
    analytic_cov: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def z_score(self) -> float:
        return self.estimate / self.std_error

    def consistent_with_zero(self, k: float = SIGNIFICANCE) -> bool:
        return abs(self.estimate) < k * self.std_error


# ---------------------------------------------------------------------------
# sample statistics
# ---------------------------------------------------------------------------


def sample_corr(x, y) -> tuple[float, float]:
    """Pearson correlation with a moment-based (non-Gaussian) standard error.

    Uses the influence function of ``r``:
    ``zx zy - r (zx^2 + zy^2) / 2``, whose variance over ``n`` is the
    asymptotic variance of the estimate.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("need at least three samples")
    sx, sy = x.std(), y.std()
    if sx <= 1e-14 * max(1.0, abs(x.mean())) or sy <= 1e-14 * max(1.0, abs(y.mean())):
        raise DegenerateError("one of the variables is constant")
    zx = (x - x.mean()) / sx
    zy = (y - y.mean()) / sy
    r = float(np.mean(zx * zy))
    infl = zx * zy - 0.5 * r * (zx * zx + zy * zy)
    return r, float(infl.std(ddof=1) / math.sqrt(n))


def sample_cov(x, y) -> tuple[float, float]:
    """Sample covariance and its standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    prod = (x - x.mean()) * (y - y.mean())
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(x.size))


# ---------------------------------------------------------------------------
# normal mixture covariance
# ---------------------------------------------------------------------------


def mixture_covariance_formula(weights, means, sig2) -> float:
    """``sum lambda m_i s_i - (sum lambda m_i)(sum lambda s_i)``.

    Evaluated with means measured from the first one, so equal means give
    exactly zero.
    """
    lam = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    m = m - m[0]
    s2 = np.asarray(sig2, dtype=float)
    return float(lam @ (m * s2) - (lam @ m) * (lam @ s2))


def normal_mixture_covariance(spec: MixtureSpec, t: float) -> float:
    """``cov(Y_t, sigma_f(t, Y_t)^2)`` for a normal mixture.

    Since ``E[sigma_f^2 | component i] = sigma_i(t)^2`` under the mixture
    law, the covariance only involves the component means ``m_i(t)``.
    """
    if spec.lognormal_mode:
        raise ValueError("covariance formula is for normal mixtures")
    if t <= 0:
        raise ValueError("t must be positive")
    return mixture_covariance_formula(spec.weights, spec.means(t), spec.vols_at(t) ** 2)


def normal_mixture_covariance_mc(model: LocalVolModel, ensemble: PathEnsemble) -> tuple[float, float]:
    """Sample covariance of ``(Y_T, sigma_f(T, Y_T)^2)`` from a normal-mixture ensemble."""
    y = ensemble.terminal()
    _, s2 = normal_mixture_coefficients(model, ensemble.horizon, y)
    return sample_cov(y, s2)


# ---------------------------------------------------------------------------
# terminal correlations
# ---------------------------------------------------------------------------


def terminal_corr_spot_vol(ensemble: PathEnsemble, model: LocalVolModel, T: float) -> CorrelationReport:
    """Sample ``corr(S_T, sigma_mix(T, S_T)^2)``; the model value is zero.

    ``extras`` carries the two analytic moments ``E[sigma^2 S]`` and
    ``E[sigma^2]`` together with the sample mean (and error) of ``sigma^2 S``.
    """
    if not model.spec.lognormal_mode:
        raise ValueError("needs a lognormal-mixture model")
    if abs(ensemble.horizon - T) > 1e-9:
        raise ValueError(f"ensemble horizon {ensemble.horizon} != T={T}")
    if model.spec.m == 1:
        raise DegenerateError("single component: sigma_mix is constant")
    s = ensemble.terminal()
    s2 = np.asarray(sigma_mix_squared(model, T, s))
    r, se = sample_corr(s, s2)
    lam = np.asarray(model.spec.weights)
    nu2 = model.spec.vols_at(T) ** 2
    fwd = model.s0 * math.exp(integrated_rate(model.curve, 0.0, T))
    prod = s2 * s
    return CorrelationReport(r, se, s.size, 0.0, {
        "E_sigma2_S": float(fwd * lam @ nu2),
        "E_sigma2": float(lam @ nu2),
        "sample_sigma2_S": float(prod.mean()),
        "sample_sigma2_S_se": float(prod.std(ddof=1) / math.sqrt(s.size)),
    })


def terminal_corr_avg_variance(ensemble: PathEnsemble, T: float | None = None) -> CorrelationReport:
    """Sample ``corr(S_T, v(T))`` with ``v(T) = int_0^T sigma^2 dt``; the model value is zero."""
    if T is not None and abs(ensemble.horizon - T) > 1e-9:
        raise ValueError(f"ensemble horizon {ensemble.horizon} != T={T}")
    s = ensemble.terminal()
    v = ensemble.terminal_avg_variance()
    r, se = sample_corr(s, v)
    return CorrelationReport(r, se, s.size, 0.0, {
        "E_v": float(v.mean()),
        "E_vS": float((v * s).mean()),
    })


# ---------------------------------------------------------------------------
# instantaneous correlation
# ---------------------------------------------------------------------------


def instantaneous_corr_check(model: LocalVolModel, t: float, y: float, tol: float = 1e-14) -> float:
    """Limit correlation of ``dS`` and ``d sigma_mix^2(t, S)``.

    Both differentials are driven by the same ``dW``, scaled by ``sigma S``
    and ``(d sigma^2 / dy) sigma S``, so the correlation is the sign of the
    slope. Returns ``nan`` where the slope vanishes (undefined).
    """
    slope = sigma_mix_squared_dy(model, t, y)
    if abs(slope) <= tol:
        return math.nan
    return math.copysign(1.0, slope)


def instantaneous_corr_mc(model: LocalVolModel, t: float, y: float, dt: float = 1e-6,
                          n_paths: int = 20_000, seed: int = 0) -> float:
    """One Euler step from ``(t, y)``; sample correlation of the two increments."""
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal(n_paths)
    s2 = sigma_mix_squared(model, t, y)
    r = model.curve.forward_rate(t, "net")
    s_new = y * np.exp((r - 0.5 * s2) * dt + math.sqrt(s2 * dt) * z)
    d_s = s_new - y
    d_v = np.asarray(sigma_mix_squared(model, t + dt, s_new)) - s2
    return float(np.corrcoef(d_s, d_v)[0, 1])


# ---------------------------------------------------------------------------
# uncertain-volatility equivalence
# ---------------------------------------------------------------------------


def posterior_weights_check(model: LocalVolModel, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Bayes posterior ``Q(xi = nu_k | S_t = x)`` and ``E[xi(t)^2 | S_t = x]``.

    Computed from scipy's lognormal densities, independently of
    :func:`lambda_weights`, so the two routes can be compared.
    """
    spec = model.spec
    if not spec.lognormal_mode:
        raise ValueError("needs a lognormal-mixture model")
    x = np.asarray(x, dtype=float)
    lam = np.asarray(spec.weights)
    if t <= spec.epsilon:
        post = np.broadcast_to(lam, x.shape + lam.shape).copy()
    else:
        fwd = spec.s0 * math.exp(integrated_rate(model.curve, 0.0, t))
        V = np.sqrt(spec.variances(t))
        # Q(S_t in dx | xi = nu_k), each a lognormal with median fwd e^{-V^2/2}
        logpdf = np.stack([stats.lognorm.logpdf(x, s=v, scale=fwd * math.exp(-0.5 * v * v)) for v in V],
                          axis=-1)
        joint = logpdf + np.log(lam)
        joint -= joint.max(axis=-1, keepdims=True)
        post = np.exp(joint)
        post /= post.sum(axis=-1, keepdims=True)
    cond_var = post @ (spec.vols_at(t) ** 2)
    return post, cond_var


def silverman_bandwidth(sample) -> float:
    sample = np.asarray(sample, dtype=float)
    iqr = np.subtract(*np.percentile(sample, [75, 25]))
    spread = min(sample.std(ddof=1), iqr / 1.349)
    return 0.9 * spread * sample.size ** (-0.2)


def posterior_mc(ensemble: PathEnsemble, x: float, t: float | None = None,
                 bandwidth: float | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Label frequencies among uncertain-vol paths with ``|S_t - x| < h``.

    Returns ``(frequencies, standard_errors, n_in_bin)``; ``h`` defaults to
    Silverman's rule on the sample.
    """
    if ensemble.labels is None:
        raise ValueError("ensemble carries no scenario labels")
    s = ensemble.paths[:, -1] if t is None else ensemble.at(t)
    h = silverman_bandwidth(s) if bandwidth is None else bandwidth
    sel = np.abs(s - x) < h
    nb = int(sel.sum())
    if nb < 2:
        raise ValueError("no samples near x")
    m = int(ensemble.labels.max()) + 1
    freq = np.bincount(ensemble.labels[sel], minlength=m) / nb
    return freq, np.sqrt(freq * (1 - freq) / nb), nb


# ---------------------------------------------------------------------------
# quadrature moment identities
# ---------------------------------------------------------------------------


def _quad_log(fn, model: LocalVolModel, t: float, width: float = 12.0) -> float:
    """``int fn(y) p(t, y) dy`` in log coordinates over +-``width`` sd."""
    loc, var = component_moments(model.spec, model.curve, t)
    sd = np.sqrt(var)
    lo = float(np.min(loc - width * sd))
    hi = float(np.max(loc + width * sd))
    pts = sorted(float(p) for p in np.concatenate((loc, loc - 2 * sd, loc + 2 * sd)))

    def g(z):
        y = math.exp(z)
        return fn(y) * mixture_density(model.spec, model.curve, t, y) * y

    val, _ = integrate.quad(g, lo, hi, points=pts, epsabs=0.0, epsrel=1e-12, limit=500)
    return val


def quadrature_moments(model: LocalVolModel, T: float) -> dict:
    """``E[sigma^2 S]``, ``E[sigma^2]``, ``E[S]`` by quadrature against the mixture density."""
    s2 = lambda y: sigma_mix_squared(model, T, y)
    e_s2s = _quad_log(lambda y: s2(y) * y, model, T)
    e_s2 = _quad_log(s2, model, T)
    e_s = _quad_log(lambda y: y, model, T)
    return {"E_sigma2_S": e_s2s, "E_sigma2": e_s2, "E_S": e_s, "cov": e_s2s - e_s2 * e_s}


def average_variance_moments(model: LocalVolModel, T: float) -> dict:
    """``E[v(T) S_T]`` from the linear ODE ``C' = r C + A`` and ``E[v(T)]`` by Fubini.

    ``A_u = E[S_u sigma^2(u, S_u)]`` and ``E[sigma^2(u, S_u)]`` are obtained
    by quadrature against the mixture density at each ``u``; nothing here
    uses the closed-form moments.
    """
    R = lambda u: integrated_rate(model.curve, 0.0, u)
    A = lambda u: _quad_log(lambda y: sigma_mix_squared(model, u, y) * y, model, max(u, 1e-10))
    B = lambda u: _quad_log(lambda y: sigma_mix_squared(model, u, y), model, max(u, 1e-10))
    eps = model.spec.epsilon
    pts = [p for p in (eps, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0) if 0 < p < T]
    kw = dict(points=pts or None, epsabs=0.0, epsrel=1e-10, limit=200)
    integral_a, _ = integrate.quad(lambda u: math.exp(-R(u)) * A(u), 0.0, T, **kw)
    e_vs = math.exp(R(T)) * integral_a
    e_v, _ = integrate.quad(B, 0.0, T, **kw)
    e_s = model.s0 * math.exp(R(T))
    return {"E_vS": e_vs, "E_v": e_v, "E_S": e_s, "cov": e_vs - e_v * e_s}


# ---------------------------------------------------------------------------
# Fokker-Planck
# ---------------------------------------------------------------------------


def _gauss_coeffs(model: LocalVolModel, t: float, z: np.ndarray):
    """Drift and squared diffusion in the Gaussian coordinate."""
    if model.spec.lognormal_mode:
        a = np.asarray(sigma_mix_squared(model, t, np.exp(z)))
        b = model.curve.forward_rate(t, "net") - 0.5 * a
        return b, a
    f, a = normal_mixture_coefficients(model, t, z)
    return np.asarray(f), np.asarray(a)


def _gauss_cdf(model: LocalVolModel, t: float, z):
    if model.spec.lognormal_mode:
        return mixture_cdf(model.spec, model.curve, t, np.exp(z))
    return mixture_cdf(model.spec, None, t, z)


def default_fp_grid(model: LocalVolModel, t_end: float, n: int = 2000, mass_tail: float = 1e-6) -> np.ndarray:
    """Uniform cell-centre grid in the Gaussian coordinate covering all but ``mass_tail``."""
    loc, var = component_moments(model.spec, model.curve if model.spec.lognormal_mode else None, t_end)
    k = stats.norm.isf(mass_tail / 2)
    lo = float(np.min(loc - k * np.sqrt(var)))
    hi = float(np.max(loc + k * np.sqrt(var)))
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def cell_averages(model: LocalVolModel, t: float, grid: np.ndarray) -> np.ndarray:
    """Exact cell averages of the mixture density in the Gaussian coordinate."""
    h = grid[1] - grid[0]
    edges = np.concatenate((grid - 0.5 * h, [grid[-1] + 0.5 * h]))
    return np.diff(_gauss_cdf(model, t, edges)) / h


@dataclass
class FPResult:
    grid: np.ndarray
    density: np.ndarray
    t_end: float
    mass_initial: float
    mass_final: float
    steps: int

    @property
    def mass_drift(self) -> float:
        return abs(self.mass_final - self.mass_initial)


def _fp_operator(model, t, grid, h):
    """Banded form of the conservative flux operator with zero-flux ends."""
    b, a = _gauss_coeffs(model, t, grid)
    n = grid.size
    bf = 0.5 * (b[:-1] + b[1:])  # drift at faces
    # flux J_{j+1/2} = bf (q_j + q_{j+1}) / 2 - (a_{j+1} q_{j+1} - a_j q_j) / (2h)
    cj = 0.5 * bf + 0.5 * a[:-1] / h   # coefficient of q_j in J_{j+1/2}
    cj1 = 0.5 * bf - 0.5 * a[1:] / h   # coefficient of q_{j+1}
    diag = np.zeros(n)
    upper = np.zeros(n)
    lower = np.zeros(n)
    # dq_j/dt = -(J_{j+1/2} - J_{j-1/2}) / h
    diag[:-1] -= cj / h
    upper[1:] -= cj1 / h
    diag[1:] += cj1 / h
    lower[:-1] += cj / h
    return lower, diag, upper


def _apply(lower, diag, upper, q):
    out = diag * q
    out[:-1] += upper[1:] * q[1:]
    out[1:] += lower[:-1] * q[:-1]
    return out


def fokker_planck_evolve(model: LocalVolModel, grid: np.ndarray, t_end: float,
                         n_steps: int = 2000, t_start: float | None = None,
                         rannacher: int = 4, grading: float = 2.0) -> FPResult:
    """Crank-Nicolson evolution of the density from ``t_start`` (default ``2 epsilon``).

    Works on a uniform grid of cell centres in the Gaussian coordinate
    (``ln S`` for lognormal mixtures) with zero-flux boundaries, so mass is
    conserved up to solver rounding. The time grid is graded towards the
    start (``t_k ~ (k/N)^grading``) and the first ``rannacher`` steps are
    fully implicit to damp the sharp initial condition.
    """
    grid = np.asarray(grid, dtype=float)
    h = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), h, rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    t0 = 2 * model.spec.epsilon if t_start is None else t_start
    if t0 <= 0:
        t0 = 1e-6
    if not t_end > t0:
        raise ValueError("t_end must exceed the start time")
    q = cell_averages(model, t0, grid)
    mass0 = float(q.sum() * h)
    times = t0 + (t_end - t0) * (np.arange(n_steps + 1) / n_steps) ** grading
    op_prev = _fp_operator(model, times[0], grid, h)
    for k in range(n_steps):
        dt = times[k + 1] - times[k]
        op_next = _fp_operator(model, times[k + 1], grid, h)
        theta = 1.0 if k < rannacher else 0.5
        rhs = q + (1 - theta) * dt * _apply(*op_prev, q)
        lo, di, up = op_next
        ab = np.zeros((3, grid.size))
        ab[0, 1:] = -theta * dt * up[1:]
        ab[1] = 1.0 - theta * dt * di
        ab[2, :-1] = -theta * dt * lo[:-1]
        q = solve_banded((1, 1), ab, rhs)
        qmax = q.max()
        if q.min() < -1e-8 * qmax:
            j = int(np.argmin(q))
            raise FokkerPlanckError(
                f"negative density {q[j]:.3e} at z={grid[j]:.4f}, t={times[k + 1]:.6f}; "
                f"refine the time step (dt={dt:.2e}) or the grid (h={h:.2e})")
        op_prev = op_next
    return FPResult(grid, q, t_end, mass0, float(q.sum() * h), n_steps)


def fp_l1_distance(model: LocalVolModel, result: FPResult) -> float:
    """L1 distance between the PDE density and the closed-form mixture (cell averages)."""
    exact = cell_averages(model, result.t_end, result.grid)
    h = result.grid[1] - result.grid[0]
    return float(np.abs(result.density - exact).sum() * h)


# ---------------------------------------------------------------------------
# Fokker-Planck residual of the closed form
# ---------------------------------------------------------------------------


def fokker_planck_residual(model: LocalVolModel, t: float, y: float, rel_step: float = 1e-3) -> tuple[float, float]:
    """Residual of ``dp/dt + d(f p)/dy - 1/2 d^2(a p)/dy^2`` at ``(t, y)``.

    Uses the closed-form density and coefficients with fourth-order central
    differences in ``y`` and a second-order one-sided stencil in ``t``.
    Returns ``(residual, scale)`` where ``scale`` is the largest of the three
    terms in absolute value.
    """
    spec = model.spec
    curve = model.curve if spec.lognormal_mode else None

    def p(tt, yy):
        return np.asarray(mixture_density(spec, curve, tt, yy))

    def fa(tt, yy):
        yy = np.asarray(yy, dtype=float)
        if spec.lognormal_mode:
            return model.curve.forward_rate(tt, "net") * yy, np.asarray(sigma_mix_squared(model, tt, yy)) * yy * yy
        return normal_mixture_coefficients(model, tt, yy)

    hy = rel_step * max(abs(y), 1.0) if not spec.lognormal_mode else rel_step * y
    ys = y + hy * np.arange(-2, 3)
    f, a = fa(t, ys)
    pv = p(t, ys)
    fp = np.asarray(f) * pv
    ap = np.asarray(a) * pv
    d1 = (fp[0] - 8 * fp[1] + 8 * fp[3] - fp[4]) / (12 * hy)
    d2 = (-ap[0] + 16 * ap[1] - 30 * ap[2] + 16 * ap[3] - ap[4]) / (12 * hy * hy)
    ht = 1e-5 * max(t, 1.0)
    dt = (-3 * p(t, y) + 4 * p(t + ht, y) - p(t + 2 * ht, y)) / (2 * ht)
    dt = float(dt)
    res = dt + d1 - 0.5 * d2
    return float(res), float(max(abs(dt), abs(d1), abs(0.5 * d2)))
