"""Command-line entry point ``mixdyn``.

Exit codes: 0 success, 1 a tolerance check failed, 2 bad input.
Every CSV starts with ``#`` header lines carrying the package version, a
hash of the model configuration and the seed; JSON reports carry the same
fields under ``"header"``. No timestamps, so identical inputs give
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .market import DATA_DIR, dump_config, load_config
from .localvol import LocalVolModel

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

DEFAULT_MODEL = DATA_DIR / "fx_eurusd_2003.json"
DEFAULT_FIXTURE = DATA_DIR / "eurusd_2003_forward_smiles.json"
FULL_PATHS = 200_000
ROW0_TOL = 0.05   # vol points, closed-form row
MC_TOL = 0.3      # vol points, simulated rows


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_model(path) -> tuple[LocalVolModel, str]:
    try:
        spec, curve = load_config(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot load model config {path}: {exc}") from exc
    digest = hashlib.sha256(dump_config(spec, curve).encode()).hexdigest()[:16]
    return LocalVolModel(spec, curve), digest


def _floats(text: str) -> np.ndarray:
    """``a,b,c`` or ``start:stop:step`` (inclusive stop)."""
    try:
        if ":" in text:
            a, b, h = (float(x) for x in text.split(":"))
            n = int(round((b - a) / h))
            return a + h * np.arange(n + 1)
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError as exc:
        raise InputError(f"cannot parse number list {text!r}") from exc


def _header(digest: str, seed, command: str) -> dict:
    return {"mixdyn_version": __version__, "command": command, "config_sha256": digest, "seed": seed}


def _emit_csv(header: dict, columns: list[str], rows, out) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return _write(buf.getvalue(), out)


def _emit_json(header: dict, body: dict, out) -> str:
    text = json.dumps({"header": header, **body}, indent=2, default=_jsonable) + "\n"
    return _write(text, out)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "NA" if not math.isfinite(x) else repr(float(x))
    return x


def _write(text: str, out) -> str:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)
    return text


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_price(args) -> int:
    from .pricing import mixture_implied_vol, mixture_call

    model, digest = _load_model(args.config)
    K = _floats(args.strikes)
    prices = np.atleast_1d(mixture_call(model, K, args.T))
    vols = np.atleast_1d(mixture_implied_vol(model, K, args.T))
    _emit_csv(_header(digest, None, "price"), ["T", "K", "price", "implied_vol"],
              ((args.T, k, p, v) for k, p, v in zip(K, prices, vols)), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import CalibrationProblem, calibrate, load_quotes_csv

    try:
        quotes = load_quotes_csv(args.quotes)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read quotes {args.quotes}: {exc}") from exc
    if args.curve:
        curve_model, _ = _load_model(args.curve)
        curve = curve_model.curve
    else:
        from .market import eurusd_2003_curve
        curve = eurusd_2003_curve()
    try:
        problem = CalibrationProblem(quotes, args.m, args.s0, curve, bounds=(args.vol_min, args.vol_max),
                                     loss=args.loss)
        res = calibrate(problem, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    text = dump_config(res.spec, curve)
    _write(text, args.out)
    summary = {"loss": res.loss_value, "converged": res.converged, "iterations": res.iterations,
               "weights": list(res.spec.weights), "vols": res.spec.vols_at(1.0).tolist(),
               "max_abs_residual": float(np.max(np.abs(res.residuals)))}
    if args.out not in (None, "-"):
        print(json.dumps(summary, indent=2))
    return EXIT_OK if res.converged else EXIT_FAIL


def cmd_simulate(args) -> int:
    from .simulation import SimConfig, save_ensemble, simulate_local_vol, simulate_uncertain_vol

    model, digest = _load_model(args.config)
    try:
        cfg = SimConfig(args.paths, args.dt, args.scheme, args.seed, horizon=args.horizon)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    run = simulate_uncertain_vol if args.engine == "uncertain-vol" else simulate_local_vol
    ens = run(model, cfg)
    if args.npz:
        save_ensemble(ens, args.npz)
    s = ens.terminal()
    v = ens.terminal_avg_variance()
    qs = np.quantile(s, [0.01, 0.25, 0.5, 0.75, 0.99])
    body = {"engine": args.engine, "scheme": args.scheme, "n_paths": ens.n_paths, "dt": args.dt,
            "horizon": args.horizon, "rejected": ens.rejected, "mean": float(s.mean()),
            "std": float(s.std(ddof=1)), "quantiles_1_25_50_75_99": qs.tolist(),
            "mean_integrated_variance": float(v.mean())}
    _emit_json(_header(digest, args.seed, "simulate"), body, args.out)
    return EXIT_OK


def cmd_localvol(args) -> int:
    from .localvol import normal_mixture_coefficients, sigma_mix_squared

    model, digest = _load_model(args.config)
    ts, ys = _floats(args.t), _floats(args.y)
    rows = []
    for t in ts:
        if model.spec.lognormal_mode:
            s2 = np.atleast_1d(sigma_mix_squared(model, float(t), ys))
            rows += [(t, y, math.sqrt(v), v * y * y) for y, v in zip(ys, s2)]
        else:
            f, s2 = normal_mixture_coefficients(model, float(t), ys)
            rows += [(t, y, fi, si) for y, fi, si in zip(ys, np.atleast_1d(f), np.atleast_1d(s2))]
    cols = ["t", "y", "sigma_mix", "diffusion_sq"] if model.spec.lognormal_mode else ["t", "y", "drift", "diffusion_sq"]
    _emit_csv(_header(digest, None, "localvol"), cols, rows, args.out)
    return EXIT_OK


# -- verify -----------------------------------------------------------------


def _check_terminal_corr(model, args):
    from .analysis import quadrature_moments, terminal_corr_spot_vol
    from .simulation import SimConfig, simulate_local_vol

    ens = simulate_local_vol(model, SimConfig(args.paths, args.dt, seed=args.seed, horizon=args.T))
    rep = terminal_corr_spot_vol(ens, model, args.T)
    quad = quadrature_moments(model, args.T)
    rel = abs(quad["E_sigma2_S"] / rep.extras["E_sigma2_S"] - 1.0)
    return {"corr": rep.estimate, "std_error": rep.std_error, "z": rep.z_score,
            "moment_rel_error": rel, "tolerance": {"z": 3.0, "moment_rel": 1e-8},
            "pass": rep.consistent_with_zero() and rel < 1e-8}


def _check_avg_var_corr(model, args):
    from .analysis import average_variance_moments, terminal_corr_avg_variance
    from .simulation import SimConfig, simulate_local_vol

    ens = simulate_local_vol(model, SimConfig(args.paths, args.dt, seed=args.seed, horizon=args.T))
    rep = terminal_corr_avg_variance(ens, args.T)
    mom = average_variance_moments(model, args.T)
    rel = abs(mom["cov"]) / mom["E_vS"]
    return {"corr": rep.estimate, "std_error": rep.std_error, "z": rep.z_score,
            "quadrature_cov_rel": rel, "tolerance": {"z": 3.0, "cov_rel": 1e-8},
            "pass": rep.consistent_with_zero() and rel < 1e-8}


def _check_posterior(model, args):
    from .analysis import posterior_mc, posterior_weights_check
    from .forward_smile import expected_spot
    from .localvol import sigma_mix_squared
    from .simulation import SimConfig, simulate_uncertain_vol

    fwd = expected_spot(model, args.T)
    xs = fwd * np.linspace(0.6, 1.6, 41)
    post, cond = posterior_weights_check(model, args.T, xs)
    gap = float(np.max(np.abs(cond - sigma_mix_squared(model, args.T, xs))))
    lam_gap = float(np.max(np.abs(post - model.weights(args.T, xs))))
    ens = simulate_uncertain_vol(model, SimConfig(args.paths, args.dt, seed=args.seed, horizon=args.T))
    freq, se, nb = posterior_mc(ens, fwd)
    lam = model.weights(args.T, fwd)
    z = np.abs(freq - lam) / np.maximum(se, 1e-300)
    return {"identity_max_abs": gap, "lambda_max_abs": lam_gap, "mc_frequencies": freq, "lambda": lam,
            "mc_std_error": se, "bin_count": nb, "tolerance": {"identity": 1e-12, "z": 3.0},
            "pass": gap < 1e-12 and lam_gap < 1e-12 and bool(np.all(z < 3.0))}


def _check_fokker_planck(model, args):
    from .analysis import default_fp_grid, fokker_planck_evolve, fp_l1_distance

    grid = default_fp_grid(model, args.T, 2000)
    res = fokker_planck_evolve(model, grid, args.T, n_steps=2000)
    l1 = fp_l1_distance(model, res)
    return {"l1": l1, "mass_drift": res.mass_drift, "grid_points": grid.size,
            "tolerance": {"l1": 1e-3, "mass": 1e-10}, "pass": l1 < 1e-3 and res.mass_drift < 1e-10}


def _check_normal_cov(model, args):
    from .analysis import normal_mixture_covariance, normal_mixture_covariance_mc
    from .simulation import SimConfig, simulate_local_vol

    exact = normal_mixture_covariance(model.spec, args.T)
    ens = simulate_local_vol(model, SimConfig(args.paths, args.dt, "euler-level", args.seed, horizon=args.T))
    est, se = normal_mixture_covariance_mc(model, ens)
    return {"closed_form": exact, "mc": est, "std_error": se, "tolerance": {"z": 3.0},
            "pass": abs(est - exact) < 3.0 * se}


CHECKS = {
    "terminal-corr": (_check_terminal_corr, "lognormal", True),
    "avg-var-corr": (_check_avg_var_corr, "lognormal", True),
    "posterior": (_check_posterior, "lognormal", True),
    "fokker-planck": (_check_fokker_planck, "any", False),
    "normal-cov": (_check_normal_cov, "normal", True),
}


def cmd_verify(args) -> int:
    model, digest = _load_model(args.config)
    names = list(CHECKS) if args.check == "all" else [args.check]
    report = {}
    ok = True
    for name in names:
        fn, mode, needs_mix = CHECKS[name]
        want_log = mode == "lognormal"
        if mode != "any" and model.spec.lognormal_mode != want_log:
            report[name] = {"status": "not applicable", "pass": True}
            continue
        if needs_mix and model.spec.m == 1:
            report[name] = {"status": "degenerate, skipped", "pass": True}
            continue
        r = fn(model, args)
        r["status"] = "pass" if r["pass"] else "fail"
        ok &= bool(r["pass"])
        report[name] = r
    _emit_json(_header(digest, args.seed, "verify"), {"T": args.T, "n_paths": args.paths, "checks": report},
               args.out)
    return EXIT_OK if ok else EXIT_FAIL


# -- forward smiles ---------------------------------------------------------


def _smile_rows(model, times, tenor, moneyness, args, spots=None):
    from .forward_smile import ForwardSmileRequest, conditional_future_smile
    from .simulation import SimConfig

    sim = SimConfig(args.paths, args.dt, args.scheme, args.seed, workers=args.workers)
    rows = []
    for i, t in enumerate(times):
        spot = None if spots is None else spots[i]
        req = ForwardSmileRequest(model, float(t), float(t) + tenor, moneyness, sim,
                                  engine=args.engine, pricing=args.pricing, spot=spot)
        rows.append(conditional_future_smile(req))
    return rows


def cmd_forward_smile(args) -> int:
    from .forward_smile import expected_spot

    model, digest = _load_model(args.config)
    times = _floats(args.t)
    mny = _floats(args.moneyness)
    try:
        rows = _smile_rows(model, times, args.tenor, mny, args)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    cols = ["t", "S_bar"] + [f"{m:.4g}" for m in mny]
    out = [[t, expected_spot(model, t)] + [100 * p.implied_vol for p in row] for t, row in zip(times, rows)]
    _emit_csv(_header(digest, args.seed, "forward-smile"), cols, out, args.out)
    return EXIT_OK


def load_smile_fixture(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        mny = np.asarray(doc["moneyness"], dtype=float)
        rows = [(float(r["t"]), float(r["expected_spot"]), np.asarray(r["vols"], dtype=float))
                for r in doc["rows"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot parse smile fixture {path}: {exc}") from exc
    if any(v.shape != mny.shape for _, _, v in rows):
        raise InputError(f"smile fixture {path}: row length does not match the moneyness grid")
    return {"moneyness": mny, "rows": rows}


def smoke_tolerance(base: float, n_paths: int, full: int = FULL_PATHS) -> float:
    """Scale a Monte Carlo tolerance by ``sqrt(full / n)`` (standard error ~ n^-1/2)."""
    return base * math.sqrt(max(full / n_paths, 1.0))


def cmd_reproduce_table2(args) -> int:
    fixture = load_smile_fixture(args.fixture)
    model, digest = _load_model(args.config)
    mny = fixture["moneyness"]
    times = [t for t, _, _ in fixture["rows"]]
    spots = [s for _, s, _ in fixture["rows"]] if args.fixture_spots else None
    rows = _smile_rows(model, times, args.tenor, mny, args, spots)
    smoke = args.paths < FULL_PATHS
    mc_tol = smoke_tolerance(MC_TOL, args.paths) if smoke else MC_TOL
    out, cells, ok = [], [], True
    for (t, _, ref), row in zip(fixture["rows"], rows):
        got = np.array([100 * p.implied_vol for p in row])
        tol = ROW0_TOL if t == 0 else mc_tol
        dev = got - ref
        for m, d, g, r in zip(mny, dev, got, ref):
            bad = not (math.isfinite(d) and abs(d) <= tol)
            if bad:
                cells.append({"t": t, "moneyness": float(m), "model": g, "reference": r, "deviation": d,
                              "tolerance": tol})
            ok &= not bad
        out.append([t, row[0].K / mny[0]] + list(got))
    header = _header(digest, args.seed, "reproduce-table2")
    header["mode"] = "smoke" if smoke else "full"
    header["mc_tolerance"] = mc_tol
    _emit_csv(header, ["t", "S_bar"] + [f"{m:.4g}" for m in mny], out, args.out)
    for c in cells:
        print(f"FAIL t={c['t']:g} K/S={c['moneyness']:.2f}: model {c['model']:.3f} "
              f"reference {c['reference']:.2f} deviation {c['deviation']:+.3f} (tol {c['tolerance']:.3g})",
              file=sys.stderr)
    print(f"{'PASS' if ok else 'FAIL'}: {len(cells)} of {len(mny) * len(times)} cells outside tolerance"
          + (" [smoke mode]" if smoke else ""), file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixdyn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", default=str(DEFAULT_MODEL), help="model JSON")
        sp.add_argument("--out", default=None, help="output path (default stdout)")

    def mc(sp, paths=FULL_PATHS):
        sp.add_argument("--paths", type=int, default=paths)
        sp.add_argument("--dt", type=float, default=1e-3)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("price", help="closed-form mixture calls and implied vols")
    common(sp)
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--strikes", required=True, help="a,b,c or start:stop:step")
    sp.set_defaults(func=cmd_price)

    sp = sub.add_parser("calibrate", help="fit weights and vols to an implied-vol CSV (T,K,implied_vol)")
    common(sp, config=False)
    sp.add_argument("--quotes", required=True)
    sp.add_argument("--m", type=int, default=2)
    sp.add_argument("--s0", type=float, required=True)
    sp.add_argument("--curve", default=None, help="model JSON whose curve is used (default EUR/USD 2003)")
    sp.add_argument("--loss", choices=["vol-space", "price-space"], default="vol-space")
    sp.add_argument("--vol-min", type=float, default=0.01)
    sp.add_argument("--vol-max", type=float, default=2.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("simulate", help="simulate the diffusion and summarize the terminal law")
    common(sp)
    mc(sp)
    sp.add_argument("--horizon", type=float, default=1.0)
    sp.add_argument("--scheme", choices=["euler-log", "euler-level", "milstein-level"], default="euler-log")
    sp.add_argument("--engine", choices=["local-vol", "uncertain-vol"], default="local-vol")
    sp.add_argument("--npz", default=None, help="also dump the ensemble")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("localvol", help="tabulate the local volatility surface")
    common(sp)
    sp.add_argument("--t", required=True)
    sp.add_argument("--y", required=True)
    sp.set_defaults(func=cmd_localvol)

    sp = sub.add_parser("verify", help="run the analysis checks")
    common(sp)
    mc(sp)
    sp.add_argument("--check", choices=list(CHECKS) + ["all"], default="all")
    sp.add_argument("--T", type=float, default=1.0)
    sp.set_defaults(func=cmd_verify)

    smile_cmds = (
        ("forward-smile", cmd_forward_smile, "conditional future smiles"),
        ("reproduce-table2", cmd_reproduce_table2,
         "rebuild the EUR/USD conditional-smile fixture and compare cell by cell"),
    )
    for name, func, help_text in smile_cmds:
        sp = sub.add_parser(name, help=help_text)
        common(sp)
        mc(sp)
        sp.add_argument("--tenor", type=float, default=1.0)
        sp.add_argument("--engine", choices=["local-vol", "uncertain-vol"], default="local-vol")
        sp.add_argument("--pricing", choices=["cv", "otm", "call"], default="cv")
        sp.add_argument("--scheme", choices=["euler-log", "euler-level", "milstein-level"], default="euler-log")
        sp.add_argument("--workers", type=int, default=1, help="threads per ensemble (path blocks)")
        if name == "forward-smile":
            sp.add_argument("--t", default="0,1,2,3,6,7")
            sp.add_argument("--moneyness", default="0.8:1.2:0.05")
        else:
            sp.add_argument("--fixture", default=str(DEFAULT_FIXTURE))
            sp.add_argument("--fixture-spots", action="store_true",
                            help="condition on the fixture's expected-spot column instead of s0 e^R")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"mixdyn: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
