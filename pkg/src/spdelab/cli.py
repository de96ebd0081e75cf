"""Command-line entry point: ``spdelab <command> --config PATH [options]``.

Every command writes its data files (CSV, JSON) into the output directory
plus ``manifest.json`` with provenance.  Data files contain no timestamps,
so identical (config, seed) pairs reproduce them byte for byte whatever
``SPDELAB_THREADS`` is; only the manifest records wall-clock times.

Exit status: 0 when every enabled check passes, 1 when a check fails,
2 on a configuration or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, RunManifest, load_config
from .constants import c_infinity, concentration_bound, optimize_alpha
from .errors import DomainError, SpdelabError
from .girsanov import run_coupling, tci_experiment_l2, tci_experiment_sup
from .grid import make_grid, sample_noise_batch
from .kernel import build_generator, export_kernel, g_const_alpha, kernel_table
from .martingale import (
    basis_motions,
    isometry_check,
    martingale_test,
    project_martingale,
    reconstruct,
)
from .parallel import DEFAULT_CHUNK, map_chunks
from .solver import batch_l2_norm_sq, integrate, point_values, walsh_variance
from .stats import bootstrap
from .transport import (
    EXACT_CAP,
    SampleCloud,
    concentration_profile,
    cost_matrix,
    wasserstein2_entropic,
    wasserstein2_exact,
)

COMMANDS = ("kernel", "constants", "simulate", "verify-tci", "w2", "repr-check")
ALPHA_CURVE = tuple(np.round(np.linspace(1.05, 1.95, 19), 4))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _table(cfg: ExperimentConfig):
    gen = build_generator(cfg.operator, cfg.grid)
    return kernel_table(gen, cfg.grid, cfg.operator, tol_neg=cfg.kernel["tol_neg"])


def _constants(cfg: ExperimentConfig, table) -> dict:
    grid, data = cfg.grid, cfg.model.lipschitz
    out = {"g_total": table.g_total,
           "g_alpha_curve": {repr(float(a)): g_const_alpha(table, float(a)) for a in ALPHA_CURVE},
           "c_infinity": c_infinity(table.g_total, data.L_g, grid.T)}
    out["r0_infinity"] = concentration_bound(out["c_infinity"], 0.0)[1]
    try:
        alpha, c2 = optimize_alpha(data, table.g_total, lambda a: g_const_alpha(table, a),
                                   grid.T, grid.D)
        out.update(alpha_star=alpha, c_two_star=c2, r0_two=concentration_bound(c2, 0.0)[1])
    except DomainError:
        # K_sigma = 0: the L2 constant is not defined
        out.update(alpha_star=None, c_two_star=None, r0_two=None)
    return out


# -- commands ----------------------------------------------------------------------

def cmd_kernel(cfg, args, man):
    table = _table(cfg)
    out = cfg.out
    export_kernel(table, out / "kernel.csv", out / "kernel.json", a_spec=cfg.raw["operator"]["a"],
                  b_spec=cfg.raw["operator"]["b"], alphas=cfg.kernel["alphas"])
    man.outputs.update(kernel_csv="kernel.csv", kernel_json="kernel.json")
    man.checks["kernel_functional_finite"] = bool(math.isfinite(table.g_total))
    return {"g_total": table.g_total, "method": table.method}


def cmd_constants(cfg, args, man):
    table = _table(cfg)
    res = _constants(cfg, table)
    write_json(cfg.out / "constants.json", res)
    man.outputs["constants"] = "constants.json"
    man.checks["c_infinity_finite"] = bool(math.isfinite(res["c_infinity"]))
    return {k: res[k] for k in ("g_total", "c_infinity", "alpha_star", "c_two_star")}


def cmd_simulate(cfg, args, man):
    table = _table(cfg)
    grid, model = cfg.grid, cfg.model
    n_boot = cfg.stats["n_boot"]

    def work(reps):
        inc = sample_noise_batch(grid, cfg.seed, reps)
        u = integrate(model, table, inc, replicas=list(reps))["u"]
        return {"sup": np.max(np.abs(u), axis=(1, 2)), "l2sq": batch_l2_norm_sq(u, grid),
                "mid": point_values(u[:, -1], grid, grid.D / 2),
                "sq_sum": (u[:, -1] ** 2).sum(axis=0), "sum": u[:, -1].sum(axis=0)}

    parts = map_chunks(work, cfg.replicas, DEFAULT_CHUNK, args.threads)
    cat = lambda k: np.concatenate([p[k] for p in parts])  # noqa: E731
    sup, l2sq, mid = cat("sup"), cat("l2sq"), cat("mid")
    write_csv(cfg.out / "replicas.csv", ["replica", "sup_norm", "l2_norm", "u_T_mid"],
              ([r, sup[r], math.sqrt(l2sq[r]), mid[r]] for r in range(cfg.replicas)))
    R = cfg.replicas
    mean_T = sum(p["sum"] for p in parts) / R
    var_T = (sum(p["sq_sum"] for p in parts) / R - mean_T**2) * R / max(R - 1, 1)
    agg = {
        "replicas": R, "seed": cfg.seed,
        "sup_norm_sq": bootstrap(lambda s: np.mean(s**2, axis=1), sup, n_boot=n_boot,
                                 seed=cfg.seed),
        "l2_norm_sq": bootstrap(lambda s: s.mean(axis=1), l2sq, n_boot=n_boot, seed=cfg.seed),
        "u_T_mid_mean": float(mid.mean()),
        "u_T_mid_var": float(mid.var(ddof=1)) if R > 1 else 0.0,
        "variance_T": var_T,
    }
    sig = model.sigma.constant
    if sig is not None and model.g.constant == 0.0:
        # additive noise, no reaction: variance is the discrete isometry profile
        agg["walsh_variance_T"] = sig**2 * walsh_variance(table)
    write_json(cfg.out / "aggregate.json", agg)
    man.outputs.update(replicas="replicas.csv", aggregate="aggregate.json")
    man.checks["finite_moments"] = bool(np.all(np.isfinite(sup)))
    return {"E sup^2": agg["sup_norm_sq"].value, "E l2^2": agg["l2_norm_sq"].value}


def cmd_verify_tci(cfg, args, man):
    table = _table(cfg)
    grid, model, data = cfg.grid, cfg.model, cfg.model.lipschitz
    consts = _constants(cfg, table)
    keep = cfg.replicas <= EXACT_CAP
    sample = run_coupling(model, table, cfg.drift, cfg.replicas, cfg.seed, keep_paths=keep,
                          threads=args.threads)
    kw = dict(n_boot=cfg.stats["n_boot"], level=cfg.stats["level"], sample=sample,
              constants=consts)
    if cfg.mode == "sup":
        rep = tci_experiment_sup(model, table, cfg.drift, consts["c_infinity"], cfg.replicas,
                                 cfg.seed, **kw)
        C = consts["c_infinity"]
    else:
        if consts["c_two_star"] is None:
            raise DomainError("the L2 experiment needs K_sigma > 0")
        rep = tci_experiment_l2(model, table, cfg.drift, consts["c_two_star"], cfg.replicas,
                                cfg.seed, **kw)
        C = consts["c_two_star"]
    d = rep.to_dict()
    checks = {"ratio_upper_ci_below_one": rep.verdict == "PASS",
              "gronwall_l2_chain": rep.gronwall["l2"]["ok"]}
    if cfg.mode == "sup":
        checks["gronwall_sup_chain"] = rep.gronwall["sup"]["ok"]
        # f(u) = u(T, D/2) is 1-Lipschitz in the sup norm; v has the untilted law
        prof = concentration_profile(sample.v_probe, C, n_boot=cfg.stats["n_boot"],
                                     seed=cfg.seed)
        d["concentration"] = prof
        checks["mgf_bound"] = prof["mgf_ok"]
        checks["tail_bound"] = prof["tail_ok"]
    if keep and cfg.replicas >= 2 and not cfg.drift.is_zero:
        metric = "sup" if cfg.mode == "sup" else "l2"
        A = SampleCloud(sample.u, metric, grid)
        B = SampleCloud(sample.v, metric, grid)
        exact = wasserstein2_exact(A, B)
        d["w2_exact_marginals"] = exact
        checks["w2_below_coupling"] = bool(exact.w2 <= rep.lhs.hi)
    write_json(cfg.out / "tci_report.json", d)
    write_csv(cfg.out / "tci_replicas.csv", ["replica", "x_norm2", "sup_diff", "l2_diff"],
              ([r, sample.x_norm2[r], sample.sup_diff[r], math.sqrt(sample.l2_diff2[r])]
               for r in range(cfg.replicas)))
    man.outputs.update(report="tci_report.json", replicas="tci_replicas.csv")
    man.checks.update(checks)
    return {"mode": cfg.mode, "ratio": rep.ratio.value, "ratio_hi": rep.ratio.hi,
            "verdict": rep.verdict}


def _read_cloud(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError:
        # header row
        return np.array([[float(v) for v in r] for r in rows[1:]])


def cmd_w2(cfg, args, man):
    pa = args.a or cfg.w2["a"]
    pb = args.b or cfg.w2["b"]
    if not pa or not pb:
        raise SpdelabError("w2 needs two point clouds (--a/--b or w2.a/w2.b in the config)")
    base = cfg.source.parent if cfg.source else Path(".")
    A = SampleCloud(_read_cloud(base / pa))
    B = SampleCloud(_read_cloud(base / pb))
    eps = cfg.w2["epsilon"]
    if eps is None and len(A) == len(B) and len(A) <= EXACT_CAP:
        res = wasserstein2_exact(A, B)
    else:
        if eps is None:
            eps = 1e-2 * float(np.median(cost_matrix(A, B)))
        res = wasserstein2_entropic(A, B, eps)
    write_json(cfg.out / "w2.json", res)
    print(json.dumps(_plain(res.to_dict()), sort_keys=True))
    man.outputs["w2"] = "w2.json"
    man.checks["w2_finite"] = bool(math.isfinite(res.w2))
    return {"w2": res.w2, "method": res.method}


def repr_case(case: str, W: np.ndarray, times: np.ndarray):
    """Martingale and closed-form integrand for a named test case."""
    W1, W2 = W[:, :, 0], W[:, :, 1]
    if case == "linear":
        M = W1
        X = np.zeros(W[:, :-1].shape)
        X[..., 0] = 1.0
    elif case == "quadratic":
        M = W1**2 - times
        X = np.zeros(W[:, :-1].shape)
        X[..., 0] = 2.0 * W1[:, :-1]
    elif case == "mixed":
        M = 1.5 * W1 - 0.5 * W2
        X = np.zeros(W[:, :-1].shape)
        X[..., 0], X[..., 1] = 1.5, -0.5
    else:
        raise SpdelabError(f"unknown case {case!r}")
    return M, X


def cmd_repr_check(cfg, args, man):
    r = dict(cfg.repr)
    if args.case:
        r["case"] = args.case
    grid = make_grid(cfg.grid.T, cfg.grid.D, r["nt"], r["nx"])
    inc = np.concatenate([c for c in map_chunks(
        lambda reps: sample_noise_batch(grid, cfg.seed, reps), cfg.replicas, DEFAULT_CHUNK,
        args.threads)])
    W = basis_motions(inc, grid)
    M, X_true = repr_case(r["case"], W, grid.times)
    proj = project_martingale(M, W, degree=r["degree"])
    coef_err = float(np.max(np.abs(np.mean(proj.X - X_true, axis=0))))
    rms_err = float(np.sqrt(np.mean((proj.X - X_true) ** 2)))
    M_hat = reconstruct(proj.X, W, M0=M[:, 0])
    M_closed = reconstruct(X_true, W, M0=M[:, 0])
    iso = isometry_check(M_hat, proj.X, grid, n_boot=cfg.stats["n_boot"], seed=cfg.seed)
    mtest = martingale_test(M_hat, W[:, :, :2])
    res = {
        "case": r["case"], "replicas": cfg.replicas, "nt": grid.nt, "nx": grid.nx,
        "coefficient_error_max_mean": coef_err, "coefficient_error_rms": rms_err,
        "reconstruction_error_fitted": float(np.max(np.abs(M_hat - M))),
        "reconstruction_error_closed_form_ms": float(np.mean(np.max((M_closed - M) ** 2,
                                                                    axis=1))),
        "isometry": iso, "martingale_test": mtest,
    }
    if r["case"] == "quadratic":
        slopes = np.array([w[0, 1] for w in proj.weights[1:]])
        res["slope_mean"] = float(slopes.mean())
        ok_coef = abs(slopes.mean() - 2.0) <= 0.1
    else:
        ok_coef = coef_err < 1e-2
    write_json(cfg.out / "repr_check.json", res)
    print(json.dumps(_plain({k: res[k] for k in ("case", "coefficient_error_max_mean",
                                                   "reconstruction_error_fitted")}),
                     sort_keys=True))
    man.outputs["repr"] = "repr_check.json"
    man.checks.update(coefficients=bool(ok_coef), isometry=iso["ok"],
                      martingale=mtest["ok"])
    return {"case": r["case"], "coef_err": coef_err}


HANDLERS = {"kernel": cmd_kernel, "constants": cmd_constants, "simulate": cmd_simulate,
            "verify-tci": cmd_verify_tci, "w2": cmd_w2, "repr-check": cmd_repr_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdelab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--replicas", type=int, help="override the replica count")
    p.add_argument("--out", type=Path, help="override the output directory")
    p.add_argument("--mode", choices=("sup", "l2"), help="verify-tci norm")
    p.add_argument("--case", choices=("linear", "quadratic", "mixed"), help="repr-check martingale")
    p.add_argument("--a", help="first point cloud CSV (w2)")
    p.add_argument("--b", help="second point cloud CSV (w2)")
    p.add_argument("--threads", type=int, help="worker threads (default SPDELAB_THREADS)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, replicas=args.replicas,
                                                      out=args.out, mode=args.mode)
    except SpdelabError as exc:
        print(f"spdelab: config error: {exc}", file=sys.stderr)
        return 2
    cfg.out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(args.command, cfg.digest(), cfg.seed, cfg.replicas, started=_now())
    summary = {}
    try:
        summary = HANDLERS[args.command](cfg, args, man)
    except SpdelabError as exc:
        man.partial = True
        man.error = f"{type(exc).__name__}: {exc}"
        print(f"spdelab {args.command}: {man.error}", file=sys.stderr)
    man.finished = _now()
    write_json(cfg.out / "manifest.json", man.to_dict())

    width = max([len(k) for k in list(summary) + list(man.checks)] + [8])
    for k, v in summary.items():
        print(f"{k:<{width}}  {v}")
    for k, ok in man.checks.items():
        print(f"{k:<{width}}  {'pass' if ok else 'FAIL'}")
    if man.partial:
        return 2
    return 0 if man.passed else 1


if __name__ == "__main__":
    sys.exit(main())
