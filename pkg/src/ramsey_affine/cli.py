"""Batch command line: validate models, build curves, classify long rates, run verification simulations.

Every command writes its outputs and a ``<command>.manifest.json`` into the
output directory (``--out``, else ``$RAMSEY_AFFINE_OUT``, else ``./out``).
The manifest embeds the merged effective configuration, so
``ramsey-affine rerun --manifest PATH`` reproduces the outputs byte for byte.

Exit codes: 0 ok, 2 configuration error, 3 Riccati blowup, 4 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from ._io import sha256_file, write_csv, write_json
from .affine_model import InvalidSpecError, canonical_json, spec_from_dict, spec_to_dict, validate_spec
from .market import (
    backward_constraint_error,
    orthogonal_identity_residual,
    simulate_market,
    solve_backward_power_constraint,
)
from .mc_oracle import SimConfig, estimate, martingale_drift_test, mc_bond_price, mc_power_constraint_check
from .mixture import mixture_from_config, mixture_yield_curve, per_theta_curves, weight_y
from .riccati import RiccatiBlowupError
from .yield_curves import InconclusiveError, bond_riccati, curve_from_solution, long_rate_classify, long_rate_path

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY = 0, 2, 3, 4
OUT_ENV = "RAMSEY_AFFINE_OUT"
DEFAULT_TENORS = "1,2,3,5,7,10,20,30"
DEFAULT_YS = "0.25,0.5,1,2,4"
SIM_KEYS = ("n_paths", "step", "horizon", "seed", "antithetic", "substeps", "record_every")


class ConfigError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _load_json(path: str | None, what: str) -> dict:
    if path is None:
        raise ConfigError(f"--{what} is required")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} file {path} must hold a JSON object")
    return doc


def _model_dict(path: str | None) -> dict:
    doc = _load_json(path, "config")
    if isinstance(doc.get("model"), dict):
        doc = doc["model"]
    try:
        spec = spec_from_dict(doc)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc
    d = spec_to_dict(spec)
    if spec.name:
        d["name"] = spec.name
    return d


def _sim_dict(args, defaults: dict) -> dict:
    sim = dict(defaults)
    if getattr(args, "sim", None):
        doc = _load_json(args.sim, "sim")
        unknown = sorted(set(doc) - set(SIM_KEYS))
        if unknown:
            raise ConfigError(f"sim config has unknown fields: {', '.join(unknown)}")
        sim.update(doc)
    for flag, key in (("seed", "seed"), ("paths", "n_paths")):
        v = getattr(args, flag, None)
        if v is not None:
            sim[key] = v
    return sim


def _make_sim(d: dict) -> SimConfig:
    try:
        return SimConfig(**{k: d[k] for k in SIM_KEYS if k in d})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from exc


# -- command bodies: (effective config, out dir) -> (output files, verdicts, exit code) -------------


def _run_validate(cfg: dict, out: Path):
    report = validate_spec(spec_from_dict(cfg["model"]))
    print(report)
    write_json(out / "validation.json", report.to_dict())
    return ["validation.json"], {"spec_valid": "pass" if report.ok else "fail"}, EXIT_OK if report.ok else EXIT_CONFIG


def _spec(cfg: dict):
    spec = spec_from_dict(cfg["model"])
    if not spec.report.ok:
        print(spec.report, file=sys.stderr)
        raise InvalidSpecError(spec.report)
    return spec


def _run_curve(cfg: dict, out: Path):
    spec = _spec(cfg)
    p = cfg["params"]
    tenors = p["tenors"]
    curve = curve_from_solution(spec, bond_riccati(spec, max(tenors), p["step"]), tenors)
    write_csv(out / "curve.csv", ("tenor", "bond_price", "zero_rate", "vol_norm"), curve.rows())
    files, verdicts = ["curve.csv"], {}
    for row in curve.rows():
        print(f"T={row[0]:g}  B={row[1]:.10f}  R={row[2]:.8f}  |Gamma|={row[3]:.6g}")
    if p.get("verify"):
        sim = _make_sim(cfg["sim"])
        ests = mc_bond_price(spec, sim, tenors)
        recs, ok = [], True
        for T, e, price in zip(tenors, ests, curve.bond_prices):
            good = abs(e.mean - price) < 3 * e.std_error or (e.std_error == 0 and abs(e.mean - price) <= 1e-12)
            ok &= bool(good)
            recs.append(e.to_record(f"bond_price_T{T:g}", n_paths=sim.n_paths, seed=sim.seed,
                                    verdict="pass" if good else "fail", riccati=float(price)))
            print(f"MC T={T:g}  {e.mean:.8f} +- {e.std_error:.2e}  riccati {price:.8f}  {'pass' if good else 'FAIL'}")
        write_json(out / "mc_check.json", recs)
        files.append("mc_check.json")
        verdicts["mc_vs_riccati"] = "pass" if ok else "fail"
    return files, verdicts, EXIT_VERIFY if "fail" in verdicts.values() else EXIT_OK


def _run_longrate(cfg: dict, out: Path):
    spec = _spec(cfg)
    p = cfg["params"]
    try:
        res = long_rate_classify(spec, T_max=p["t_max"], step=p["step"], tol=p["tol"])
        rec = res.to_dict()
    except InconclusiveError as exc:
        rec = {"classification": "Inconclusive", "diagnostics": exc.diagnostics}
    print(f"long rate: {rec['classification']}")
    files, verdicts = ["longrate.json"], {}
    if p.get("verify") and rec["classification"] == "NonDecreasing":
        sim = _make_sim(cfg["sim"])
        bundle = simulate_market(spec, sim, wealth=False, store_noise=False)
        l_path = long_rate_path(spec, bundle)
        worst = float(np.min(np.diff(l_path, axis=1)))
        ok = worst >= -p["tol"]
        rec["path_check"] = {"min_increment": worst, "n_paths": sim.n_paths, "seed": sim.seed}
        verdicts["long_rate_non_decreasing"] = "pass" if ok else "fail"
        write_csv(out / "long_rate_paths.csv", ("t", "mean_l", "min_l", "max_l"),
                  zip(bundle.grid, l_path.mean(axis=0), l_path.min(axis=0), l_path.max(axis=0)))
        files.append("long_rate_paths.csv")
        print(f"min increment of l_t along paths: {worst:.3e}  {'pass' if ok else 'FAIL'}")
    write_json(out / "longrate.json", rec)
    code = EXIT_VERIFY if "fail" in verdicts.values() else EXIT_OK
    return files, verdicts, code


def _run_backward_power(cfg: dict, out: Path):
    spec = _spec(cfg)
    p = cfg["params"]
    sol = solve_backward_power_constraint(spec, p["theta"], p["horizon"], p["step"])
    n = spec.dim
    write_csv(out / "backward_power_exponents.csv", ["t"] + [f"A_{i + 1}" for i in range(n)] + ["B"],
              ([t, *a, b] for t, a, b in zip(sol.grid, sol.A, sol.B)))
    orth = orthogonal_identity_residual(spec, sol)
    path_sim = SimConfig(p["pathwise_paths"], p["step"], p["horizon"], cfg["sim"]["seed"])
    bundle = simulate_market(spec, path_sim, wealth=False)
    err = backward_constraint_error(spec, sol, bundle)
    rec: dict[str, Any] = {"theta": p["theta"], "horizon": p["horizon"], "step": p["step"],
                           "A0": sol.A[0], "B0": float(sol.B[0]), "orthogonal_identity_residual": orth,
                           "pathwise_constraint_error": err, "pathwise_paths": p["pathwise_paths"]}
    verdicts = {"orthogonal_identity": "pass" if orth <= 1e-8 else "fail"}
    print(f"orthogonal identity residual {orth:.3e}; pathwise constraint error {err:.3e}")
    if p.get("verify"):
        chk = mc_power_constraint_check(spec, _make_sim(cfg["sim"]), p["theta"], p["horizon"], riccati_step=p["step"])
        rec["mc_check"] = chk.estimate.to_record("power_constraint", n_paths=cfg["sim"]["n_paths"],
                                                 seed=cfg["sim"]["seed"], verdict=chk.verdict, riccati=chk.target,
                                                 heavy_tail=chk.heavy_tail)
        verdicts["mc_vs_riccati"] = chk.verdict
        print(f"MC {chk.estimate.mean:.8f} +- {chk.estimate.std_error:.2e} vs riccati {chk.target:.8f}  {chk.verdict}")
    write_json(out / "backward_power.json", rec)
    code = EXIT_VERIFY if p.get("verify") and "fail" in verdicts.values() else EXIT_OK
    return ["backward_power_exponents.csv", "backward_power.json"], verdicts, code


def _run_mixture_curve(cfg: dict, out: Path):
    spec = _spec(cfg)
    p = cfg["params"]
    try:
        mix = mixture_from_config(spec, cfg["mixture"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid mixture config: {exc}") from exc
    curves = per_theta_curves(mix, p["tenors"], p["step"])
    rows, diag = [], []
    for y in p["ys"]:
        c = mixture_yield_curve(mix, y, p["tenors"], p["step"], curves)
        rows.extend((y, *r) for r in c.rows())
    y0 = p["ys"][0]
    wy = mix.quadrature_weights * weight_y(mix, mix.theta_nodes, y0)
    pi = wy / np.sum(wy)
    for k, theta in enumerate(mix.theta_nodes):
        for j, T in enumerate(p["tenors"]):
            diag.append((float(theta), float(pi[k]), float(T), float(curves[k].bond_prices[j])))
    write_csv(out / "mixture_curve.csv", ("y", "tenor", "bond_price", "zero_rate", "vol_norm"), rows)
    write_csv(out / "per_theta.csv", ("theta", f"weight_at_y={y0:g}", "tenor", "B_theta"), diag)
    print(f"{len(p['ys'])} curves x {len(p['tenors'])} tenors over {mix.n_nodes} theta nodes")
    return ["mixture_curve.csv", "per_theta.csv"], {}, EXIT_OK


def _run_simulate(cfg: dict, out: Path):
    spec = _spec(cfg)
    sim = _make_sim(cfg["sim"])
    b = simulate_market(spec, sim, store_noise=False)
    X, Y = b.wealth, b.state_price
    M = np.exp(b.integrated_consumption + b.log_wealth + b.log_state_price)
    M2 = X * Y + b.integrated_yc
    tests = {"capitalized_wealth_state_price": martingale_drift_test(M, b.grid, antithetic=sim.antithetic),
             "wealth_state_price_plus_consumption": martingale_drift_test(M2, b.grid, antithetic=sim.antithetic)}
    rows = []
    for k, t in enumerate(b.grid):
        em = estimate(M[:, k], sim.antithetic)
        rows.append((t, float(np.mean(Y[:, k])), float(np.mean(X[:, k])), float(np.mean(b.zeta[:, k] * X[:, k])),
                     em.mean, em.std_error))
    write_csv(out / "simulate_summary.csv", ("t", "mean_Y", "mean_X", "mean_C", "mean_M", "se_M"), rows)
    recs = [dt.drift.to_record(name, n_paths=sim.n_paths, seed=sim.seed, verdict=dt.verdict)
            for name, dt in tests.items()]
    write_json(out / "martingale.json", {"tests": recs, "eigenvariance_clips": b.clip_count})
    for r in recs:
        print(f"{r['name']}: drift {r['mean']:.3e} +- {r['std_error']:.2e}  {r['verdict']}")
    verdicts = {name: dt.verdict for name, dt in tests.items()}
    code = EXIT_VERIFY if cfg["params"].get("verify") and "fail" in verdicts.values() else EXIT_OK
    return ["simulate_summary.csv", "martingale.json"], verdicts, code


RUNNERS: dict[str, Callable[[dict, Path], tuple]] = {
    "validate": _run_validate,
    "curve": _run_curve,
    "longrate": _run_longrate,
    "backward-power": _run_backward_power,
    "mixture-curve": _run_mixture_curve,
    "simulate": _run_simulate,
}


# -- effective configs from flags -------------------------------------------------------------


def _effective(args) -> dict:
    cmd = args.command
    cfg: dict[str, Any] = {"command": cmd, "model": _model_dict(args.config), "params": {}}
    p = cfg["params"]
    if cmd == "validate":
        return cfg
    p["verify"] = bool(args.verify)
    if cmd == "curve":
        p["tenors"] = _floats(args.tenors)
        p["step"] = args.step if args.step is not None else 1e-3
        if p["verify"]:
            cfg["sim"] = _sim_dict(args, {"n_paths": 200_000, "step": 0.02, "horizon": max(p["tenors"]), "seed": 0,
                                          "antithetic": True})
    elif cmd == "longrate":
        p.update(t_max=args.t_max, tol=args.tol, step=args.step if args.step is not None else 1e-2)
        if p["verify"]:
            cfg["sim"] = _sim_dict(args, {"n_paths": 256, "step": 1e-2, "horizon": 5.0, "seed": 0})
    elif cmd == "backward-power":
        p.update(theta=args.theta, horizon=args.horizon, step=args.step if args.step is not None else 1e-3,
                 pathwise_paths=args.pathwise_paths)
        cfg["sim"] = _sim_dict(args, {"n_paths": 100_000, "step": 1e-2, "horizon": args.horizon, "seed": 0})
    elif cmd == "mixture-curve":
        p.update(tenors=_floats(args.tenors), ys=_floats(args.y), step=args.step if args.step is not None else 1e-3)
        cfg["mixture"] = _load_json(args.mixture, "mixture") if args.mixture else {}
    elif cmd == "simulate":
        cfg["sim"] = _sim_dict(args, {"n_paths": 10_000, "step": 1e-2, "horizon": 5.0, "seed": 0, "record_every": 10})
        if args.step is not None:
            cfg["sim"]["step"] = args.step
    return cfg


def execute(cfg: dict, out: Path, argv: list[str]) -> int:
    """Run one command from its effective config and write outputs plus manifest into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        files, verdicts, code = RUNNERS[cfg["command"]](cfg, out)
    except (InvalidSpecError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RiccatiBlowupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    manifest = {
        "command": cfg["command"],
        "args": argv,
        "effective_config": cfg,
        "config_hash": _hash(cfg),
        "solver_step": cfg["params"].get("step"),
        "seed": cfg.get("sim", {}).get("seed"),
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "outputs": [{"file": f, "sha256": sha256_file(out / f)} for f in files],
        "verdicts": verdicts,
        "exit_code": code,
    }
    write_json(out / f"{cfg['command']}.manifest.json", manifest)
    return code


def _hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _rerun(args) -> int:
    man = _load_json(args.manifest, "manifest")
    try:
        cfg = man["effective_config"]
        expected = {o["file"]: o["sha256"] for o in man["outputs"]}
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"manifest {args.manifest} is missing {exc}") from exc
    if _hash(cfg) != man.get("config_hash"):
        raise ConfigError("manifest config hash does not match its embedded config")
    out = Path(args.out) if args.out else Path(args.manifest).resolve().parent / "rerun"
    code = execute(cfg, out, list(man.get("args", [])))
    new = _load_json(str(out / f"{cfg['command']}.manifest.json"), "manifest")
    got = {o["file"]: o["sha256"] for o in new["outputs"]}
    same = got == expected
    for f in sorted(set(expected) | set(got)):
        status = "identical" if expected.get(f) == got.get(f) else "DIFFERS"
        print(f"{f}: {status}")
    if not same:
        return EXIT_VERIFY
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ramsey-affine", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, verify=True):
        p.add_argument("--config", help="model JSON file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
        p.add_argument("--step", type=float, help="solver / simulation step")
        p.add_argument("--paths", type=int, help="Monte Carlo paths")
        if verify:
            p.add_argument("--verify", action="store_true", help="run the Monte Carlo cross-check")
        return p

    common(sub.add_parser("validate", help="check a model config"), verify=False)
    p = common(sub.add_parser("curve", help="yield curve from the Riccati exponents"))
    p.add_argument("--tenors", default=DEFAULT_TENORS)
    p.add_argument("--sim", help="simulation settings JSON for --verify")
    p = common(sub.add_parser("longrate", help="classify the long-rate asymptote"))
    p.add_argument("--t-max", type=float, default=200.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--sim", help="simulation settings JSON for --verify")
    p = common(sub.add_parser("backward-power", help="backward power-utility terminal constraint"))
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--pathwise-paths", type=int, default=256)
    p.add_argument("--sim", help="simulation settings JSON for --verify")
    p = common(sub.add_parser("mixture-curve", help="y-dependent yield curves of a risk-aversion mixture"))
    p.add_argument("--mixture", help="mixture JSON file (defaults: 16 nodes on (0.05, 0.95), exponential weights)")
    p.add_argument("--y", default=DEFAULT_YS, help="comma-separated state-price initial values")
    p.add_argument("--tenors", default=DEFAULT_TENORS)
    p = common(sub.add_parser("simulate", help="simulate wealth and state price, test martingale drifts"))
    p.add_argument("--sim", help="simulation settings JSON")
    p = sub.add_parser("rerun", help="re-execute a command from its manifest and compare outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            return _rerun(args)
        cfg = _effective(args)
        if "sim" in cfg:
            _make_sim(cfg["sim"])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    return execute(cfg, out, argv)


if __name__ == "__main__":
    sys.exit(main())
