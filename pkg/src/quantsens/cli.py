"""Command-line front end.

Subcommands: simulate, sens, casestudy, oracle, validate. Exit codes: 0 on
success, 1 when an oracle gate fails, 2 on configuration errors, 3 on
numerical errors. All commands honour --seed and are bit-reproducible; the
--threads flag (or QUANTSENS_THREADS) caps worker parallelism and never
changes results because all sampling is chunk-seeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import estimators as est
from . import model as md
from . import oracle as orc
from . import serde
from .stress import StressError, validate_stress

EXIT_OK = 0
EXIT_ORACLE_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("QUANTSENS_THREADS", "1"))


def _parse_stresses(raw) -> list:
    out = []
    for i, s in enumerate(raw.get("stresses", [])):
        try:
            out.append(serde.parse_stress(s))
        except (ValueError, KeyError) as exc:
            raise cfg.ConfigError(str(exc), f"$.stresses[{i}]")
    return out


def _rm_from_name(name: str, alpha: float):
    if name == "var":
        return est.VaR(alpha)
    if name == "es":
        return est.ES(alpha)
    return est.Mean()


def _load(args):
    raw = cfg.load_config(args.config)
    model = cfg.parse_model(raw)
    n = args.n if getattr(args, "n", None) else raw.get("n_scenarios", 100_000)
    seed = args.seed if getattr(args, "seed", None) is not None else raw.get("seed", 0)
    return raw, model, int(n), int(seed)


def cmd_validate(args) -> int:
    raw = cfg.load_config(args.config)
    model = cfg.parse_model(raw)
    if isinstance(model, md.LossModelSpec):
        for i, s in enumerate(raw.get("stresses", [])):
            try:
                validate_stress(serde.parse_stress(s))
            except StressError as exc:
                raise cfg.ConfigError(str(exc), f"$.stresses[{i}]")
    print(f"config ok: schema_version={raw['schema_version']}, model={raw['model']['type']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    raw, model, n, seed = _load(args)
    out = Path(args.out or raw.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(model, md.DiscreteModelSpec):
        dsamp = md.simulate_discrete(model, n, seed)
        path = out / "discrete_scenarios.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("W,T\n")
            for w, t in zip(dsamp.W, dsamp.T):
                fh.write(f"{w:.17g},{t:.17g}\n")
        print(f"wrote {path} ({n} scenarios, seed {seed})")
        return EXIT_OK
    scen = md.simulate(model, n, seed)
    csv_path = out / "scenarios.csv"
    sidecar = out / "scenarios.json"
    md.export_scenarios(scen, csv_path, sidecar)
    print(f"wrote {csv_path} and {sidecar} ({n} scenarios, seed {seed})")
    return EXIT_OK


def cmd_sens(args) -> int:
    raw, model, n, seed = _load(args)
    alpha = args.alpha if args.alpha is not None else raw.get("alpha", 0.975)
    delta = args.delta if args.delta is not None else raw.get("delta", 0.005)
    band = est.BandSpec(delta)
    bs = raw.get("bootstrap", {})
    n_rep = bs.get("n_replicates", 0)
    boot = (
        est.BootstrapSpec(n_rep, bs.get("fraction", 0.9), bs.get("seed", seed))
        if n_rep >= 2
        else None
    )
    rm_names = args.rm.split(",") if args.rm else raw.get("risk_measures", ["es"])
    stresses = _parse_stresses(raw)
    if not stresses:
        raise cfg.ConfigError("sens needs at least one stress", "$.stresses")
    out = Path(args.out or raw.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    if args.mode == "discrete":
        if not isinstance(model, md.DiscreteModelSpec):
            raise cfg.ConfigError("--mode discrete needs a discrete_model", "$.model")
        dsamp = md.simulate_discrete(model, n, seed)
        for s_raw, stress in zip(raw["stresses"], stresses):
            for rm_name in rm_names:
                if rm_name == "mean":
                    raise cfg.ConfigError("discrete mode supports var and es", "$.risk_measures")
                rm = _rm_from_name(rm_name, alpha)
                e = est.discrete_sens(dsamp, stress, rm, band, boot)
                rows.append(_sens_row("W", rm_name, alpha, s_raw["type"], e))
    else:
        if not isinstance(model, md.LossModelSpec):
            raise cfg.ConfigError(f"--mode {args.mode} needs a loss_model", "$.model")
        targets = [md.parse_target(t) for t in raw.get("targets", [])]
        if not targets:
            raise cfg.ConfigError("sens needs at least one target", "$.targets")
        scen = md.simulate(model, n, seed)
        n_cond = raw.get("n_conditional")
        for label, target in zip(raw["targets"], targets):
            for s_raw, stress in zip(raw["stresses"], stresses):
                for rm_name in rm_names:
                    rm = _rm_from_name(rm_name, alpha)
                    if args.mode == "marginal":
                        e = est.marginal_sens(
                            scen, model, target, stress, rm, band, boot,
                            n_conditional=n_cond,
                        )
                    else:
                        if rm_name == "mean":
                            raise cfg.ConfigError(
                                "cascade mode supports var and es", "$.risk_measures"
                            )
                        e = est.cascade_sens(
                            scen, model, target, stress, rm, band, boot,
                            n_conditional=n_cond,
                        )
                    rows.append(_sens_row(label, rm_name, alpha, s_raw["type"], e))

    path = out / f"sensitivities_{args.mode}.csv"
    est.write_estimates_csv(rows, path)
    print(f"wrote {path} ({len(rows)} estimates)")
    return EXIT_OK


def _sens_row(target, rm_name, alpha, stress_type, e: est.SensitivityEstimate) -> dict:
    return {
        "target": target,
        "rm": rm_name,
        "alpha": alpha if rm_name != "mean" else "",
        "stress_type": stress_type,
        "value": e.value,
        "stderr": e.stderr,
        "ci_low": e.ci_low,
        "ci_high": e.ci_high,
        "n_effective": e.n_effective,
        "decomposition": e.decomposition,
    }


def cmd_casestudy(args) -> int:
    from . import casestudy as cs

    out = Path(args.out or "casestudy_out")
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "compound":
        n = args.n or (100_000 if args.quick else 1_000_000)
        base = cs.compound_model()
        f = est.compound_freq_sens(base, 0.95, n, args.seed or 7)
        s = est.compound_sev_sens(base, 0.95, n, args.seed or 7)
        summary = {
            "scaled_freq": f.diagnostics["scaled"],
            "scaled_sev": s.diagnostics["scaled"],
            "es": f.diagnostics["es"],
            "alpha": 0.95,
            "n": n,
        }
        grids = {
            "freq_mean": (2.0, 3.5, 5.0, 7.5, 10.0),
            "overdispersion": (1.5, 2.0, 2.5, 3.5, 5.0),
            "skewness": (0.5, 0.7, 0.894, 1.2, 1.6),
            "alpha": (0.9, 0.925, 0.95, 0.975, 0.99),
        }
        sweep_n = max(20_000, n // 10) if args.quick else n
        for sweep, grid in grids.items():
            cs.run_compound_study(sweep, grid, n=sweep_n, seed=args.seed or 7, out_dir=out)
        with open(out / "compound_summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        print(f"compound summary: scaled_freq={summary['scaled_freq']:.4f} "
              f"scaled_sev={summary['scaled_sev']:.4f}")
        return EXIT_OK

    res = cs.run_reinsurance_study(
        alphas=tuple(float(a) for a in (args.alphas or "0.975").split(",")),
        delta=args.delta or 0.005,
        n=args.n or 1_000_000,
        seed=args.seed if args.seed is not None else 2024,
        out_dir=out,
        quick=args.quick,
    )
    print(f"reinsurance summary: P(L>0)={res['summary']['p_loss_positive']:.5f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    raw, model, n, seed = _load(args)
    alpha = args.alpha if args.alpha is not None else raw.get("alpha", 0.975)
    delta = args.delta if args.delta is not None else raw.get("delta", 0.005)
    band = est.BandSpec(delta)
    rm = _rm_from_name(args.rm or "es", alpha)
    eps_grid = (
        tuple(float(e) for e in args.eps_grid.split(","))
        if args.eps_grid
        else orc.DEFAULT_EPS_GRID
    )
    stresses = _parse_stresses(raw)
    if not stresses:
        raise cfg.ConfigError("oracle needs a stress", "$.stresses")
    stress = stresses[0]
    out = Path(args.out or raw.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)

    if isinstance(model, md.DiscreteModelSpec):
        dsamp = md.simulate_discrete(model, n, seed)
        e = est.discrete_sens(dsamp, stress, rm, band)
        exact = orc.brute_force_discrete(model, stress, rm)
        se = e.stderr if e.stderr > 0 else max(1e-3 * abs(exact), 1e-9)
        ok = abs(e.value - exact) <= 3 * max(se, 1e-12) + 5e-2 * abs(exact)
        report = {
            "estimate": e.value,
            "exact": exact,
            "stderr": e.stderr,
            "agrees": bool(ok),
        }
        with open(out / "oracle_report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        print(f"estimate {e.value:.6g} vs exact {exact:.6g} -> "
              f"{'agree' if ok else 'DISAGREE'}")
        return EXIT_OK if ok else EXIT_ORACLE_FAIL

    targets = [md.parse_target(t) for t in raw.get("targets", [])]
    if not targets:
        raise cfg.ConfigError("oracle needs a target", "$.targets")
    target = targets[0]
    scen = md.simulate(model, n, seed)
    if args.mode == "cascade":
        e = est.cascade_sens(scen, model, target, stress, rm, band)
    else:
        e = est.marginal_sens(scen, model, target, stress, rm, band)
    rep = orc.fd_sensitivity(
        model, target, stress, rm, mode=args.mode, eps_grid=eps_grid, scen=scen, band=band
    )
    ok, info = rep.agrees_with(e.value, e.stderr)
    with open(out / "oracle_report.json", "w", encoding="utf-8") as fh:
        fh.write(rep.to_json())
    print(
        f"estimator {e.value:.6g} vs fd {rep.richardson:.6g} "
        f"(gap {info['gap']:.3g}, tol {info['tol']:.3g}) -> "
        f"{'agree' if ok else 'DISAGREE'}"
    )
    return EXIT_OK if ok else EXIT_ORACLE_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="quantsens",
        description="Monte-Carlo sensitivities of VaR/ES for discontinuous loss models",
    )
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads (default: QUANTSENS_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, n_default=None):
        sp.add_argument("config", help="path to a JSON run config")
        sp.add_argument("--n", type=int, default=n_default, help="override n_scenarios")
        sp.add_argument("--seed", type=int, default=None, help="override seed")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("validate", help="lint a config file")
    sp.add_argument("config")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("simulate", help="simulate scenarios to CSV (+ JSON sidecar)")
    common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("sens", help="estimate sensitivities")
    common(sp)
    sp.add_argument("--mode", choices=("marginal", "cascade", "discrete"), default="marginal")
    sp.add_argument("--rm", default=None, help="comma list of var,es,mean")
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.set_defaults(fn=cmd_sens)

    sp = sub.add_parser("casestudy", help="run a packaged study")
    sp.add_argument("which", choices=("reinsurance", "compound"))
    sp.add_argument("--quick", action="store_true", help="small smoke run")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--alphas", default=None, help="comma list for reinsurance")
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_casestudy)

    sp = sub.add_parser("oracle", help="finite-difference / exact oracle check")
    common(sp, n_default=None)
    sp.add_argument("--mode", choices=("marginal", "cascade"), default="marginal")
    sp.add_argument("--rm", default="es")
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--eps-grid", default=None, help="comma list, default 0.02,0.01,0.005")
    sp.set_defaults(fn=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
