"""Command-line entry point: simulate, estimate, diagnose, check, run.

Every failure exits with the ``code`` of the raised error class; argparse
usage errors exit with 2.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import warnings
from pathlib import Path

from . import __version__, _backend
from . import config as cfgmod
from .beliefs import SignalFamily, mlr_check, signal_monotonicity_check
from .diagnostics import (
    bin_contribution_characterization,
    bin_weight_characterization,
    panel_estimand,
    population_weights,
    verify_weight_characterization,
)
from .errors import InfoTSLSError, PreconditionError
from .estimators import CORRECTIONS, active_tsls, conditional_tsls, elasticity_tsls, passive_tsls
from .experiment import condition_report, simulate
from .tables import ingest, read_panel, write_json, write_panel, write_plot_data, write_records


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fit_spec(records, spec: dict):
    """Run one configured specification on ``records``."""
    kind = spec["spec"]
    controls = spec.get("controls") or None
    if kind == "conditional":
        return conditional_tsls(records, CORRECTIONS[spec["correction"]], records.groups, controls)
    kw = {"controls": controls}
    if kind == "passive":
        kw["gap_normalization"] = spec.get("gap_normalization", "none")
    if spec.get("elasticity"):
        return elasticity_tsls(records, spec["elasticity"], kind, spec.get("interaction", "sign"), **kw)
    if kind == "passive":
        return passive_tsls(records, spec.get("interaction", "sign"), **kw)
    return active_tsls(records, **kw)


def diagnose_panel(panel, interaction: str = "sign", bins: int = 10, fit=None,
                   gap_normalization: str = "none", controls=None):
    """Weight report, closed-form check and bin reports for one interaction."""
    records = panel.records()
    kind = "active" if panel.design == "active" else interaction
    weights = population_weights(panel, kind, None, gap_normalization)
    check = verify_weight_characterization(panel, kind, None, gap_normalization)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        bw = bin_weight_characterization(records, kind, bins=bins, fit=fit, controls=controls,
                                         gap_normalization=gap_normalization)
        bc = bin_contribution_characterization(records, kind, bins=bins, fit=fit, controls=controls,
                                               gap_normalization=gap_normalization)
    report = {
        "interaction": kind,
        "gap_normalization": gap_normalization,
        "weights": weights.to_dict(),
        "panel_estimand": panel_estimand(panel, kind, None, gap_normalization),
        "characterization": check.to_dict(),
        "bins": {"weight": bw.to_dict(), "contribution": bc.to_dict()},
    }
    return report, (bw, bc)


def _simulate_from_config(path):
    cfg, raw = cfgmod.load(path)
    agents, design, feature = cfgmod.build(cfg)
    records, panel = simulate(agents, design, feature)
    return cfg, raw, records, panel


def _manifest(cfg, raw, outdir: Path, files) -> dict:
    return {
        "config_sha256": cfgmod.config_hash(raw),
        "seed": int(cfg["seed"]),
        "version": __version__,
        "backend": _backend.BACKEND,
        "schema_version": 1,
        "files": {f: _sha256(outdir / f) for f in sorted(files)},
    }


def cmd_simulate(args) -> int:
    cfg, raw, records, panel = _simulate_from_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    write_panel(panel, out / "panel.csv")
    write_json(_manifest(cfg, raw, out, ["records.csv", "panel.csv"]), out / "manifest.json")
    print(f"wrote {records.n} records to {out}")
    return 0


def cmd_estimate(args) -> int:
    records = ingest(args.data, args.schema)
    spec = {"spec": args.spec, "interaction": args.interaction, "gap_normalization": args.gap_normalization,
            "elasticity": args.elasticity, "correction": args.correction,
            "controls": args.controls.split(",") if args.controls else None}
    if args.spec == "conditional" and not args.correction:
        raise PreconditionError("--correction is required for the conditional spec")
    fit = fit_spec(records, spec)
    write_json(fit.to_dict(), args.out)
    print(f"gamma = {fit.gamma:.6g} (se {fit.gamma_se:.3g}, n {fit.n})")
    return 0


def cmd_diagnose(args) -> int:
    panel = read_panel(args.panel)
    report, bin_reports = diagnose_panel(panel, args.interaction, args.bins,
                                         gap_normalization=args.gap_normalization)
    write_json(report, args.out)
    if args.emit_plot_data:
        write_plot_data(bin_reports, args.emit_plot_data)
    w = report["weights"]
    print(f"estimand = {report['panel_estimand']:.6g}, negative share = {w['negative_share']:.4g}")
    return 0


def check_report(cfg, panel, agents, feature, max_agents: int = 25) -> dict:
    """Stability or neutrality plus MLR and monotonicity checks for grid agents."""
    cond = condition_report(agents, panel, feature)
    key = "stability" if panel.design == "passive" else "neutrality"
    out = {key: {"holds": cond.all, "weak_holds": cond.all_weak, "violations": int((~cond.holds).sum()),
                 "max_deviation": float(cond.deviation.max())}}
    families = {}
    for a in agents:
        for g in panel.groups:
            ch = a.channel(g)
            if isinstance(ch, SignalFamily):
                families.setdefault(id(ch), ch)
    out["mlr"] = [{"holds": r.holds, "violations": r.n_violations}
                  for r in (mlr_check(f) for f in families.values())]
    mono = []
    for a in agents[:max_agents]:
        for g in panel.groups[1:] if panel.design == "passive" else panel.groups:
            ch = a.channel(g)
            if isinstance(ch, SignalFamily):
                res = signal_monotonicity_check(a.prior, a.rule(g), ch, feature)
                mono.append({"id": int(a.id), "group": g, "holds": res.holds,
                             "worst_violation": res.worst_violation})
    out["signal_monotonicity"] = mono
    return out


def cmd_check(args) -> int:
    cfg, raw = cfgmod.load(args.config)
    agents, design, feature = cfgmod.build(cfg)
    _, panel = simulate(agents, design, feature)
    report = check_report(cfg, panel, agents, feature)
    if args.out:
        write_json(report, args.out)
    for key, val in report.items():
        if isinstance(val, dict):
            print(f"{key}: holds={val['holds']} weak={val['weak_holds']} violations={val['violations']}")
        else:
            print(f"{key}: {sum(v['holds'] for v in val)}/{len(val)} pass")
    return 0


def run_pipeline(config_path, outdir) -> dict:
    """Simulate, fit every configured spec, diagnose, and write all artifacts."""
    cfg, raw, records, panel = _simulate_from_config(config_path)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = ["records.csv", "panel.csv"]
    write_records(records, out / "records.csv")
    write_panel(panel, out / "panel.csv")
    bins = cfg.get("diagnostics", {}).get("bins", 10)
    for spec in cfg.get("specs", []):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            fit = fit_spec(records, spec)
        name = spec["name"]
        write_json(fit.to_dict(), out / f"fit-{name}.json")
        files.append(f"fit-{name}.json")
        if spec["spec"] != "conditional" and not spec.get("elasticity"):
            report, _ = diagnose_panel(panel, spec.get("interaction", "sign"), bins, fit,
                                       spec.get("gap_normalization", "none"), spec.get("controls") or None)
            report["gamma_hat"] = fit.gamma
            report["gamma_se"] = fit.gamma_se
            write_json(report, out / f"report-{name}.json")
            files.append(f"report-{name}.json")
    manifest = _manifest(cfg, raw, out, files)
    write_json(manifest, out / "manifest.json")
    return manifest


def cmd_run(args) -> int:
    manifest = run_pipeline(args.config, args.out)
    print(f"wrote {len(manifest['files'])} artifacts to {args.out}")
    return 0


def _resolve_config(value: str) -> str:
    """Accept a path or the name of a bundled config."""
    p = Path(value)
    if p.exists() or p.suffix == ".json":
        return str(p)
    return str(cfgmod.bundled_config_path(value))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infotsls", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate records and the counterfactual panel")
    p.add_argument("--config", required=True, type=_resolve_config)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit a TSLS specification to a records CSV")
    p.add_argument("--spec", choices=["passive", "active", "conditional"], required=True)
    p.add_argument("--interaction", default="sign",
                   choices=["sign", "gap", "one-gap", "one-prior", "one-signal-prior"])
    p.add_argument("--gap-normalization", choices=["none", "percent"], default="none")
    p.add_argument("--elasticity", type=int, default=None, metavar="N",
                   help="use log(Y^N) and log(phi^N)")
    p.add_argument("--correction", choices=sorted(CORRECTIONS), default=None)
    p.add_argument("--controls", default=None, help="comma-separated covariates, e.g. x1,x2")
    p.add_argument("--schema", choices=["simulated", "external"], default="simulated")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", help="weights and bin characterizations from a panel CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--interaction", default="sign",
                   choices=["sign", "gap", "one-gap", "one-prior", "one-signal-prior"])
    p.add_argument("--gap-normalization", choices=["none", "percent"], default="none")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-plot-data", default=None, metavar="CSV")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("check", help="stability/neutrality, MLR and monotonicity checks")
    p.add_argument("--config", required=True, type=_resolve_config)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="full pipeline from a config")
    p.add_argument("--config", required=True, type=_resolve_config)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InfoTSLSError as exc:
        print(f"error[{exc.name}] ({exc.module}): {exc}", file=sys.stderr)
        return exc.code
    if getattr(args, "interaction", None):
        args.interaction = args.interaction.replace("-", "_")
    try:
        return args.func(args)
    except InfoTSLSError as exc:
        print(f"error[{exc.name}] ({exc.module}): {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error[io] (cli): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
