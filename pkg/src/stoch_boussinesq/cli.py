"""Command line entry point: ``bsq run|validate|sweep <config.json>``.

Exit codes: 0 success, 1 malformed config, 2 assumption check failed,
3 more than 10% of paths failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import spectral as sp
from .config import ConfigError, ExperimentConfig, load_config
from .ensemble import (
    EnsembleFailure,
    EnsembleSummary,
    build_model,
    markov_bound,
    model_report,
    reduce_results,
    run_paths,
    with_param,
)

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_PATHS = 0, 1, 2, 3


def gate_messages(cfg: ExperimentConfig, rep) -> list[str]:
    """Reasons the assumption gate blocks this experiment (empty when it passes)."""
    out = []
    if not rep.pass_general:
        out.extend(m for m in rep.messages if "divergence" in m or "super-parabolic" in m)
    if build_model(cfg).transport.active and not rep.pass_local:
        out.extend(m for m in rep.messages if "local threshold" in m)
    if cfg.experiment == "global_decay" and not rep.pass_global:
        out.extend(m for m in rep.messages if "global smallness" in m)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_report(cfg: ExperimentConfig, rep) -> Path:
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "assumption_report.json"
    _write_json(path, rep.to_dict())
    return path


def summary_table(summary: EnsembleSummary) -> str:
    bound, surv = markov_bound(summary, summary.delta0) if summary.n_paths > summary.n_failed else (math.nan, math.nan)
    rows = [
        ("experiment", summary.experiment),
        ("paths (failed)", f"{summary.n_paths} ({summary.n_failed})"),
        ("mean sup e^{at}||U||_p^p", f"{summary.mean_sup_weighted:.6e} +/- {summary.se_sup_weighted:.2e}"),
        ("mean weighted dissipation", f"{summary.mean_integral_weighted_dissipation:.6e} +/- {summary.se_integral_weighted_dissipation:.2e}"),
        ("mean ||U0||_p^p", f"{summary.mean_lp0_p:.6e}"),
        ("C_fit", f"{summary.C_fit:.6g}"),
        ("crossing fraction", f"{summary.crossing_fraction:.4f}"),
        ("survival fraction", f"{surv:.4f}"),
        ("Markov lower bound", f"{bound:.4f}"),
    ]
    rows += [(k, str(v)) for k, v in sorted(summary.extras.items())]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def execute(cfg: ExperimentConfig, out=None) -> int:
    """Run one validated config and write every output file."""
    out = out or sys.stdout
    rep = model_report(cfg)
    report_path = _write_report(cfg, rep)
    blocked = gate_messages(cfg, rep)
    if blocked:
        for m in blocked:
            print(f"assumption check failed: {m}", file=sys.stderr)
        return EXIT_ASSUMPTION

    run_dir = cfg.run_dir()
    ens = cfg.ensemble()
    results = run_paths(ens, range(ens.n_paths))
    summary = reduce_results(ens, results)
    files = [report_path.name]

    _write_json(run_dir / "config.json", cfg.to_dict())
    files.append("config.json")
    if cfg.write_traces:
        tdir = run_dir / "traces"
        tdir.mkdir(exist_ok=True)
        for r in results:
            name = f"traces/path_{r.path:04d}.ndjson"
            with open(run_dir / name, "w") as fh:
                for row in r.trace:
                    fh.write(json.dumps(row) + "\n")
            files.append(name)
    if cfg.checkpoints:
        cdir = run_dir / "checkpoints"
        cdir.mkdir(exist_ok=True)
        grid = build_model(ens).grid
        for r in results:
            if r.final_state is not None:
                name = f"checkpoints/path_{r.path:04d}.bsq"
                sp.write_checkpoint(run_dir / name, grid, r.final_state, r.final_time, r.seed)
                files.append(name)
    with open(run_dir / "paths.csv", "w", newline="") as fh:
        cols = ["path", "seed", "status", "lp0_p", "sup_weighted", "integral_weighted_dissipation", "sup_norm", "crossed", "error"]
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([getattr(r, c) for c in cols])
    files.append("paths.csv")
    (run_dir / "summary.json").write_text(summary.to_json() + "\n")
    table = summary_table(summary)
    (run_dir / "summary.txt").write_text(table)
    files += ["summary.json", "summary.txt"]
    files.append("manifest.json")
    _write_json(run_dir / "manifest.json", {"run_dir": str(run_dir), "files": sorted(files)})

    print(table, end="", file=out)
    print(f"outputs: {run_dir}", file=out)
    if summary.failure_fraction > 0.10:
        print(f"{summary.n_failed} of {summary.n_paths} paths failed (limit 10%)", file=sys.stderr)
        for r in results:
            if r.status != "ok":
                print(f"  path {r.path}: {r.error}", file=sys.stderr)
        return EXIT_PATHS
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg)


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return EXIT_CONFIG
    rep = model_report(cfg)
    path = _write_report(cfg, rep)
    print(json.dumps(rep.to_dict(), sort_keys=True, indent=2))
    print(f"report: {path}")
    blocked = gate_messages(cfg, rep)
    for m in blocked:
        print(f"assumption check failed: {m}", file=sys.stderr)
    return EXIT_ASSUMPTION if blocked else EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args) -> int:
    try:
        base = load_config(args.config)
        values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values: empty list")
        configs = []
        for v in values:
            try:
                configs.append(with_param(base, args.param, v))
            except KeyError:
                raise ConfigError(f"--param: unknown field '{args.param}'") from None
            except ValueError as err:
                raise ConfigError(f"--param {args.param}={v!r}: {err}") from None
    except ConfigError as err:
        print(err, file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for v, cfg in zip(values, configs):
        print(f"== {args.param} = {v}")
        code = execute(cfg)
        row = {"value": v, "exit_code": code, "run_dir": str(cfg.run_dir())}
        summ = cfg.run_dir() / "summary.json"
        if code in (EXIT_OK, EXIT_PATHS) and summ.exists():
            s = json.loads(summ.read_text())
            for k in ("mean_sup_weighted", "se_sup_weighted", "crossing_fraction", "survival_fraction", "markov_bound", "C_fit", "failure_fraction"):
                row[k] = s[k]
        rows.append(row)
    out = Path(base.output_dir) / f"sweep_{args.param.replace('.', '_')}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = sorted({k for r in rows for k in r}, key=lambda k: (k != "value", k != "exit_code", k))
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    print(f"sweep table: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsq", description="Stochastic Boussinesq simulation and verification harness")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="check assumptions, run the ensemble, write reports")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="assumption checks only")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("sweep", help="run one config per value of a dotted parameter")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="dotted field, e.g. sigma.eps0")
    p.add_argument("--values", required=True, help="comma-separated JSON values")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
