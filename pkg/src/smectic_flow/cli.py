"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 energy violation under ``--strict-energy``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .experiments import (
    EnergyViolation,
    ExperimentConfig,
    RunResult,
    chevron_metrics,
    mirror_symmetry,
    run_accuracy,
    simulate,
)
from .fields import PhysParams
from .io import (
    ConfigError,
    RunManifest,
    atomic_write,
    config_to_dict,
    export_csv,
    format_config,
    parse_config,
    read_energy_log,
    recheck_energy_log,
    solver_summary,
    write_energy_log,
    write_manifest,
    write_snapshot,
)
from .linalg import SolverError
from .potential import hessian_bound, min_stabilizer

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_ENERGY = 0, 1, 2, 3

log = logging.getLogger("smectic_flow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--dt", type=float)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--t-final", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--snapshot-every", type=int, help="extra snapshot every N steps")
    p.add_argument("--strict-energy", action="store_true", default=None,
                   help="treat energy growth as fatal (exit 3)")
    p.add_argument("--allow-unstable", action="store_true", default=None,
                   help="accept a stabilizer below lambda*L/2")
    p.add_argument("--csv", action="store_true", help="also export every snapshot as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smectic", description="Smectic-A liquid crystal flow simulator")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("run", "run a custom configuration"),
                       ("chevron", "magnetic chevron without flow"),
                       ("shear", "chevron under shear flow")]:
        _add_run_flags(sub.add_parser(name, help=text))
    acc = sub.add_parser("accuracy", help="temporal convergence study")
    _add_run_flags(acc)
    acc.add_argument("--dt-list", type=str, default="8e-3,4e-3,2e-3,1e-3,5e-4")
    acc.add_argument("--dt-benchmark", type=float, default=1e-4)
    chk = sub.add_parser("check-energy", help="re-verify an energy log")
    chk.add_argument("log", type=Path)
    chk.add_argument("--tol", type=float, default=1e-8)
    sub.add_parser("info", help="print default parameters and the stability bound")
    return parser


def _flags(args) -> dict:
    return {
        "dt": args.dt, "nx": args.nx, "ny": args.ny, "t_final": args.t_final, "seed": args.seed,
        "snapshot_every": args.snapshot_every, "strict_energy": args.strict_energy,
        "allow_unstable": args.allow_unstable,
        "out_dir": str(args.out) if args.out is not None else None,
    }


def _snapshot_name(t: float) -> str:
    return f"snapshot_t{t:.4f}.smaf"


def write_run_outputs(result: RunResult, out: Path, start: float, csv: bool = False,
                      metrics: dict | None = None, status: str = "ok") -> list[str]:
    files = [write_energy_log(result.energies, out / "energy.csv")]
    for t, st in sorted(result.snapshots.items()):
        files.append(write_snapshot(st, out / "snapshots" / _snapshot_name(t)))
        if csv:
            files.extend(export_csv(st, out / "csv", prefix=f"t{t:.4f}_"))
    files.append(atomic_write(out / "config.cfg", format_config(result.config)))
    manifest = RunManifest(
        config=config_to_dict(result.config), version=__version__, seed=result.config.seed,
        start_time=start, end_time=time.time(), steps=result.final.step,
        solver_stats=solver_summary(result.stats), violations=result.violations, status=status,
        files=sorted(str(Path(f).relative_to(out)) for f in files) + ["manifest.json"],
        warnings=result.warnings[:100], metrics=metrics or {},
    )
    write_manifest(manifest, out / "manifest.json")
    return manifest.files


def _run(cfg: ExperimentConfig, out: Path | None, csv: bool) -> int:
    start = time.time()
    try:
        result = simulate(cfg)
    except EnergyViolation as exc:
        print(f"energy violation: {exc}", file=sys.stderr)
        return EXIT_ENERGY
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    metrics = {f"{t:g}": vars(chevron_metrics(s)) for t, s in sorted(result.snapshots.items())}
    if cfg.initial != "accuracy":
        _, Y = cfg.grid.mesh()
        metrics["mirror_symmetry_final"] = mirror_symmetry(result.final.phi.values - Y)
    if out is not None:
        write_run_outputs(result, out, start, csv, metrics)
    last = result.energies[-1]
    print(f"steps {result.final.step}  t = {result.final.time:.6g}  E = {last.e_total:.10g}  "
          f"violations {result.violations}  max div {result.max_div_rel:.2e}")
    for t, m in sorted(result.snapshots.items()):
        cm = chevron_metrics(m)
        print(f"  t = {t:<6g} max|d1| = {cm.max_abs_d1:.4e}  undulations = {cm.undulations}  "
              f"max|phi - y| = {cm.max_layer_deviation:.4e}")
    return EXIT_OK


def _accuracy(cfg: ExperimentConfig, args) -> int:
    try:
        dts = [float(s) for s in args.dt_list.split(",") if s.strip()]
    except ValueError:
        print(f"bad --dt-list {args.dt_list!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        table = run_accuracy(cfg, dts, args.dt_benchmark)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    names = list(table.errors)
    lines = ["dt," + ",".join(names)]
    for dt, errs in table.rows():
        lines.append(f"{dt:.17g}," + ",".join(f"{errs[v]:.17g}" for v in names))
    lines.append("slope," + ",".join(f"{table.slopes[v]:.6f}" for v in names))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out is not None:
        atomic_write(args.out / "convergence.csv", text)
    return EXIT_OK


def _check_energy(args) -> int:
    try:
        reports = read_energy_log(args.log)
    except (OSError, ValueError) as exc:
        print(f"cannot read {args.log}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    bad = recheck_energy_log(reports, args.tol)
    print(f"{len(reports)} rows, {len(bad)} violations" + (f" at steps {bad[:20]}" if bad else ""))
    return EXIT_ENERGY if bad else EXIT_OK


def _info() -> int:
    phys = PhysParams()
    L = hessian_bound(phys.eps)
    print(f"smectic_flow {__version__}")
    for k, v in vars(phys).items():
        print(f"  {k} = {v}")
    print(f"  L (Hessian bound of the truncated penalty) = {L:g}")
    print(f"  lambda*L/2 (minimal stabilizer S) = {min_stabilizer(phys.lam, L):g}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "info":
        return _info()
    if args.command == "check-energy":
        return _check_energy(args)
    preset = {"run": None, "chevron": "chevron", "shear": "shear", "accuracy": "accuracy"}[args.command]
    try:
        cfg = parse_config(args.config, _flags(args), preset=preset)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "accuracy":
        return _accuracy(cfg, args)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    return _run(cfg, out, args.csv)


if __name__ == "__main__":
    sys.exit(main())
