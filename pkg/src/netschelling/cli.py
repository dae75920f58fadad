"""Command line entry point: meanfield, abm, sweep, steady-state, check."""

from __future__ import annotations

import argparse
import io
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import meanfield as mf
from .abm import run_abm, run_replica
from .config import (
    ConfigError,
    Mode,
    SimConfig,
    SweepSpec,
    format_flat,
    parse_text,
    sweep_from_text,
)
from .core import DomainError, ParameterError
from .metrics import MetricSeries, compare_to_meanfield, fragmentation_time, slowdown_ratio

MEANFIELD_COLUMNS = ("t", "p", "q", "E_s", "E_d", "x", "sensitivity")
ABM_COLUMNS = ("replica", "t", "x_hat", "mean_degree", "n_similar", "n_dissimilar", "skipped", "rewired")
STEADY_COLUMNS = ("phi", "t_star", "q_star", "E_d", "ratio", "regime", "negative")


# -- output helpers -----------------------------------------------------------

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_atomic(path: Path, data: str | bytes) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def manifest_text(cfg: SimConfig, outputs: list[Path], out_dir: Path, extra: dict | None = None) -> str:
    """Flat config snapshot plus ``manifest.*`` keys; parse_text accepts it as a config."""
    pairs = dict(cfg.to_flat())
    pairs.update(extra or {})
    pairs["manifest.engine_version"] = __version__
    pairs["manifest.master_seed"] = str(cfg.seed)
    for r in range(cfg.replicas):
        pairs[f"manifest.replica_seed.{r}"] = str(cfg.replica_seed(r))
    for i, p in enumerate(outputs):
        pairs[f"manifest.output.{i}"] = str(Path(p).relative_to(out_dir))
    return format_flat(pairs)


def abm_rows(series: MetricSeries):
    for k in range(len(series)):
        yield (series.provenance, int(series.t[k]), float(series.x_hat[k]), float(series.mean_degree[k]),
               int(series.n_similar[k]), int(series.n_dissimilar[k]),
               int(series.skipped[k]), int(series.rewired[k]))


def meanfield_rows(traj: mf.MeanFieldTrajectory):
    for r in traj.rows():
        yield tuple(r[c] for c in MEANFIELD_COLUMNS)


def plot_modes(cfg: SimConfig, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in Mode:
        phi = cfg.phi if mode is Mode.BIAS else 0.0
        traj = mf.run_trajectory(cfg.with_(mode=mode, phi=phi))
        label = mode.value if mode is not Mode.BIAS else f"bias (phi={phi:g})"
        ax.plot(traj.t, traj.x, label=label)
    ax.axhline(cfg.eps, color="grey", lw=0.8, ls="--", label=f"eps={cfg.eps:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("dissimilar edge fraction x")
    ax.legend()
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return write_atomic(path, buf.getvalue())


# -- config loading -----------------------------------------------------------

def load(args) -> tuple[SimConfig, str]:
    text = ""
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        text = path.read_text()
    cfg, _ = parse_text(text, args.config or "<defaults>")
    return apply_overrides(cfg, args), text


def apply_overrides(cfg: SimConfig, args) -> SimConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        changes["replicas"] = args.replicas
    if getattr(args, "eps", None) is not None:
        changes["eps"] = args.eps
    return cfg.with_(**changes) if changes else cfg


# -- subcommands --------------------------------------------------------------

def cmd_meanfield(args) -> int:
    cfg, _ = load(args)
    out = Path(args.out)
    traj = mf.run_trajectory(cfg)
    files = [write_atomic(out / "meanfield.csv", csv_text(MEANFIELD_COLUMNS, meanfield_rows(traj)))]
    diag = mf.convergence_diagnostics(traj, cfg.eps)
    files.append(write_atomic(out / "diagnostics.txt", "".join(l + "\n" for l in diag.lines())))
    if args.plot:
        files.append(plot_modes(cfg, out / "trajectory.svg"))
    files.append(out / "manifest.txt")
    write_atomic(out / "manifest.txt", manifest_text(cfg, files, out))
    for line in diag.lines():
        print(line)
    return 0


def cmd_abm(args) -> int:
    cfg, _ = load(args)
    out = Path(args.out)
    results = run_abm(cfg, workers=args.workers)
    rows = [row for res in results for row in abm_rows(res.series)]
    files = [write_atomic(out / "abm.csv", csv_text(ABM_COLUMNS, rows))]
    if args.compare:
        report = compare_to_meanfield([r.series for r in results], mf.run_trajectory(cfg))
        files.append(write_atomic(out / "comparison.txt", report.summary() + "\n"))
        print(report.summary())
    if args.plot:
        files.append(plot_modes(cfg, out / "trajectory.svg"))
    files.append(out / "manifest.txt")
    write_atomic(out / "manifest.txt", manifest_text(cfg, files, out))
    for res in results:
        s = res.series
        ft = fragmentation_time(s, cfg.eps)
        print(f"replica {s.provenance}: terminal x_hat={s.x_hat[-1]:.6f} "
              f"frag_time={'not reached' if ft is None else ft}")
    return 0


def _sweep_job(job):
    engine, cfg, r = job
    return run_replica(cfg, r).series


def _grid_value_text(v) -> str:
    return v.value if isinstance(v, Mode) else fmt(v)


def run_sweep(spec: SweepSpec, out: Path, workers: int = 1) -> list[Path]:
    cells = spec.cells()
    names = list(spec.grid)
    files: list[Path] = []
    summary = []
    if spec.engine == "abm":
        jobs = [("abm", cfg, r) for _, cfg in cells for r in range(cfg.replicas)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_job, jobs, chunksize=1))
        else:
            results = [_sweep_job(j) for j in jobs]
    else:
        results = []
    pos = 0
    for cell_id, (params, cfg) in enumerate(cells):
        traj = mf.run_trajectory(cfg)
        if spec.engine == "abm":
            series = results[pos:pos + cfg.replicas]
            pos += cfg.replicas
            for s in series:
                files.append(write_atomic(
                    out / "cells" / f"cell_{cell_id:04d}" / f"replica_{s.provenance:03d}.csv",
                    csv_text(ABM_COLUMNS, abm_rows(s)),
                ))
            mean_x = np.mean([s.x_hat for s in series], axis=0)
        else:
            files.append(write_atomic(
                out / "cells" / f"cell_{cell_id:04d}" / "meanfield.csv",
                csv_text(MEANFIELD_COLUMNS, meanfield_rows(traj)),
            ))
            mean_x = traj.x
        base = mf.run_trajectory(cfg.with_(mode=Mode.BASE, phi=0.0))
        slow = slowdown_ratio(base, traj, cfg.eps)
        summary.append((cell_id, *(params[k] for k in names), fragmentation_time(mean_x, cfg.eps),
                        float(mean_x[-1]), slow.ratio))
    columns = ("cell_id", *names, "frag_time", "terminal_x", "slowdown_ratio")
    rows = [tuple(_grid_value_text(v) if isinstance(v, Mode) else v for v in row) for row in summary]
    files.insert(0, write_atomic(out / "summary.csv", csv_text(columns, rows)))
    return files


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("--config", "sweep needs a config file with sweep.* grid keys")
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    spec = sweep_from_text(path.read_text(), str(path))
    base = apply_overrides(spec.base, args)
    spec = SweepSpec(base, spec.grid, base.replicas, spec.max_cells, spec.engine)
    out = Path(args.out)
    files = run_sweep(spec, out, args.workers)
    grid_pairs = {f"sweep.{k}": ", ".join(_grid_value_text(v) for v in vals) for k, vals in spec.grid.items()}
    grid_pairs["sweep.max_cells"] = str(spec.max_cells)
    grid_pairs["sweep.engine"] = spec.engine
    write_atomic(out / "manifest.txt", manifest_text(base, files + [out / "manifest.txt"], out, grid_pairs))
    print(f"{spec.size} cells, {base.replicas} replicas per cell -> {out / 'summary.csv'}")
    return 0


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_steady_state(args) -> int:
    rows = []
    for phi in args.phi:
        res = mf.steady_state_ed(mf.SteadyStateInput(phi, args.t_star, args.q_star))
        rows.append((phi, args.t_star, args.q_star, res.E_d, res.ratio, res.regime, res.negative))
        print(f"phi*={phi:g}: E_d={res.E_d:.10g} regime={res.regime}"
              f"{' (negative)' if res.negative else ''} ratio={res.ratio:.6g}")
    if args.out:
        write_atomic(Path(args.out) / "steady_state.csv", csv_text(STEADY_COLUMNS, rows))
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    cfg, _ = load(args)
    results = run_checks(cfg, args.only)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} invariants hold")
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netschelling", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--replicas", type=int, help="replica count (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--eps", type=float, help="fragmentation threshold (overrides the config)")
        p.add_argument("--plot", action="store_true", help="also write an SVG of x(t) per mode")

    p = sub.add_parser("meanfield", help="iterate the expected-value recurrence")
    common(p)
    p.set_defaults(func=cmd_meanfield)

    p = sub.add_parser("abm", help="run stochastic network replicas")
    common(p)
    p.add_argument("--compare", action="store_true", help="compare the ensemble to the mean field")
    p.set_defaults(func=cmd_abm)

    p = sub.add_parser("sweep", help="Cartesian parameter sweep from sweep.* keys")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("steady-state", help="evaluate the steady-state dissimilar stock over phi")
    p.add_argument("--phi", type=_float_list, default=[0.0, 0.5, 1.0], help="comma-separated phi* values")
    p.add_argument("--t-star", type=float, default=10.0)
    p.add_argument("--q-star", type=float, default=0.2)
    p.add_argument("--out", help="directory for steady_state.csv")
    p.set_defaults(func=cmd_steady_state)

    p = sub.add_parser("check", help="run the invariant suite")
    common(p)
    p.add_argument("--only", action="append", help="run checks whose name contains this text")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config {exc}", file=sys.stderr)
        return 2
    except (ParameterError, DomainError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
