"""Command-line front end.

    nmvsde <subcommand> [--config FILE.toml] [--seed S] [--threads T] [--out DIR] [--set key=value ...]

Subcommands: fbm-check, simulate, convergence, chaos, validate-model.
Parameters come from the subcommand's defaults, then the TOML file (top-level
keys and a table named after the subcommand), then flags. Exit codes: 0 pass,
1 usage or I/O error, 2 statistical or study failure, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import tomli

from . import experiments, fbm, fbm_stats, schemas
from .measure import EmpiricalMeasure, theta_moment
from .model import MODEL_NAMES, get_model, validate_assumptions
from .solver import SimConfig, make_drivers, sample_initial_segments, simulate

log = logging.getLogger("nmvsde")

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_DIVERGED = 0, 1, 2, 3

COMMON = {"seed": 0, "threads": 0, "out": "results"}
# where and how fast a run happens; left out of the echoed config so outputs do not depend on them
RUNTIME_KEYS = ("threads", "out")

DEFAULTS = {
    "fbm-check": {
        "hurst": 0.8,
        "n_paths": 10_000,
        "n_times": 16,
        "n_steps": 64,
        "method": "circulant",
        "dump": False,
        "input": "",
    },
    "simulate": {
        "model": "example61",
        "hurst": 0.8,
        "n_particles": 256,
        "horizon": 1.0,
        "delay": 1.0,
        "n_steps": 64,
        "scheme": "euler_maruyama",
        "lag_steps": 1,
        "allow_small_hurst": False,
        "method": "circulant",
    },
    "convergence": {
        "model": "example61",
        "hurst": 0.8,
        "n_particles": 256,
        "n_mc": 500,
        "fine_steps": 2048,
        "factors": [8, 16, 32, 64, 128],
        "p": 2.0,
        "horizon": 1.0,
        "delay": 1.0,
        "block_size": experiments.DEFAULT_BLOCK,
        "method": "circulant",
        "reference_slope": 1.0,
        "synthetic_slope": None,
    },
    "chaos": {
        "model": "example61",
        "hurst": 0.8,
        "particle_counts": [16, 32, 64, 128, 256],
        "reference_count": 2048,
        "n_steps": 64,
        "horizon": 1.0,
        "delay": 1.0,
        "p": 2.0,
        "n_mc": 200,
        "tracked": 32,
        "block_size": experiments.DEFAULT_BLOCK,
        "method": "circulant",
        "reference_slope": -0.5,
        "synthetic_slope": None,
    },
    "validate-model": {
        "model": "example61",
        "n_probes": 500,
        "radius": 3.0,
    },
}

# flag name -> config key, per subcommand
FLAGS = {
    "fbm-check": ["hurst", "n_paths", "method"],
    "simulate": ["model", "hurst", "n_particles", "n_steps", "scheme"],
    "convergence": ["model", "hurst", "n_particles", "n_mc", "fine_steps", "p", "synthetic_slope"],
    "chaos": ["model", "hurst", "reference_count", "n_steps", "n_mc", "p", "synthetic_slope"],
    "validate-model": ["model", "n_probes", "radius"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nmvsde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML file with parameters")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads (0 = one per CPU)")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any parameter")
        for key in keys:
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=str, default=None)
        if name == "fbm-check":
            p.add_argument("--dump", dest="dump", action="store_const", const="true", default=None)
            p.add_argument("--input", dest="input", type=str, default=None)
    return parser


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _coerce(key: str, value, default):
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, str):
            value = _parse_value(value.lower())
        if not isinstance(value, bool):
            raise UsageError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, str):
            value = _parse_value(value)
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise UsageError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float) or key == "synthetic_slope":
        if isinstance(value, str):
            value = _parse_value(value)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise UsageError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = _parse_value(value)
        if not isinstance(value, list):
            raise UsageError(f"{key} must be a list, got {value!r}")
        return value
    return str(value)


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the TOML file and flags (flags win) into one flat dict."""
    command = args.command
    defaults = {**COMMON, **DEFAULTS[command]}
    merged = dict(defaults)
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise UsageError(f"invalid TOML in {args.config}: {exc}") from exc
        section = data.get(command, {})
        top = {k: v for k, v in data.items() if not isinstance(v, dict)}
        for source in (top, section):
            for key, value in source.items():
                if key not in defaults:
                    if source is top:
                        continue  # top-level keys may target other subcommands
                    raise UsageError(f"unknown parameter {key!r} in [{command}]")
                merged[key] = value
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in list(FLAGS[command]) + ["seed", "threads", "out", "dump", "input"]:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for key, value in overrides.items():
        if key not in defaults:
            raise UsageError(f"unknown parameter {key!r} for {command}")
        merged[key] = value
    return {key: _coerce(key, merged[key], defaults[key]) for key in defaults}


def config_echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in RUNTIME_KEYS}


def _threads(cfg: dict) -> int:
    return cfg["threads"] if cfg["threads"] > 0 else (os.cpu_count() or 1)


def _prepare_out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()
    return out


def _emit(command: str, document: dict, path: Path) -> None:
    schemas.validate(command, experiments._jsonable(document))
    experiments.write_json(document, path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fbm_check(cfg: dict) -> int:
    H = fbm.check_hurst(cfg["hurst"])
    out = _prepare_out(cfg)
    seed, n, method = cfg["seed"], cfg["n_paths"], cfg["method"]
    checks = []
    dump_path = None
    if cfg["input"]:
        paths, file_seed = fbm.read_paths(cfg["input"])
        idx = np.linspace(0, paths.grid.n_steps, min(cfg["n_times"], paths.grid.n_steps) + 1).astype(int)[1:]
        t = paths.grid.times[idx]
        expected = fbm.covariance(t[:, None], t[None, :], paths.hurst)
        est, _, z = fbm_stats.covariance_zscores(paths.values[:, idx], expected)
        max_z = float(np.abs(z).max())
        checks.append(
            fbm_stats.CheckResult(
                name=f"covariance[file,H={paths.hurst}]", passed=max_z <= 4.0, max_z=max_z, threshold=4.0,
                max_abs_deviation=float(np.abs(est - expected).max()),
                details={"file": str(cfg["input"]), "n_paths": paths.n_paths, "seed": file_seed},
            )
        )
    else:
        checks.append(fbm_stats.check_covariance(H, n, seed, method, cfg["n_times"]))
        checks.append(fbm_stats.check_variance_law(H, n, seed, method, cfg["n_times"]))
        checks.append(fbm_stats.check_stationarity(H, cfg["n_steps"], n, seed, method))
        checks.append(fbm_stats.check_brownian_increments(cfg["n_steps"], n, seed, method))
        if cfg["dump"]:
            grid = fbm.TimeGrid(1.0 / cfg["n_times"], cfg["n_times"], cfg["n_times"])
            dump_path = out / "paths.fbmp"
            fbm.write_paths(dump_path, fbm.sample_fbm(H, grid, n, seed, method), seed)
    passed = all(c.passed for c in checks)
    for c in checks:
        log.info("%-40s max z = %6.3f  %s", c.name, c.max_z, "ok" if c.passed else "FAIL")
    doc = {
        "command": "fbm-check",
        "config": config_echo(cfg),
        "status": "pass" if passed else "fail",
        "passed": passed,
        "checks": [c.to_dict() for c in checks],
        "max_deviation": max(c.max_abs_deviation for c in checks),
        "dump": dump_path.name if dump_path else None,
    }
    _emit("fbm-check", doc, out / "fbm_check.json")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_simulate(cfg: dict) -> int:
    model = get_model(cfg["model"], delay=cfg["delay"])
    grid = fbm.TimeGrid.from_horizon(cfg["horizon"], cfg["delay"], cfg["n_steps"])
    config = SimConfig(
        cfg["n_particles"], grid, cfg["hurst"], cfg["seed"], cfg["scheme"], cfg["lag_steps"],
        cfg["allow_small_hurst"], cfg["method"],
    )
    out = _prepare_out(cfg)
    drivers = make_drivers(config, model.dimension)
    initial = sample_initial_segments(model, grid, config.n_particles, config.seed)
    result = simulate(model, config, drivers, initial=initial)
    result.write_csv(out / "trajectory.csv")

    terminal = None
    exact = None
    if not result.diverged:
        final = result.at(grid.n_steps)
        terminal = {
            "time": grid.horizon,
            "mean": final.mean(axis=0),
            "second_moment": float(np.mean(np.sum(final**2, axis=-1))),
            "theta_moment": theta_moment(EmpiricalMeasure(final), model.theta),
            "min": final.min(axis=0),
            "max": final.max(axis=0),
        }
        if model.name == "additive":
            expected = initial[-1][None] + np.moveaxis(drivers.paths(), -1, 0)
            dev = float(np.abs(result.trajectory - expected).max())
            tol = 1e-12 * grid.n_steps
            exact = {"max_deviation": dev, "tolerance": tol, "passed": dev <= tol}
    doc = {
        "command": "simulate",
        "config": config_echo(cfg),
        "status": "diverged" if result.diverged else ("fail" if exact and not exact["passed"] else "pass"),
        "model": model.name,
        "diverged": result.diverged,
        "divergence": result.divergence().to_dict() if result.diverged else None,
        "terminal": terminal,
        "exact_check": exact,
        "warnings": list(result.warnings),
    }
    _emit("simulate", doc, out / "summary.json")
    if result.diverged:
        return EXIT_DIVERGED
    return EXIT_FAIL if exact and not exact["passed"] else EXIT_OK


def _run_study(command: str, cfg: dict, build) -> int:
    out = _prepare_out(cfg)
    try:
        report = build()
    except experiments.StudyError as exc:
        log.error("%s", exc)
        doc = {"command": command, "config": config_echo(cfg), "status": "fail", "report": None, "error": str(exc)}
        experiments.write_json(doc, out / f"{command}.json")
        return EXIT_FAIL
    doc = {"command": command, "config": config_echo(cfg), "status": "pass", "report": report.to_dict()}
    _emit(command, doc, out / f"{command}.json")
    experiments.write_table(report, out / f"{command}_levels.csv")
    if not report.exact:
        from .plotting import plot_report

        plot_report(report, out / f"{command}.svg", cfg["reference_slope"], quantity="mse")
        log.info("fitted slope %.4f +- %.4f (r^2 = %.4f)", report.slope, report.slope_stderr, report.r_squared)
    return EXIT_OK


def cmd_convergence(cfg: dict) -> int:
    def build():
        fine_step = cfg["horizon"] / cfg["fine_steps"]
        if cfg["synthetic_slope"] is not None:
            deltas = [fine_step * f for f in cfg["factors"]]
            return experiments.synthetic_convergence_report(deltas, cfg["synthetic_slope"], p=cfg["p"])
        model = get_model(cfg["model"], delay=cfg["delay"])
        return experiments.strong_convergence_study(
            model, cfg["hurst"], cfg["factors"], cfg["fine_steps"], cfg["n_particles"], cfg["p"], cfg["n_mc"],
            cfg["seed"], horizon=cfg["horizon"], threads=_threads(cfg), block_size=cfg["block_size"],
            fgn_method=cfg["method"],
        )

    return _run_study("convergence", cfg, build)


def cmd_chaos(cfg: dict) -> int:
    def build():
        if cfg["synthetic_slope"] is not None:
            return experiments.synthetic_chaos_report(cfg["particle_counts"], cfg["synthetic_slope"], p=cfg["p"])
        model = get_model(cfg["model"], delay=cfg["delay"])
        grid = fbm.TimeGrid.from_horizon(cfg["horizon"], cfg["delay"], cfg["n_steps"])
        return experiments.chaos_study(
            model, cfg["hurst"], cfg["particle_counts"], cfg["reference_count"], grid, cfg["p"], cfg["n_mc"],
            cfg["seed"], tracked=cfg["tracked"], threads=_threads(cfg), block_size=cfg["block_size"],
            fgn_method=cfg["method"],
        )

    return _run_study("chaos", cfg, build)


def cmd_validate_model(cfg: dict) -> int:
    model = get_model(cfg["model"])
    out = _prepare_out(cfg)
    report = validate_assumptions(model, cfg["n_probes"], cfg["radius"], cfg["seed"])
    doc = {
        "command": "validate-model",
        "config": config_echo(cfg),
        "status": "pass" if report.all_ok else "fail",
        "model": model.name,
        "report": report.to_dict(),
    }
    _emit("validate-model", doc, out / "validate_model.json")
    return EXIT_OK if report.all_ok else EXIT_FAIL


COMMANDS = {
    "fbm-check": cmd_fbm_check,
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "chaos": cmd_chaos,
    "validate-model": cmd_validate_model,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"nmvsde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        if "model" in cfg and cfg["model"] not in MODEL_NAMES:
            raise UsageError(f"unknown model {cfg['model']!r}; available: {', '.join(MODEL_NAMES)}")
        start = time.perf_counter()
        code = COMMANDS[args.command](cfg)
        log.info("%s finished in %.1f s with exit code %d", args.command, time.perf_counter() - start, code)
        return code
    except (UsageError, ValueError) as exc:
        print(f"nmvsde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"nmvsde: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())
