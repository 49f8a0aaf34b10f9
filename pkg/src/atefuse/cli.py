"""Command-line entry point.

One JSON configuration file drives a run; flags only override scalar
fields.  Subcommands: ``estimate-static``, ``estimate-sequential``,
``simulate``, ``coverage``.  Exit codes: 2 for configuration problems,
3 for data problems, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, data, dgp, sequential, static, studies
from .nuisance import (FitError, NuisanceConfig, fit_nuisances,
                       fit_sequential_nuisances)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# Execution-only fields are excluded from the provenance hash so that runs
# differing only in worker count or output location stay byte-identical.
_NON_SCIENTIFIC_KEYS = ("out", "threads")


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"missing config file: {p}")
    try:
        with open(p) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def _config_hash(config: dict) -> str:
    scientific = {k: v for k, v in config.items() if k not in _NON_SCIENTIFIC_KEYS}
    canonical = json.dumps(scientific, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _provenance_lines(config: dict) -> list[str]:
    return [f"# config_sha256={_config_hash(config)}",
            f"# seed={config.get('seed', '')}",
            f"# atefuse_version={__version__}"]


def _write_report(path: Path, config: dict, header: str,
                  rows: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = _provenance_lines(config) + [header] + rows
    path.write_text("\n".join(lines) + "\n")


def _nuisance_config(block: dict) -> NuisanceConfig:
    block = dict(block or {})
    propensity = block.pop("propensity", {"kind": "known", "p1": 0.5})
    if propensity.get("kind") == "known":
        p1 = propensity.get("p1")
        if p1 is None:
            raise ConfigError("known propensity requires 'p1'")
    elif propensity.get("kind") == "fitted":
        p1 = None
    else:
        raise ConfigError(f"unknown propensity kind {propensity.get('kind')!r}")
    allowed = {"reward", "historical_reward", "density_ratio", "mu_h",
               "clip", "basis_degree", "ridge"}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown nuisance fields: {sorted(unknown)}")
    return NuisanceConfig(propensity_p1=p1, **block)


def _methods(config: dict, allowed: tuple) -> tuple:
    methods = tuple(config.get("methods", ("EDO", "NONPESSI", "PESSI")))
    for m in methods:
        if m not in allowed:
            raise ConfigError(f"unknown method {m!r}; expected one of {allowed}")
    return methods


def _run_estimate_static(config: dict, out_dir: Path) -> int:
    for key in ("experimental", "historical"):
        if key not in config:
            raise ConfigError(f"estimate-static config requires {key!r}")
    dataset = data.load_static(config["experimental"], config["historical"])
    ncfg = _nuisance_config(config.get("nuisance", {}))
    nuisance = fit_nuisances(dataset, ncfg)
    alpha = float(config.get("alpha", 0.05))
    split_seed = config.get("split_seed")
    rows = []
    for method in _methods(config, studies.STATIC_METHODS):
        if method == "SPE":
            report = baselines.spe_estimate(dataset, nuisance, alpha=alpha)
        elif method == "LASSO":
            report = baselines.lasso_estimate(
                dataset, nuisance, float(config.get("lasso_lambda", 1.2)),
                alpha=alpha)
        else:
            report = static.estimate(dataset, nuisance, method=method,
                                     alpha=alpha, split_seed=split_seed)
        rows.append(report.to_csv_row())
        _print_summary(report)
    _write_report(out_dir / "estimates.csv", config,
                  static.EstimateReport.CSV_HEADER, rows)
    return 0


def _run_estimate_sequential(config: dict, out_dir: Path) -> int:
    for key in ("experimental", "historical"):
        if key not in config:
            raise ConfigError(f"estimate-sequential config requires {key!r}")
    dataset = data.load_sequential(config["experimental"], config["historical"])
    ncfg = _nuisance_config(config.get("nuisance", {}))
    nuisance = fit_sequential_nuisances(dataset, ncfg)
    alpha = float(config.get("alpha", 0.05))
    split_seed = config.get("split_seed")
    rows = []
    for method in _methods(config, sequential.METHODS):
        report = sequential.estimate_seq(dataset, nuisance, method=method,
                                         alpha=alpha, split_seed=split_seed)
        rows.append(report.to_csv_row())
        _print_summary(report)
    _write_report(out_dir / "estimates.csv", config,
                  static.EstimateReport.CSV_HEADER, rows)
    return 0


def _dgp_config(config: dict):
    block = dict(config.get("dgp", {}))
    kind = block.pop("kind", "static-linear")
    seed = int(config.get("seed", 0))
    if kind in ("static-linear", "clinical"):
        block.setdefault("design", "switchback")
        return dgp.StaticDgpConfig(
            kind="clinical" if kind == "clinical" else "linear",
            seed=seed, **block)
    if kind == "sequential":
        return dgp.SequentialDgpConfig(seed=seed, **block)
    raise ConfigError(f"unknown dgp kind {kind!r}")


def _run_simulate(config: dict, out_dir: Path) -> int:
    cfg = _dgp_config(config)
    allowed = (studies.SEQUENTIAL_METHODS
               if isinstance(cfg, dgp.SequentialDgpConfig)
               else studies.STATIC_METHODS)
    report = studies.run_mse_study(
        cfg,
        b_h_grid=config.get("b_h_grid", [0.0]),
        methods=_methods(config, allowed),
        replications=int(config.get("replications", 100)),
        master_seed=int(config.get("seed", 0)),
        ncfg=_nuisance_config(config.get("nuisance", {})),
        alpha=float(config.get("alpha", 0.05)),
        lasso_lambda=float(config.get("lasso_lambda", 1.2)),
        n_workers=int(config.get("threads", 1)),
        include_see=bool(config.get("include_see", False)))
    lines = report.to_csv_lines()
    _write_report(out_dir / "mse_study.csv", config, lines[0], lines[1:])
    print(f"wrote {len(report.rows)} study rows to {out_dir / 'mse_study.csv'}")
    return 0


def _run_coverage(config: dict, out_dir: Path) -> int:
    cfg = _dgp_config(config)
    report = studies.run_coverage_study(
        cfg,
        b_h_grid=config.get("b_h_grid", [0.0]),
        methods=_methods(config, studies.STATIC_METHODS),
        alpha=float(config.get("alpha", 0.05)),
        replications=int(config.get("replications", 500)),
        master_seed=int(config.get("seed", 0)),
        ncfg=_nuisance_config(config.get("nuisance", {})),
        lasso_lambda=float(config.get("lasso_lambda", 1.2)),
        n_workers=int(config.get("threads", 1)))
    lines = report.to_csv_lines()
    _write_report(out_dir / "coverage.csv", config, lines[0], lines[1:])
    print(f"wrote {len(report.rows)} coverage rows to {out_dir / 'coverage.csv'}")
    return 0


def _print_summary(report: static.EstimateReport) -> None:
    print(f"{report.method}: tau_hat={report.tau_hat:.6f} "
          f"ci=[{report.ci_lower:.6f}, {report.ci_upper:.6f}] "
          f"weight={report.weight:.4f} bias_hat={report.bias_hat:.6f} "
          f"regime={report.regime}")


_MODES = {
    "estimate-static": _run_estimate_static,
    "estimate-sequential": _run_estimate_sequential,
    "simulate": _run_simulate,
    "coverage": _run_coverage,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atefuse",
        description="ATE estimation fusing experimental and historical data")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in _MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count (0 = auto)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        if config.get("mode", args.mode) != args.mode:
            raise ConfigError(f"config mode {config.get('mode')!r} does not "
                              f"match subcommand {args.mode!r}")
        config["mode"] = args.mode
        if args.seed is not None:
            config["seed"] = args.seed
        if args.threads is not None:
            config["threads"] = args.threads
        if args.out is not None:
            config["out"] = args.out
        out_dir = Path(config.get("out", "."))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return _MODES[args.mode](config, out_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except data.DataFormatError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
