"""``celsim validate|run|sweep --config <file> [--out <dir>] [--jobs N] [--seed S]``.

The config is a JSON file; relative paths resolve against its directory::

    {
      "dataset": {"kind": "synthetic"} | {"kind": "directory", "path": "data"},
      "network": "network.json",          optional override
      "tariffs": "tariffs.json",          optional override
      "economics": {"discount_rate": 0.03, ...},
      "aging": {"k_cal": 0.0133, ...},
      "scenarios": [{...}, ...] | "scenarios_file": "batch.json",
      "sweeps": [{...}, ...],
      "out": "out", "jobs": 1, "seed": 2025
    }

Diagnostics go to standard error; data goes to files only.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import click

from . import tariff as tf
from .aging import AgingParams
from .dispatch import EconomicParams
from .errors import CelsimError
from .powerflow import load_network
from .scenario import (
    DatasetSource, ScenarioSpec, SweepSpec, ratio_sweep, run_batch, write_summary, write_sweep,
)

log = logging.getLogger("celsim")


@dataclass
class RunConfig:
    base: Path
    source: DatasetSource
    economics: EconomicParams = EconomicParams()
    aging: AgingParams = AgingParams()
    scenarios: List[ScenarioSpec] = field(default_factory=list)
    sweeps: List[SweepSpec] = field(default_factory=list)
    out: Path = Path("out")
    jobs: int = 1
    seed: int = 2025


def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    seed = int(data.get("seed", 2025)) if seed is None else seed
    ds = dict(data.get("dataset", {"kind": "synthetic"}))
    kind = ds.get("kind", "synthetic")
    source = DatasetSource(kind=kind, seed=int(ds.get("seed", seed)),
                           path=_resolve(base, ds.get("path")),
                           network=_resolve(base, data.get("network")),
                           tariffs=_resolve(base, data.get("tariffs")))
    scenario_dicts = data.get("scenarios", [])
    if "scenarios_file" in data:
        with open(_resolve(base, data["scenarios_file"]), encoding="utf-8") as fh:
            loaded = json.load(fh)
        scenario_dicts = list(scenario_dicts) + list(loaded.get("scenarios", loaded)
                                                     if isinstance(loaded, dict) else loaded)
    scenarios = [ScenarioSpec.from_dict({"seed": seed, **d}) for d in scenario_dicts]
    sweeps = [SweepSpec.from_dict({"seed": seed, **d}) for d in data.get("sweeps", [])]
    return RunConfig(
        base=base, source=source,
        economics=EconomicParams(**data.get("economics", {})),
        aging=AgingParams(**data.get("aging", {})),
        scenarios=scenarios, sweeps=sweeps,
        out=Path(_resolve(base, data.get("out", "out"))),
        jobs=int(data.get("jobs", 1)), seed=seed,
    )


def _echo(msg: str) -> None:
    click.echo(msg, err=True)


def validate_config(cfg: RunConfig) -> tuple:
    """Run all input checks; return (errors, warnings) as message lists."""
    errors, warnings = [], []
    for label, p in (("network", cfg.source.network), ("tariffs", cfg.source.tariffs),
                     ("dataset", cfg.source.path)):
        if p is not None and not Path(p).exists():
            errors.append(f"{label}: path {p} does not exist")
    if errors:
        return errors, warnings
    if cfg.source.network:
        try:
            load_network(cfg.source.network)
        except CelsimError as exc:
            errors.append(f"network: {exc}")
            return errors, warnings
    try:
        ds = cfg.source.load()
    except (CelsimError, OSError, ValueError) as exc:
        errors.append(f"dataset: {exc}")
        return errors, warnings

    _echo("tariff decomposition (ct/kWh):")
    _echo(tf.audit_table(ds.tariffs))
    for name in ("external", "internal_double", "internal_dynamic"):
        if name not in ds.tariffs:
            errors.append(f"tariffs: schedule {name!r} missing")
    if "external" in ds.tariffs and "internal_double" in ds.tariffs:
        warnings += [f"tariffs: {w}" for w in
                     tf.check_grid_reduction(ds.tariffs["external"], ds.tariffs["internal_double"])]

    net = ds.network
    _echo(f"network: {net.n_bus} buses, {len(net.lines)} lines, radial, root {net.root}")
    warnings += [f"network: {w}" for w in net.warnings()]
    for b in ds.buildings:
        if b.bus_id not in net.buses:
            errors.append(f"profiles: building {b.id} bus {b.bus_id} not in network")
        if b.load.axis != ds.axis:
            errors.append(f"profiles: building {b.id} load axis differs from meteo axis")
    total = sum(b.annual_load_mwh for b in ds.buildings)
    _echo(f"profiles: {len(ds.buildings)} buildings, {ds.axis.n_steps} steps from "
          f"{ds.axis.start:%Y-%m-%d}, total load {total:.1f} MWh/yr")
    ids = [s.id for s in cfg.scenarios]
    if len(set(ids)) != len(ids):
        errors.append("scenarios: duplicate ids")
    return errors, warnings


def _report(errors, warnings) -> int:
    for w in warnings:
        _echo(f"warning: {w}")
    for e in errors:
        _echo(f"error: {e}")
    return 1 if errors else 0


def _setup(config, out, jobs, seed, verbose) -> RunConfig:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(config, seed)
    except (CelsimError, OSError, ValueError, TypeError) as exc:
        _echo(f"error: config: {exc}")
        raise SystemExit(1)
    if out is not None:
        cfg = replace(cfg, out=Path(out))
    if jobs is not None:
        cfg = replace(cfg, jobs=jobs)
    elif os.environ.get("CELSIM_JOBS"):
        try:
            cfg = replace(cfg, jobs=int(os.environ["CELSIM_JOBS"]))
        except ValueError:
            _echo("warning: ignoring non-integer CELSIM_JOBS")
    return cfg


_common = [
    click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
    click.option("--jobs", type=int, default=None, help="Parallel scenarios (env CELSIM_JOBS)."),
    click.option("--seed", type=int, default=None, help="Seed for all randomness."),
    click.option("-v", "--verbose", is_flag=True),
]


def common(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@click.group()
def main():
    """Techno-economic simulator for local electricity communities."""


@main.command()
@common
@click.option("--strict", is_flag=True, help="Treat warnings as errors.")
def validate(config, out, jobs, seed, verbose, strict):
    """Check tariffs, network topology and profile coverage."""
    cfg = _setup(config, out, jobs, seed, verbose)
    errors, warnings = validate_config(cfg)
    if strict:
        errors, warnings = errors + warnings, []
    code = _report(errors, warnings)
    if code == 0:
        _echo("ok")
    raise SystemExit(code)


@main.command("validate-tariff")
@click.argument("path", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--strict", is_flag=True, help="Treat warnings as errors.")
def validate_tariff(path, strict):
    """Print the decomposition table of a tariff file (default: bundled 2025 tariffs)."""
    try:
        schedules = tf.load_tariffs(path) if path else tf.default_schedules()
    except (CelsimError, OSError, ValueError) as exc:
        _echo(f"error: tariffs: {exc}")
        raise SystemExit(1)
    _echo(tf.audit_table(schedules))
    warnings = []
    if "external" in schedules and "internal_double" in schedules:
        warnings = [f"tariffs: {w}" for w in
                    tf.check_grid_reduction(schedules["external"], schedules["internal_double"])]
    errors = warnings if strict else []
    code = _report(errors, [] if strict else warnings)
    raise SystemExit(code)


@main.command()
@common
def run(config, out, jobs, seed, verbose):
    """Run every scenario; write per-scenario outputs and summary.csv."""
    cfg = _setup(config, out, jobs, seed, verbose)
    errors, warnings = validate_config(cfg)
    if _report(errors, warnings):
        raise SystemExit(1)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if not cfg.scenarios:
        write_summary([], cfg.out / "summary.csv")
        _echo("no scenarios; wrote empty summary")
        raise SystemExit(0)
    outcomes = run_batch(cfg.scenarios, cfg.source, cfg.economics, cfg.aging, cfg.out, cfg.jobs)
    failed = [o for o in outcomes if not o.ok]
    for o in failed:
        _echo(f"error: {o.error}")
    _echo(f"{len(outcomes) - len(failed)}/{len(outcomes)} scenarios succeeded")
    raise SystemExit(1 if failed else 0)


@main.command()
@common
@click.option("--sweep", "sweep_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with one sweep object or a list of them.")
def sweep(config, out, jobs, seed, verbose, sweep_file):
    """Run PV-to-load ratio sweeps and write <out>/<id>/sweep.csv."""
    cfg = _setup(config, out, jobs, seed, verbose)
    sweeps = list(cfg.sweeps)
    if sweep_file:
        with open(sweep_file, encoding="utf-8") as fh:
            data = json.load(fh)
        items = data if isinstance(data, list) else [data]
        try:
            sweeps += [SweepSpec.from_dict({"seed": cfg.seed, **d}) for d in items]
        except (CelsimError, TypeError) as exc:
            _echo(f"error: sweep: {exc}")
            raise SystemExit(1)
    if not sweeps:
        _echo("error: no sweep defined")
        raise SystemExit(1)
    try:
        ds = cfg.source.load()
        for sw in sweeps:
            points = ratio_sweep(sw, ds, cfg.economics, cfg.aging)
            path = write_sweep(points, cfg.out / sw.id / "sweep.csv")
            _echo(f"{sw.id}: {len(points)} points -> {path}")
    except CelsimError as exc:
        _echo(f"error: {exc}")
        raise SystemExit(1)
    raise SystemExit(0)


if __name__ == "__main__":  # pragma: no cover
    main()
