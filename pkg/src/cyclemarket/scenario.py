"""Scenario configuration, parameter sweeps and report files.

Configs are YAML documents::

    horizon: 24
    demand: {path: builtin:synthetic_24}     # or {values: [..]}
    generators: [{c: 0.1, a: 20.0, g_min: 0.0, g_max: 1000.0}]
    storages: [{capacity_mwh: 100.0, capital_cost_per_kwh: 200.0,
                rho: 5.24e-4, x0: 0.5, rate_fraction: 0.25}]
    mechanisms: [social, pbm, cbm, gcd]
    sweep: {param: B, from: 50.0, to: 400.0, steps: 8}
    seed: 0
    out_dir: out

Relative demand paths resolve against the config file's directory and
``builtin:synthetic_24`` names the bundled synthetic trace. Unknown keys
are rejected.
"""
from __future__ import annotations

import copy
import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import dispatch, equilibrium, settlement
from .settlement import MECHANISMS, MarketOutcome
from .storage import GeneratorParams, StorageParams

BUILTIN_DEMAND = {"synthetic_24": "demand_synthetic_24.csv"}
DEMAND_HEADER = ["slot", "demand_mw"]
SWEEP_COLUMNS = ["param_value", "mechanism", "social_cost", "generation_cost",
                 "cycling_cost", "storage_profit", "converged"]
SUMMARY_COLUMNS = ["mechanism", "social_cost", "generation_cost", "cycling_cost",
                   "storage_profit", "merchandising_surplus", "converged"]
DISPATCH_COLUMNS = ["slot", "demand", "gen_total", "storage_total", "lambda"]

_TOP_KEYS = {"horizon", "demand", "generators", "storages", "mechanisms", "sweep", "seed", "out_dir"}
_DEMAND_KEYS = {"path", "values"}
_GEN_KEYS = {"c", "a", "g_min", "g_max"}
_STORAGE_KEYS = {"capacity_mwh", "capital_cost_per_kwh", "rho", "x0", "rate_fraction"}
_SWEEP_KEYS = {"param", "from", "to", "steps"}


class ConfigError(ValueError):
    pass


class DemandFileError(ValueError):
    pass


class ScenarioError(RuntimeError):
    def __init__(self, mechanism: str, cause: Exception):
        super().__init__(f"{mechanism}: {cause}")
        self.mechanism = mechanism
        self.cause = cause


# --------------------------------------------------------------------------
# configuration


@dataclass
class StorageSpec:
    capacity_mwh: float
    capital_cost_per_kwh: float
    rho: float
    x0: float = 0.5
    rate_fraction: float = 0.25

    def params(self) -> StorageParams:
        return StorageParams.from_capital_cost(self.capacity_mwh, self.capital_cost_per_kwh,
                                               self.rho, self.x0, self.rate_fraction)


@dataclass
class SweepSpec:
    param: str
    start: float
    stop: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass
class ScenarioConfig:
    demand: np.ndarray
    generators: list[GeneratorParams]
    storages: list[StorageSpec]
    mechanisms: list[str] = field(default_factory=lambda: list(MECHANISMS))
    sweep: SweepSpec | None = None
    seed: int = 0
    out_dir: str = "out"

    @property
    def horizon(self) -> int:
        return self.demand.shape[0]

    def instance(self) -> dispatch.Instance:
        return dispatch.Instance(self.demand, self.generators, [s.params() for s in self.storages])

    def with_param(self, param: str, value: float) -> "ScenarioConfig":
        cfg = copy.deepcopy(self)
        for s in cfg.storages:
            if param == "B":
                s.capital_cost_per_kwh = float(value)
            else:
                s.capacity_mwh = float(value)
        return cfg


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(extra)}")


def _number(section, data, key, default=None, required=False):
    if key not in data or data[key] is None:
        if required:
            raise ConfigError(f"{section}: missing '{key}'")
        return default
    try:
        return float(data[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: not a number: {data[key]!r}") from None


def parse_config(data: dict, base_dir: Path | str = ".") -> ScenarioConfig:
    _reject_unknown("config", data, _TOP_KEYS)
    base_dir = Path(base_dir)
    dem = data.get("demand")
    if dem is None:
        raise ConfigError("config: missing 'demand'")
    _reject_unknown("demand", dem, _DEMAND_KEYS)
    if ("path" in dem) == ("values" in dem):
        raise ConfigError("demand: give exactly one of 'path' or 'values'")
    if "values" in dem:
        try:
            demand = np.asarray(dem["values"], dtype=np.float64).reshape(-1)
        except (TypeError, ValueError):
            raise ConfigError("demand.values: not a list of numbers") from None
        if demand.size == 0:
            raise ConfigError("demand.values: empty")
    else:
        demand = load_demand(_resolve_demand(str(dem["path"]), base_dir))
    horizon = data.get("horizon", demand.shape[0])
    if int(horizon) != demand.shape[0]:
        raise ConfigError(f"horizon {horizon} does not match demand length {demand.shape[0]}")
    gens = []
    for k, g in enumerate(data.get("generators") or []):
        sec = f"generators[{k}]"
        _reject_unknown(sec, g, _GEN_KEYS)
        g_max = _number(sec, g, "g_max", math.inf)
        try:
            gens.append(GeneratorParams(c=_number(sec, g, "c", required=True),
                                        a=_number(sec, g, "a", 0.0),
                                        g_min=_number(sec, g, "g_min", 0.0), g_max=g_max))
        except ValueError as exc:
            raise ConfigError(f"{sec}: {exc}") from None
    if not gens:
        raise ConfigError("config: at least one generator is required")
    stores = []
    for k, s in enumerate(data.get("storages") or []):
        sec = f"storages[{k}]"
        _reject_unknown(sec, s, _STORAGE_KEYS)
        spec = StorageSpec(capacity_mwh=_number(sec, s, "capacity_mwh", required=True),
                           capital_cost_per_kwh=_number(sec, s, "capital_cost_per_kwh", required=True),
                           rho=_number(sec, s, "rho", required=True),
                           x0=_number(sec, s, "x0", 0.5),
                           rate_fraction=_number(sec, s, "rate_fraction", 0.25))
        try:
            spec.params()
        except ValueError as exc:
            raise ConfigError(f"{sec}: {exc}") from None
        stores.append(spec)
    mechs = data.get("mechanisms", list(MECHANISMS))
    if not isinstance(mechs, list) or not mechs:
        raise ConfigError("mechanisms: expected a nonempty list")
    for m in mechs:
        if m not in MECHANISMS:
            raise ConfigError(f"mechanisms: unknown mechanism {m!r}")
    sweep = None
    if data.get("sweep") is not None:
        sw = data["sweep"]
        _reject_unknown("sweep", sw, _SWEEP_KEYS)
        param = sw.get("param")
        if param not in ("B", "E"):
            raise ConfigError("sweep.param: must be 'B' or 'E'")
        start = _number("sweep", sw, "from", required=True)
        stop = _number("sweep", sw, "to", required=True)
        steps = sw.get("steps")
        if not isinstance(steps, int) or steps < 1:
            raise ConfigError("sweep.steps: must be a positive integer")
        if start <= 0 or stop <= 0:
            raise ConfigError("sweep: range must be positive")
        if steps > 1 and not stop > start:
            raise ConfigError("sweep: range must be increasing")
        sweep = SweepSpec(param, start, stop, steps)
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")
    return ScenarioConfig(demand=demand, generators=gens, storages=stores, mechanisms=list(mechs),
                          sweep=sweep, seed=seed, out_dir=str(data.get("out_dir", "out")))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return parse_config(data, path.parent)


def default_config_path() -> Path:
    return Path(str(resources.files("cyclemarket") / "data" / "default.yaml"))


def _resolve_demand(spec: str, base_dir: Path) -> Path:
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_DEMAND:
            raise ConfigError(f"demand.path: unknown builtin trace {name!r}")
        return Path(str(resources.files("cyclemarket") / "data" / BUILTIN_DEMAND[name]))
    p = Path(spec)
    return p if p.is_absolute() else base_dir / p


def load_demand(path) -> np.ndarray:
    """Read a ``slot,demand_mw`` CSV into a demand vector (MW per slot)."""
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DemandFileError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DEMAND_HEADER:
            raise DemandFileError(f"{path}:1: expected header 'slot,demand_mw'")
        values, last_slot = [], None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DemandFileError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                slot = int(row[0])
                value = float(row[1])
            except ValueError:
                raise DemandFileError(f"{path}:{line}: cannot parse {','.join(row)!r}") from None
            if not math.isfinite(value):
                raise DemandFileError(f"{path}:{line}: non-finite demand")
            if last_slot is not None and slot <= last_slot:
                raise DemandFileError(f"{path}:{line}: slots must be increasing")
            last_slot = slot
            values.append(value)
    if not values:
        raise DemandFileError(f"{path}: no demand rows")
    demand = np.array(values)
    if np.any(demand <= 0):
        warnings.warn(f"{path}: demand has non-positive entries", stacklevel=2)
    return demand


# --------------------------------------------------------------------------
# runs


def _run_mechanism(mech: str, inst: dispatch.Instance) -> MarketOutcome:
    intercepts = [g.a for g in inst.generators]
    if mech == "social":
        sol = dispatch.social_planner(inst)
    elif mech == "gcd":
        sol = dispatch.gcd_clearing(inst)
    elif mech == "cbm":
        alphas, betas = equilibrium.truthful_bids(inst)
        sol = dispatch.cycle_aware_clearing(inst, alphas, betas, intercepts=intercepts)
    elif mech == "pbm":
        # equilibrium bids, cleared against the physical storage limits
        alphas, beta_hats = equilibrium.prosumer_bids(inst)
        sol = dispatch.prosumer_clearing(inst, alphas, beta_hats, physical=True,
                                         intercepts=intercepts)
    else:
        raise ValueError(f"unknown mechanism {mech!r}")
    return settlement.settle(mech, sol, inst)


def run_scenario(config: ScenarioConfig) -> list[MarketOutcome]:
    inst = config.instance()
    out = []
    for mech in config.mechanisms:
        try:
            out.append(_run_mechanism(mech, inst))
        except Exception as exc:
            raise ScenarioError(mech, exc) from exc
    return out


@dataclass
class SweepRow:
    param_value: float
    mechanism: str
    social_cost: float
    generation_cost: float
    cycling_cost: float
    storage_profit: float
    converged: bool
    error: str = ""


@dataclass
class SweepResult:
    param: str
    values: list
    rows: list[SweepRow]
    outcomes: list  # per sweep point: list of MarketOutcome, or None on failure

    def by_point(self):
        """Rows grouped per sweep value, in sweep order: ``[(value, {mech: row})]``."""
        groups = []
        for v in self.values:
            groups.append((v, {r.mechanism: r for r in self.rows if r.param_value == v}))
        return groups

    def ordering_failures(self, tol: float = 1e-9) -> list[str]:
        """Per-point mechanism orderings plus the expected trends in the swept value."""
        out = []
        groups = self.by_point()
        for v, rows in groups:
            if any(not r.converged for r in rows.values()):
                out.append(f"{self.param}={v:g}: not all mechanisms converged")
            out += [f"{self.param}={v:g}: {msg}" for msg in settlement.ordering_failures(rows, tol)]
            if self.param == "B" and v >= 200 - 1e-12 and "gcd" in rows \
                    and not rows["gcd"].storage_profit < 0:
                out.append(f"B={v:g}: gcd storage profit is not negative")
        for mech in ("cbm", "pbm") if self.param == "B" else ("cbm",):
            seq = [(v, rows[mech].social_cost) for v, rows in groups if mech in rows]
            for (v0, c0), (v1, c1) in zip(seq, seq[1:]):
                if self.param == "B" and c1 < c0 - tol:
                    out.append(f"{mech} social cost decreases from B={v0:g} to B={v1:g}")
                if self.param == "E" and c1 > c0 + tol:
                    out.append(f"{mech} social cost increases from E={v0:g} to E={v1:g}")
        return out


def _sweep_point(args):
    config, value = args
    cfg = config.with_param(config.sweep.param, value)
    try:
        outcomes = run_scenario(cfg)
    except ScenarioError as exc:
        return None, f"{exc}"
    return outcomes, ""


def run_sweep(config: ScenarioConfig, workers: int = 1) -> SweepResult:
    """Independent scenario runs over the sweep values, reported in sweep order."""
    if config.sweep is None:
        raise ConfigError("config has no sweep section")
    values = [float(v) for v in config.sweep.values()]
    jobs = [(config, v) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows, outcomes = [], []
    for v, (res, err) in zip(values, results):
        outcomes.append(res)
        if res is None:
            for mech in config.mechanisms:
                rows.append(SweepRow(v, mech, math.nan, math.nan, math.nan, math.nan, False, err))
            continue
        for o in res:
            rows.append(SweepRow(v, o.mechanism, o.social_cost, o.generation_cost, o.cycling_cost,
                                 o.storage_profit, bool(o.dispatch.converged)))
    return SweepResult(param=config.sweep.param, values=values, rows=rows, outcomes=outcomes)


# --------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def _write_rows(path: Path, header, rows, delimiter=",") -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            if delimiter == ",":
                fh.write(",".join(header) + "\n")
            else:
                fh.write("# " + " ".join(header) + "\n")
            for row in rows:
                fh.write(delimiter.join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def _dispatch_rows(o: MarketOutcome):
    d = o.dispatch
    gen = d.g.sum(axis=0)
    sto = d.u.sum(axis=0) if d.u.size else np.zeros_like(gen)
    return [(t + 1, o.demand[t], gen[t], sto[t], d.lam[t]) for t in range(o.demand.shape[0])]


def _emit_outcomes(outcomes, out: Path, written: list) -> None:
    for o in outcomes:
        p = out / f"dispatch_{o.mechanism}.csv"
        _write_rows(p, DISPATCH_COLUMNS, _dispatch_rows(o))
        written.append(p)
        if o.mechanism == "cbm":
            d = o.dispatch
            for i in range(d.u.shape[0]):
                p = out / f"theta_storage{i}.csv"
                _write_rows(p, ["slot", "theta", "nu"],
                            [(t + 1, d.theta[i, t], d.nu[i, t]) for t in range(d.u.shape[1])])
                written.append(p)


# plot-data panels: (file stem, quantity) per swept parameter
_PANELS = {
    "B": [("capital_cost_social_cost", "social_cost"), ("capital_cost_cycling_cost", "cycling_cost"),
          ("capital_cost_storage_profit", "storage_profit")],
    "E": [("capacity_social_cost", "social_cost"), ("capacity_cycling_cost", "cycling_cost"),
          ("capacity_storage_profit", "storage_profit")],
}


def emit_reports(results, out_dir, fmt: str = "csv") -> list[Path]:
    """Write report files for a sweep result or a list of outcomes.

    Sweeps write ``sweep.csv`` plus dispatch files for the first sweep
    point; single runs write ``summary.csv`` and dispatch files. With
    ``fmt="plotdata"`` a sweep additionally writes one whitespace-delimited
    series file per figure panel. Returns the paths written, in order.
    """
    if fmt not in ("csv", "plotdata"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from None
    written: list[Path] = []
    if isinstance(results, SweepResult):
        p = out / "sweep.csv"
        _write_rows(p, SWEEP_COLUMNS, [(r.param_value, r.mechanism, r.social_cost, r.generation_cost,
                                        r.cycling_cost, r.storage_profit, r.converged)
                                       for r in results.rows])
        written.append(p)
        first = next((o for o in results.outcomes if o is not None), [])
        _emit_outcomes(first, out, written)
        if fmt == "plotdata":
            mechs = [m for m in MECHANISMS if any(r.mechanism == m for r in results.rows)]
            for stem, qty in _PANELS[results.param]:
                rows = []
                for v, by in results.by_point():
                    rows.append([v] + [getattr(by[m], qty) if m in by else math.nan for m in mechs])
                p = out / f"{stem}.dat"
                _write_rows(p, [results.param] + mechs, rows, delimiter=" ")
                written.append(p)
        return written
    outcomes = list(results)
    p = out / "summary.csv"
    _write_rows(p, SUMMARY_COLUMNS, [(o.mechanism, o.social_cost, o.generation_cost, o.cycling_cost,
                                      o.storage_profit, o.merchandising_surplus,
                                      o.dispatch.converged) for o in outcomes])
    written.append(p)
    _emit_outcomes(outcomes, out, written)
    return written


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
