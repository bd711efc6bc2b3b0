"""Parameter sweeps over the analytic model and the simulator, with CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable

import numpy as np

from . import analytic
from .params import ConfigError, Mode, ProtocolParams, SolverError
from .simulator import SimConfig, SimMetrics, empirical_collision_length, run

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "sweep_name",
    "sweep_value",
    "mode",
    "engine",
    "replication",
    "throughput",
    "stderr",
    "p_empty",
    "p_success",
    "p_collision",
    "len_success",
    "len_collision",
    "p_attempt",
    "p_s",
    "seed",
]


class SweepVariable(str, Enum):
    CW_MIN = "cw_min"
    PACKET_LEN = "packet_len"
    USERS = "m_users"
    PF = "p_false_alarm"
    PM = "p_miss"


class Engine(str, Enum):
    ANALYTIC = "analytic"
    SIMULATION = "sim"


_INT_SWEEPS = {SweepVariable.CW_MIN, SweepVariable.PACKET_LEN, SweepVariable.USERS}


@dataclass(frozen=True)
class ExperimentSpec:
    base: ProtocolParams
    sweep_variable: SweepVariable
    sweep_values: tuple
    engines: frozenset = frozenset({Engine.ANALYTIC})
    modes: tuple = (Mode.FULL_DUPLEX,)
    replications: int = 5
    seed_base: int = 1
    warmup: int = 10_000
    measure: int = 100_000
    output_path: str | None = None
    sweep_name: str = "sweep"
    # when set, w_max follows cw_min so that cw_min * 2**w_max stays equal to it
    cw_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sweep_variable", SweepVariable(self.sweep_variable))
        object.__setattr__(self, "engines", frozenset(Engine(e) for e in self.engines))
        object.__setattr__(self, "modes", tuple(Mode(m) for m in self.modes))
        values = tuple(self.sweep_values)
        if self.sweep_variable in _INT_SWEEPS:
            values = tuple(int(v) for v in values)
        object.__setattr__(self, "sweep_values", values)
        if not values:
            raise ConfigError("sweep_values must not be empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("sweep_values must be strictly increasing")
        if not self.engines:
            raise ConfigError("at least one engine is required")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if Engine.SIMULATION in self.engines and self.replications < 1:
            raise ConfigError("replications must be >= 1 when the simulation engine is enabled")
        if self.cw_max is not None and self.sweep_variable is not SweepVariable.CW_MIN:
            raise ConfigError("cw_max only applies to cw_min sweeps")
        for v in values:  # fail early on invalid points
            self.point(v, self.modes[0])

    def point(self, value, mode: Mode) -> ProtocolParams:
        changes = {self.sweep_variable.value: value, "mode": mode}
        if self.cw_max is not None:
            ratio, rem = divmod(self.cw_max, int(value))
            if rem or ratio < 1 or ratio & (ratio - 1):
                raise ConfigError(f"cw_max={self.cw_max} is not cw_min={value} times a power of two")
            changes["w_max"] = ratio.bit_length() - 1
        try:
            return replace(self.base, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sweep point {self.sweep_variable.value}={value}: {exc}") from exc


@dataclass
class ResultRow:
    sweep_name: str
    sweep_value: float
    mode: Mode
    engine: Engine
    replication: int | None = None
    throughput: float = math.nan
    stderr: float | None = None
    p_empty: float = math.nan
    p_success: float = math.nan
    p_collision: float = math.nan
    len_success: float = math.nan
    len_collision: float = math.nan
    p_attempt: float = math.nan
    p_s: float = math.nan
    seed: int | None = None
    error: str | None = field(default=None, compare=False)

    def sort_key(self):
        return (self.sweep_name, self.sweep_value, self.engine.value, self.mode.value)

    def csv_record(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if isinstance(v, Enum):
                v = v.value
            if v is None or (isinstance(v, float) and math.isnan(v)):
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out

    def to_dict(self) -> dict:
        d = {col: getattr(self, col) for col in CSV_COLUMNS}
        d["mode"] = self.mode.value
        d["engine"] = self.engine.value
        if self.error:
            d["error"] = self.error
        return d


PRESET_NAMES = ("fig3", "fig4")
FIG4_W_MAX = (2, 3, 8, 11)


def fig3_preset() -> list[ExperimentSpec]:
    base = ProtocolParams(m_users=100, packet_len=1000, cw_min=16, w_max=11, p_false_alarm=1e-3, p_miss=1e-2, difs=2)
    return [
        ExperimentSpec(
            base=base,
            sweep_variable=SweepVariable.CW_MIN,
            sweep_values=tuple(2**k for k in range(2, 11)),
            engines=frozenset({Engine.ANALYTIC, Engine.SIMULATION}),
            modes=(Mode.FULL_DUPLEX, Mode.CSMA_CA),
            cw_max=2**15,
            sweep_name="fig3",
        )
    ]


def fig4_lengths() -> tuple[int, ...]:
    return tuple(sorted({int(round(x)) for x in np.logspace(1, 5, 17)}))


def fig4_preset() -> list[ExperimentSpec]:
    specs = []
    for w_max in FIG4_W_MAX:
        base = ProtocolParams(m_users=100, packet_len=1000, cw_min=16, w_max=w_max, p_false_alarm=1e-3, p_miss=1e-2, difs=2)
        specs.append(
            ExperimentSpec(
                base=base,
                sweep_variable=SweepVariable.PACKET_LEN,
                sweep_values=fig4_lengths(),
                engines=frozenset({Engine.ANALYTIC}),
                modes=(Mode.FULL_DUPLEX, Mode.CSMA_CA),
                sweep_name=f"fig4_wmax{w_max}",
            )
        )
    return specs


def preset(name: str) -> list[ExperimentSpec]:
    if name == "fig3":
        return fig3_preset()
    if name == "fig4":
        return fig4_preset()
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


def spec_from_dict(d: dict) -> ExperimentSpec:
    d = dict(d)
    try:
        base = ProtocolParams.from_dict(d.pop("base", {}))
        return ExperimentSpec(base=base, **d)
    except TypeError as exc:
        raise ConfigError(f"bad experiment config: {exc}") from exc


def load_config(path: str) -> list[ExperimentSpec]:
    """Read one experiment (JSON object) or several (JSON array)."""
    with open(path) as fh:
        doc = json.load(fh)
    docs = doc if isinstance(doc, list) else [doc]
    return [spec_from_dict(x) for x in docs]


# -- engines ------------------------------------------------------------------


def analytic_row(spec: ExperimentSpec, value, mode: Mode) -> ResultRow:
    row = ResultRow(spec.sweep_name, value, mode, Engine.ANALYTIC)
    params = spec.point(value, mode)
    try:
        sol, rep = analytic.analyze(params)
    except (SolverError, ValueError) as exc:
        row.error = str(exc)
        log.warning("%s %s=%s (%s): %s", spec.sweep_name, spec.sweep_variable.value, value, mode.value, exc)
        return row
    row.throughput = rep.throughput
    row.p_empty = rep.p_empty
    row.p_success = rep.p_single_success
    row.p_collision = rep.p_collision
    row.len_success = rep.len_success
    row.len_collision = rep.len_collision
    row.p_attempt = sol.p_attempt
    row.p_s = sol.p_success
    return row


def _simulate(job: tuple[ProtocolParams, int, int, int]) -> SimMetrics:
    params, seed, warmup, measure = job
    return run(SimConfig(params, seed=seed, warmup_attempts=warmup, measure_attempts=measure))


def _mean(xs: Iterable[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


def sim_row(spec: ExperimentSpec, value, mode: Mode, runs: list[SimMetrics]) -> ResultRow:
    """Aggregate replications into one row; ``replication`` holds their count."""
    params = spec.point(value, mode)
    thr = np.array([m.throughput_estimate for m in runs])
    row = ResultRow(spec.sweep_name, value, mode, Engine.SIMULATION, replication=len(runs), seed=spec.seed_base)
    row.throughput = float(thr.mean())
    row.stderr = float(thr.std(ddof=1) / math.sqrt(len(thr))) if len(thr) > 1 else None
    fractions = np.array([m.event_fractions() for m in runs])
    row.p_empty, row.p_success, row.p_collision = (float(x) for x in fractions.mean(axis=0))

    def safe(fn, m):
        try:
            return fn(m)
        except ValueError:
            return math.nan

    row.len_success = _mean(safe(SimMetrics.mean_success_length, m) for m in runs)
    row.len_collision = _mean(safe(empirical_collision_length, m) for m in runs)
    # attempts per user per backoff slot (empty slot or start of a busy period)
    row.p_attempt = _mean(
        m.attempts / (params.m_users * (m.idle_slots - m.difs_slots + m.solo_starts + m.collision_starts)) for m in runs
    )
    row.p_s = _mean(m.perceived_successes / m.attempts for m in runs)
    return row


def execute(specs: list[ExperimentSpec], jobs: int | None = None) -> list[ResultRow]:
    """Run every (spec, value, mode, engine) combination; rows come back sorted."""
    rows: list[ResultRow] = []
    sim_jobs = []
    sim_keys = []
    for spec in specs:
        for value in spec.sweep_values:
            for mode in spec.modes:
                if Engine.ANALYTIC in spec.engines:
                    rows.append(analytic_row(spec, value, mode))
                if Engine.SIMULATION in spec.engines:
                    params = spec.point(value, mode)
                    for r in range(spec.replications):
                        sim_jobs.append((params, spec.seed_base + r, spec.warmup, spec.measure))
                    sim_keys.append((spec, value, mode))
    if sim_jobs:
        jobs = jobs or os.cpu_count() or 1
        if jobs > 1 and len(sim_jobs) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_simulate, sim_jobs))
        else:
            results = [_simulate(j) for j in sim_jobs]
        i = 0
        for spec, value, mode in sim_keys:
            rows.append(sim_row(spec, value, mode, results[i : i + spec.replications]))
            i += spec.replications
    rows.sort(key=ResultRow.sort_key)
    return rows


# -- output -------------------------------------------------------------------


def render_csv(rows: list[ResultRow], timestamp: bool = True) -> str:
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(row.csv_record())
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path: str, timestamp: bool = True) -> None:
    text = render_csv(rows, timestamp)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def gnuplot_script(csv_path: str, rows: list[ResultRow], xlabel: str = "sweep value") -> str:
    """Plot script reading ``csv_path``: one series per (sweep, mode, engine)."""
    series = sorted({(r.sweep_name, r.mode.value, r.engine.value) for r in rows})
    log_x = any(r.sweep_value > 0 for r in rows) and all(r.sweep_value > 0 for r in rows)
    lines = [
        "set datafile separator ','",
        "set key bottom right",
        f"set xlabel '{xlabel}'",
        "set ylabel 'normalized saturation throughput'",
        "set yrange [0:1]",
    ]
    if log_x:
        lines.append("set logscale x 2" if rows and rows[0].sweep_name.startswith("fig3") else "set logscale x 10")
    plots = []
    for name, mode, engine in series:
        style = "with linespoints" if engine == "analytic" else "with points pt 2"
        cond = f'(strcol(1) eq "{name}" && strcol(3) eq "{mode}" && strcol(4) eq "{engine}") ? $6 : 1/0'
        plots.append(f"'{csv_path}' every ::1 using 2:({cond}) {style} title '{name} {mode} {engine}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class ValidationPoint:
    sweep_name: str
    sweep_value: float
    mode: Mode
    analytic: float
    simulated: float
    stderr: float | None
    tolerance: float

    @property
    def delta(self) -> float:
        return abs(self.simulated - self.analytic)

    @property
    def passed(self) -> bool:
        return not math.isnan(self.delta) and self.delta <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "sweep_name": self.sweep_name,
            "sweep_value": self.sweep_value,
            "mode": self.mode.value,
            "analytic": self.analytic,
            "simulated": self.simulated,
            "stderr": self.stderr,
            "delta": self.delta,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def validate(rows: list[ResultRow], tolerance: float = 0.01) -> list[ValidationPoint]:
    """Pair analytic and simulated rows and compare their throughput."""
    analytic_rows = {(r.sweep_name, r.sweep_value, r.mode): r for r in rows if r.engine is Engine.ANALYTIC}
    points = []
    for r in rows:
        if r.engine is not Engine.SIMULATION:
            continue
        a = analytic_rows.get((r.sweep_name, r.sweep_value, r.mode))
        if a is None:
            continue
        points.append(
            ValidationPoint(r.sweep_name, r.sweep_value, r.mode, a.throughput, r.throughput, r.stderr, tolerance)
        )
    return points
