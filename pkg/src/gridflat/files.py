"""Reading and writing feeders, problems, loads, schedules and manifests.

Problem files are JSON objects whose keys mirror :class:`ProblemConfig`::

    {
      "formulation": "OP2",
      "load": {"profile": "duck", "min_kw": 1442, "max_kw": 2290, "steps": 24},
      "bess_units": [{"bus": 17, "capacity_kwh": 2200}],
      "alpha": 1000, "beta": 1,
      "feeder": "table2"
    }

``load`` is a list of kW values, ``{"values": [...]}``, ``{"file": "load.csv"}``
or a synthetic profile spec. ``feeder`` is ``"table2"`` (the bundled feeder),
``{"file": "feeder.csv", ...}`` or ``{"lines": [[from, to, r, x, share, q], ...], ...}``;
the dict forms accept ``v0_pu``, ``epsilon`` and ``p_base_kw``. Relative
paths resolve against the problem file's directory.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

from .model import (BessSchedule, BessSpec, FeederModel, Line, ProblemConfig, SolveReport, TimeSeries,
                    UnitSchedule)
from .scenarios import generate_synthetic_load

FEEDER_HEADER = ("from", "to", "r_pu", "x_pu", "p_share_pct", "q_pu")
BUNDLED_FEEDER = "table2"


class InputError(ValueError):
    """A file that cannot be read or does not have the expected layout."""


def _num(cell, what):
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise InputError(f"{what}: {cell!r} is not a number") from None


def parse_feeder_csv(text: str, **kw) -> FeederModel:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != FEEDER_HEADER:
        raise InputError(f"feeder CSV header must be {','.join(FEEDER_HEADER)}")
    lines = []
    for k, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(FEEDER_HEADER):
            raise InputError(f"feeder CSV line {k}: expected {len(FEEDER_HEADER)} fields")
        v = [_num(c, f"feeder CSV line {k}") for c in row]
        lines.append(Line(int(v[0]), int(v[1]), v[2], v[3], v[4], v[5]))
    return FeederModel(tuple(lines), **kw)


def feeder_to_csv(feeder: FeederModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEEDER_HEADER)
    for ln in feeder.lines:
        w.writerow([ln.from_node, ln.to_node, repr(ln.r_pu), repr(ln.x_pu), repr(ln.p_share_pct), repr(ln.q_pu)])
    return buf.getvalue()


def bundled_feeder(**kw) -> FeederModel:
    text = resources.files("gridflat").joinpath("data/feeder_table2.csv").read_text()
    return parse_feeder_csv(text, **kw)


def read_load_csv(path, step_hours: float = 1.0) -> TimeSeries:
    try:
        rows = list(csv.reader(Path(path).read_text().splitlines()))
    except OSError as exc:
        raise InputError(f"cannot read load file {path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != ["t", "kW"]:
        raise InputError(f"{path}: load CSV header must be t,kW")
    vals = [_num(r[1], f"{path} line {k}") for k, r in enumerate(rows[1:], start=2) if r]
    return TimeSeries(tuple(vals), step_hours, Path(path).stem)


def load_to_csv(load: TimeSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "kW"])
    for t, v in enumerate(load.values):
        w.writerow([t, repr(float(v))])
    return buf.getvalue()


def _feeder_from(spec, base: Path):
    if spec is None:
        return None
    if spec == BUNDLED_FEEDER:
        return bundled_feeder()
    if not isinstance(spec, dict):
        raise InputError("feeder must be \"table2\" or an object")
    kw = {k: float(spec[k]) for k in ("v0_pu", "epsilon", "p_base_kw") if k in spec}
    if spec.get("file") == BUNDLED_FEEDER:
        return bundled_feeder(**kw)
    if "file" in spec:
        path = base / spec["file"]
        try:
            return parse_feeder_csv(path.read_text(), **kw)
        except OSError as exc:
            raise InputError(f"cannot read feeder file {path}: {exc}") from None
    if "lines" in spec:
        try:
            lines = tuple(Line(int(a), int(b), float(r), float(x), float(s), float(q))
                          for a, b, r, x, s, q in spec["lines"])
        except (TypeError, ValueError):
            raise InputError("feeder lines must be [from, to, r_pu, x_pu, p_share_pct, q_pu]") from None
        return FeederModel(lines, **kw)
    raise InputError("feeder object needs \"file\" or \"lines\"")


def _load_from(spec, base: Path, step_hours: float) -> TimeSeries:
    if isinstance(spec, list):
        return TimeSeries(tuple(_num(v, "load") for v in spec), step_hours)
    if not isinstance(spec, dict):
        raise InputError("load must be a list or an object")
    if "values" in spec:
        return TimeSeries(tuple(_num(v, "load") for v in spec["values"]), step_hours)
    if "file" in spec:
        return read_load_csv(base / spec["file"], step_hours)
    if "profile" in spec:
        return generate_synthetic_load(spec["profile"], float(spec["min_kw"]), float(spec["max_kw"]),
                                       int(spec.get("steps", 24)), step_hours)
    raise InputError("load object needs \"values\", \"file\" or \"profile\"")


_UNIT_KEYS = {f.name for f in fields(BessSpec)}
_CONFIG_KEYS = {f.name for f in fields(ProblemConfig)} | {"step_hours"}


def config_from_dict(doc: dict, base=".") -> ProblemConfig:
    base = Path(base)
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise InputError(f"unknown problem keys: {', '.join(sorted(unknown))}")
    if "formulation" not in doc or "load" not in doc:
        raise InputError("problem needs \"formulation\" and \"load\"")
    try:
        step = float(doc.get("step_hours", 1.0))
        units = []
        for u in doc.get("bess_units", []):
            bad = set(u) - _UNIT_KEYS
            if bad:
                raise InputError(f"unknown battery keys: {', '.join(sorted(bad))}")
            units.append(BessSpec(**u))
        kw = {k: doc[k] for k in ("theta_kw", "alpha", "beta", "horizon", "relaxation_mode",
                                  "terminal_soc", "bes_reactive_limit_kvar") if k in doc}
        return ProblemConfig(doc["formulation"], _load_from(doc["load"], base, step), tuple(units),
                             feeder=_feeder_from(doc.get("feeder"), base), **kw)
    except InputError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"malformed problem: {exc}") from None


def read_problem(path) -> ProblemConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path} must hold a JSON object")
    return config_from_dict(doc, path.parent)


def config_to_dict(config: ProblemConfig) -> dict:
    """Self-contained JSON form (load values and feeder lines inlined)."""
    doc = {
        "formulation": config.formulation,
        "load": list(config.load.values),
        "step_hours": config.load.step_hours,
        "bess_units": [asdict(u) for u in config.bess_units],
    }
    for k in ("theta_kw", "alpha", "beta", "horizon", "bes_reactive_limit_kvar"):
        if getattr(config, k) is not None:
            doc[k] = getattr(config, k)
    doc["relaxation_mode"] = config.relaxation_mode
    doc["terminal_soc"] = config.terminal_soc
    if config.feeder is not None:
        f = config.feeder
        doc["feeder"] = {"lines": [[ln.from_node, ln.to_node, ln.r_pu, ln.x_pu, ln.p_share_pct, ln.q_pu]
                                   for ln in f.lines],
                         "v0_pu": f.v0_pu, "epsilon": f.epsilon, "p_base_kw": f.p_base_kw}
    return doc


def config_hash(config: ProblemConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# schedule CSV

def schedule_to_csv(schedule: BessSchedule, pcc_kw) -> str:
    n = len(schedule.units)
    reactive = any(u.reactive_kvar is not None for u in schedule.units)
    head = ["t"]
    for i in range(n):
        head += [f"P_bc_{i}", f"P_bd_{i}", f"m_bc_{i}", f"m_bd_{i}", f"E_b_{i}"]
        if reactive:
            head.append(f"Q_b_{i}")
    head.append("P_g")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    pg = list(pcc_kw)
    for t in range(len(pg)):
        row = [t]
        for u in schedule.units:
            row += [repr(float(u.charge_kw[t])), repr(float(u.discharge_kw[t])),
                    int(u.mode_charge[t]), int(u.mode_discharge[t]), repr(float(u.energy_kwh[t]))]
            if reactive:
                row.append(repr(float(u.reactive_kvar[t])) if u.reactive_kvar is not None else "0.0")
        row.append(repr(float(pg[t])))
        w.writerow(row)
    return buf.getvalue()


def read_schedule_csv(path, step_hours: float = 1.0):
    """Returns ``(BessSchedule, P_g values)``."""
    try:
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    except OSError as exc:
        raise InputError(f"cannot read schedule {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: empty schedule")
    cols = rows[0].keys()
    if "P_g" not in cols:
        raise InputError(f"{path}: missing P_g column")
    n = sum(1 for c in cols if c.startswith("P_bc_"))

    def col(name, cast=float):
        if name not in cols:
            raise InputError(f"{path}: missing column {name}")
        try:
            return tuple(cast(float(r[name])) for r in rows)
        except (TypeError, ValueError):
            raise InputError(f"{path}: non-numeric entry in column {name}") from None

    units = []
    for i in range(n):
        q = TimeSeries(col(f"Q_b_{i}"), step_hours) if f"Q_b_{i}" in cols else None
        units.append(UnitSchedule(
            TimeSeries(col(f"P_bc_{i}"), step_hours), TimeSeries(col(f"P_bd_{i}"), step_hours),
            col(f"m_bc_{i}", _mode), col(f"m_bd_{i}", _mode), TimeSeries(col(f"E_b_{i}"), step_hours), q))
    return BessSchedule(tuple(units)), col("P_g")


def _mode(v):
    # keep non-binary values visible to the mode check instead of rounding them away
    return int(v) if float(v).is_integer() else v


def summary_dict(report: SolveReport) -> dict:
    def num(v):
        return None if v is None or v != v else float(v)

    return {
        "status": report.status,
        "K_kw": num(report.k_kw),
        "theta_kw": num(report.theta_kw),
        "objective": num(report.objective),
        "solver": {"branch_nodes": report.branch_nodes, "lp_iterations": report.lp_iterations,
                   "gap": num(report.gap), "root_relaxation_integral": report.relaxation_integral},
        "validation": [{"check": c.name, "passed": bool(c.passed), "detail": c.detail} for c in report.validation],
    }


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
