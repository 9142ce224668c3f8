"""Scenario files, figure tables and the end-to-end report.

A scenario is a TOML document (JSON is accepted too) with the tables
``qubit1``, ``qubit2``, ``network``, ``sweep``, ``protocol``,
``trajectories`` and ``output``; every table is optional.  Times are in units
of qubit 1's T1 and drives are given as ``x = Omega T1``.
"""
from __future__ import annotations

import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .counting import counting_series, counting_stats, longtime_ratio, variance
from .dynamics import DriveParams
from .errors import (
    CrossCheckFailure,
    Indistinguishable,
    InvalidParameters,
    MPEntangleError,
    NetworkError,
    ParseError,
    ValidationError,
)
from .network import DetectionModel, JointSpinState, ModeNetwork, build_network, default_network
from .protocol import (
    DEFAULT_KAPPA,
    METHODS,
    ExperimentPreset,
    avg_entanglement_time,
    classify,
    load_preset,
    mismatch_analysis,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

SCHEMA_VERSION = 1
REPORT_SCHEMA = f"mpentangle-report/{SCHEMA_VERSION}"
FIGURES = ("fig2", "fig3", "fig4")
FIG4_T = 1000.0
SIGMA_LIMIT = 3.0

FIGURE_COLUMNS = {
    "fig2": ("x", "t_over_t1", "n_E", "n_MM", "n_PP"),
    "fig3": (
        "x", "t_over_t1", "mean_E", "sd_E", "mean_MM", "sd_MM", "mean_PP", "sd_PP",
        "ratio_MM_E", "ratio_longtime",
    ),
    "fig4": ("x", "n_E", "n_MM", "dn_E", "dn_MM", "poisson_E", "poisson_MM", "q_E", "q_MM"),
}

DEFAULT_GRIDS = {
    "fig2": (np.linspace(0.0, 5.0, 21), np.linspace(0.0, 50.0, 26)),
    "fig3": (np.array([0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0]), np.linspace(0.0, 1000.0, 21)),
    "fig4": (np.geomspace(0.1, 20.0, 25), np.array([FIG4_T])),
}


def atomic_write(path, data) -> Path:
    """Write text or bytes to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --- scenario -----------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Validated scenario; see the module docstring for the file layout."""

    name: str = "default"
    params1: DriveParams = DriveParams(rabi=3.0)
    params2: DriveParams = DriveParams(rabi=3.0)
    network: ModeNetwork = field(default_factory=default_network)
    x_grid: tuple | None = None
    t_grid: tuple | None = None
    kappa: float = DEFAULT_KAPPA
    target: float = 0.9
    method: str = "gaussian"
    n_traj: int = 0
    seed: int = 0
    traj_t: float = 200.0
    preset: ExperimentPreset | None = None
    out_dir: str | None = None
    source: str | None = None

    @property
    def heralding_time(self) -> float:
        """``t = kappa / eta`` in units of qubit 1's T1."""
        return self.kappa / self.params1.efficiency

    def model(self) -> DetectionModel:
        return build_network(self.network)


_TABLES = {
    "name": None,
    "preset": None,
    "qubit1": {"rabi", "t1", "efficiency", "background_rate", "dephasing"},
    "qubit2": {"rabi", "t1", "efficiency", "background_rate", "dephasing"},
    "network": {"elements"},
    "sweep": {"x", "t"},
    "protocol": {"kappa", "target", "method"},
    "trajectories": {"n_traj", "seed", "t"},
    "output": {"dir"},
}


def _key_line(text: str | None, path: str) -> int | None:
    """Best-effort line number of a dotted key in TOML or JSON source."""
    if not text:
        return None
    parts = [p for p in re.split(r"[.\[\]]", path) if p and not p.isdigit()]
    if not parts:
        return None
    lines = text.splitlines()
    start = 0
    if len(parts) > 1:
        header = re.compile(rf"^\s*\[\s*{re.escape(parts[0])}\s*\]")
        quoted = re.compile(rf'^\s*"{re.escape(parts[0])}"\s*:')
        for i, line in enumerate(lines):
            if header.match(line) or quoted.match(line):
                start = i
                break
    key = re.compile(rf'^\s*"?{re.escape(parts[-1])}"?\s*[=:]')
    for i in range(start, len(lines)):
        if key.match(lines[i]):
            return i + 1
    return start + 1 if len(parts) > 1 and start else None


def _parse_text(text: str, fmt: str) -> dict:
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"column {exc.colno}: {exc.msg}", line=exc.lineno) from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            msg = str(exc)
            m = re.search(r"line (\d+)", msg)
            raise ParseError(msg, line=int(m.group(1)) if m else None) from None
    if not isinstance(data, dict):
        raise ParseError("top level must be a table")
    return data


def _number(value, path, text, positive=False, minimum=None, maximum=None, integer=False) -> float:
    bad = isinstance(value, bool) or not isinstance(value, (int, float))
    if not bad and integer and not float(value).is_integer():
        bad = True
    if not bad and not math.isfinite(value):
        bad = True
    if not bad and positive and not value > 0:
        bad = True
    if not bad and minimum is not None and value < minimum:
        bad = True
    if not bad and maximum is not None and value > maximum:
        bad = True
    if bad:
        need = "an integer" if integer else "a number"
        limits = []
        if positive:
            limits.append("> 0")
        if minimum is not None:
            limits.append(f">= {minimum}")
        if maximum is not None:
            limits.append(f"<= {maximum}")
        detail = f" {' and '.join(limits)}" if limits else ""
        raise ValidationError(f"expected {need}{detail}, got {value!r}", field=path, line=_key_line(text, path))
    return int(value) if integer else float(value)


def _grid(value, path, text) -> tuple:
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "num", "log"}
        if extra or not {"start", "stop", "num"} <= set(value):
            raise ValidationError("grid tables need start, stop and num", field=path, line=_key_line(text, path))
        num = _number(value["num"], f"{path}.num", text, integer=True, minimum=0)
        start = _number(value["start"], f"{path}.start", text)
        stop = _number(value["stop"], f"{path}.stop", text)
        if value.get("log", False):
            if start <= 0:
                raise ValidationError("log grids need start > 0", field=f"{path}.start", line=_key_line(text, path))
            values = np.geomspace(start, stop, num)
        else:
            values = np.linspace(start, stop, num)
    elif isinstance(value, list):
        values = [_number(v, f"{path}[{i}]", text, minimum=0) for i, v in enumerate(value)]
    else:
        raise ValidationError("expected a list or a {start, stop, num} table", field=path, line=_key_line(text, path))
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("grid is empty", field=path, line=_key_line(text, path))
    if np.any(values < 0):
        raise ValidationError("grid values must be non-negative", field=path, line=_key_line(text, path))
    if np.any(np.diff(values) <= 0):
        raise ValidationError("grid must be strictly ascending", field=path, line=_key_line(text, path))
    return tuple(float(v) for v in values)


def _qubit(table: dict, base: DriveParams, path: str, text) -> DriveParams:
    if not isinstance(table, dict):
        raise ValidationError("expected a table", field=path, line=_key_line(text, path))
    kw = {}
    checks = {
        "rabi": dict(minimum=0),
        "t1": dict(positive=True),
        "efficiency": dict(minimum=0, maximum=1),
        "background_rate": dict(minimum=0),
        "dephasing": dict(minimum=0),
    }
    for key, value in table.items():
        kw[key] = _number(value, f"{path}.{key}", text, **checks[key])
    try:
        return replace(base, **kw)
    except InvalidParameters as exc:
        raise ValidationError(str(exc), field=path, line=_key_line(text, path)) from None


def scenario_from_dict(data: dict, text: str | None = None, source: str | None = None) -> Scenario:
    """Validate a parsed scenario document."""
    for key, value in data.items():
        if key not in _TABLES:
            raise ValidationError(f"unknown key; expected one of {sorted(_TABLES)}", field=key, line=_key_line(text, key))
        allowed = _TABLES[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ValidationError("expected a table", field=key, line=_key_line(text, key))
            extra = set(value) - allowed
            if extra:
                bad = sorted(extra)[0]
                raise ValidationError(
                    f"unknown key; expected one of {sorted(allowed)}",
                    field=f"{key}.{bad}",
                    line=_key_line(text, f"{key}.{bad}"),
                )

    preset = None
    base = DriveParams(rabi=3.0)
    if "preset" in data:
        if not isinstance(data["preset"], str):
            raise ValidationError("expected a preset name", field="preset", line=_key_line(text, "preset"))
        try:
            preset = load_preset(data["preset"])
        except ValidationError as exc:
            raise ValidationError(str(exc), field="preset", line=_key_line(text, "preset")) from None
        base = preset.drive()
    params1 = _qubit(data.get("qubit1", {}), base, "qubit1", text)
    params2 = _qubit(data.get("qubit2", {}), params1, "qubit2", text)
    if params1.efficiency <= 0:
        raise ValidationError("efficiency must be positive", field="qubit1.efficiency",
                              line=_key_line(text, "qubit1.efficiency"))

    network = default_network()
    if "network" in data and "elements" in data["network"]:
        elements = data["network"]["elements"]
        if not isinstance(elements, list):
            raise ValidationError("expected a list of elements", field="network.elements",
                                  line=_key_line(text, "network.elements"))
        try:
            network = ModeNetwork.from_dicts(elements)
            build_network(network)
        except NetworkError as exc:
            raise ValidationError(str(exc), field="network.elements",
                                  line=_key_line(text, "network.elements")) from None

    sweep = data.get("sweep", {})
    x_grid = _grid(sweep["x"], "sweep.x", text) if "x" in sweep else None
    t_grid = _grid(sweep["t"], "sweep.t", text) if "t" in sweep else None

    proto = data.get("protocol", {})
    kappa = _number(proto.get("kappa", DEFAULT_KAPPA), "protocol.kappa", text, positive=True)
    target = _number(proto.get("target", 0.9), "protocol.target", text, minimum=0.5, maximum=1)
    method = proto.get("method", "gaussian")
    if method not in METHODS:
        raise ValidationError(f"expected one of {list(METHODS)}, got {method!r}", field="protocol.method",
                              line=_key_line(text, "protocol.method"))

    traj = data.get("trajectories", {})
    n_traj = _number(traj.get("n_traj", 0), "trajectories.n_traj", text, integer=True, minimum=0)
    seed = _number(traj.get("seed", 0), "trajectories.seed", text, integer=True, minimum=0, maximum=2**64 - 1)
    traj_t = _number(traj.get("t", 200.0), "trajectories.t", text, positive=True)

    out = data.get("output", {}).get("dir")
    if out is not None and not isinstance(out, str):
        raise ValidationError("expected a path string", field="output.dir", line=_key_line(text, "output.dir"))
    name = data.get("name", Path(source).stem if source else "scenario")
    if not isinstance(name, str):
        raise ValidationError("expected a string", field="name", line=_key_line(text, "name"))
    return Scenario(
        name=name,
        params1=params1,
        params2=params2,
        network=network,
        x_grid=x_grid,
        t_grid=t_grid,
        kappa=kappa,
        target=target,
        method=method,
        n_traj=n_traj,
        seed=seed,
        traj_t=traj_t,
        preset=preset,
        out_dir=out,
        source=source,
    )


def parse_scenario(text: str, fmt: str = "toml", source: str | None = None) -> Scenario:
    return scenario_from_dict(_parse_text(text, fmt), text, source)


def shipped_scenarios() -> list[str]:
    root = resources.files("mpentangle") / "data" / "scenarios"
    return sorted(p.name[: -len(".scenario")] for p in root.iterdir() if p.name.endswith(".scenario"))


def load_scenario(path) -> Scenario:
    """Read a scenario file; bare names resolve to the shipped scenarios."""
    p = Path(path)
    if not p.exists():
        stem = p.name[: -len(".scenario")] if p.name.endswith(".scenario") else p.name
        res = resources.files("mpentangle") / "data" / "scenarios" / f"{stem}.scenario"
        if p.parent == Path(".") and res.is_file():
            return parse_scenario(res.read_text(), "toml", f"{stem}.scenario")
        raise FileNotFoundError(f"scenario {str(path)!r} not found")
    text = p.read_text()
    fmt = "json" if p.suffix == ".json" or text.lstrip().startswith("{") else "toml"
    return parse_scenario(text, fmt, str(p))


# --- figures ------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return format(float(v), ".12g")


def format_csv(which: str, rows) -> str:
    header = FIGURE_COLUMNS[which]
    lines = [f"# mpentangle {which} schema v{SCHEMA_VERSION}", ",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row length does not match the header")
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a figure table back as (header, float array)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = tuple(lines[0].split(","))
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return header, data.reshape(-1, len(header))


def _figure_params(scenario: Scenario, x: float) -> DriveParams:
    # figures use identical qubits at unit efficiency, T1 as the time unit
    return replace(scenario.params1, rabi=float(x), t1=1.0, efficiency=1.0)


def figure_rows(which: str, scenario: Scenario | None = None) -> list[tuple]:
    if which not in FIGURES:
        raise ValidationError(f"unknown figure {which!r}; expected one of {list(FIGURES)}", field="figure")
    scenario = Scenario() if scenario is None else scenario
    model = scenario.model()
    xs, ts = DEFAULT_GRIDS[which]
    xs = np.asarray(scenario.x_grid) if scenario.x_grid is not None else xs
    ts = np.asarray(scenario.t_grid) if scenario.t_grid is not None and which != "fig4" else ts
    rows = []
    for x in xs:
        p = _figure_params(scenario, x)
        series = {s: counting_series(s, p, p, ts, model) for s in ("PM", "MM", "PP")}
        if which == "fig2":
            for k, t in enumerate(ts):
                rows.append((x, t, series["PM"][0][k], series["MM"][0][k], series["PP"][0][k]))
        elif which == "fig3":
            for k, t in enumerate(ts):
                ne, nm = series["PM"][0][k], series["MM"][0][k]
                ratio = nm / ne if ne > 0 else float("nan")
                rows.append((
                    x, t,
                    ne, math.sqrt(series["PM"][1][k]),
                    nm, math.sqrt(series["MM"][1][k]),
                    series["PP"][0][k], math.sqrt(series["PP"][1][k]),
                    ratio, longtime_ratio(x),
                ))
        else:
            ne, ve = series["PM"][0][0], series["PM"][1][0]
            nm, vm = series["MM"][0][0], series["MM"][1][0]
            q = lambda n, v: v / n - 1.0 if n > 0 else float("nan")  # noqa: E731
            rows.append((x, ne, nm, math.sqrt(ve), math.sqrt(vm), math.sqrt(ne), math.sqrt(nm), q(ne, ve), q(nm, vm)))
    return rows


def run_figure(which: str, scenario: Scenario | None = None, out_dir=None) -> Path:
    """Compute one figure table and write ``<out_dir>/<which>.csv``."""
    scenario = Scenario() if scenario is None else scenario
    out_dir = Path(out_dir or scenario.out_dir or ".")
    text = format_csv(which, figure_rows(which, scenario))
    return atomic_write(out_dir / f"{which}.csv", text)


# --- full report ------------------------------------------------------------------


def _params_dict(p: DriveParams) -> dict:
    return {
        "x": p.rabi,
        "t1": p.t1,
        "efficiency": p.efficiency,
        "background_rate": p.background_rate,
        "dephasing": p.dephasing,
    }


def _compare(label: str, det: float, est: float, se: float, limit: float = SIGMA_LIMIT) -> dict:
    diff = est - det
    z = abs(diff) / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return {
        "quantity": label,
        "deterministic": det,
        "monte_carlo": est,
        "standard_error": se,
        "z": z,
        "passed": bool(z <= limit),
    }


def trajectory_validation(scenario: Scenario, n_traj: int | None = None, seed: int | None = None) -> dict:
    """Oracle comparison of mean, variance and Q for the PM and MM branches."""
    from .trajectories import empirical_distribution, simulate

    n = scenario.n_traj if n_traj is None else n_traj
    seed = scenario.seed if seed is None else seed
    model = scenario.model()
    t = scenario.traj_t
    block = {"t_over_t1": t, "n_traj": n, "seed": seed, "sigma_limit": SIGMA_LIMIT, "states": {}}
    checks = []
    for state in ("PM", "MM"):
        det = counting_stats(state, scenario.params1, scenario.params2, t, model)
        ens = simulate(state, scenario.params1, scenario.params2, t, n, seed, model)
        emp = empirical_distribution(ens, seed=seed)
        rows = [
            _compare(f"{state}.mean", det.mean, emp.mean, emp.se_mean),
            _compare(f"{state}.variance", det.variance, emp.variance, emp.se_variance),
        ]
        if det.q is not None and emp.q is not None:
            rows.append(_compare(f"{state}.q", det.q, emp.q, emp.se_q))
        checks.extend(rows)
        block["states"][state] = {"empirical": emp.to_dict(), "summary": ens.summary()}
    block["checks"] = checks
    block["passed"] = all(c["passed"] for c in checks)
    return block


def _deterministic_checks(scenario: Scenario, model: DetectionModel) -> list[dict]:
    # exact propagator versus trapezoid quadrature on a short window
    out = []
    t = 20.0
    for state in ("PM", "MM"):
        exact = variance(state, scenario.params1, scenario.params2, t, model)
        quad = variance(state, scenario.params1, scenario.params2, t, model, method="trapezoid")
        rel = abs(exact - quad) / max(abs(exact), 1e-300)
        out.append({
            "quantity": f"{state}.variance_t{t:g}",
            "exact": exact,
            "trapezoid": quad,
            "relative_difference": rel,
            "passed": bool(rel < 5e-3),
        })
    return out


def run_scenario(
    scenario,
    n_traj: int | None = None,
    seed: int | None = None,
    method: str | None = None,
    kappa: float | None = None,
    strict: bool = True,
) -> dict:
    """Run the full pipeline and return the JSON-ready report.

    With ``strict`` a failing internal cross-check raises
    :class:`CrossCheckFailure` carrying the report and the failing rows.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if method is not None:
        if method not in METHODS:
            raise ValidationError(f"expected one of {list(METHODS)}", field="protocol.method")
        scenario = replace(scenario, method=method)
    if kappa is not None:
        if not (math.isfinite(kappa) and kappa > 0):
            raise ValidationError("kappa must be positive", field="protocol.kappa")
        scenario = replace(scenario, kappa=float(kappa))
    if n_traj is not None:
        if n_traj < 0:
            raise ValidationError("n_traj must be non-negative", field="trajectories.n_traj")
        scenario = replace(scenario, n_traj=int(n_traj))
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer", field="trajectories.seed")
        scenario = replace(scenario, seed=int(seed))

    model = scenario.model()
    p1, p2 = scenario.params1, scenario.params2
    t = scenario.heralding_time
    stats = {s: counting_stats(s, p1, p2, t, model) for s in JointSpinState}
    report: dict = {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "scenario": scenario.name,
        "qubit1": _params_dict(p1),
        "qubit2": _params_dict(p2),
        "detection_amplitudes": [[float(a.real), float(a.imag)] for a in model.amp],
        "kappa": scenario.kappa,
        "t_over_t1": t,
        "states": {s.name: stats[s].to_dict() for s in JointSpinState},
    }

    stats_e, stats_mm = stats[JointSpinState.PM], stats[JointSpinState.MM]
    empirical = None
    if scenario.method == "empirical":
        if scenario.n_traj < 2:
            raise ValidationError("empirical classification needs trajectories.n_traj >= 2",
                                  field="trajectories.n_traj")
        from .trajectories import simulate

        empirical = {
            s: simulate(s, p1, p2, t, scenario.n_traj, scenario.seed, model).counting_stats()
            for s in ("PM", "MM", "PP")
        }
        stats_e, stats_mm = empirical["PM"], empirical["MM"]
    try:
        pp = empirical["PP"] if empirical else stats[JointSpinState.PP]
        cls = classify(stats_e, stats_mm, pp, scenario.method)
        report["classification"] = cls.to_dict()
        report["classification"]["target_met"] = bool(cls.confidence >= scenario.target)
    except Indistinguishable as exc:
        report["classification"] = {"method": scenario.method, "error": str(exc)}

    if scenario.preset is not None:
        et = avg_entanglement_time(scenario.preset, scenario.kappa)
        report["preset"] = scenario.preset.to_dict()
        report["entanglement_time"] = et.to_dict()
        report.update({k: v for k, v in et.to_dict().items() if k.startswith("avg_entanglement_time")})

    report["mismatch"] = mismatch_analysis(p1, p2, t, model).to_dict()

    checks = _deterministic_checks(scenario, model)
    report["cross_checks"] = {"deterministic": checks}
    failed = [c for c in checks if not c["passed"]]
    if scenario.n_traj > 0:
        block = trajectory_validation(scenario)
        report["trajectory_validation"] = block
        failed += [c for c in block["checks"] if not c["passed"]]
    report["cross_checks"]["passed"] = not failed
    if failed and strict:
        raise CrossCheckFailure(
            f"{len(failed)} cross-check(s) failed: " + ", ".join(c["quantity"] for c in failed),
            diff={"failed": failed, "report": report},
        )
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(report: dict, path) -> Path:
    return atomic_write(path, dumps_report(report))


__all__ = [
    "FIGURES",
    "FIGURE_COLUMNS",
    "MPEntangleError",
    "Scenario",
    "atomic_write",
    "dumps_report",
    "figure_rows",
    "format_csv",
    "load_scenario",
    "parse_scenario",
    "read_csv",
    "run_figure",
    "run_scenario",
    "scenario_from_dict",
    "shipped_scenarios",
    "trajectory_validation",
    "write_report",
]
