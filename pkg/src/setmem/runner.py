"""Scenario execution and artifact emission.

`run_scenario` drives the detection loop over a loaded scenario and writes
the run artifacts into the output directory:

* ``steps.csv``      — one row per (iteration, agent) with states, set
                       sizes, inputs, measurements, alarms and flags;
* ``detections.csv`` — the alarm/recovery/fallback log, one row per
                       (iteration, agent);
* ``consensus.csv``  — per-step follower-to-leader error and set traces
                       (the plot data behind the trace figures);
* ``ellipses.csv``   — 256-point boundary polylines of the committed
                       prediction / estimation / leader sets at the
                       requested snapshot steps plus every alarm step
                       (two-dimensional state spaces only);
* ``summary.json``   — run-level counts, alarm indices and final errors;
* PNG figures rendered from the same in-memory records (see report.py).

Writers are single-owner: records stream out of the loop once, and a run
that aborts on the solver-fallback budget still flushes everything recorded
up to the abort before the summary is written.

Floats are formatted with ``repr`` (shortest round-trip decimal), so two
runs of the same scenario with the same backend produce byte-identical CSV
files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .detector import RunResult, run_algorithm1
from .ellipsoid import Ellipsoid, UnsupportedDimension, shape_factor
from .scenario import resolve_out_dir

BOUNDARY_POINTS = 256

STEPS_FILE = "steps.csv"
DETECTIONS_FILE = "detections.csv"
CONSENSUS_FILE = "consensus.csv"
ELLIPSES_FILE = "ellipses.csv"
SUMMARY_FILE = "summary.json"


@dataclasses.dataclass(frozen=True)
class RunArtifacts:
    """Everything a finished run leaves behind."""

    result: RunResult
    out_dir: Path
    files: dict          # artifact name -> Path
    figures: tuple       # rendered figure paths


# ---------------------------------------------------------------------------
# Value formatting
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    """Shortest-round-trip, deterministic cell formatting."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return value
    raise TypeError(f"no CSV formatting rule for {type(value).__name__}")


def _flatten(record) -> dict:
    """Dataclass record -> flat column dict; vector fields get _1.._n."""
    row = {}
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        if f.name == "flags":
            row[f.name] = ";".join(value)
        elif isinstance(value, tuple):
            for idx, comp in enumerate(value, start=1):
                row[f"{f.name}_{idx}"] = comp
        else:
            row[f.name] = value
    return row


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_records(path: Path, records) -> None:
    if not records:
        _write_csv(path, ["k", "agent"], [])
        return
    flat = [_flatten(rec) for rec in records]
    header = list(flat[0].keys())
    _write_csv(path, header, ([row[col] for col in header] for row in flat))


def _jsonable(obj):
    """JSON-safe copy; non-finite floats become their repr strings."""
    if isinstance(obj, dict):
        return {str(key): _jsonable(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(val) for val in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


# ---------------------------------------------------------------------------
# Ellipse plot data
# ---------------------------------------------------------------------------

def ellipse_boundary(E: Ellipsoid, n: int = BOUNDARY_POINTS) -> np.ndarray:
    """(n, 2) boundary points of a two-dimensional ellipsoid."""
    if E.dim != 2:
        raise UnsupportedDimension(
            f"boundary sampling needs a 2-D set, got dimension {E.dim}"
        )
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ring = np.vstack([np.cos(theta), np.sin(theta)])
    return (E.center[:, None] + shape_factor(E) @ ring).T


def _alarm_steps(result: RunResult):
    return {d.k for d in result.detections if d.step3_alarm or d.step6_alarm}


def _ellipse_rows(captures, wanted):
    for k in wanted:
        agents = sorted(a for (kk, a) in captures if kk == k)
        for agent in agents:
            sets = captures[(k, agent)]
            for name in ("prediction", "estimate", "leader"):
                pts = ellipse_boundary(sets[name])
                for idx, (x1, x2) in enumerate(pts):
                    yield [k, agent, name, idx, x1, x2]


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

def _summarize(config, result: RunResult, recovery: bool) -> dict:
    n_agents = config.topology.n_agents
    alarms = {
        "step3": {a: [] for a in range(n_agents)},
        "step6": {a: [] for a in range(n_agents)},
    }
    for det in result.detections:
        if det.step3_alarm:
            alarms["step3"][det.agent].append(det.k)
        if det.step6_alarm:
            alarms["step6"][det.agent].append(det.k)
    leader0 = np.asarray(config.x0_leader, dtype=float).reshape(-1)
    initial_err = {
        a: float(np.linalg.norm(np.asarray(config.x0_true[a], float) - leader0))
        for a in range(n_agents)
    }
    final_err = {
        a: float(np.linalg.norm(result.final_states[a] - result.leader_final))
        for a in range(n_agents)
    }
    residual_max = max((r[3] for r in result.residuals), default=0.0)
    return {
        "scenario": config.name,
        "horizon": config.horizon,
        "n_agents": n_agents,
        "attack": config.attack.kind,
        "recovery": recovery,
        "backend": config.backend,
        "tol": config.tol,
        "aborted": result.aborted,
        "abort_reason": result.abort_reason,
        "steps_recorded": len(result.steps),
        "solver_fallbacks": result.solver_fallbacks,
        "solver_residual_max": residual_max,
        "alarm_counts": {
            kind: sum(len(ks) for ks in per_agent.values())
            for kind, per_agent in alarms.items()
        },
        "alarms": alarms,
        "initial_consensus_errors": initial_err,
        "final_consensus_errors": final_err,
        "final_states": {a: result.final_states[a] for a in range(n_agents)},
        "leader_final": result.leader_final,
    }


# ---------------------------------------------------------------------------
# Run entry point
# ---------------------------------------------------------------------------

class _DumpingConfig:
    """Config proxy that adds the SDP dump directory attribute."""

    def __init__(self, config, dump_dir: str):
        self._config = config
        self.dump_sdp = dump_dir

    def __getattr__(self, name):
        return getattr(self._config, name)


def run_scenario(
    config,
    recovery: bool = True,
    out_dir=None,
    dump_sdp: bool = False,
    snapshots=None,
    render: bool = True,
) -> RunArtifacts:
    """Run a scenario and write all artifacts; returns paths and the result.

    `out_dir` overrides the config/environment output directory;
    `snapshots` overrides the config's snapshot list for the ellipse plot
    data and set figures; `render=False` skips figure rendering (CSV and
    JSON artifacts are always written).
    """
    out = Path(resolve_out_dir(config, out_dir))
    out.mkdir(parents=True, exist_ok=True)

    captures = {}

    def _capture(payload):
        for entry in payload["agents"]:
            captures[(payload["k"], entry["agent"])] = {
                "prediction": entry["prediction"],
                "estimate": entry["estimate"],
                "leader": entry["leader_set"],
                "x_next": np.asarray(entry["x_next"], dtype=float),
            }

    run_config = _DumpingConfig(config, str(out / "sdp")) if dump_sdp else config
    result = run_algorithm1(run_config, recovery=recovery, on_step=_capture)

    snapshot_list = config.snapshots if snapshots is None else tuple(snapshots)
    recorded = {k for (k, _) in captures}
    wanted = sorted((set(snapshot_list) | _alarm_steps(result)) & recorded)

    files = {
        STEPS_FILE: out / STEPS_FILE,
        DETECTIONS_FILE: out / DETECTIONS_FILE,
        CONSENSUS_FILE: out / CONSENSUS_FILE,
        SUMMARY_FILE: out / SUMMARY_FILE,
    }
    _write_records(files[STEPS_FILE], result.steps)
    _write_records(files[DETECTIONS_FILE], result.detections)
    _write_csv(
        files[CONSENSUS_FILE],
        ["k", "agent", "consensus_error", "tr_est", "tr_pred", "tr_leader"],
        (
            [rec.k, rec.agent, rec.consensus_error, rec.tr_est, rec.tr_pred, rec.tr_leader]
            for rec in result.steps
        ),
    )
    if config.models[0].n_x == 2:
        files[ELLIPSES_FILE] = out / ELLIPSES_FILE
        _write_csv(
            files[ELLIPSES_FILE],
            ["k", "agent", "set", "point", "x1", "x2"],
            _ellipse_rows(captures, wanted),
        )

    summary = _summarize(config, result, recovery)
    with open(files[SUMMARY_FILE], "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")

    figures = ()
    if render:
        from . import report

        figures = tuple(
            report.render_figures(result, captures, config, out, snapshot_list)
        )

    return RunArtifacts(result=result, out_dir=out, files=files, figures=figures)
