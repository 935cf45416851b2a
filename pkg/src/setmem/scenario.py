"""Scenario configuration: files in, a fully-wired run description out.

A scenario file (TOML, or JSON with the same layout) declares the fuzzy
models per agent, the communication topology, initial sets, the weight and
noise schedules, the attack, and solver/output settings.  Matrices are
written row-major as nested lists.  `load_scenario` returns a frozen
ScenarioConfig that the detector loop consumes directly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

try:  # 3.11+ standard library, tomli backport otherwise
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import benchmark as bm
from .attacks import (
    NO_ATTACK,
    REPLAY,
    FDI_CONTROL,
    FDI_CHANNEL,
    CHANNEL_ADD,
    CHANNEL_REPLACE,
    AttackConfigError,
    AttackScenario,
    no_attack,
)
from .consensus_graph import Topology, TopologyError
from .ellipsoid import make_ellipsoid
from .fuzzy import ErrorBounds, FuzzyRule, TSModel, triangular_unit_family

OUT_DIR_ENV = "SETMEM_OUT_DIR"

MEMBERSHIP_FAMILIES = ("triangular_unit",)
BACKENDS = ("cvxpy", "reference")


class ConfigError(ValueError):
    """A scenario file that cannot be turned into a runnable configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one run needs; field names match the detector's interface."""

    name: str
    horizon: int
    dynamics: str
    models: tuple
    topology: Topology
    attack: AttackScenario
    x0_true: tuple
    x0_estimate: tuple
    P0: tuple
    x0_leader: np.ndarray
    U0: tuple
    schedule_Q: Callable[[int], np.ndarray]
    schedule_R: Callable[[int], np.ndarray]
    noise: Callable[[int], tuple]
    plant: Callable
    measure: Callable
    tol: float
    backend: str
    max_solver_fallbacks: Optional[int]
    out_dir: str
    snapshots: tuple
    weight_kind: str
    noise_kind: str


# ---------------------------------------------------------------------------
# Element parsers
# ---------------------------------------------------------------------------

def _fail(where: str, message: str) -> ConfigError:
    return ConfigError(f"{where}: {message}")


def _matrix(value, where: str, rows: int = None, cols: int = None) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise _fail(where, f"not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise _fail(where, f"expected a matrix, got {arr.ndim} dimensions")
    if not np.isfinite(arr).all():
        raise _fail(where, "non-finite entries")
    if rows is not None and arr.shape[0] != rows:
        raise _fail(where, f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise _fail(where, f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def _vector(value, where: str, length: int = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise _fail(where, f"not a numeric vector ({exc})") from None
    if not np.isfinite(arr).all():
        raise _fail(where, "non-finite entries")
    if length is not None and arr.shape[0] != length:
        raise _fail(where, f"expected length {length}, got {arr.shape[0]}")
    return arr


def _window(value, where: str) -> tuple:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, int) for v in value)):
        raise _fail(where, f"expected [first, last] integers, got {value!r}")
    return int(value[0]), int(value[1])


def _parse_model(table: dict, where: str) -> TSModel:
    rules_spec = table.get("rules")
    if not rules_spec:
        raise _fail(where, "no [[agents.rules]] entries")
    rules = []
    for idx, rule in enumerate(rules_spec):
        rw = f"{where}.rules[{idx}]"
        missing = [key for key in ("A", "B", "M", "C", "D", "A_leader") if key not in rule]
        if missing:
            raise _fail(rw, f"missing matrices {missing}")
        try:
            rules.append(FuzzyRule(
                A=_matrix(rule["A"], f"{rw}.A"),
                B=_matrix(rule["B"], f"{rw}.B"),
                M=_matrix(rule["M"], f"{rw}.M"),
                C=_matrix(rule["C"], f"{rw}.C"),
                D=_matrix(rule["D"], f"{rw}.D"),
                A_leader=_matrix(rule["A_leader"], f"{rw}.A_leader"),
            ))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise _fail(rw, str(exc)) from None

    member = table.get("memberships", {})
    family = member.get("family", "triangular_unit")
    if family not in MEMBERSHIP_FAMILIES:
        raise _fail(f"{where}.memberships",
                    f"unknown family {family!r}; known: {MEMBERSHIP_FAMILIES}")
    premise = member.get("premise", 0)
    n_x = rules[0].A.shape[0]
    if not isinstance(premise, int) or not 0 <= premise < n_x:
        raise _fail(f"{where}.memberships", f"premise {premise!r} outside state")
    memberships = triangular_unit_family(premise_index=premise)

    bounds_spec = table.get("bounds")
    if bounds_spec is None:
        raise _fail(where, "missing [agents.bounds]")
    missing = [key for key in ("H1", "E1", "H2", "E2", "H3", "E3", "H4", "E4")
               if key not in bounds_spec]
    if missing:
        raise _fail(f"{where}.bounds", f"missing matrices {missing}")
    try:
        bounds = ErrorBounds(**{
            key: _matrix(bounds_spec[key], f"{where}.bounds.{key}")
            for key in ("H1", "E1", "H2", "E2", "H3", "E3", "H4", "E4")
        })
        return TSModel(tuple(rules), memberships, bounds)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise _fail(where, str(exc)) from None


def _parse_attack(table: dict, models, topology) -> AttackScenario:
    kind = table.get("kind", NO_ATTACK)
    n_agents = topology.n_agents
    n_u = models[0].n_u
    n_x = models[0].n_x

    def agents_list(key="targets"):
        targets = table.get(key)
        if targets is None:
            raise _fail("attack", f"{kind} requires '{key}'")
        if not all(isinstance(t, int) and 0 <= t < n_agents for t in targets):
            raise _fail("attack", f"{key} {targets!r} outside 0..{n_agents - 1}")
        return tuple(targets)

    try:
        if kind == NO_ATTACK:
            return no_attack()
        if kind == REPLAY:
            return AttackScenario(
                kind=REPLAY,
                record_window=_window(table.get("record"), "attack.record"),
                active_window=_window(table.get("active"), "attack.active"),
                targets=agents_list(),
            )
        if kind == FDI_CONTROL:
            return AttackScenario(
                kind=FDI_CONTROL,
                active_window=_window(table.get("active"), "attack.active"),
                injection=_vector(table.get("injection"), "attack.injection", n_u),
                targets=agents_list(),
            )
        if kind == FDI_CHANNEL:
            edges = table.get("edges")
            if not edges:
                raise _fail("attack", "fdi_channel requires 'edges' ([[sender, receiver]])")
            parsed = []
            for edge in edges:
                if (not isinstance(edge, (list, tuple)) or len(edge) != 2
                        or not all(isinstance(v, int) and 0 <= v < n_agents for v in edge)):
                    raise _fail("attack", f"bad edge {edge!r}")
                parsed.append((edge[0], edge[1]))
            mode = table.get("mode", CHANNEL_REPLACE)
            if mode not in (CHANNEL_REPLACE, CHANNEL_ADD):
                raise _fail("attack", f"mode must be replace/add, got {mode!r}")
            return AttackScenario(
                kind=FDI_CHANNEL,
                active_window=_window(table.get("active"), "attack.active"),
                injection=_vector(table.get("injection"), "attack.injection", n_x),
                targets=tuple(parsed),
                channel_mode=mode,
            )
    except AttackConfigError as exc:
        raise _fail("attack", str(exc)) from None
    raise _fail("attack", f"unknown kind {kind!r}")


def _initial_shapes(value, where: str, n_x: int, n_agents: int) -> tuple:
    """Scalar (multiple of identity), one matrix, or one matrix per agent."""
    if isinstance(value, (int, float)):
        if value <= 0:
            raise _fail(where, f"scalar must be positive, got {value}")
        return tuple(float(value) * np.eye(n_x) for _ in range(n_agents))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        mat = _matrix(value, where, n_x, n_x)
        return tuple(mat.copy() for _ in range(n_agents))
    if arr.ndim == 3:
        if arr.shape[0] != n_agents:
            raise _fail(where, f"expected {n_agents} matrices, got {arr.shape[0]}")
        return tuple(_matrix(arr[i], f"{where}[{i}]", n_x, n_x) for i in range(n_agents))
    raise _fail(where, "expected a scalar, matrix, or list of per-agent matrices")


def _per_agent_vectors(value, where: str, n_x: int, n_agents: int) -> tuple:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        vec = _vector(value, where, n_x)
        return tuple(vec.copy() for _ in range(n_agents))
    if arr.ndim == 2:
        if arr.shape[0] != n_agents:
            raise _fail(where, f"expected {n_agents} vectors, got {arr.shape[0]}")
        return tuple(_vector(arr[i], f"{where}[{i}]", n_x) for i in range(n_agents))
    raise _fail(where, "expected one vector or a per-agent list of vectors")


# ---------------------------------------------------------------------------
# Registries: true dynamics, weight schedules, noise generators
# ---------------------------------------------------------------------------

def _benchmark_dynamics(models, topology):
    if topology.n_agents != bm.N_AGENTS or models[0].n_x != 2:
        raise _fail("dynamics",
                    "benchmark_quadratic needs exactly 2 agents with 2 states")

    def plant(agent, x, u, w):
        return bm.simulate_plant(agent + 1, x, u, w)

    def measure(agent, x, v):
        return bm.measure(agent + 1, x, v)

    return plant, measure


DYNAMICS = {"benchmark_quadratic": _benchmark_dynamics}


def _weight_schedules(table: dict, models):
    kind = table.get("weights", "benchmark_decay")
    n_w = models[0].rules[0].M.shape[1]
    n_v = models[0].rules[0].D.shape[1]
    if kind == "benchmark_decay":
        if (n_w, n_v) != (1, 1):
            raise _fail("schedules", "benchmark_decay is scalar-noise only")
        return bm.schedule_Q, bm.schedule_R, kind
    if kind == "constant":
        q = float(table.get("q", 1.0))
        r = float(table.get("r", 1.0))
        if q <= 0 or r <= 0:
            raise _fail("schedules", f"constant weights must be positive (q={q}, r={r})")
        Q = q * np.eye(n_w)
        R = r * np.eye(n_v)
        return (lambda k: Q), (lambda k: R), kind
    raise _fail("schedules", f"unknown weights schedule {kind!r}")


def _seeded_uniform(seed: int, schedule_Q, schedule_R, n_w: int, n_v: int):
    """Deterministic per-step draws, uniform over each admissible ellipsoid."""

    def draw(rng, bound, size):
        direction = rng.standard_normal(size)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            return np.zeros(size)
        radius = rng.random() ** (1.0 / size)
        unit = direction / norm * radius
        L = np.linalg.cholesky(np.atleast_2d(np.asarray(bound, dtype=float)))
        sample = L @ unit
        return float(sample[0]) if size == 1 else sample

    def gen(k):
        rng = np.random.default_rng((seed, k))
        return (draw(rng, schedule_Q(k), n_w), draw(rng, schedule_R(k), n_v))

    return gen


def _noise_generator(table: dict, schedule_Q, schedule_R, models):
    kind = table.get("noise", "benchmark_sin")
    n_w = models[0].rules[0].M.shape[1]
    n_v = models[0].rules[0].D.shape[1]
    if kind == "benchmark_sin":
        if (n_w, n_v) != (1, 1):
            raise _fail("schedules", "benchmark_sin is scalar-noise only")
        return bm.noise, kind
    if kind == "zero":
        w0 = 0.0 if n_w == 1 else np.zeros(n_w)
        v0 = 0.0 if n_v == 1 else np.zeros(n_v)
        return (lambda k: (w0, v0)), kind
    if kind == "seeded_uniform":
        seed = table.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise _fail("schedules", f"seed must be a non-negative integer, got {seed!r}")
        return _seeded_uniform(seed, schedule_Q, schedule_R, n_w, n_v), kind
    raise _fail("schedules", f"unknown noise generator {kind!r}")


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def scenario_from_dict(data: dict, default_name: str = "scenario") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table/object")
    name = data.get("name", default_name)
    horizon = data.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        raise _fail("horizon", f"must be a positive integer, got {horizon!r}")

    agents = data.get("agents")
    if not agents:
        raise ConfigError("no [[agents]] entries")
    models = tuple(
        _parse_model(spec, f"agents[{idx}]") for idx, spec in enumerate(agents)
    )
    dims = {
        (m.n_x, m.n_u, m.n_y, m.r,
         m.rules[0].M.shape[1], m.rules[0].D.shape[1])
        for m in models
    }
    if len(dims) != 1:
        raise ConfigError(f"agents disagree on dimensions: {sorted(dims)}")
    n_x = models[0].n_x

    topo_spec = data.get("topology", {})
    try:
        topology = Topology(
            _matrix(topo_spec.get("adjacency"), "topology.adjacency",
                    len(models), len(models)),
            _vector(topo_spec.get("pinning"), "topology.pinning", len(models)),
        )
    except TopologyError as exc:
        raise _fail("topology", str(exc)) from None

    dynamics = data.get("dynamics", "benchmark_quadratic")
    if dynamics not in DYNAMICS:
        raise _fail("dynamics", f"unknown {dynamics!r}; known: {sorted(DYNAMICS)}")
    plant, measure = DYNAMICS[dynamics](models, topology)

    schedules = data.get("schedules", {})
    schedule_Q, schedule_R, weight_kind = _weight_schedules(schedules, models)
    noise, noise_kind = _noise_generator(schedules, schedule_Q, schedule_R, models)

    initial = data.get("initial", {})
    x0_true = _per_agent_vectors(
        initial.get("x_true"), "initial.x_true", n_x, len(models))
    x0_estimate = _per_agent_vectors(
        initial.get("x_estimate"), "initial.x_estimate", n_x, len(models))
    x0_leader = _vector(initial.get("x_leader"), "initial.x_leader", n_x)
    P0 = _initial_shapes(initial.get("P"), "initial.P", n_x, len(models))
    U0 = _initial_shapes(initial.get("U"), "initial.U", n_x, len(models))
    for i in range(len(models)):
        try:
            make_ellipsoid(x0_estimate[i], P0[i])
            make_ellipsoid(x0_leader, U0[i])
        except ValueError as exc:
            raise _fail(f"initial (agent {i})", str(exc)) from None

    attack = _parse_attack(data.get("attack", {}), models, topology)

    solver = data.get("solver", {})
    tol = float(solver.get("tol", 1e-7))
    if not 1e-10 <= tol <= 1e-4:
        raise _fail("solver.tol", f"{tol} outside [1e-10, 1e-4]")
    backend = solver.get("backend", "cvxpy")
    if backend not in BACKENDS:
        raise _fail("solver.backend", f"unknown {backend!r}; known: {BACKENDS}")
    max_fallbacks = solver.get("max_fallbacks")
    if max_fallbacks is not None and (
            not isinstance(max_fallbacks, int) or max_fallbacks < 0):
        raise _fail("solver.max_fallbacks", f"bad value {max_fallbacks!r}")

    output = data.get("output", {})
    out_dir = output.get("dir", os.path.join("runs", str(name)))
    snapshots = output.get("snapshots", [22, 23, 24])
    if not all(isinstance(s, int) and 0 <= s < horizon for s in snapshots):
        raise _fail("output.snapshots", f"{snapshots!r} outside 0..{horizon - 1}")

    return ScenarioConfig(
        name=str(name),
        horizon=horizon,
        dynamics=dynamics,
        models=models,
        topology=topology,
        attack=attack,
        x0_true=x0_true,
        x0_estimate=x0_estimate,
        P0=P0,
        x0_leader=x0_leader,
        U0=U0,
        schedule_Q=schedule_Q,
        schedule_R=schedule_R,
        noise=noise,
        plant=plant,
        measure=measure,
        tol=tol,
        backend=backend,
        max_solver_fallbacks=max_fallbacks,
        out_dir=str(out_dir),
        snapshots=tuple(sorted(set(snapshots))),
        weight_kind=weight_kind,
        noise_kind=noise_kind,
    )


def load_scenario(path) -> ScenarioConfig:
    """Read a .toml or .json scenario file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such file: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    elif path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    else:
        raise ConfigError(f"{path}: expected a .toml or .json scenario file")
    return scenario_from_dict(data, default_name=path.stem)


def resolve_out_dir(config: ScenarioConfig, override: str = None) -> str:
    """CLI flag beats the environment override beats the file's setting."""
    if override:
        return override
    return os.environ.get(OUT_DIR_ENV) or config.out_dir
