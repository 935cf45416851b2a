"""Command-line interface.

Three subcommands:

* ``run <config>``       — execute a scenario and write CSV/JSON/figure
                           artifacts (exit 0 clean, 2 on solver abort);
* ``validate <config>``  — parse and validate a scenario file;
* ``oracle-intersect``   — compare the analytic ellipsoid-intersection
                           test against the dense grid oracle on two sets
                           given as JSON files (debug helper).

``<config>`` is a path to a scenario file, or the name of a bundled
scenario (``attack_free``, ``replay``, ``fdi_control``, ``fdi_channel``).
Config and I/O errors exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

from .detector import NoiseBoundViolation
from .ellipsoid import (
    UnsupportedDimension,
    grid_overlap_oracle,
    intersects,
    make_ellipsoid,
    min_overlap,
)
from .scenario import BACKENDS, ConfigError, load_scenario
from .runner import run_scenario

_TOL_RANGE = (1e-10, 1e-4)


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

def _load_config(arg: str):
    path = Path(arg)
    if path.exists():
        return load_scenario(path)
    name = arg if arg.endswith(".toml") else f"{arg}.toml"
    bundled = resources.files("setmem.configs").joinpath(name)
    if bundled.is_file():
        with resources.as_file(bundled) as real:
            return load_scenario(real)
    raise ConfigError(f"config not found: {arg!r} is neither a file nor a bundled scenario")


def _parse_snapshots(text: str, horizon: int):
    try:
        ks = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"--snapshots must be comma-separated integers: {text!r}") from exc
    bad = [k for k in ks if not 0 <= k < horizon]
    if bad:
        raise ConfigError(f"--snapshots outside [0, {horizon}): {bad}")
    return tuple(sorted(set(ks)))


def _apply_overrides(config, args):
    changes = {}
    if args.tol is not None:
        lo, hi = _TOL_RANGE
        if not lo <= args.tol <= hi:
            raise ConfigError(f"--tol must be in [{lo:g}, {hi:g}], got {args.tol:g}")
        changes["tol"] = args.tol
    if args.backend is not None:
        changes["backend"] = args.backend
    return dataclasses.replace(config, **changes) if changes else config


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    snapshots = None
    if args.snapshots is not None:
        snapshots = _parse_snapshots(args.snapshots, config.horizon)
    artifacts = run_scenario(
        config,
        recovery=not args.no_recovery,
        out_dir=args.out,
        dump_sdp=args.dump_sdp,
        snapshots=snapshots,
    )
    result = artifacts.result
    step3 = sum(d.step3_alarm for d in result.detections)
    step6 = sum(d.step6_alarm for d in result.detections)
    names = ", ".join(sorted(p.name for p in artifacts.files.values()))
    print(f"scenario: {config.name}  (horizon {config.horizon}, attack {config.attack.kind})")
    print(f"wrote: {artifacts.out_dir}  ({names}, {len(artifacts.figures)} figures)")
    print(
        f"alarms: step3={step3} step6={step6}  "
        f"solver fallbacks: {result.solver_fallbacks}"
    )
    if result.aborted:
        print(f"aborted: {result.abort_reason}", file=sys.stderr)
        return 2
    return 0


def _cmd_validate(args) -> int:
    config = _load_config(args.config)
    print(
        f"OK: {config.name}  horizon={config.horizon} "
        f"agents={config.topology.n_agents} attack={config.attack.kind}"
    )
    return 0


def _read_ellipsoid(path: str):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read ellipsoid file {path}: {exc}") from exc
    if not isinstance(data, dict) or "center" not in data or "shape" not in data:
        raise ConfigError(f"{path} must be a JSON object with 'center' and 'shape'")
    try:
        return make_ellipsoid(data["center"], data["shape"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path} does not define a valid ellipsoid: {exc}") from exc


def _cmd_oracle(args) -> int:
    E1 = _read_ellipsoid(args.e1)
    E2 = _read_ellipsoid(args.e2)
    k_min = min_overlap(E1, E2)
    analytic = intersects(E1, E2)
    verdict = {True: "intersecting", False: "disjoint"}
    print(f"K_min = {k_min!r}")
    print(f"analytic verdict: {verdict[analytic]}")
    try:
        grid = grid_overlap_oracle(E1, E2, resolution=400)
    except UnsupportedDimension:
        print("grid oracle (400): unavailable (needs 2-D sets)")
        return 0
    print(f"grid oracle (400): {verdict[grid]}")
    print(f"agreement: {'yes' if grid == analytic else 'no'}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setmem",
        description="Set-membership filtering and attack detection scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and write artifacts")
    run_p.add_argument("config", help="scenario file or bundled scenario name")
    run_p.add_argument("--tol", type=float, default=None, help="solver tolerance override")
    run_p.add_argument("--out", default=None, help="output directory override")
    run_p.add_argument("--dump-sdp", action="store_true",
                       help="dump every solved program in sparse SDPA format")
    run_p.add_argument("--no-recovery", action="store_true",
                       help="log alarms but keep the computed sets and inputs")
    run_p.add_argument("--snapshots", default=None, metavar="K1,K2,...",
                       help="snapshot steps for set figures and ellipse plot data")
    run_p.add_argument("--backend", choices=list(BACKENDS), default=None,
                       help="SDP backend override")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="parse and validate a scenario file")
    val_p.add_argument("config", help="scenario file or bundled scenario name")
    val_p.set_defaults(func=_cmd_validate)

    orc_p = sub.add_parser(
        "oracle-intersect",
        help="compare analytic and grid intersection tests on two JSON ellipsoids",
    )
    orc_p.add_argument("e1", help="JSON file with 'center' and 'shape'")
    orc_p.add_argument("e2", help="JSON file with 'center' and 'shape'")
    orc_p.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, NoiseBoundViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
