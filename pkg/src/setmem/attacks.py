"""Deterministic attack injectors: replayed sensors, forged inputs, forged links.

Three attack families share one scenario record:

* replay -- the attacker records a window of true sensor outputs and later
  substitutes them for the live ones;
* forged control -- a constant vector is added onto the actuator command
  inside the active window;
* forged channel -- the estimate transmitted over one directed link is
  replaced (or, optionally, shifted) by a constant vector.

All injectors are pure and are exact identities outside their windows:
untouched values are returned as the same object, not a copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

NO_ATTACK = "none"
REPLAY = "replay"
FDI_CONTROL = "fdi_control"
FDI_CHANNEL = "fdi_channel"

KINDS = (NO_ATTACK, REPLAY, FDI_CONTROL, FDI_CHANNEL)

CHANNEL_REPLACE = "replace"
CHANNEL_ADD = "add"


class AttackConfigError(ValueError):
    pass


class MissingHistory(LookupError):
    """Replay needs a recorded output that was never stored."""


@dataclass(frozen=True)
class AttackScenario:
    """One attack campaign; kind 'none' makes every injector a passthrough.

    targets holds agent indices for replay / forged-control kinds and
    directed (sender, receiver) edges for the forged-channel kind.
    """

    kind: str = NO_ATTACK
    active_window: Optional[tuple[int, int]] = None
    record_window: Optional[tuple[int, int]] = None
    injection: Optional[np.ndarray] = None
    targets: tuple = ()
    channel_mode: str = CHANNEL_REPLACE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackConfigError(f"unknown attack kind {self.kind!r}")
        if self.channel_mode not in (CHANNEL_REPLACE, CHANNEL_ADD):
            raise AttackConfigError(f"unknown channel_mode {self.channel_mode!r}")
        if self.kind == NO_ATTACK:
            return
        win = self.active_window
        if win is None or len(win) != 2 or not (0 <= win[0] <= win[1]):
            raise AttackConfigError(f"bad active window {win!r}")
        object.__setattr__(self, "active_window", (int(win[0]), int(win[1])))
        if not self.targets:
            raise AttackConfigError("attack declares no targets")
        if self.kind == REPLAY:
            rec = self.record_window
            if rec is None or len(rec) != 2 or not (0 <= rec[0] <= rec[1]):
                raise AttackConfigError(f"bad record window {rec!r}")
            if win[0] - rec[1] < 1:
                raise AttackConfigError(
                    "replay must start at least one step after recording ends"
                )
            object.__setattr__(self, "record_window", (int(rec[0]), int(rec[1])))
            object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        elif self.kind == FDI_CONTROL:
            object.__setattr__(self, "injection", _injection_vec(self.injection))
            object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        else:  # FDI_CHANNEL
            object.__setattr__(self, "injection", _injection_vec(self.injection))
            edges = []
            for e in self.targets:
                if len(e) != 2 or int(e[0]) == int(e[1]):
                    raise AttackConfigError(f"bad channel edge {e!r}")
                edges.append((int(e[0]), int(e[1])))
            object.__setattr__(self, "targets", tuple(edges))

    def active(self, k: int) -> bool:
        return (
            self.kind != NO_ATTACK
            and self.active_window[0] <= k <= self.active_window[1]
        )


def _injection_vec(value) -> np.ndarray:
    if value is None:
        raise AttackConfigError("injection vector required for this attack kind")
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.size == 0 or not np.isfinite(v).all():
        raise AttackConfigError(f"bad injection vector {value!r}")
    v.setflags(write=False)
    return v


def no_attack() -> AttackScenario:
    return AttackScenario()


# ---------------------------------------------------------------------------
# Injectors
# ---------------------------------------------------------------------------

def apply_sensor_attack(
    scenario: AttackScenario,
    k: int,
    y_true: np.ndarray,
    history: Mapping[int, np.ndarray],
    agent: Optional[int] = None,
):
    """Replayed measurement at sensor time k, or y_true untouched.

    history maps sensor time -> recorded true output for the targeted agent.
    Inside the window, step k - k_start of the replay serves the recorded
    output at the same offset into the record window, repeating cyclically
    if the replay window is the longer one.
    """
    if scenario.kind != REPLAY or not scenario.active(k):
        return y_true
    if agent is not None and agent not in scenario.targets:
        return y_true
    rec_lo, rec_hi = scenario.record_window
    span = rec_hi - rec_lo + 1
    source = rec_lo + (k - scenario.active_window[0]) % span
    if source not in history:
        raise MissingHistory(f"no recorded output for time {source}")
    return np.asarray(history[source], dtype=float)


def apply_control_attack(
    scenario: AttackScenario,
    k: int,
    u: np.ndarray,
    agent: Optional[int] = None,
):
    """Actuator command with the forged increment added inside the window."""
    if scenario.kind != FDI_CONTROL or not scenario.active(k):
        return u
    if agent is not None and agent not in scenario.targets:
        return u
    return np.asarray(u, dtype=float) + scenario.injection


def apply_channel_attack(
    scenario: AttackScenario,
    k: int,
    edge: tuple[int, int],
    xbar: np.ndarray,
):
    """Estimate as received over a directed link (sender, receiver)."""
    if scenario.kind != FDI_CHANNEL or not scenario.active(k):
        return xbar
    if (int(edge[0]), int(edge[1])) not in scenario.targets:
        return xbar
    if scenario.channel_mode == CHANNEL_ADD:
        return np.asarray(xbar, dtype=float) + scenario.injection
    return scenario.injection.copy()
