"""Figure rendering for finished runs.

Renders PNG files next to the CSV artifacts:

* ``consensus_errors.png`` — follower-to-leader error per agent over time;
* ``set_traces.png``       — traces of the estimation / prediction / leader
                             set shape matrices per agent over time;
* ``alarm_timeline.png``   — raised step-3 / step-6 alarms per agent;
* ``sets_kNNN.png``        — one figure per snapshot step: committed
                             prediction, estimation and leader sets with
                             the true state (two-dimensional states only).

Everything is drawn from the in-memory run records, never re-parsed from
the CSVs; diverged (non-finite) values are masked so late-run overflow in
an attacked scenario cannot ruin the axes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .runner import ellipse_boundary

_SET_STYLE = {
    "prediction": dict(color="tab:blue", label="prediction set"),
    "estimate": dict(color="tab:orange", label="estimation set"),
    "leader": dict(color="tab:green", label="leader set"),
}


def _finite(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    return np.where(np.isfinite(arr), arr, np.nan)


def _per_agent(steps):
    agents = sorted({rec.agent for rec in steps})
    return agents, {
        a: sorted((r for r in steps if r.agent == a), key=lambda r: r.k)
        for a in agents
    }


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Individual figures
# ---------------------------------------------------------------------------

def consensus_figure(steps, path: Path) -> Path:
    agents, by_agent = _per_agent(steps)
    fig, ax = plt.subplots(figsize=(7, 4))
    for a in agents:
        ks = [r.k for r in by_agent[a]]
        err = _finite([r.consensus_error for r in by_agent[a]])
        ax.plot(ks, err, marker=".", label=f"agent {a + 1}")
    ax.set_xlabel("step k")
    ax.set_ylabel(r"$\Vert x_i(k) - x^l(k) \Vert$")
    ax.set_title("Follower-to-leader error")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def trace_figure(steps, path: Path) -> Path:
    agents, by_agent = _per_agent(steps)
    fig, axes = plt.subplots(
        1, len(agents), figsize=(5.5 * len(agents), 4), squeeze=False
    )
    for ax, a in zip(axes[0], agents):
        ks = [r.k for r in by_agent[a]]
        for field, label in (
            ("tr_est", "Tr P(k|k)"),
            ("tr_pred", "Tr P(k+1|k)"),
            ("tr_leader", "Tr U(k)"),
        ):
            ax.plot(ks, _finite([getattr(r, field) for r in by_agent[a]]), label=label)
        ax.set_xlabel("step k")
        ax.set_ylabel("trace")
        ax.set_title(f"agent {a + 1} set sizes")
        ax.set_yscale("log")
        ax.legend()
        ax.grid(True, alpha=0.3)
    return _save(fig, path)


def alarm_figure(detections, path: Path) -> Path:
    agents = sorted({d.agent for d in detections})
    fig, ax = plt.subplots(figsize=(7, 2.2 + 0.8 * len(agents)))
    for a in agents:
        k3 = [d.k for d in detections if d.agent == a and d.step3_alarm]
        k6 = [d.k for d in detections if d.agent == a and d.step6_alarm]
        ax.scatter(k3, [a + 1.15] * len(k3), marker="v", color="tab:red",
                   label="step-3 alarm" if a == agents[0] else None)
        ax.scatter(k6, [a + 0.85] * len(k6), marker="^", color="tab:purple",
                   label="step-6 alarm" if a == agents[0] else None)
    ax.set_xlabel("step k")
    ax.set_yticks([a + 1 for a in agents])
    ax.set_yticklabels([f"agent {a + 1}" for a in agents])
    ax.set_ylim(0.5, len(agents) + 1.0)
    ax.set_title("Raised alarms")
    if any(d.step3_alarm or d.step6_alarm for d in detections):
        ax.legend(loc="upper left")
    ax.grid(True, axis="x", alpha=0.3)
    return _save(fig, path)


def snapshot_figure(k: int, captures, path: Path) -> Path:
    agents = sorted(a for (kk, a) in captures if kk == k)
    fig, axes = plt.subplots(
        1, len(agents), figsize=(5 * len(agents), 4.6), squeeze=False
    )
    for ax, a in zip(axes[0], agents):
        sets = captures[(k, a)]
        for name, style in _SET_STYLE.items():
            pts = ellipse_boundary(sets[name])
            ax.plot(pts[:, 0], pts[:, 1], **style)
        x_next = np.asarray(sets["x_next"], dtype=float)
        if np.isfinite(x_next).all():
            ax.plot(*x_next, "k*", markersize=10, label="true x(k+1)")
        ax.plot(*sets["leader"].center, "g+", markersize=10, label="leader x$^l$(k+1)")
        ax.set_title(f"agent {a + 1}, k={k}")
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
    return _save(fig, path)


# ---------------------------------------------------------------------------
# Entry point used by the runner
# ---------------------------------------------------------------------------

def render_figures(result, captures, config, out_dir: Path, snapshots) -> list:
    """Render all figures for a finished run; returns the written paths."""
    out_dir = Path(out_dir)
    paths = []
    if result.steps:
        paths.append(consensus_figure(result.steps, out_dir / "consensus_errors.png"))
        paths.append(trace_figure(result.steps, out_dir / "set_traces.png"))
        paths.append(alarm_figure(result.detections, out_dir / "alarm_timeline.png"))
    if config.models[0].n_x == 2:
        recorded = {kk for (kk, _) in captures}
        for k in sorted(set(snapshots) & recorded):
            paths.append(
                snapshot_figure(k, captures, out_dir / f"sets_k{k:03d}.png")
            )
    return paths
