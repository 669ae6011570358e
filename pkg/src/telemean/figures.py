"""Figure rendering for sweep tables: log-log scaling plots as PNG files.

Kept separate from the sweep commands themselves so table generation
stays import-light; only the report command pays the matplotlib cost.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError

__all__ = ["render_sweep_figure"]


def _slope_label(slopes: dict, key: str) -> str:
    value = slopes.get(key)
    if value == "exact":
        return f"{key} (exact)"
    if isinstance(value, (int, float)):
        return f"{key} (slope {value:.2f})"
    return key


def _render_theta(table: dict, axes) -> None:
    points = table["points"]
    thetas = np.array([p["theta"] for p in points], dtype=np.float64)
    errors = np.array([p["phase_error"] for p in points], dtype=np.float64)
    failures = np.array([p["failure_probability"] for p in points], dtype=np.float64)
    slopes = table["slopes"]
    # a zeroed-out curve cannot sit on a log axis; plot the floor instead
    floor = 1e-18
    axes.loglog(thetas, np.maximum(errors, floor), "o-",
                label=_slope_label(slopes, "phase_error"))
    axes.loglog(thetas, np.maximum(failures, floor), "s--",
                label=_slope_label(slopes, "failure_probability"))
    axes.set_xlabel("theta")
    axes.set_ylabel("per-iteration deviation")
    axes.invert_xaxis()


def _render_eta(table: dict, axes) -> None:
    points = table["points"]
    etas = np.array([p["eta"] for p in points], dtype=np.float64)
    signals = np.array([p["signal_phase"] for p in points], dtype=np.float64)
    steps = np.array([p["elementary_step_count"] for p in points], dtype=np.float64)
    axes.plot(etas, signals, "o-", label=_slope_label(table["slopes"], "signal_phase"))
    axes.set_xlabel("eta (processors)")
    axes.set_ylabel("accumulated signal phase")
    twin = axes.twinx()
    twin.plot(etas, steps, "s--", color="tab:gray", label="steps per round")
    twin.set_ylabel("elementary steps per round")


def render_sweep_figure(table: dict, out_path: str | Path) -> Path:
    """Render one sweep table to a PNG; the table's "sweep" key picks the
    layout. Returns the written path."""
    kind = table.get("sweep")
    if kind not in ("theta", "eta"):
        raise ValidationError(f"not a sweep table (sweep={kind!r})")
    if not table.get("points"):
        raise ValidationError("sweep table has no points")
    out = Path(out_path)
    figure, axes = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    try:
        if kind == "theta":
            _render_theta(table, axes)
        else:
            _render_eta(table, axes)
        axes.grid(True, which="both", alpha=0.3)
        axes.legend(loc="best", fontsize=8)
        figure.tight_layout()
        figure.savefig(out)
    finally:
        plt.close(figure)
    return out
