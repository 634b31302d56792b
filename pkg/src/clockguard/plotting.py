"""Report figures.

Figures are drawn on bare ``matplotlib.figure.Figure`` objects (no pyplot
state) and written next to the CSV series they plot.  SVG output is made
byte-reproducible by fixing the hash salt and dropping the date stamp.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib
from matplotlib.figure import Figure

from .attack import AttackKind
from .detect import Level

__all__ = ["emit_plots", "plot_adev", "plot_ensemble", "ALARM_GID"]

ALARM_GID = "alarm-marker"

_RC = {
    "svg.hashsalt": "clockguard",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig: Figure, path: Path) -> Path:
    meta = {".svg": {"Date": None}, ".pdf": {"CreationDate": None}}.get(path.suffix, {})
    with matplotlib.rc_context(_RC):
        fig.savefig(path, metadata=meta)
    return path


def _new_figure(width=6.4, height=3.6) -> Figure:
    with matplotlib.rc_context(_RC):
        return Figure(figsize=(width, height), layout="constrained")


def _mark_alarm(ax, epochs: Sequence[float], levels: Sequence[Level]) -> None:
    first = next((t for t, lv in zip(epochs, levels) if lv is Level.ALARM), None)
    if first is None:
        return
    line = ax.axvline(first, color="tab:red", ls="--", lw=1.0, label=f"first ALARM ({first:g} s)")
    line.set_gid(ALARM_GID)


def _write_rows(path: Path, header: str, rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")
    return path


def emit_plots(result, outdir, fmt: str | None = "svg") -> list[Path]:
    """Write the two phase series of a scenario and, unless ``fmt`` is None, their figures.

    receiver_phase: receiver PPS phase against ideal time and the attacker's displacement.
    phase_difference: measured and estimated receiver-minus-reference phase with verdicts.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t = result.epochs
    a = result.analysis
    levels = [v.level for v in a.verdicts]
    files = [
        _write_rows(
            outdir / "receiver_phase.csv",
            "epoch_s,rx_phase_s,attack_offset_s",
            zip(t.tolist(), result.rx_phase.samples.tolist(), result.attack_offset.tolist()),
        ),
        _write_rows(
            outdir / "phase_difference.csv",
            "epoch_s,measured_offset_s,estimated_offset_s,level",
            zip(
                t.tolist(),
                a.unwrapped.offsets.tolist(),
                a.trace.x_hat[:, 0].tolist(),
                [lv.name for lv in levels],
            ),
        ),
    ]
    if fmt is None:
        return files

    attack = result.config.attack
    fig = _new_figure()
    ax = fig.add_subplot()
    ax.plot(t, result.rx_phase.samples * 1e6, lw=1.0, label="receiver PPS phase")
    if attack.kind is not AttackKind.NONE:
        ax.plot(t, result.attack_offset * 1e6, lw=1.0, ls=":", label="attacker displacement")
    _mark_alarm(ax, t, levels)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("phase (µs)")
    ax.set_title("Receiver PPS phase")
    ax.legend(loc="best", fontsize=8)
    files.append(_save(fig, outdir / f"receiver_phase.{fmt}"))

    fig = _new_figure()
    ax = fig.add_subplot()
    ax.plot(t, a.unwrapped.offsets * 1e6, lw=0.8, color="0.6", label="measured")
    ax.plot(t, a.trace.x_hat[:, 0] * 1e6, lw=1.2, label="filter estimate")
    _mark_alarm(ax, t, levels)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("receiver - reference (µs)")
    ax.set_title("Phase difference of receiver and reference")
    ax.legend(loc="best", fontsize=8)
    files.append(_save(fig, outdir / f"phase_difference.{fmt}"))
    return files


def plot_adev(series: dict, path, title: str = "Overlapping Allan deviation") -> Path:
    """Log-log ADEV plot; ``series`` maps a label to a list of AdevPoint."""
    fig = _new_figure(5.0, 3.8)
    ax = fig.add_subplot()
    for label, points in series.items():
        ax.loglog([p.tau for p in points], [p.sigma_y for p in points], marker="o", ms=3, label=label)
    ax.set_xlabel("τ (s)")
    ax.set_ylabel("σ_y(τ)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, Path(path))


def plot_ensemble(run, path) -> Path:
    fig = _new_figure(6.4, 5.0)
    ax1, ax2 = fig.subplots(2, 1, sharex=True)
    t = run.epochs
    for i, x in enumerate(run.member_truth):
        ax1.plot(t, (x - run.timescale) * 1e9, lw=0.8, label=f"member {i}")
    ax1.set_ylabel("member - ensemble (ns)")
    ax1.legend(loc="best", fontsize=7)
    ax2.plot(t, run.steer_error_true * 1e9, lw=0.8, color="tab:purple")
    ax2.set_ylabel("steered - ensemble (ns)")
    ax2.set_xlabel("time (s)")
    return _save(fig, Path(path))
