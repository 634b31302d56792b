"""Allan deviation of phase data and its link to the clock diffusions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .clocksim import NoiseSpec, PhaseTrajectory
from .errors import InvalidArgument

__all__ = [
    "AdevPoint",
    "FitResult",
    "overlapping_adev",
    "analytic_adev",
    "fit_diffusion",
    "write_adev_csv",
    "COMPONENTS",
]

COMPONENTS = ("wpm", "wfm", "rwfm", "rwd")


@dataclass(frozen=True)
class AdevPoint:
    tau: float
    sigma_y: float
    n_pairs: int


def _as_phase(phase, dt):
    if isinstance(phase, PhaseTrajectory):
        return phase.samples, phase.dt
    if dt is None:
        raise InvalidArgument("dt is required when phase is a plain array")
    return np.asarray(phase, dtype=float), float(dt)


def overlapping_adev(phase, taus: Iterable[float], dt: float | None = None) -> list[AdevPoint]:
    """Overlapping Allan deviation at each averaging time in ``taus``.

    ``phase`` is a PhaseTrajectory or an array of phase samples (then
    ``dt`` is required).  Every tau must be an integer multiple of dt.
    Taus needing more than the available data are skipped with a warning.
    """
    x, dt = _as_phase(phase, dt)
    n = x.size
    points = []
    for tau in taus:
        m_real = tau / dt
        m = int(round(m_real))
        if m < 1 or abs(m_real - m) > 1e-9 * max(1.0, m_real):
            raise InvalidArgument(f"tau {tau!r} is not a positive multiple of dt {dt!r}")
        pairs = n - 2 * m
        if pairs < 1:
            warnings.warn(f"skipping tau={tau!r}: needs {2 * m + 1} samples, have {n}")
            continue
        d2 = x[2 * m :] - 2 * x[m : n - m] + x[: n - 2 * m]
        tau_s = m * dt
        avar = np.dot(d2, d2) / (2 * tau_s * tau_s * pairs)
        points.append(AdevPoint(tau_s, float(np.sqrt(avar)), pairs))
    return points


def _basis(tau: np.ndarray) -> np.ndarray:
    """Allan-variance response of unit (3*wpm**2, q1, q2, q3) at each tau."""
    tau = np.asarray(tau, dtype=float)
    return np.column_stack([tau**-2.0, 1.0 / tau, tau / 3.0, tau**3 / 20.0])


def analytic_adev(spec: NoiseSpec, tau: float) -> float:
    """Closed-form Allan deviation of a clock with diffusions ``spec``.

    The white-PM term is the discrete-sample value ``3 sigma**2 / tau**2``,
    exact for the simulator at its own sampling rate.
    """
    if not tau > 0:
        raise InvalidArgument(f"tau must be > 0, got {tau}")
    coeffs = np.array([3 * spec.wpm_sigma**2, spec.q1, spec.q2, spec.q3])
    return float(np.sqrt(_basis([tau])[0] @ coeffs))


@dataclass(frozen=True)
class FitResult:
    spec: NoiseSpec
    residual: float  # RMS relative misfit of the Allan variance
    rank_deficient: bool


def fit_diffusion(
    points: Sequence[AdevPoint], components: Sequence[str] = COMPONENTS
) -> FitResult:
    """Non-negative least-squares diffusions reproducing the given ADEV points.

    The fit is in Allan variance, with each point weighted by its own
    inverse variance so that all taus count equally.  ``components``
    restricts the model, e.g. ``("wfm",)`` for a single white-FM term.
    """
    if not points:
        raise InvalidArgument("need at least one ADEV point")
    unknown = set(components) - set(COMPONENTS)
    if unknown or not components:
        raise InvalidArgument(f"unknown components {sorted(unknown)}; choose from {COMPONENTS}")
    taus = np.array([p.tau for p in points], dtype=float)
    if np.unique(taus).size != taus.size:
        raise InvalidArgument("taus must be distinct")
    avar = np.array([p.sigma_y for p in points], dtype=float) ** 2
    if not np.any(avar > 0):
        return FitResult(NoiseSpec(), 0.0, False)

    cols = [COMPONENTS.index(c) for c in COMPONENTS if c in components]
    floor = avar[avar > 0].min()
    w = 1.0 / np.where(avar > 0, avar, floor)
    design = _basis(taus)[:, cols] * w[:, None]
    target = avar * w
    scale = np.linalg.norm(design, axis=0)
    design = design / scale
    rank = np.linalg.matrix_rank(design)
    rank_deficient = rank < len(cols)
    coef = None
    if rank_deficient:
        coef = np.linalg.lstsq(design, target, rcond=None)[0]
        if np.any(coef < 0):
            coef = None
    if coef is None:
        coef = nnls(design, target)[0]
    resid = design @ coef - target
    coef = coef / scale

    full = np.zeros(4)
    full[cols] = coef
    spec = NoiseSpec(
        q1=float(full[1]), q2=float(full[2]), q3=float(full[3]), wpm_sigma=float(np.sqrt(full[0] / 3))
    )
    return FitResult(spec, float(np.sqrt(np.mean(resid**2))), bool(rank_deficient))


def write_adev_csv(points: Sequence[AdevPoint], dest) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write("tau_s,adev,n_pairs\n")
        for p in points:
            fh.write(f"{float(p.tau)!r},{float(p.sigma_y)!r},{int(p.n_pairs)}\n")
    finally:
        if own:
            fh.close()
