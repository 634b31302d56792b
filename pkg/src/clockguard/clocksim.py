"""Ground-truth oscillator phase trajectories.

Clocks follow the three-state polynomial model (phase, frequency, drift)
driven by white Gaussian diffusions.  Noise is synthesised by exact
discretisation of that model, i.e. cumulative sums of correlated
innovations whose covariance is the same ``Q(dt)`` the clock filter uses,
so simulated data and the filter's process model agree by construction.

Random numbers come from numpy's PCG64 generator.  Every clock owns a seed
and each noise component draws from its own ``SeedSequence`` child, so
enabling one component never perturbs the stream of another.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, TraceFormatError

__all__ = [
    "NoiseSpec",
    "ClockTruth",
    "PhaseTrajectory",
    "derive_seed",
    "diffusion_blocks",
    "synthesize_noise",
    "simulate_clock",
    "relative_phase",
    "default_profiles",
    "get_profile",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Diffusion coefficients of the clock model.

    q1 is white FM (s), q2 random-walk FM (1/s), q3 random-walk drift
    (1/s**3) and wpm_sigma the white phase noise standard deviation (s).
    """

    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    wpm_sigma: float = 0.0

    def __post_init__(self):
        for name in ("q1", "q2", "q3", "wpm_sigma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidArgument(f"{name} must be finite and >= 0, got {value!r}")

    def __add__(self, other: "NoiseSpec") -> "NoiseSpec":
        # Independent clocks: diffusions add, white phase noise adds in quadrature.
        return NoiseSpec(
            self.q1 + other.q1,
            self.q2 + other.q2,
            self.q3 + other.q3,
            float(np.hypot(self.wpm_sigma, other.wpm_sigma)),
        )

    @property
    def is_zero(self) -> bool:
        return self.q1 == 0 and self.q2 == 0 and self.q3 == 0 and self.wpm_sigma == 0


@dataclass(frozen=True)
class ClockTruth:
    """Deterministic clock parameters plus its stochastic diffusions."""

    x0: float = 0.0
    y0: float = 0.0
    d0: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def with_seed(self, seed: int) -> "ClockTruth":
        return replace(self, seed=int(seed))


@dataclass(frozen=True, eq=False)
class PhaseTrajectory:
    """Uniformly sampled phase offsets (s) starting at ``origin``."""

    dt: float
    samples: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidArgument("a trajectory needs at least 2 samples")
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be > 0, got {self.dt!r}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def epochs(self) -> np.ndarray:
        return self.origin + self.dt * np.arange(self.samples.size)

    def __eq__(self, other):
        if not isinstance(other, PhaseTrajectory):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.origin == other.origin
            and np.array_equal(self.samples, other.samples)
        )


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed of ``seed`` addressed by integer keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def diffusion_blocks(tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-intensity process covariances of the three diffusions over ``tau``.

    ``Q(tau) = q1*A1 + q2*A2 + q3*A3`` for the (phase, frequency, drift) state.
    """
    t = float(tau)
    a1 = np.zeros((3, 3))
    a1[0, 0] = t
    a2 = np.zeros((3, 3))
    a2[:2, :2] = [[t**3 / 3, t**2 / 2], [t**2 / 2, t]]
    a3 = np.array(
        [
            [t**5 / 20, t**4 / 8, t**3 / 6],
            [t**4 / 8, t**3 / 3, t**2 / 2],
            [t**3 / 6, t**2 / 2, t],
        ]
    )
    return a1, a2, a3


def synthesize_noise(spec: NoiseSpec, n: int, dt: float, seed: int) -> PhaseTrajectory:
    """Phase-noise-only trajectory of ``n`` samples spaced ``dt`` apart.

    Starts from a zero state; sample 0 carries only white phase noise.
    """
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    if not dt > 0:
        raise InvalidArgument(f"dt must be > 0, got {dt}")
    n = int(n)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(4)]
    rng_wpm, rng_wfm, rng_rwfm, rng_rwd = streams
    _, a2, a3 = diffusion_blocks(dt)

    m = n - 1
    w = np.zeros((m, 3))
    if spec.q1 > 0:
        w[:, 0] += np.sqrt(spec.q1 * dt) * rng_wfm.standard_normal(m)
    if spec.q2 > 0:
        chol = np.linalg.cholesky(spec.q2 * a2[:2, :2])
        w[:, :2] += rng_rwfm.standard_normal((m, 2)) @ chol.T
    if spec.q3 > 0:
        chol = np.linalg.cholesky(spec.q3 * a3)
        w += rng_rwd.standard_normal((m, 3)) @ chol.T

    drift = np.zeros(n)
    freq = np.zeros(n)
    phase = np.zeros(n)
    if spec.q3 > 0:
        np.cumsum(w[:, 2], out=drift[1:])
    if spec.q2 > 0 or spec.q3 > 0:
        np.cumsum(dt * drift[:-1] + w[:, 1], out=freq[1:])
    np.cumsum(dt * freq[:-1] + 0.5 * dt * dt * drift[:-1] + w[:, 0], out=phase[1:])
    if spec.wpm_sigma > 0:
        phase += spec.wpm_sigma * rng_wpm.standard_normal(n)
    return PhaseTrajectory(dt=float(dt), samples=phase)


def _sample_count(duration: float, dt: float) -> int:
    if not dt > 0:
        raise InvalidArgument(f"dt must be > 0, got {dt}")
    if not duration >= 2 * dt:
        raise InvalidArgument(f"duration must be >= 2*dt, got duration={duration}, dt={dt}")
    return int(round(duration / dt))


def simulate_clock(clock: ClockTruth, duration: float, dt: float = 1.0) -> PhaseTrajectory:
    """True phase offset of ``clock`` sampled every ``dt`` for ``duration`` seconds."""
    n = _sample_count(duration, dt)
    t = dt * np.arange(n)
    phase = clock.x0 + clock.y0 * t + clock.d0 * t * t / 2
    if not clock.noise.is_zero:
        phase = phase + synthesize_noise(clock.noise, n, dt, clock.seed).samples
    return PhaseTrajectory(dt=float(dt), samples=phase)


def relative_phase(a: PhaseTrajectory, b: PhaseTrajectory) -> PhaseTrajectory:
    """Elementwise ``a - b`` on a shared grid."""
    if a.dt != b.dt or len(a) != len(b) or a.origin != b.origin:
        raise InvalidArgument(
            f"grid mismatch: dt {a.dt} vs {b.dt}, length {len(a)} vs {len(b)}, "
            f"origin {a.origin} vs {b.origin}"
        )
    return PhaseTrajectory(dt=a.dt, samples=a.samples - b.samples, origin=a.origin)


# ADEV(1 s) = 8e-11 for the reference OCXO and 1e-9 for the receiver TCXO;
# for white FM q1 = adev(1 s)**2 * 1 s.
_PROFILES = {
    "ocxo-ref": ClockTruth(noise=NoiseSpec(q1=6.4e-21)),
    "rx-tcxo": ClockTruth(noise=NoiseSpec(q1=1e-18)),
    "vcocxo": ClockTruth(noise=NoiseSpec(q1=6.4e-21)),
    "ideal": ClockTruth(),
}


def default_profiles() -> dict[str, ClockTruth]:
    """Named clock presets.  Returns a fresh dict each call."""
    return dict(_PROFILES)


def get_profile(name: str) -> ClockTruth:
    try:
        return _PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown clock profile {name!r}; known: {sorted(_PROFILES)}") from None


def write_trajectory_csv(traj: PhaseTrajectory, dest) -> None:
    """Write ``epoch_s,phase_s`` rows; ``dest`` is a path or text stream."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write("epoch_s,phase_s\n")
        for t, x in zip(traj.epochs.tolist(), traj.samples.tolist()):
            fh.write(f"{t!r},{x!r}\n")
    finally:
        if own:
            fh.close()


def read_trajectory_csv(src) -> PhaseTrajectory:
    own = isinstance(src, (str, Path))
    fh = open(src, newline="") if own else src
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows or [c.strip() for c in rows[0]] != ["epoch_s", "phase_s"]:
        raise TraceFormatError("expected header 'epoch_s,phase_s'", line=1)
    epochs, phases = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            epochs.append(float(row[0]))
            phases.append(float(row[1]))
        except (ValueError, IndexError) as exc:
            raise TraceFormatError(f"malformed row {row!r}: {exc}", line=lineno) from None
    if len(epochs) < 2:
        raise TraceFormatError("trajectory needs at least 2 rows")
    epochs = np.array(epochs)
    steps = np.diff(epochs)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0):
        raise TraceFormatError("epochs are not uniformly increasing")
    return PhaseTrajectory(dt=dt, samples=np.array(phases), origin=float(epochs[0]))


def trajectory_to_csv_text(traj: PhaseTrajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    return buf.getvalue()
