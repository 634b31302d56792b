"""Time-pull attack shapes applied to the receiver clock."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .clocksim import PhaseTrajectory
from .errors import InvalidArgument

__all__ = ["AttackKind", "AttackProfile", "attack_offset", "apply_attack", "ATTACK_PRESETS"]


class AttackKind(str, enum.Enum):
    NONE = "NONE"
    STEP = "STEP"
    RAMP = "RAMP"
    SMOOTH_PULLOFF = "SMOOTH_PULLOFF"


@dataclass(frozen=True)
class AttackProfile:
    """Adversarial phase displacement of the receiver PPS.

    ``target_offset`` is the step size, the ramp clamp (0 = unclamped) or
    the pull-off asymptote.  ``smoothness`` is the pull-off time constant.
    """

    kind: AttackKind = AttackKind.NONE
    start_epoch: float = 0.0
    rate: float = 0.0
    target_offset: float = 0.0
    smoothness: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.NONE:
            return
        if not (math.isfinite(self.start_epoch) and self.start_epoch >= 0):
            raise InvalidArgument(f"start_epoch must be >= 0, got {self.start_epoch}")
        if self.rate * self.target_offset < 0:
            raise InvalidArgument("rate and target_offset must share a sign")
        if self.kind is AttackKind.RAMP and self.rate == 0:
            raise InvalidArgument("RAMP attack needs a non-zero rate")
        if self.kind in (AttackKind.STEP, AttackKind.SMOOTH_PULLOFF) and self.target_offset == 0:
            raise InvalidArgument(f"{self.kind.value} attack needs a non-zero target_offset")
        if self.kind is AttackKind.SMOOTH_PULLOFF and not self.smoothness > 0:
            raise InvalidArgument(f"smoothness must be > 0, got {self.smoothness}")


def attack_offset(profile: AttackProfile, t) -> np.ndarray:
    """Displacement the attacker adds at epoch(s) ``t``."""
    t = np.asarray(t, dtype=float)
    el = t - profile.start_epoch
    on = el >= 0
    kind = profile.kind
    if kind is AttackKind.NONE:
        return np.zeros_like(t)
    if kind is AttackKind.STEP:
        return np.where(on, profile.target_offset, 0.0)
    if kind is AttackKind.RAMP:
        off = np.where(on, profile.rate * el, 0.0)
        if profile.target_offset != 0:
            lim = abs(profile.target_offset)
            off = np.clip(off, -lim, lim)
        return off
    return np.where(on, profile.target_offset * -np.expm1(-np.maximum(el, 0.0) / profile.smoothness), 0.0)


def apply_attack(truth: PhaseTrajectory, profile: AttackProfile) -> PhaseTrajectory:
    if profile.kind is AttackKind.NONE:
        return truth
    return PhaseTrajectory(
        dt=truth.dt, samples=truth.samples + attack_offset(profile, truth.epochs), origin=truth.origin
    )


# Stand-ins for the two TEXBAT time-push scenarios.  1 sample = 1 s.
# ds2-like: overpowered push at 200 ns/s, captured at 2 us after 10 s.
# ds3-like: matched-power push; 2 us asymptote, 60 s constant (~33 ns/s initial slope).
ATTACK_PRESETS = {
    "none": AttackProfile(),
    "ds2-like": AttackProfile(AttackKind.RAMP, start_epoch=100.0, rate=2e-7, target_offset=2e-6),
    "ds3-like": AttackProfile(
        AttackKind.SMOOTH_PULLOFF, start_epoch=100.0, target_offset=2e-6, smoothness=60.0
    ),
}
