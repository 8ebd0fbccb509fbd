"""Longitudinal car-following: ACC, CACC and Eco-CACC plus erratic-leader detection.

All three controllers share a constant-time-gap law

    desired_gap = standstill_gap + time_gap * v_ego
    a = k_gap * (gap - desired_gap) + k_speed * (v_lead - v_ego)

CACC adds the leader's broadcast acceleration as feedforward; Eco-CACC
low-pass filters that feedforward and softens the feedback gains.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .vehicle import PowertrainLimits, VehicleState


@dataclass(frozen=True)
class LeadObservation:
    """What the ego knows about its leader.

    ``lead_position_m`` is the leader's rear bumper, so the gap is a plain
    subtraction from the ego's (front) position.
    """

    lead_position_m: float
    lead_speed_m_s: float
    lead_accel_m_s2: Optional[float] = None
    connected: bool = False
    timestamp_s: float = 0.0


@dataclass(frozen=True)
class GapPolicy:
    time_gap_s: float = 1.5
    standstill_gap_m: float = 3.0
    follow_engage_distance_m: float = 50.0

    def __post_init__(self):
        if not (self.time_gap_s > 0 and self.follow_engage_distance_m > 0):
            raise ValueError("time gap and engage distance must be positive")
        if self.standstill_gap_m < 2.0:
            raise ValueError("standstill_gap_m must be >= 2 m")

    def desired_gap(self, speed: float) -> float:
        return self.standstill_gap_m + self.time_gap_s * speed


@dataclass(frozen=True)
class FollowGains:
    gap_gain: float = 0.23
    speed_gain: float = 0.8
    feedforward_gain: float = 1.0
    eco_softening: float = 0.6  # Eco-CACC feedback gain multiplier
    filter_cutoff_hz: float = 0.2
    stale_after_s: float = 0.5


@dataclass(frozen=True)
class FollowCommand:
    accel_m_s2: float


def _clamp(a: float, limits: PowertrainLimits) -> FollowCommand:
    return FollowCommand(min(max(a, -limits.decel_max), limits.accel_max))


class LeadAccelFilter:
    """First-order low-pass with unit DC gain, discretised exactly for a held input."""

    def __init__(self, cutoff_hz: float = 0.2, initial: float = 0.0):
        if not cutoff_hz > 0:
            raise ValueError("cutoff_hz must be > 0")
        self.cutoff_hz = cutoff_hz
        self.value = initial

    def reset(self, value: float = 0.0) -> None:
        self.value = value

    def update(self, sample: float, dt: float) -> float:
        alpha = 1.0 - math.exp(-2.0 * math.pi * self.cutoff_hz * dt)
        self.value += alpha * (sample - self.value)
        return self.value


def gap(ego: VehicleState, lead: LeadObservation) -> float:
    """Bumper-to-bumper distance; zero or negative means collision."""
    return lead.lead_position_m - ego.position_m


def _feedback(ego: VehicleState, lead: LeadObservation, policy: GapPolicy,
              gains: FollowGains, scale: float = 1.0) -> float:
    err = gap(ego, lead) - policy.desired_gap(ego.speed_m_s)
    return scale * (gains.gap_gain * err + gains.speed_gain * (lead.lead_speed_m_s - ego.speed_m_s))


def _v2v_fresh(lead: LeadObservation, gains: FollowGains, now: Optional[float]) -> bool:
    if not lead.connected or lead.lead_accel_m_s2 is None:
        return False
    return now is None or now - lead.timestamp_s <= gains.stale_after_s


def acc_command(ego: VehicleState, lead: LeadObservation, policy: GapPolicy,
                limits: PowertrainLimits, gains: FollowGains = FollowGains()) -> FollowCommand:
    return _clamp(_feedback(ego, lead, policy, gains), limits)


def cacc_command(ego: VehicleState, lead: LeadObservation, policy: GapPolicy,
                 limits: PowertrainLimits, gains: FollowGains = FollowGains(),
                 now: Optional[float] = None) -> FollowCommand:
    """ACC feedback plus the leader's acceleration; degrades to ACC when V2V is stale."""
    if not _v2v_fresh(lead, gains, now):
        return acc_command(ego, lead, policy, limits, gains)
    return _clamp(_feedback(ego, lead, policy, gains)
                  + gains.feedforward_gain * lead.lead_accel_m_s2, limits)


def eco_cacc_command(ego: VehicleState, lead: LeadObservation, accel_filter: LeadAccelFilter,
                     policy: GapPolicy, limits: PowertrainLimits, dt: float,
                     gains: FollowGains = FollowGains(),
                     now: Optional[float] = None) -> FollowCommand:
    """CACC on a low-passed leader acceleration with softened feedback.

    Advances ``accel_filter`` by one step of ``dt``.
    """
    if not _v2v_fresh(lead, gains, now):
        return acc_command(ego, lead, policy, limits, gains)
    smoothed = accel_filter.update(lead.lead_accel_m_s2, dt)
    return _clamp(_feedback(ego, lead, policy, gains, gains.eco_softening)
                  + gains.feedforward_gain * smoothed, limits)


class ErraticClassifier:
    """Rolling std-dev of leader acceleration with on/off hysteresis."""

    def __init__(self, window_s: float = 10.0, dt: float = 0.1, on_threshold: float = 0.75,
                 off_threshold: float = 0.6, min_samples: int = 10):
        if off_threshold > on_threshold:
            raise ValueError("off_threshold must not exceed on_threshold")
        self.samples: deque[float] = deque(maxlen=max(1, int(round(window_s / dt))))
        self.on_threshold = on_threshold
        self.off_threshold = off_threshold
        self.min_samples = min_samples
        self.erratic = False

    def reset(self) -> None:
        self.samples.clear()
        self.erratic = False

    def update(self, accel: float) -> bool:
        self.samples.append(accel)
        if len(self.samples) < self.min_samples:
            self.erratic = False
            return False
        spread = float(np.std(np.fromiter(self.samples, float)))
        if self.erratic:
            self.erratic = spread >= self.off_threshold
        else:
            self.erratic = spread > self.on_threshold
        return self.erratic


def classify_erratic(samples, on_threshold: float = 0.75, min_samples: int = 10) -> bool:
    """Stateless form: erratic iff the std-dev of ``samples`` exceeds the threshold."""
    arr = np.asarray(samples, dtype=float)
    if arr.size < min_samples:
        return False
    return bool(np.std(arr) > on_threshold)
