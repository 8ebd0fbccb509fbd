"""Pass-at-Green: decide how to meet a signal and build a smooth speed advisory.

Speed changes are jerk-limited trapezoids in acceleration. Because such a
manoeuvre is point-symmetric in speed, its length is simply the mean of the
end speeds times its duration, which keeps arrival-time arithmetic cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .route import Phase, SpatMessage
from .vehicle import PowertrainLimits, VehicleState


@dataclass(frozen=True)
class PagConfig:
    pass_speed_floor_m_s: float = 3.0
    horizon_cycles: float = 2.0
    # keep the planned crossing this far inside a green window
    green_start_margin_s: float = 1.0
    green_end_margin_s: float = 2.0
    prefer_decelerate: bool = True


@dataclass(frozen=True)
class PassAccelerate:
    target_speed_m_s: float
    arrival_time_s: float


@dataclass(frozen=True)
class PassConstant:
    arrival_time_s: float


@dataclass(frozen=True)
class PassDecelerate:
    target_speed_m_s: float
    arrival_time_s: float


@dataclass(frozen=True)
class EcoApproach:
    arrival_time_s: float


PagDecision = Union[PassAccelerate, PassConstant, PassDecelerate, EcoApproach]


@dataclass(frozen=True)
class Segment:
    duration_s: float
    jerk_m_s3: float
    accel_m_s2: float  # at segment start


def _snap(v: float) -> float:
    # segment sums land a few ulp off an intended standstill
    return v if v > 1e-9 else 0.0


@dataclass(frozen=True)
class SpeedAdvisory:
    """Piecewise-constant-jerk speed plan anchored at (station, time, speed).

    After the last segment the final speed is held indefinitely.
    """

    station_m: float
    time_s: float
    speed_m_s: float
    segments: tuple[Segment, ...] = ()

    def _knots(self):
        x, v, t = 0.0, self.speed_m_s, 0.0
        for seg in self.segments:
            yield t, x, v, seg
            tau, a, j = seg.duration_s, seg.accel_m_s2, seg.jerk_m_s3
            x += v * tau + 0.5 * a * tau * tau + j * tau ** 3 / 6.0
            v += a * tau + 0.5 * j * tau * tau
            t += tau
        yield t, x, v, None

    @property
    def duration_s(self) -> float:
        return sum(s.duration_s for s in self.segments)

    @property
    def final_speed_m_s(self) -> float:
        for *_, v, seg in self._knots():
            if seg is None:
                return _snap(v)
        raise AssertionError

    def sample(self, time: float) -> tuple[float, float, float]:
        """(station, speed, accel) at absolute ``time``."""
        tr = max(0.0, time - self.time_s)
        for t0, x0, v0, seg in self._knots():
            if seg is None:
                v0 = _snap(v0)
                return self.station_m + x0 + v0 * (tr - t0), v0, 0.0
            if tr <= t0 + seg.duration_s:
                tau, a, j = tr - t0, seg.accel_m_s2, seg.jerk_m_s3
                v = v0 + a * tau + 0.5 * j * tau * tau
                x = x0 + v0 * tau + 0.5 * a * tau * tau + j * tau ** 3 / 6.0
                return self.station_m + x, max(0.0, v), a + j * tau
        raise AssertionError

    def speed_at(self, time: float) -> float:
        return self.sample(time)[1]

    def time_at_distance(self, distance: float) -> float:
        """Relative time at which the advisory has covered ``distance`` (inf if never)."""
        for t0, x0, v0, seg in self._knots():
            if seg is None:
                if x0 >= distance:
                    return t0
                v0 = _snap(v0)
                return t0 + (distance - x0) / v0 if v0 > 0 else math.inf
            tau, a, j = seg.duration_s, seg.accel_m_s2, seg.jerk_m_s3
            x1 = x0 + v0 * tau + 0.5 * a * tau * tau + j * tau ** 3 / 6.0
            if x1 >= distance:
                lo, hi = 0.0, tau
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if x0 + v0 * mid + 0.5 * a * mid * mid + j * mid ** 3 / 6.0 >= distance:
                        hi = mid
                    else:
                        lo = mid
                return t0 + hi
        raise AssertionError


def speed_change(v_from: float, v_to: float, limits: PowertrainLimits) -> tuple[Segment, ...]:
    """Jerk-limited speed change that starts and ends at zero acceleration."""
    dv = v_to - v_from
    if dv == 0:
        return ()
    sign = 1.0 if dv > 0 else -1.0
    a_cap = limits.accel_max if dv > 0 else limits.decel_max
    jerk = limits.jerk_max
    mag = abs(dv)
    if mag >= a_cap * a_cap / jerk:
        ramp = a_cap / jerk
        hold = mag / a_cap - ramp
        segs = [Segment(ramp, sign * jerk, 0.0)]
        if hold > 0:
            segs.append(Segment(hold, 0.0, sign * a_cap))
        segs.append(Segment(ramp, -sign * jerk, sign * a_cap))
        return tuple(segs)
    peak = math.sqrt(mag * jerk)
    ramp = peak / jerk
    return (Segment(ramp, sign * jerk, 0.0), Segment(ramp, -sign * jerk, sign * peak))


def _maneuver_length(v_from: float, v_to: float, limits: PowertrainLimits) -> tuple[float, float]:
    duration = sum(s.duration_s for s in speed_change(v_from, v_to, limits))
    return duration, 0.5 * (v_from + v_to) * duration


def _plan(ego: VehicleState, target: float, limits: PowertrainLimits) -> SpeedAdvisory:
    return SpeedAdvisory(ego.position_m, ego.time_s, ego.speed_m_s,
                         speed_change(ego.speed_m_s, target, limits))


def arrival_time(v0: float, target: float, distance: float, limits: PowertrainLimits) -> float:
    """Time to cover ``distance`` when changing speed to ``target`` then holding."""
    duration, length = _maneuver_length(v0, target, limits)
    if length <= distance:
        return duration + (distance - length) / target if target > 0 else math.inf
    return SpeedAdvisory(0.0, 0.0, v0, speed_change(v0, target, limits)).time_at_distance(distance)


def arrival_window(ego: VehicleState, distance_to_light: float, limits: PowertrainLimits,
                   local_limit: float, config: PagConfig = PagConfig()) -> tuple[float, float]:
    """Earliest and latest arrival times reachable by a single speed change."""
    v0 = ego.speed_m_s
    fast = max(local_limit, config.pass_speed_floor_m_s) if v0 <= local_limit else local_limit
    slow = config.pass_speed_floor_m_s
    t_early = arrival_time(v0, fast, distance_to_light, limits)
    t_late = arrival_time(v0, slow, distance_to_light, limits)
    return min(t_early, t_late), max(t_early, t_late)


def _green_windows(spat: SpatMessage, horizon: float) -> list[tuple[float, float]]:
    if spat.light is not None:
        return spat.light.green_windows(spat.timestamp_s, horizon)
    # no timing plan: only what the message itself says
    if spat.current_phase is Phase.GREEN:
        return [(0.0, spat.time_to_change_s)]
    if spat.next_phase is Phase.GREEN:
        return [(spat.time_to_change_s, math.inf)]
    return []


def _safe_windows(spat: SpatMessage, config: PagConfig) -> list[tuple[float, float]]:
    cycle = spat.light.cycle_length_s if spat.light is not None else 0.0
    horizon = config.horizon_cycles * cycle if cycle else math.inf
    out = []
    for start, end in _green_windows(spat, horizon):
        lo = start if start == 0 else start + config.green_start_margin_s
        hi = end - config.green_end_margin_s
        if hi > lo:
            out.append((lo, hi))
    return out


def _next_green_start(spat: SpatMessage, config: PagConfig) -> float:
    cycle = spat.light.cycle_length_s if spat.light is not None else 0.0
    for start, _ in _green_windows(spat, (config.horizon_cycles + 1) * cycle if cycle else math.inf):
        if start > 0:
            return start
    return spat.time_to_change_s


def _solve_target(v0: float, distance: float, t_goal: float, lo: float, hi: float,
                  limits: PowertrainLimits) -> float:
    """Target speed in [lo, hi] whose arrival time is ``t_goal`` (arrival decreases with speed)."""
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if arrival_time(v0, mid, distance, limits) > t_goal:
            lo = mid
        else:
            hi = mid
    return hi


def classify_pass(ego: VehicleState, spat: SpatMessage, distance: float, limits: PowertrainLimits,
                  local_limit: float, config: PagConfig = PagConfig()) -> PagDecision:
    """Pick hold / speed up / slow down / eco-approach for the next light."""
    v0 = ego.speed_m_s
    floor = config.pass_speed_floor_m_s
    windows = _safe_windows(spat, config)
    t_const = distance / v0 if v0 > 0 else math.inf
    if floor <= v0 <= local_limit and any(lo <= t_const <= hi for lo, hi in windows):
        return PassConstant(t_const)

    t_early, t_late = arrival_window(ego, distance, limits, local_limit, config)
    earlier = later = None
    for lo, hi in windows:
        lo, hi = max(lo, t_early), min(hi, t_late)
        if lo > hi:
            continue
        if lo <= t_const:
            earlier = min(hi, t_const) if earlier is None else max(earlier, min(hi, t_const))
        if hi >= t_const and later is None:
            later = max(lo, t_const)

    pick = None
    if earlier is not None and later is not None:
        slow_first = (later - t_const) <= (t_const - earlier) if config.prefer_decelerate \
            else (later - t_const) < (t_const - earlier)
        pick = later if slow_first else earlier
    else:
        pick = earlier if earlier is not None else later
    if pick is None:
        return EcoApproach(_next_green_start(spat, config))

    if pick >= t_const and v0 >= floor:
        target = _solve_target(v0, distance, pick, floor, min(v0, local_limit), limits)
        return PassDecelerate(target, pick)
    target = _solve_target(v0, distance, pick, max(min(v0, local_limit), floor), local_limit, limits)
    return PassAccelerate(target, pick)


def advisory_profile(decision: PagDecision, ego: VehicleState, distance: float,
                     limits: PowertrainLimits, spat: Optional[SpatMessage] = None,
                     config: PagConfig = PagConfig()) -> SpeedAdvisory:
    """Advisory realising ``decision``; an unreachable pass falls back to eco-approach."""
    if isinstance(decision, PassConstant):
        return SpeedAdvisory(ego.position_m, ego.time_s, ego.speed_m_s)
    if isinstance(decision, (PassAccelerate, PassDecelerate)):
        adv = _plan(ego, decision.target_speed_m_s, limits)
        t = adv.time_at_distance(distance)
        if abs(t - decision.arrival_time_s) <= 0.05:
            return adv
        decision = EcoApproach(_next_green_start(spat, config) if spat else decision.arrival_time_s)
    return _approach(ego, distance, decision.arrival_time_s, limits)


def _approach_time(v0: float, creep: float, distance: float, limits: PowertrainLimits) -> float:
    t1, d1 = _maneuver_length(v0, creep, limits)
    t3, d3 = _maneuver_length(creep, 0.0, limits)
    rest = distance - d1 - d3
    if rest < 0:
        return -math.inf
    return t1 + t3 + (rest / creep if creep > 0 else math.inf)


def _approach(ego: VehicleState, distance: float, arrive_at: float,
              limits: PowertrainLimits) -> SpeedAdvisory:
    v0 = ego.speed_m_s
    anchor = (ego.position_m, ego.time_s, v0)
    if v0 == 0 and distance <= 1e-9:
        return SpeedAdvisory(*anchor)
    _, d_stop = _maneuver_length(v0, 0.0, limits)
    if v0 > 0 and d_stop >= distance:
        # too close to shed speed smoothly: constant deceleration onto the line
        decel = v0 * v0 / (2.0 * max(distance, 1e-6))
        return SpeedAdvisory(*anchor, (Segment(v0 / decel, 0.0, -decel),))
    if v0 > 0 and _approach_time(v0, v0, distance, limits) >= arrive_at:
        # cannot be late enough by slowing: hold speed, then stop at the line
        return _stop_with_creep(ego, v0, distance, limits)
    # slowest useful creep speed is bounded by what is reachable from rest too
    hi = v0 if v0 > 0 else _max_creep_from_rest(distance, limits)
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        t = _approach_time(v0, mid, distance, limits)
        if t == -math.inf or t < arrive_at:
            hi = mid
        else:
            lo = mid
    return _stop_with_creep(ego, hi, distance, limits)


def _max_creep_from_rest(distance: float, limits: PowertrainLimits) -> float:
    lo, hi = 0.0, 50.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _approach_time(0.0, mid, distance, limits) == -math.inf:
            hi = mid
        else:
            lo = mid
    return lo


def _stop_with_creep(ego: VehicleState, creep: float, distance: float,
                     limits: PowertrainLimits) -> SpeedAdvisory:
    v0 = ego.speed_m_s
    _, d1 = _maneuver_length(v0, creep, limits)
    _, d3 = _maneuver_length(creep, 0.0, limits)
    segs = list(speed_change(v0, creep, limits))
    rest = max(0.0, distance - d1 - d3)
    if rest > 0 and creep > 0:
        segs.append(Segment(rest / creep, 0.0, 0.0))
    segs.extend(speed_change(creep, 0.0, limits))
    return SpeedAdvisory(ego.position_m, ego.time_s, v0, tuple(segs))


def eco_approach(ego: VehicleState, spat: SpatMessage, distance: float, limits: PowertrainLimits,
                 config: PagConfig = PagConfig()) -> SpeedAdvisory:
    """Slow down so the car reaches the stop line, at rest, as the next green starts."""
    if spat.current_phase is Phase.GREEN and ego.speed_m_s == 0 and distance <= 1e-9:
        return SpeedAdvisory(ego.position_m, ego.time_s, 0.0)
    return _approach(ego, distance, _next_green_start(spat, config), limits)


def sample_positions(advisory: SpeedAdvisory, times: Sequence[float]) -> list[float]:
    return [advisory.sample(t)[0] for t in times]
