"""Supervisory (high-level) controller.

Each tick the controller picks one driving mode, produces a free-road
command from the active plan (Eco-Cruise profile, Eco-Stop/Departure
profiles, PaG advisory or a transition curve), and, when a leader is close,
caps it with the car-following law. Plans are latched when a mode is
entered and re-planned from the current state when tracking drifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .dp import (DPProblem, InfeasibleProblem, SpeedProfile, max_decel_stop_profile, solve,
                 solve_eco_departure, solve_eco_stop)
from .following import (ErraticClassifier, FollowGains, GapPolicy, LeadAccelFilter,
                        LeadObservation, acc_command, cacc_command, eco_cacc_command)
from .pag import (EcoApproach, PagConfig, PagDecision, SpeedAdvisory, advisory_profile,
                  classify_pass, eco_approach)
from .route import Phase, RouteProfile, SpatMessage, TrafficLight, spat_at, speed_limit_at
from .vehicle import PowertrainLimits, VehicleParams, VehicleState


class DrivingMode(str, Enum):
    ECO_CRUISE = "EcoCruise"
    PAG = "PaG"
    ECO_STOP = "EcoStop"
    STOP_WAIT = "StopWait"
    ECO_DEPARTURE = "EcoDeparture"
    ACC = "ACC"
    CACC = "CACC"
    ECO_CACC = "EcoCACC"
    LANE_CHANGE = "LaneChange"
    TRANSITION_UP = "TransitionUp"
    TRANSITION_DOWN = "TransitionDown"


FOLLOW_MODES = frozenset({DrivingMode.ACC, DrivingMode.CACC, DrivingMode.ECO_CACC,
                          DrivingMode.LANE_CHANGE})
TRANSITION_MODES = frozenset({DrivingMode.TRANSITION_UP, DrivingMode.TRANSITION_DOWN})


@dataclass(frozen=True)
class TransitionState:
    v_trig_m_s: float
    t_trig_s: float
    v_lim_m_s: float
    v_lim_low_m_s: float


def _ramp(delta: float, ts: TransitionState, t_act: float) -> float:
    """Cubic blend fraction of ``delta``; reaches ``delta`` after 4·delta seconds."""
    if t_act < ts.t_trig_s:
        raise ValueError("t_act precedes the transition trigger time")
    x = (t_act - ts.t_trig_s) / (4.0 * delta)
    if x >= 1.0:
        return delta
    return delta * ((x - 1.0) ** 3 + 1.0)


def transition_speed_up(ts: TransitionState, t_act: float) -> float:
    delta = ts.v_lim_m_s - ts.v_trig_m_s
    if not delta > 0:
        raise ValueError("up-transition needs v_lim > v_trig")
    if (t_act - ts.t_trig_s) >= 4.0 * delta:
        return ts.v_lim_m_s
    return ts.v_trig_m_s + _ramp(delta, ts, t_act)


def transition_speed_down(ts: TransitionState, t_act: float) -> float:
    delta = abs(ts.v_lim_low_m_s - ts.v_trig_m_s)
    if not ts.v_lim_low_m_s < ts.v_trig_m_s:
        raise ValueError("down-transition needs v_lim_low < v_trig")
    if (t_act - ts.t_trig_s) >= 4.0 * delta:
        return ts.v_lim_low_m_s
    return ts.v_trig_m_s - _ramp(delta, ts, t_act)


def transition_completion_time(ts: TransitionState, up: bool) -> float:
    target = ts.v_lim_m_s if up else ts.v_lim_low_m_s
    return ts.t_trig_s + 4.0 * abs(target - ts.v_trig_m_s)


def _transition_slope(ts: TransitionState, t_act: float, up: bool) -> float:
    target = ts.v_lim_m_s if up else ts.v_lim_low_m_s
    delta = abs(target - ts.v_trig_m_s)
    x = (t_act - ts.t_trig_s) / (4.0 * delta)
    if x >= 1.0:
        return 0.0
    slope = 0.75 * (x - 1.0) ** 2
    return slope if up else -slope


@dataclass(frozen=True)
class HLConfig:
    follow_capability: str = "auto"  # ACC | CACC | EcoCACC | auto
    v2i: bool = True
    allow_lane_change: bool = False
    eco_stop_horizon_m: float = 250.0
    spat_range_m: float = 300.0
    sensing_range_m: float = 120.0
    stop_dwell_s: float = 5.0
    departure_horizon_m: float = 300.0
    departure_tolerance_m_s: float = 0.5
    transition_threshold_m_s: float = 0.3
    speed_gain: float = 0.8
    replan_error_m_s: float = 1.0
    replan_interval_s: float = 1.0
    sign_stop_offset_m: float = 0.3
    light_stop_offset_m: float = 1.0
    stop_capture_m: float = 1.0
    creep_decel_m_s2: float = 0.5
    creep_zone_m: float = 5.0
    guard_decel_m_s2: float = 2.0
    guard_distance_m: float = 15.0
    emergency_fraction: float = 0.8
    slow_leader_ratio: float = 0.7
    slow_leader_time_s: float = 5.0
    lane_change_duration_s: float = 3.0
    policy: GapPolicy = field(default_factory=GapPolicy)
    gains: FollowGains = field(default_factory=FollowGains)
    pag: PagConfig = field(default_factory=PagConfig)

    def __post_init__(self):
        if self.follow_capability not in ("ACC", "CACC", "EcoCACC", "auto"):
            raise ValueError(f"unknown follow capability {self.follow_capability!r}")


@dataclass(frozen=True)
class Situation:
    time_s: float
    station_m: float
    speed_m_s: float
    speed_limit_m_s: float
    eco_target_m_s: float
    base_mode: DrivingMode  # free-road mode of the previous tick
    stop_distance_m: Optional[float] = None  # next unserved mandatory stop
    stop_kind: Optional[str] = None  # "stop" | "light" | "end"
    stopped_at_stop: bool = False
    may_depart: bool = False
    stop_wait_elapsed_s: float = 0.0
    spat: Optional[SpatMessage] = None
    light_distance_m: Optional[float] = None
    pag_handoff: bool = False
    lead_gap_m: Optional[float] = None
    lead_connected: bool = False
    lead_erratic: bool = False
    lane_change_safe: bool = False
    lane_change_active: bool = False
    departure_reached: bool = True
    transition_done: bool = True


def _follow_mode(sit: Situation, cfg: HLConfig) -> Optional[DrivingMode]:
    if sit.lane_change_active:
        return DrivingMode.LANE_CHANGE
    if sit.lead_gap_m is None or sit.lead_gap_m > cfg.policy.follow_engage_distance_m:
        return None
    cap = cfg.follow_capability
    if cap == "ACC" or not sit.lead_connected:
        return DrivingMode.ACC
    if cap == "CACC":
        return DrivingMode.CACC
    if cap == "EcoCACC":
        return DrivingMode.ECO_CACC
    if not sit.lead_erratic:
        return DrivingMode.CACC
    if cfg.allow_lane_change and sit.lane_change_safe:
        return DrivingMode.LANE_CHANGE
    return DrivingMode.ECO_CACC


def select_base_mode(prev_mode: DrivingMode, sit: Situation, cfg: HLConfig) -> DrivingMode:
    """Free-road mode, ignoring any leader."""
    pb = sit.base_mode
    following = _follow_mode(sit, cfg) is not None
    if pb is DrivingMode.STOP_WAIT:
        return DrivingMode.ECO_DEPARTURE if sit.may_depart else DrivingMode.STOP_WAIT
    if pb is DrivingMode.ECO_STOP and sit.stopped_at_stop and sit.stop_kind != "end":
        return DrivingMode.STOP_WAIT
    if sit.stop_distance_m is not None and sit.stop_distance_m <= cfg.eco_stop_horizon_m:
        return DrivingMode.ECO_STOP
    if pb is DrivingMode.ECO_DEPARTURE and not sit.departure_reached:
        return DrivingMode.ECO_DEPARTURE
    if sit.spat is not None:
        if pb is DrivingMode.PAG and sit.pag_handoff:
            return DrivingMode.ECO_DEPARTURE
        return DrivingMode.PAG
    if following:
        # speed is dictated by the leader; re-blend once it lets go
        return DrivingMode.ECO_CRUISE
    if pb in TRANSITION_MODES and not sit.transition_done:
        return pb
    leaving = (pb is not DrivingMode.ECO_CRUISE) or prev_mode in FOLLOW_MODES
    diff = sit.speed_m_s - sit.eco_target_m_s
    if leaving and abs(diff) > cfg.transition_threshold_m_s:
        return DrivingMode.TRANSITION_UP if diff < 0 else DrivingMode.TRANSITION_DOWN
    return DrivingMode.ECO_CRUISE


def select_mode(prev_mode: DrivingMode, sit: Situation, cfg: HLConfig) -> DrivingMode:
    """Active mode: a follow mode when a leader is within the engage distance."""
    return _follow_mode(sit, cfg) or select_base_mode(prev_mode, sit, cfg)


def lane_change_decision(ego_speed: float, front_gap_m: Optional[float], rear_gap_m: Optional[float],
                         rear_speed_m_s: float, policy: GapPolicy = GapPolicy()) -> bool:
    """Adjacent-lane gap acceptance; ``None`` gaps mean the lane is empty there."""
    front_ok = front_gap_m is None or front_gap_m >= policy.desired_gap(ego_speed)
    rear_ok = rear_gap_m is None or rear_gap_m >= 2.0 * rear_speed_m_s
    return front_ok and rear_ok


@dataclass(frozen=True)
class LeadInfo:
    """What the world tells the ego about its same-lane leader."""

    vehicle_id: int
    rear_position_m: float
    speed_m_s: float
    accel_m_s2: float
    connected: bool


@dataclass(frozen=True)
class AdjacentInfo:
    front_gap_m: Optional[float]
    rear_gap_m: Optional[float]
    rear_speed_m_s: float


@dataclass(frozen=True)
class Observation:
    ego: VehicleState
    lead: Optional[LeadInfo] = None
    adjacent: Optional[AdjacentInfo] = None


@dataclass(frozen=True)
class ControlDecision:
    mode: DrivingMode
    base_mode: DrivingMode
    accel_m_s2: float
    command: float
    emergency: bool = False
    change_lane: bool = False
    situation: Optional[Situation] = None


@dataclass(frozen=True)
class _StopPoint:
    kind: str
    station_m: float  # sign, light or route end
    target_m: float  # where the car is asked to rest
    light: Optional[TrafficLight] = None


class HLController:
    """Stateful wrapper that turns observations into mode + acceleration."""

    def __init__(self, route: RouteProfile, eco_profile: SpeedProfile, template: DPProblem,
                 limits: PowertrainLimits, config: HLConfig = HLConfig(), dt: float = 0.1,
                 vehicle: Optional[VehicleParams] = None, dp_workers: int = 1):
        self.route = route
        self.eco = eco_profile
        self.template = template
        self.limits = limits
        self.cfg = config
        self.dt = dt
        self.vehicle = vehicle or template.vehicle
        self.dp_workers = dp_workers
        self.stops = self._stop_points()
        self.served: set[int] = set()
        self.mode = DrivingMode.ECO_CRUISE
        self.base = DrivingMode.ECO_CRUISE
        self.stop_wait_elapsed = 0.0
        self.stop_profile: Optional[SpeedProfile] = None
        self.stop_index: Optional[int] = None
        self.departure: Optional[SpeedProfile] = None
        self.departure_target = 0.0
        self.advisory: Optional[SpeedAdvisory] = None
        self.decision: Optional[PagDecision] = None
        self.advisory_light: Optional[float] = None
        self.transition: Optional[TransitionState] = None
        self.last_replan = -math.inf
        self.classifier = ErraticClassifier(dt=dt)
        self.accel_filter = LeadAccelFilter(config.gains.filter_cutoff_hz)
        self.lead_id: Optional[int] = None
        self.lane_change_until = -math.inf
        self.slow_since: Optional[float] = None
        self.situations: list[Situation] = []
        self.record_situations = False

    def _stop_points(self) -> list[_StopPoint]:
        pts = [_StopPoint("stop", s.location_m, s.location_m - self.cfg.sign_stop_offset_m)
               for s in self.route.stop_signs]
        if not self.cfg.v2i:
            pts += [_StopPoint("light", l.location_m, l.location_m - self.cfg.light_stop_offset_m, l)
                    for l in self.route.lights]
        end = self.route.length_m
        pts.append(_StopPoint("end", end, end - self.cfg.sign_stop_offset_m))
        pts.sort(key=lambda p: p.station_m)
        return pts

    def _next_stop(self, s: float) -> Optional[int]:
        for i, p in enumerate(self.stops):
            if i not in self.served and p.station_m >= s - 1.0:
                return i
        return None

    def _next_light(self, s: float) -> Optional[TrafficLight]:
        for light in self.route.lights:
            if light.location_m > s:
                return light
        return None

    def _min_limit(self, a: float, b: float) -> float:
        lo = speed_limit_at(self.route, min(max(a, 0.0), self.route.length_m))
        for station, v in self.route.speed_limit_table:
            if a < station <= b:
                lo = min(lo, v)
        return lo

    def eco_target(self, s: float) -> float:
        return self.eco.speed_at(min(max(s, 0.0), self.route.length_m))

    # -- plans -----------------------------------------------------------
    def _plan_stop(self, ego: VehicleState, idx: int) -> None:
        self.stop_index = idx
        target = self.stops[idx].target_m
        if target - ego.position_m < 0.5:
            self.stop_profile = SpeedProfile([ego.position_m, ego.position_m + 1.0], [0.0, 0.0])
            return
        try:
            self.stop_profile = solve_eco_stop(ego, target, self.template, self.dp_workers)
        except InfeasibleProblem:
            self.stop_profile = max_decel_stop_profile(ego, target)

    def _plan_departure(self, ego: VehicleState) -> None:
        s = ego.position_m
        ahead = min(s + self.cfg.departure_horizon_m, self.route.length_m)
        limit = speed_limit_at(self.route, min(max(s, 0.0), self.route.length_m))
        target = min(self.eco_target(ahead), limit)
        self.departure_target = target
        try:
            if ahead - s < self.template.distance_step_m or target <= 0:
                raise InfeasibleProblem("departure horizon too short", 0)
            self.departure = solve_eco_departure(s, target, self.template,
                                                 self.cfg.departure_horizon_m, self.dp_workers)
        except InfeasibleProblem:
            self.departure = SpeedProfile([s, max(ahead, s + 1.0)], [0.0, target])

    def _plan_pag(self, ego: VehicleState, light: TrafficLight) -> None:
        d = light.location_m - ego.position_m
        spat = spat_at(light, ego.time_s)
        local = self._min_limit(ego.position_m, light.location_m)
        dec = classify_pass(ego, spat, d, self.limits, local, self.cfg.pag)
        if isinstance(dec, EcoApproach):
            adv = eco_approach(ego, spat, max(d - self.cfg.light_stop_offset_m, 0.0),
                               self.limits, self.cfg.pag)
        else:
            adv = advisory_profile(dec, ego, d, self.limits, spat, self.cfg.pag)
        self.decision, self.advisory, self.advisory_light = dec, adv, light.location_m
        self.last_replan = ego.time_s

    def _start_transition(self, ego: VehicleState, mode: DrivingMode) -> None:
        s = ego.position_m
        limit = speed_limit_at(self.route, min(max(s, 0.0), self.route.length_m))
        target = self.eco_target(s)
        v = ego.speed_m_s
        self.transition = TransitionState(v, ego.time_s, min(limit, target), target)
        if mode is DrivingMode.TRANSITION_UP and not self.transition.v_lim_m_s > v:
            self.transition = None
        if mode is DrivingMode.TRANSITION_DOWN and not self.transition.v_lim_low_m_s < v:
            self.transition = None

    # -- situation -------------------------------------------------------
    def _situation(self, obs: Observation) -> Situation:
        ego, cfg = obs.ego, self.cfg
        s, v, t = ego.position_m, ego.speed_m_s, ego.time_s
        limit = speed_limit_at(self.route, min(max(s, 0.0), self.route.length_m))
        idx = self._next_stop(s)
        stop_d = stop_kind = None
        stopped_at = may_depart = False
        if idx is not None:
            p = self.stops[idx]
            stop_d, stop_kind = p.station_m - s, p.kind
            window = 2.0 if p.kind == "light" else cfg.stop_capture_m
            stopped_at = v < 0.1 and -1.0 <= stop_d <= window
            if p.kind == "stop":
                may_depart = self.stop_wait_elapsed >= cfg.stop_dwell_s + 0.5 * self.dt
            elif p.kind == "light":
                may_depart = p.light.phase_at(t) is Phase.GREEN
        spat = light_d = None
        light = self._next_light(s)
        if cfg.v2i and light is not None and light.location_m - s <= cfg.spat_range_m:
            spat = spat_at(light, t)
            light_d = light.location_m - s
        handoff = (self.base is DrivingMode.PAG and isinstance(self.decision, EcoApproach)
                   and v < 0.1 and spat is not None and spat.current_phase is Phase.GREEN)
        lead_gap = None
        connected = erratic = lc_safe = False
        if obs.lead is not None:
            lead_gap = obs.lead.rear_position_m - s
            connected = obs.lead.connected
            erratic = self.classifier.erratic
            if obs.adjacent is not None and cfg.allow_lane_change:
                a = obs.adjacent
                lc_safe = lane_change_decision(v, a.front_gap_m, a.rear_gap_m, a.rear_speed_m_s,
                                               cfg.policy)
        dep_done = True
        if self.departure is not None and self.base is DrivingMode.ECO_DEPARTURE:
            dep_done = (abs(v - self.departure_target) <= cfg.departure_tolerance_m_s
                        or s >= self.departure.end_m)
        tr_done = True
        if self.transition is not None and self.base in TRANSITION_MODES:
            up = self.base is DrivingMode.TRANSITION_UP
            v_tr = self._transition_speed(t, up)
            target = self.eco_target(s)
            tr_done = (t >= transition_completion_time(self.transition, up)
                       or (target <= v_tr if up else target >= v_tr))
        return Situation(
            time_s=t, station_m=s, speed_m_s=v, speed_limit_m_s=limit,
            eco_target_m_s=self.eco_target(s), base_mode=self.base,
            stop_distance_m=stop_d, stop_kind=stop_kind, stopped_at_stop=stopped_at,
            may_depart=may_depart, stop_wait_elapsed_s=self.stop_wait_elapsed,
            spat=spat, light_distance_m=light_d, pag_handoff=handoff,
            lead_gap_m=lead_gap, lead_connected=connected, lead_erratic=erratic,
            lane_change_safe=lc_safe, lane_change_active=t < self.lane_change_until,
            departure_reached=dep_done, transition_done=tr_done)

    def _transition_speed(self, t: float, up: bool) -> float:
        ts = self.transition
        return transition_speed_up(ts, t) if up else transition_speed_down(ts, t)

    # -- tick ------------------------------------------------------------
    def _update_lead(self, obs: Observation) -> None:
        lead = obs.lead
        if lead is None:
            if self.lead_id is not None:
                self.classifier.reset()
                self.accel_filter.reset()
            self.lead_id = None
            return
        if lead.vehicle_id != self.lead_id:
            self.classifier.reset()
            self.accel_filter.reset()
            self.lead_id = lead.vehicle_id
        self.classifier.update(lead.accel_m_s2)

    def tick(self, obs: Observation) -> ControlDecision:
        cfg, ego = self.cfg, obs.ego
        s, v, t = ego.position_m, ego.speed_m_s, ego.time_s
        self._update_lead(obs)
        sit = self._situation(obs)
        if self.record_situations:
            self.situations.append(sit)
        base = select_base_mode(self.mode, sit, cfg)
        mode = select_mode(self.mode, sit, cfg)
        was_following = self.mode in FOLLOW_MODES
        entered = base is not self.base

        if base is DrivingMode.ECO_STOP:
            idx = self._next_stop(s)
            if entered or idx != self.stop_index:
                self._plan_stop(ego, idx)
        elif base is DrivingMode.STOP_WAIT:
            if entered:
                self.stop_wait_elapsed = 0.0
        elif base is DrivingMode.ECO_DEPARTURE:
            if entered:
                if self.base is DrivingMode.STOP_WAIT and self.stop_index is not None:
                    self.served.add(self.stop_index)
                self._plan_departure(ego)
        elif base is DrivingMode.PAG:
            light = self._next_light(s)
            stale = self.advisory_light != light.location_m
            if entered or stale:
                self._plan_pag(ego, light)
        elif base in TRANSITION_MODES and (entered or self.transition is None):
            self._start_transition(ego, base)
            if self.transition is None:
                base = DrivingMode.ECO_CRUISE
                mode = mode if mode in FOLLOW_MODES else base

        # drifted plans restart from the current state on leaving a follow mode
        if was_following and mode not in FOLLOW_MODES:
            self._replan_if_drifted(base, ego, strict=True)
        elif base is DrivingMode.PAG and t - self.last_replan >= cfg.replan_interval_s:
            self._replan_if_drifted(base, ego, strict=False)

        v_cmd, a_ff = self._free_command(base, ego)
        limit = speed_limit_at(self.route, min(max(s, 0.0), self.route.length_m))
        v_cmd = min(v_cmd, limit)
        a_free = a_ff + cfg.speed_gain * (v_cmd - v)
        if base is DrivingMode.STOP_WAIT:
            a_free = -v / self.dt
        a_free = min(max(a_free, -self.limits.decel_max), self.limits.accel_max)
        if base is DrivingMode.ECO_STOP:
            a_free = min(a_free, self._stopping_bound(ego))
            if self._captured(ego):
                a_free = max(-v / self.dt, -self.limits.decel_max)
                v_cmd = max(v + a_free * self.dt, 0.0)
        a_free = min(a_free, self._stop_line_guard(ego))

        accel, command = a_free, v_cmd
        change_lane = False
        if mode in FOLLOW_MODES and obs.lead is not None:
            a_follow = self._follow_accel(mode, ego, obs.lead)
            accel = min(a_free, a_follow)
            command = v + accel * self.dt
        if mode is DrivingMode.LANE_CHANGE and t >= self.lane_change_until:
            self.lane_change_until = t + cfg.lane_change_duration_s
            change_lane = True
        emergency = False
        if obs.lead is not None:
            bound = self._emergency_bound(ego, obs.lead)
            if bound < accel:
                accel, emergency = bound, True
                command = v + accel * self.dt
        if v + accel * self.dt < 0:
            accel = -v / self.dt
        self.mode, self.base = mode, base
        if base is DrivingMode.STOP_WAIT and v < 0.1:
            self.stop_wait_elapsed += self.dt
        return ControlDecision(mode, base, accel, command, emergency, change_lane, sit)

    def _replan_if_drifted(self, base: DrivingMode, ego: VehicleState, strict: bool) -> None:
        v_cmd, _ = self._free_command(base, ego)
        tol = self.cfg.transition_threshold_m_s if strict else self.cfg.replan_error_m_s
        if abs(v_cmd - ego.speed_m_s) <= tol:
            return
        if base is DrivingMode.PAG:
            self._plan_pag(ego, self._next_light(ego.position_m))
        elif base is DrivingMode.ECO_STOP and self.stop_index is not None:
            self._plan_stop(ego, self.stop_index)
        elif base is DrivingMode.ECO_DEPARTURE:
            self._replan_departure(ego)

    def _replan_departure(self, ego: VehicleState) -> None:
        s, v = ego.position_m, ego.speed_m_s
        end = self.departure.end_m if self.departure is not None else s
        target = self.departure_target
        if end - s < self.template.distance_step_m:
            self.departure = SpeedProfile([s, s + 1.0], [v, v])
            return
        prob = replace(self.template, start_station_m=s, end_station_m=end,
                       speed_grid=sorted(set(self.template.speed_grid.tolist()) | {v, target}),
                       initial_speed_m_s=v, terminal_speed_m_s=target,
                       min_interior_speed_m_s=0.0)
        try:
            self.departure = solve(prob, self.dp_workers)
        except InfeasibleProblem:
            self.departure = SpeedProfile([s, end], [v, target])

    def _free_command(self, base: DrivingMode, ego: VehicleState) -> tuple[float, float]:
        s, t = ego.position_m, ego.time_s
        if base is DrivingMode.ECO_CRUISE:
            return self.eco_target(s), self.eco.accel_at(s)
        if base is DrivingMode.STOP_WAIT:
            return 0.0, 0.0
        if base is DrivingMode.ECO_STOP:
            prof = self.stop_profile
            v_cmd, a_ff = prof.speed_at(s), prof.accel_at(s)
            d = self.stops[self.stop_index].target_m - s
            if d <= self.cfg.creep_zone_m:
                creep = math.sqrt(2.0 * self.cfg.creep_decel_m_s2 * max(d, 0.0))
                if creep < v_cmd or s >= prof.end_m:
                    v_cmd, a_ff = creep, (-self.cfg.creep_decel_m_s2 if creep > 0 else 0.0)
            return v_cmd, a_ff
        if base is DrivingMode.ECO_DEPARTURE:
            prof = self.departure
            if s >= prof.end_m:
                return self.departure_target, 0.0
            return prof.speed_at(s), prof.accel_at(s)
        if base is DrivingMode.PAG:
            _, v_adv, a_adv = self.advisory.sample(t)
            return v_adv, a_adv
        if base in TRANSITION_MODES:
            up = base is DrivingMode.TRANSITION_UP
            return self._transition_speed(t, up), _transition_slope(self.transition, t, up)
        raise RuntimeError(f"no free-road command for mode {base}")

    def _stopping_bound(self, ego: VehicleState) -> float:
        """Deceleration that still halts at the stop target; only binds when the profile lags."""
        v = ego.speed_m_s
        room = self.stops[self.stop_index].target_m - ego.position_m
        if v <= 0.0:
            return math.inf
        need = v * v / (2.0 * max(room, 0.05))
        if need < 0.5 * self.limits.decel_max:
            return math.inf
        return -min(need, self.limits.brake_force_max_N * self.vehicle.brake_gain)

    def _captured(self, ego: VehicleState) -> bool:
        d = self.stops[self.stop_index].station_m - ego.position_m
        return d <= self.cfg.stop_capture_m and ego.speed_m_s < 0.5

    def _stop_line_guard(self, ego: VehicleState) -> float:
        """Upper bound on acceleration that keeps the car behind a non-green light."""
        s, v, t = ego.position_m, ego.speed_m_s, ego.time_s
        light = self._next_light(s)
        if light is None:
            return math.inf
        d = light.location_m - s
        if d > self.cfg.spat_range_m:
            return math.inf
        if self.cfg.v2i:
            crossing_green = light.phase_at(t + d / max(v, 0.5)) is Phase.GREEN
        else:
            crossing_green = light.phase_at(t) is Phase.GREEN
        if crossing_green:
            return math.inf
        room = d - 0.2
        if room <= 0:
            return -v / self.dt if v > 0 else 0.0
        need = v * v / (2.0 * room)
        if need >= self.cfg.guard_decel_m_s2 or d <= self.cfg.guard_distance_m:
            return -need
        return math.inf

    def _follow_accel(self, mode: DrivingMode, ego: VehicleState, lead: LeadInfo) -> float:
        cfg = self.cfg
        obs = LeadObservation(lead.rear_position_m, lead.speed_m_s,
                              lead.accel_m_s2 if lead.connected else None,
                              lead.connected, ego.time_s)
        if mode is DrivingMode.CACC:
            return cacc_command(ego, obs, cfg.policy, self.limits, cfg.gains, ego.time_s).accel_m_s2
        if mode is DrivingMode.ECO_CACC:
            return eco_cacc_command(ego, obs, self.accel_filter, cfg.policy, self.limits,
                                    self.dt, cfg.gains, ego.time_s).accel_m_s2
        return acc_command(ego, obs, cfg.policy, self.limits, cfg.gains).accel_m_s2

    def _emergency_bound(self, ego: VehicleState, lead: LeadInfo) -> float:
        v, vl = ego.speed_m_s, lead.speed_m_s
        room = lead.rear_position_m - ego.position_m - 1.0
        if v <= vl:
            return math.inf
        need = (v * v - vl * vl) / (2.0 * max(room, 0.05))
        if need < self.cfg.emergency_fraction * self.limits.decel_max:
            return math.inf
        hard = self.limits.brake_force_max_N * self.vehicle.brake_gain
        return -min(need, hard)
