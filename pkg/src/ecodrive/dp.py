"""Distance-based dynamic programming for fuel-optimal speed profiles.

The horizon is split into equal arcs; each arc joins a speed node at one
station to a speed node at the next under constant acceleration over
distance (v1² = v0² + 2·a·Δs). Cost-to-go is propagated backwards from the
terminal stage and the optimal profile is read out forwards.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .route import RouteProfile, grade_at, speed_limit_at
from .vehicle import (FuelModelParams, PowertrainLimits, VehicleParams,
                      VehicleState, fuel_rate, traction_power)

# speed floor for arc travel time; both-zero arcs are infeasible anyway
SPEED_EPS = 1e-3
_TOL = 1e-9


class InfeasibleProblem(RuntimeError):
    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True, eq=False)
class DPProblem:
    start_station_m: float
    end_station_m: float
    distance_step_m: float
    speed_grid: Sequence[float]
    initial_speed_m_s: float
    terminal_speed_m_s: float
    vehicle: VehicleParams
    fuel: FuelModelParams
    limits: PowertrainLimits
    route: RouteProfile
    terminal_speed_tolerance_m_s: float = 0.25
    min_interior_speed_m_s: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.speed_grid, dtype=float)
        if not self.end_station_m > self.start_station_m:
            raise ValueError("end_station_m must exceed start_station_m")
        if not self.distance_step_m > 0:
            raise ValueError("distance_step_m must be > 0")
        if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("speed_grid must be nonempty, nonnegative and strictly increasing")
        object.__setattr__(self, "speed_grid", grid)
        n = max(1, int(round((self.end_station_m - self.start_station_m) / self.distance_step_m)))
        stations = np.linspace(self.start_station_m, self.end_station_m, n + 1)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "arc_length", (self.end_station_m - self.start_station_m) / n)

    @property
    def n_stages(self) -> int:
        """Number of arcs."""
        return len(self.stations) - 1

    def start_node(self) -> int:
        i = int(np.argmin(np.abs(self.speed_grid - self.initial_speed_m_s)))
        if abs(self.speed_grid[i] - self.initial_speed_m_s) > self.terminal_speed_tolerance_m_s:
            raise ValueError(f"initial speed {self.initial_speed_m_s} not representable on the grid")
        return i


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    stations_m: np.ndarray
    target_speed_m_s: np.ndarray
    total_fuel_g: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stations_m", np.asarray(self.stations_m, dtype=float))
        object.__setattr__(self, "target_speed_m_s", np.asarray(self.target_speed_m_s, dtype=float))
        object.__setattr__(self, "_v2", self.target_speed_m_s ** 2)

    def __len__(self) -> int:
        return len(self.stations_m)

    @property
    def start_m(self) -> float:
        return float(self.stations_m[0])

    @property
    def end_m(self) -> float:
        return float(self.stations_m[-1])

    def speed_at(self, station: float) -> float:
        """Target speed, interpolating v² (exact for constant-acceleration arcs)."""
        if len(self.stations_m) == 1:
            return float(self.target_speed_m_s[0])
        return math.sqrt(max(0.0, float(np.interp(station, self.stations_m, self._v2))))

    def accel_at(self, station: float) -> float:
        """Arc acceleration ½·d(v²)/ds at ``station`` (0 outside the profile)."""
        s = self.stations_m
        if len(s) == 1 or station < s[0] or station >= s[-1]:
            return 0.0
        k = int(np.searchsorted(s, station, side="right")) - 1
        return float(0.5 * (self._v2[k + 1] - self._v2[k]) / (s[k + 1] - s[k]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["station_m", "target_speed_m_s"])
        for s, v in zip(self.stations_m, self.target_speed_m_s):
            w.writerow([repr(float(s)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, total_fuel_g: float = float("nan")) -> "SpeedProfile":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["station_m", "target_speed_m_s"]:
            raise ValueError("profile CSV must start with header station_m,target_speed_m_s")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
        return cls(data[:, 0], data[:, 1], total_fuel_g)


@dataclass(frozen=True, eq=False)
class DPGrid:
    cost_to_go: np.ndarray  # (stages + 1, nodes), grams, inf = infeasible
    successor: np.ndarray  # (stages, nodes), -1 where infeasible


def _arc_fuel(vehicle: VehicleParams, fuel: FuelModelParams, grade: float, ds,
              v_from, v_to):
    """Fuel [g] of constant-acceleration arcs; elementwise over arrays."""
    accel = (v_to * v_to - v_from * v_from) / (2.0 * ds)
    v_mid = 0.5 * (v_from + v_to)
    dt = ds / np.maximum(v_mid, SPEED_EPS)
    return fuel_rate(fuel, traction_power(vehicle, v_mid, accel, grade)) * dt, accel


def _stage_costs(problem: DPProblem, k: int, rows: Optional[slice] = None) -> np.ndarray:
    grid = problem.speed_grid
    vf = grid[:, None] if rows is None else grid[rows, None]
    vt = grid[None, :]
    station = float(problem.stations[k])
    cost, accel = _arc_fuel(problem.vehicle, problem.fuel, grade_at(problem.route, station),
                            problem.arc_length, vf, vt)
    lim = problem.limits
    next_limit = speed_limit_at(problem.route, min(float(problem.stations[k + 1]), problem.route.length_m))
    bad = ((accel > lim.accel_max + _TOL) | (accel < -lim.decel_max - _TOL)
           | (vt > next_limit + _TOL) | ((vf == 0) & (vt == 0)))
    return np.where(bad, np.inf, cost)


def stage_cost(problem: DPProblem, station: float, v_from: float, v_to: float) -> float:
    """Fuel [g] of one arc starting at ``station``; ``inf`` when infeasible."""
    k = int(np.argmin(np.abs(problem.stations - station)))
    sub = replace(problem, speed_grid=sorted({float(v_from), float(v_to)}))
    costs = _stage_costs(sub, k)
    i = int(np.searchsorted(sub.speed_grid, v_from))
    j = int(np.searchsorted(sub.speed_grid, v_to))
    return float(costs[i, j])


def _node_mask(problem: DPProblem, k: int) -> np.ndarray:
    """Nodes allowed at station k (speed limit, v_min, terminal window)."""
    grid = problem.speed_grid
    station = min(float(problem.stations[k]), problem.route.length_m)
    mask = grid <= speed_limit_at(problem.route, station) + _TOL
    if k == 0:
        only = np.zeros_like(mask)
        only[problem.start_node()] = True
        return only
    if k == problem.n_stages:
        return mask & (np.abs(grid - problem.terminal_speed_m_s)
                       <= problem.terminal_speed_tolerance_m_s + _TOL)
    return mask & (grid >= problem.min_interior_speed_m_s - _TOL)


def solve_grid(problem: DPProblem, workers: int = 1) -> DPGrid:
    """Backward induction over all stages."""
    n_st, n = problem.n_stages, len(problem.speed_grid)
    J = np.full((n_st + 1, n), np.inf)
    succ = np.full((n_st, n), -1, dtype=np.int64)
    J[n_st] = np.where(_node_mask(problem, n_st), 0.0, np.inf)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(n_st - 1, -1, -1):
            if pool is None:
                costs = _stage_costs(problem, k)
            else:
                chunks = np.array_split(np.arange(n), workers)
                parts = pool.map(lambda c: _stage_costs(problem, k, slice(c[0], c[-1] + 1)),
                                 [c for c in chunks if len(c)])
                costs = np.vstack(list(parts))
            total = costs + J[k + 1][None, :]
            # argmin returns the first minimum: lowest speed wins ties
            best = np.argmin(total, axis=1)
            val = total[np.arange(n), best]
            ok = _node_mask(problem, k) & np.isfinite(val)
            J[k] = np.where(ok, val, np.inf)
            succ[k] = np.where(ok, best, -1)
    finally:
        if pool is not None:
            pool.shutdown()
    return DPGrid(J, succ)


def _first_unreachable_stage(problem: DPProblem) -> int:
    reach = _node_mask(problem, 0)
    for k in range(problem.n_stages):
        costs = _stage_costs(problem, k)
        reach = np.isfinite(costs[reach]).any(axis=0) & _node_mask(problem, k + 1)
        if not reach.any():
            return k + 1
    return problem.n_stages


def solve(problem: DPProblem, workers: int = 1) -> SpeedProfile:
    grid = solve_grid(problem, workers)
    i = problem.start_node()
    if not np.isfinite(grid.cost_to_go[0, i]):
        stage = _first_unreachable_stage(problem)
        raise InfeasibleProblem(
            f"no feasible path from v={problem.initial_speed_m_s:.3f} m/s at "
            f"{problem.start_station_m:.1f} m to v={problem.terminal_speed_m_s:.3f} m/s at "
            f"{problem.end_station_m:.1f} m (first unreachable stage {stage} of {problem.n_stages})",
            stage)
    path = [i]
    for k in range(problem.n_stages):
        i = int(grid.successor[k, i])
        path.append(i)
    speeds = problem.speed_grid[path]
    return SpeedProfile(problem.stations.copy(), speeds, float(grid.cost_to_go[0, path[0]]))


def evaluate_profile(profile: SpeedProfile, vehicle: VehicleParams, fuel: FuelModelParams,
                     route: RouteProfile, limits: Optional[PowertrainLimits] = None) -> float:
    """Forward fuel summation along a profile [g].

    Arc costs are accumulated from the last arc backwards, the same
    association order as the cost-to-go recursion.
    """
    s, v = profile.stations_m, profile.target_speed_m_s
    if len(s) != len(v) or len(s) == 0:
        raise ValueError("invalid profile: stations and speeds must be nonempty and equal length")
    if np.any(v < 0) or np.any(np.diff(s) <= 0):
        raise ValueError("invalid profile: negative speed or non-increasing stations")
    total = 0.0
    for k in range(len(s) - 2, -1, -1):
        if v[k] == 0 and v[k + 1] == 0:
            raise ValueError(f"invalid profile: zero-speed arc at station {s[k]}")
        c, a = _arc_fuel(vehicle, fuel, grade_at(route, float(s[k])), float(s[k + 1] - s[k]),
                         np.array([v[k]]), np.array([v[k + 1]]))
        if limits is not None and not (-limits.decel_max - 1e-6 <= a[0] <= limits.accel_max + 1e-6):
            raise ValueError(f"invalid profile: acceleration {a[0]:.3f} out of bounds at {s[k]}")
        total = float(c[0]) + total
    return total


def default_grid(max_speed: float, step: float = 0.5) -> np.ndarray:
    return np.round(np.arange(0.0, max_speed + 0.5 * step, step), 10)


def _with_speed(grid: np.ndarray, v: float) -> np.ndarray:
    if np.any(np.abs(grid - v) < 1e-12):
        return grid
    return np.sort(np.append(grid, v))


def template_problem(route: RouteProfile, vehicle: VehicleParams, fuel: FuelModelParams,
                     limits: PowertrainLimits, distance_step_m: float = 10.0,
                     speed_step_m_s: float = 0.5) -> DPProblem:
    vmax = max(v for _, v in route.speed_limit_table)
    return DPProblem(0.0, route.length_m, distance_step_m, default_grid(vmax, speed_step_m_s),
                     0.0, 0.0, vehicle, fuel, limits, route)


def max_decel_stop_profile(current: VehicleState, stop_location: float) -> SpeedProfile:
    """Fallback: constant deceleration to rest exactly at ``stop_location``."""
    return SpeedProfile(np.array([current.position_m, stop_location]),
                        np.array([current.speed_m_s, 0.0]), float("nan"))


def solve_eco_stop(current: VehicleState, stop_location: float, template: DPProblem,
                   workers: int = 1) -> SpeedProfile:
    """Fuel-optimal approach to a standstill at ``stop_location``.

    Raises InfeasibleProblem when the stop is too close for the deceleration
    limit; callers fall back to :func:`max_decel_stop_profile`.
    """
    distance = stop_location - current.position_m
    if current.speed_m_s == 0 and distance < 0.5 * template.distance_step_m:
        return SpeedProfile(np.array([stop_location]), np.array([0.0]), 0.0)
    if distance <= 0:
        raise ValueError("stop location must be ahead of the vehicle")
    prob = replace(template, start_station_m=current.position_m, end_station_m=stop_location,
                   speed_grid=_with_speed(template.speed_grid, current.speed_m_s),
                   initial_speed_m_s=current.speed_m_s, terminal_speed_m_s=0.0,
                   terminal_speed_tolerance_m_s=min(template.terminal_speed_tolerance_m_s, 1e-9),
                   min_interior_speed_m_s=0.0)
    return solve(prob, workers)


def solve_eco_departure(from_station: float, target_speed: float, template: DPProblem,
                        horizon_m: float = 300.0, workers: int = 1) -> SpeedProfile:
    """Fuel-optimal launch from rest to ``target_speed`` over ``horizon_m``."""
    if target_speed <= 0:
        return SpeedProfile(np.array([from_station]), np.array([0.0]), 0.0)
    limit = speed_limit_at(template.route, from_station)
    if target_speed > limit + _TOL:
        raise ValueError(f"target {target_speed} exceeds local speed limit {limit}")
    end = min(from_station + horizon_m, template.route.length_m)
    prob = replace(template, start_station_m=from_station, end_station_m=end,
                   speed_grid=_with_speed(template.speed_grid, target_speed),
                   initial_speed_m_s=0.0, terminal_speed_m_s=target_speed,
                   min_interior_speed_m_s=0.0)
    return solve(prob, workers)


def stop_points(route: RouteProfile) -> list[float]:
    """Stations where every vehicle must come to rest (STOP signs)."""
    return [sign.location_m for sign in route.stop_signs]


def plan_eco_cruise(template: DPProblem, stops: Optional[Sequence[float]] = None,
                    workers: int = 1) -> SpeedProfile:
    """Whole-route Eco-Cruise profile.

    The route is cut at every mandatory stop (STOP signs by default; lights
    are left to the signal logic); each piece is solved from rest to rest with interior speeds
    held at least one grid step above zero, and the pieces are joined.
    """
    route = template.route
    cuts = sorted(set(stop_points(route) if stops is None else stops))
    bounds = [0.0] + [c for c in cuts if 0 < c < route.length_m] + [route.length_m]
    grid = template.speed_grid
    vmin = float(grid[1]) if len(grid) > 1 else 0.0
    stations, speeds, total = [], [], 0.0
    for a, b in zip(bounds, bounds[1:]):
        prob = replace(template, start_station_m=a, end_station_m=b, initial_speed_m_s=0.0,
                       terminal_speed_m_s=0.0, min_interior_speed_m_s=vmin)
        seg = solve(prob, workers)
        skip = 1 if stations else 0
        stations.extend(seg.stations_m[skip:])
        speeds.extend(seg.target_speed_m_s[skip:])
        total += seg.total_fuel_g
    return SpeedProfile(np.array(stations), np.array(speeds), total)
