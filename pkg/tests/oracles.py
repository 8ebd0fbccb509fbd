"""Independent reference implementations used as test oracles.

Written with plain math and itertools so they share no code path with the
package beyond the parameter dataclasses and route lookups.
"""

import itertools
import math

from ecodrive.route import grade_at, speed_limit_at

EPS = 1e-3


def arc_fuel(vehicle, fuel, grade, ds, v0, v1):
    """Fuel of one constant-acceleration arc, or None when the speeds are both zero."""
    if v0 == 0 and v1 == 0:
        return None
    a = (v1 * v1 - v0 * v0) / (2.0 * ds)
    vm = 0.5 * (v0 + v1)
    mg = vehicle.mass_kg * vehicle.gravity_m_s2
    load = (mg * vehicle.rolling_coeff * math.cos(grade)
            + 0.5 * vehicle.air_density_kg_m3 * vehicle.frontal_area_m2 * vehicle.drag_coeff * vm * vm
            + mg * math.sin(grade))
    power = (vehicle.effective_mass_kg * a + load) * vm
    rate = (max(power, 0.0) / fuel.trans_efficiency + fuel.accessory_power_W) / (
        fuel.engine_efficiency * fuel.fuel_lhv_J_per_g)
    return rate * ds / max(vm, EPS), a


def _allowed(problem, k, v):
    if k == 0:
        return True  # the start is the current state, never masked
    route = problem.route
    st = min(float(problem.stations[k]), route.length_m)
    if v > speed_limit_at(route, st) + 1e-9:
        return False
    if k == problem.n_stages:
        return abs(v - problem.terminal_speed_m_s) <= problem.terminal_speed_tolerance_m_s + 1e-9
    return v >= problem.min_interior_speed_m_s - 1e-9


def path_cost(problem, speeds):
    """Summed arc fuel along a node sequence; inf when any arc or node is infeasible."""
    lim = problem.limits
    total = 0.0
    for k in range(len(speeds) - 1):
        v0, v1 = float(speeds[k]), float(speeds[k + 1])
        if not (_allowed(problem, k, v0) and _allowed(problem, k + 1, v1)):
            return math.inf
        st = float(problem.stations[k])
        res = arc_fuel(problem.vehicle, problem.fuel, grade_at(problem.route, st),
                       problem.arc_length, v0, v1)
        if res is None:
            return math.inf
        c, a = res
        if a > lim.accel_max + 1e-9 or a < -lim.decel_max - 1e-9:
            return math.inf
        total += c
    return total


def enumerate_best(problem):
    """Exhaustive search over every interior node sequence: (cost, speeds)."""
    grid = [float(v) for v in problem.speed_grid]
    start = min(grid, key=lambda v: abs(v - problem.initial_speed_m_s))
    best, best_path = math.inf, None
    for middle in itertools.product(grid, repeat=problem.n_stages):
        path = (start, *middle)
        c = path_cost(problem, path)
        if c < best:
            best, best_path = c, path
    return best, best_path


def simulate_advisory(advisory, t_end, dt=1e-3):
    """Integrate the advisory's acceleration with a fine explicit scheme.

    Returns lists (t, s, v) starting at the advisory anchor.
    """
    ts, ss, vs = [advisory.time_s], [advisory.station_m], [advisory.speed_at(advisory.time_s)]
    t, s, v = advisory.time_s, advisory.station_m, vs[0]
    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        _, _, a0 = advisory.sample(t)
        _, _, a1 = advisory.sample(t + h)
        v_next = v + 0.5 * (a0 + a1) * h
        s += 0.5 * (v + v_next) * h
        v = v_next
        t += h
        ts.append(t)
        ss.append(s)
        vs.append(v)
    return ts, ss, vs


def speed_change_accel(v_from, v_to, accel_max, decel_max, jerk):
    """Acceleration as a function of time for a jerk-limited speed change.

    Built from the closed-form trapezoid (or triangle when the change is too
    small to reach the acceleration bound). Returns (accel(t), duration).
    """
    dv = abs(v_to - v_from)
    sign = 1.0 if v_to >= v_from else -1.0
    a_lim = accel_max if sign > 0 else decel_max
    if dv == 0:
        return (lambda t: 0.0), 0.0
    if dv >= a_lim * a_lim / jerk:
        peak, ramp = a_lim, a_lim / jerk
        hold = (dv - a_lim * a_lim / jerk) / a_lim
    else:
        peak = math.sqrt(dv * jerk)
        ramp, hold = peak / jerk, 0.0
    total = 2 * ramp + hold

    def accel(t):
        if t <= 0 or t >= total:
            return 0.0
        if t < ramp:
            return sign * jerk * t
        if t < ramp + hold:
            return sign * peak
        return sign * jerk * (total - t)
    return accel, total


def time_to_cover(v0, accel, distance, dt=1e-4, t_max=500.0):
    """Forward-integrate v0 under accel(t) until ``distance`` is covered."""
    t, s, v = 0.0, 0.0, v0
    while s < distance and t < t_max:
        a0, a1 = accel(t), accel(t + dt)
        v1 = v + 0.5 * (a0 + a1) * dt
        ds = 0.5 * (v + v1) * dt
        if s + ds >= distance:
            return t + dt * (distance - s) / ds
        s += ds
        v = v1
        t += dt
    return math.inf
