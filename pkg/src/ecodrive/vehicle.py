"""Longitudinal vehicle model: road load, traction power, fuel rate, integration.

All functions accept scalars or numpy arrays for speed/acceleration so the
DP planner can evaluate a whole stage of arcs in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class VehicleParams:
    mass_kg: float = 1500.0
    effective_mass_kg: float = 1590.0
    gravity_m_s2: float = 9.81
    rolling_coeff: float = 0.009
    air_density_kg_m3: float = 1.206
    frontal_area_m2: float = 2.2
    drag_coeff: float = 0.30
    # lumped single gear: gear 1.4 x final drive 3.5 / (wheel 0.33 m x m_e)
    torque_gain: float = 1.4 * 3.5 / (0.33 * 1590.0)
    brake_gain: float = 1.0 / 1590.0

    def __post_init__(self):
        for f in fields(self):
            _require(getattr(self, f.name) > 0, f"{f.name} must be strictly positive")
        _require(self.effective_mass_kg >= self.mass_kg, "effective_mass_kg must be >= mass_kg")

    @property
    def aero_coeff(self) -> float:
        """½·ρ·A_f·C_D, the v² coefficient of aerodynamic drag [N/(m/s)²]."""
        return 0.5 * self.air_density_kg_m3 * self.frontal_area_m2 * self.drag_coeff


@dataclass(frozen=True)
class FuelModelParams:
    trans_efficiency: float = 0.92
    engine_efficiency: float = 0.30
    accessory_power_W: float = 500.0
    fuel_lhv_J_per_g: float = 43000.0

    def __post_init__(self):
        _require(0 < self.trans_efficiency <= 1, "trans_efficiency must be in (0, 1]")
        _require(0 < self.engine_efficiency <= 1, "engine_efficiency must be in (0, 1]")
        _require(self.accessory_power_W >= 0, "accessory_power_W must be >= 0")
        _require(self.fuel_lhv_J_per_g > 0, "fuel_lhv_J_per_g must be > 0")

    @property
    def idle_rate_g_s(self) -> float:
        return self.accessory_power_W / (self.engine_efficiency * self.fuel_lhv_J_per_g)


@dataclass(frozen=True)
class PowertrainLimits:
    """Input and comfort bounds.

    Engine torque is capped at ``peak_torque_Nm`` up to ``base_speed_m_s`` and
    falls off as constant power above it; ``min_torque_Nm`` is engine drag.
    """

    peak_torque_Nm: float = 240.0
    base_speed_m_s: float = 12.0
    min_torque_Nm: float = -40.0
    brake_force_max_N: float = 12000.0
    accel_max: float = 2.0
    decel_max: float = 3.0
    jerk_max: float = 2.0

    def __post_init__(self):
        _require(self.min_torque_Nm <= 0 <= self.peak_torque_Nm, "need T_e,min <= 0 <= T_e,max")
        _require(self.brake_force_max_N >= 0, "brake_force_max_N must be >= 0")
        _require(self.base_speed_m_s > 0, "base_speed_m_s must be > 0")
        for name in ("accel_max", "decel_max", "jerk_max"):
            _require(getattr(self, name) > 0, f"{name} must be > 0")

    def torque_bounds(self, speed: float) -> tuple[float, float]:
        t_max = self.peak_torque_Nm
        if speed > self.base_speed_m_s:
            t_max *= self.base_speed_m_s / speed
        return self.min_torque_Nm, t_max

    def brake_max(self, speed: float) -> float:
        return self.brake_force_max_N


@dataclass(frozen=True)
class VehicleState:
    position_m: float = 0.0
    speed_m_s: float = 0.0
    accel_m_s2: float = 0.0
    time_s: float = 0.0
    fuel_used_g: float = 0.0


@dataclass(frozen=True)
class ControlInput:
    engine_torque_Nm: float = 0.0
    brake_force_N: float = 0.0


def road_load(params: VehicleParams, speed, grade: float):
    """Rolling + aerodynamic + grade force [N]. Negative on steep downgrades."""
    mg = params.mass_kg * params.gravity_m_s2
    return (mg * params.rolling_coeff * np.cos(grade)
            + params.aero_coeff * speed * speed
            + mg * np.sin(grade))


def traction_power(params: VehicleParams, speed, accel, grade: float):
    """Power at the wheels [W] needed to hold ``accel`` at ``speed``."""
    return (params.effective_mass_kg * accel + road_load(params, speed, grade)) * speed


def fuel_rate(fuel: FuelModelParams, power):
    """Fuel mass rate [g/s]; negative traction power costs only the idle floor."""
    engine_power = np.maximum(power, 0.0) / fuel.trans_efficiency + fuel.accessory_power_W
    return engine_power / (fuel.engine_efficiency * fuel.fuel_lhv_J_per_g)


def resistive_accel(params: VehicleParams, speed: float, grade: float) -> float:
    """Deceleration from road load in the per-unit-mass form (raw mass m)."""
    g = params.gravity_m_s2
    return (g * params.rolling_coeff * math.cos(grade)
            + params.aero_coeff * speed * speed / params.mass_kg
            + g * math.sin(grade))


def clamp_input(u: ControlInput, limits: PowertrainLimits, speed: float) -> ControlInput:
    t_lo, t_hi = limits.torque_bounds(speed)
    te = min(max(u.engine_torque_Nm, t_lo), t_hi)
    fb = min(max(u.brake_force_N, 0.0), limits.brake_max(speed))
    if te == u.engine_torque_Nm and fb == u.brake_force_N:
        return u
    return ControlInput(te, fb)


def input_for_accel(params: VehicleParams, limits: PowertrainLimits, speed: float,
                    grade: float, accel: float) -> ControlInput:
    """Invert the acceleration equation for (T_e, F_b); never torque against brake."""
    need = accel + resistive_accel(params, speed, grade)
    if need >= 0:
        u = ControlInput(need / params.torque_gain, 0.0)
    else:
        u = ControlInput(0.0, -need / params.brake_gain)
    return clamp_input(u, limits, speed)


def step_dynamics(state: VehicleState, u: ControlInput, params: VehicleParams,
                  grade: float, dt: float,
                  fuel: FuelModelParams | None = None) -> VehicleState:
    """Advance one semi-implicit Euler step.

    The speed is clamped at zero: rolling resistance never pushes a stopped
    vehicle backwards. Fuel is charged on the realised (post-clamp)
    acceleration at the mid-step speed.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = state.speed_m_s
    a = (params.torque_gain * u.engine_torque_Nm - params.brake_gain * u.brake_force_N
         - resistive_accel(params, v, grade))
    v_new = max(0.0, v + a * dt)
    a_eff = (v_new - v) / dt
    fuel = fuel or FuelModelParams()
    v_mid = 0.5 * (v + v_new)
    rate = float(fuel_rate(fuel, traction_power(params, v_mid, a_eff, grade)))
    return VehicleState(
        position_m=state.position_m + v_new * dt,
        speed_m_s=v_new,
        accel_m_s2=a_eff,
        time_s=state.time_s + dt,
        fuel_used_g=state.fuel_used_g + rate * dt,
    )


def load_params(document: dict | str | Path) -> tuple[VehicleParams, FuelModelParams, PowertrainLimits]:
    """Build parameter sets from a JSON document (dict, JSON text or file path).

    Recognised top-level keys are ``vehicle``, ``fuel`` and ``limits``; each
    holds field names exactly as on the dataclasses. Missing keys keep defaults.
    """
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    out = []
    for key, cls in (("vehicle", VehicleParams), ("fuel", FuelModelParams), ("limits", PowertrainLimits)):
        section = document.get(key, {})
        known = {f.name for f in fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"unknown {key} field(s): {sorted(unknown)}")
        out.append(cls(**section))
    return tuple(out)


def dump_params(vehicle: VehicleParams, fuel: FuelModelParams, limits: PowertrainLimits) -> dict:
    return {"vehicle": asdict(vehicle), "fuel": asdict(fuel), "limits": asdict(limits)}
