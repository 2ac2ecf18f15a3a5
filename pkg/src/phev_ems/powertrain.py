"""Series-parallel PHEV powertrain: component models and one-step resolution.

Layout: the engine reaches the wheels through a clutch (ratio ``gear_parallel``)
or drives the generator (ratio ``gear_series``); the drive motor is always
coupled to the wheels (ratio ``gear_ev``).  A step is resolved from the wheel
demand, the commanded engine torque and the clutch state; the motor and the
friction brake take whatever the engine does not supply.

Sign conventions
----------------
* ``T_d`` and all shaft torques are positive when propelling the vehicle.
* ``T_b`` is the signed wheel-side friction-brake torque closing the torque
  balance, so it is <= 0 (reports use ``abs(T_b)``).
* ``P_b`` is battery terminal power, positive when discharging.  Generator
  output is an inflow and is subtracted.

Violations are returned as data (:class:`Violation`) with clamped actuation so
a simulation can always continue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum

import numpy as np

from .maps import (
    ENGINE_MAX_RPM,
    ENGINE_MAX_TORQUE,
    MOTOR_MAX_RPM,
    MOTOR_MAX_TORQUE,
    RPM_TO_RAD,
    Curve1D,
    Grid2D,
    default_bsfc_map,
    default_motor_eff_map,
    default_ocv_curve,
    default_resistance_curve,
)

J_PER_KWH = 3.6e6


class Violation(str, Enum):
    NONE = "none"
    ENGINE_SPEED = "engine_speed"
    GENERATOR = "generator"
    MOTOR_TORQUE = "motor_torque"
    BATTERY_POWER = "battery_power"
    SOC_BOUND = "soc_bound"


# integer codes used by the vectorised path, same priority order as the enum
VIOLATION_CODES = list(Violation)


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1500.0
    frontal_area: float = 2.36
    drag_coeff: float = 0.28
    air_density: float = 1.206
    tyre_radius: float = 0.3382
    rolling_coeff: float = 0.012
    gravity: float = 9.81
    road_grade: float = 0.0
    gear_ev: float = 10.126
    gear_parallel: float = 2.8
    gear_series: float = 2.07
    driveline_eff: float = 0.96
    engine_gen_eff: float = 0.97
    aux_power: float = 300.0
    fuel_density: float = 725.0  # g/L

    def __post_init__(self):
        positive = ("mass", "frontal_area", "drag_coeff", "air_density", "tyre_radius",
                    "gravity", "gear_ev", "gear_parallel", "gear_series", "fuel_density")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be > 0")
        for name in ("driveline_eff", "engine_gen_eff"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"VehicleParams.{name} must be in (0, 1]")
        if self.rolling_coeff < 0 or self.aux_power < 0:
            raise ValueError("rolling_coeff and aux_power must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown vehicle keys: {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in values.items()})


@dataclass(frozen=True)
class EngineModel:
    max_speed: float
    idle_speed: float
    max_torque: float
    bsfc: Grid2D
    economy_curve: Curve1D  # torque -> speed for T_e > 0; T_e = 0 means engine off

    @classmethod
    def from_bsfc(cls, bsfc: Grid2D, max_speed=ENGINE_MAX_RPM * RPM_TO_RAD,
                  idle_speed=1000.0 * RPM_TO_RAD, max_torque=ENGINE_MAX_TORQUE) -> "EngineModel":
        if not 0 < idle_speed < max_speed or max_torque <= 0:
            raise ValueError("engine limits must satisfy 0 < idle < max and max_torque > 0")
        if np.any(bsfc.values <= 0):
            raise ValueError("BSFC map must be strictly positive")
        torques, speeds = economy_line(bsfc, idle_speed, max_speed, max_torque)
        return cls(max_speed, idle_speed, max_torque, bsfc, Curve1D(torques, speeds))

    def speed_on_curve(self, torque: float) -> float:
        return self.economy_curve(torque) if torque > 0 else 0.0

    def optimal_torque(self, speed: float) -> float:
        """Torque of minimum BSFC at ``speed`` (scan of the map's torque nodes)."""
        tq = self.bsfc.torques
        tq = tq[(tq > 0) & (tq <= self.max_torque)]
        return float(tq[np.argmin(self.bsfc.evaluate(speed, tq))])


def economy_line(bsfc: Grid2D, idle_speed: float, max_speed: float, max_torque: float):
    """BSFC-minimising speed for every positive torque node of the map.

    Only speed nodes within [idle, max] are eligible.  The resulting speeds are
    made non-decreasing in torque with a running maximum (a no-op for the
    default map).
    """
    s = bsfc.speeds
    eligible = (s >= idle_speed) & (s <= max_speed)
    if not eligible.any():
        raise ValueError("BSFC map has no speed node between idle and max speed")
    tq = bsfc.torques[(bsfc.torques > 0) & (bsfc.torques <= max_torque)]
    if tq.size == 0:
        raise ValueError("BSFC map has no positive torque node")
    sub = bsfc.values[eligible][:, np.isin(bsfc.torques, tq)]
    best = s[eligible][np.argmin(sub, axis=0)]
    best = np.maximum.accumulate(best)
    if tq.size == 1:
        tq, best = np.array([tq[0], tq[0] + 1.0]), np.repeat(best, 2)
    return tq, best


@dataclass(frozen=True)
class MotorModel:
    max_speed: float
    torque_limit: Curve1D  # speed -> max |torque|
    efficiency: Grid2D  # (speed, |torque|) -> eta, or signed torque if the axis spans negatives

    @classmethod
    def from_maps(cls, efficiency: Grid2D, max_speed=MOTOR_MAX_RPM * RPM_TO_RAD,
                  peak_torque=MOTOR_MAX_TORQUE, max_power=145e3) -> "MotorModel":
        w = np.linspace(0.0, max_speed, 161)
        limit = np.minimum(peak_torque, max_power / np.maximum(w, 1e-9))
        if np.any(efficiency.values <= 0) or np.any(efficiency.values > 1):
            raise ValueError("motor efficiency map must lie in (0, 1]")
        return cls(max_speed, Curve1D(w, limit), efficiency)

    @property
    def signed_map(self) -> bool:
        return self.efficiency.torques[0] < 0

    def eff(self, speed: float, torque: float) -> float:
        return self.efficiency(speed, torque if self.signed_map else abs(torque))


@dataclass(frozen=True)
class GeneratorModel:
    max_speed: float = 13000.0 * RPM_TO_RAD
    max_torque: float = 110.0
    efficiency: float = 0.92

    def __post_init__(self):
        if self.max_speed <= 0 or self.max_torque <= 0 or not 0 < self.efficiency <= 1:
            raise ValueError("generator limits must be positive and efficiency in (0, 1]")


@dataclass(frozen=True)
class BatteryModel:
    ocv: Curve1D
    resistance: Curve1D
    capacity_ah: float = 26.0
    soc_low: float = 0.3
    soc_high: float = 0.9

    def __post_init__(self):
        grid = np.linspace(0.0, 1.0, 101)
        if np.any(self.ocv.evaluate(grid) <= 0) or np.any(self.resistance.evaluate(grid) <= 0):
            raise ValueError("open-circuit voltage and resistance must be positive on [0, 1]")
        if not 0 <= self.soc_low < self.soc_high <= 1:
            raise ValueError("need 0 <= soc_low < soc_high <= 1")

    @property
    def capacity(self) -> float:
        """Charge capacity in coulombs."""
        return self.capacity_ah * 3600.0


@dataclass(frozen=True)
class Powertrain:
    vehicle: VehicleParams
    engine: EngineModel
    motor: MotorModel
    generator: GeneratorModel
    battery: BatteryModel

    @classmethod
    def default(cls, **overrides) -> "Powertrain":
        pt = cls(
            vehicle=VehicleParams(),
            engine=EngineModel.from_bsfc(default_bsfc_map()),
            motor=MotorModel.from_maps(default_motor_eff_map()),
            generator=GeneratorModel(),
            battery=BatteryModel(default_ocv_curve(), default_resistance_curve()),
        )
        return replace(pt, **overrides) if overrides else pt

    @property
    def series_torque_cap(self) -> float:
        """Largest engine torque the generator can absorb with the clutch open."""
        p = self.vehicle
        return min(self.engine.max_torque,
                   self.generator.max_torque / (p.gear_series * p.engine_gen_eff))


@dataclass(frozen=True, slots=True)
class PowertrainStep:
    T_d: float
    omega_d: float
    T_e: float
    omega_e: float
    T_m: float
    omega_m: float
    T_g: float
    omega_g: float
    T_b: float
    k_c: int
    P_b: float
    fuel_rate: float
    soc_next: float
    feasible: bool
    violation: Violation

    def torque_residual(self, p: VehicleParams) -> float:
        supplied = (self.T_e * p.gear_parallel * self.k_c * p.driveline_eff
                    + self.T_m * p.gear_ev * p.driveline_eff + self.T_b)
        return self.T_d - supplied


# ------------------------------------------------------------------ scalar path


def demand_torque(v: float, a: float, p: VehicleParams) -> tuple[float, float]:
    """Wheel torque and wheel speed required to follow (v, a)."""
    force = (p.mass * a
             + 0.5 * p.drag_coeff * p.air_density * p.frontal_area * v * v
             + p.rolling_coeff * p.mass * p.gravity * math.cos(p.road_grade)
             + p.mass * p.gravity * math.sin(p.road_grade))
    return force * p.tyre_radius, v / p.tyre_radius


def engine_speed(T_e: float, omega_d: float, k_c: int, eng: EngineModel,
                 p: VehicleParams) -> tuple[float, bool]:
    """Engine speed and whether the operating point is admissible."""
    if k_c:
        w = omega_d * p.gear_parallel
        ok = T_e <= 0 or w == 0.0 or eng.idle_speed <= w <= eng.max_speed
        return w, ok
    return eng.speed_on_curve(T_e), True


def fuel_rate(T_e: float, omega_e: float, eng: EngineModel) -> float:
    """Fuel mass flow in g/s."""
    if T_e <= 0 or omega_e <= 0:
        return 0.0
    return T_e * omega_e * eng.bsfc(omega_e, T_e) / J_PER_KWH


def split_motor_brake(T_d: float, T_e: float, k_c: int, omega_m: float, mot: MotorModel,
                      p: VehicleParams, regen: bool = True) -> tuple[float, float, float, bool]:
    """Share the non-engine torque between motor and friction brake.

    Returns ``(T_mb, T_m, T_b, ok)``; ``ok`` is False when the drive-side demand
    exceeds the motor limit (the motor is then clamped and demand is unmet).
    With ``regen=False`` any braking torque goes to the friction brake.
    """
    k = p.gear_ev * p.driveline_eff
    T_mb = T_d - T_e * p.gear_parallel * k_c * p.driveline_eff
    limit = mot.torque_limit(omega_m)
    if T_mb < 0 and not regen:
        return T_mb, 0.0, T_mb, True
    if T_mb < -limit * k:
        return T_mb, -limit, T_mb + limit * k, True
    T_m = T_mb / k
    if T_m > limit:
        return T_mb, limit, 0.0, False
    return T_mb, T_m, 0.0, True


def generator_state(T_e: float, omega_e: float, k_c: int, gen: GeneratorModel,
                    p: VehicleParams) -> tuple[float, float, bool]:
    T_g = T_e * p.gear_series * p.engine_gen_eff * (1 - k_c)
    w_g = omega_e / p.gear_series
    ok = T_g <= gen.max_torque and (k_c or w_g <= gen.max_speed)
    return T_g, w_g, bool(ok)


def motor_electric_power(T_m: float, omega_m: float, mot: MotorModel) -> float:
    mech = T_m * omega_m
    if mech == 0.0:
        return 0.0
    eta = mot.eff(omega_m, T_m)
    return mech / eta if T_m > 0 else mech * eta


def battery_current(P_b: float, soc: float, bat: BatteryModel) -> tuple[float, float, bool]:
    """Solve P_b = V_oc I - R I^2 for the physical (smaller) root.

    Returns ``(I, P_b_used, ok)``; power beyond V_oc^2 / 4R is clamped.
    """
    v = bat.ocv(soc)
    r = bat.resistance(soc)
    disc = v * v - 4.0 * r * P_b
    ok = disc >= 0.0
    if not ok:
        P_b = v * v / (4.0 * r)
        disc = 0.0
    return (v - math.sqrt(disc)) / (2.0 * r), P_b, ok


def battery_step(T_m: float, omega_m: float, T_g: float, omega_g: float, soc: float,
                 mot: MotorModel, gen: GeneratorModel, bat: BatteryModel, p: VehicleParams,
                 dt: float) -> tuple[float, float, Violation]:
    P_b = (motor_electric_power(T_m, omega_m, mot)
           - T_g * omega_g * gen.efficiency + p.aux_power)
    current, P_b, ok = battery_current(P_b, soc, bat)
    soc_next = soc - current * dt / bat.capacity
    if not ok:
        return P_b, min(max(soc_next, 0.0), 1.0), Violation.BATTERY_POWER
    if not 0.0 <= soc_next <= 1.0:
        return P_b, min(max(soc_next, 0.0), 1.0), Violation.SOC_BOUND
    return P_b, soc_next, Violation.NONE


def resolve_step(v: float, a: float, T_e: float, k_c: int, soc: float, pt: Powertrain,
                 dt: float = 1.0, regen: bool = True) -> PowertrainStep:
    """Resolve one time step of the powertrain.

    The first violation met in the order engine_speed, generator,
    motor_torque, battery_power, soc_bound is reported; actuation is clamped
    (engine switched off on an engine-speed violation, engine torque capped on
    a generator overload) so every field stays populated.
    """
    p = pt.vehicle
    k_c = 1 if k_c else 0
    T_e = min(max(float(T_e), 0.0), pt.engine.max_torque)
    violation = Violation.NONE

    T_d, w_d = demand_torque(v, a, p)
    w_e, ok = engine_speed(T_e, w_d, k_c, pt.engine, p)
    if not ok:
        violation = Violation.ENGINE_SPEED
        T_e = 0.0
    T_g, w_g, ok = generator_state(T_e, w_e, k_c, pt.generator, p)
    if not ok:
        if violation is Violation.NONE:
            violation = Violation.GENERATOR
        T_e = min(T_e, pt.series_torque_cap)
        w_e = pt.engine.speed_on_curve(T_e)
        T_g, w_g, ok = generator_state(T_e, w_e, k_c, pt.generator, p)
        if not ok:
            T_e, w_e, T_g, w_g = 0.0, 0.0, 0.0, 0.0
    m_f = fuel_rate(T_e, w_e, pt.engine)

    w_m = w_d * p.gear_ev
    _, T_m, T_b, ok = split_motor_brake(T_d, T_e, k_c, w_m, pt.motor, p, regen)
    if not ok and violation is Violation.NONE:
        violation = Violation.MOTOR_TORQUE

    P_b, soc_next, bat_violation = battery_step(T_m, w_m, T_g, w_g, soc, pt.motor,
                                                pt.generator, pt.battery, p, dt)
    if violation is Violation.NONE:
        violation = bat_violation
    return PowertrainStep(T_d, w_d, T_e, w_e, T_m, w_m, T_g, w_g, T_b, k_c, P_b, m_f,
                          soc_next, violation is Violation.NONE, violation)


# -------------------------------------------------------------- vectorised path


def resolve_actions(v: float, a: float, T_e, k_c, pt: Powertrain, regen: bool = True) -> dict:
    """SOC-independent part of :func:`resolve_step` for many actions at once.

    Returns arrays ``T_e, omega_e, T_m, T_g, T_b, P_b, fuel_rate, code`` where
    ``P_b`` is the unclamped terminal power demand and ``code`` indexes
    :data:`VIOLATION_CODES` (battery checks excluded).
    """
    p, eng = pt.vehicle, pt.engine
    T_e = np.clip(np.asarray(T_e, dtype=float), 0.0, eng.max_torque)
    k_c = (np.asarray(k_c) != 0).astype(int)
    T_e, k_c = np.broadcast_arrays(T_e, k_c)
    T_e = T_e.copy()
    code = np.zeros(T_e.shape, dtype=int)
    T_d, w_d = demand_torque(v, a, p)

    w_clutch = w_d * p.gear_parallel
    speed_ok = (w_clutch == 0.0) | ((w_clutch >= eng.idle_speed) & (w_clutch <= eng.max_speed))
    bad = (k_c == 1) & (T_e > 0) & (not speed_ok)
    code[bad] = 1
    T_e[bad] = 0.0

    def curve_speed(t):
        return np.where(t > 0, eng.economy_curve.evaluate(t), 0.0)

    w_e = np.where(k_c == 1, w_clutch, curve_speed(T_e))
    T_g = T_e * p.gear_series * p.engine_gen_eff * (1 - k_c)
    w_g = w_e / p.gear_series
    gen = pt.generator
    gen_bad = (T_g > gen.max_torque) | ((k_c == 0) & (w_g > gen.max_speed))
    code[gen_bad & (code == 0)] = 2
    if gen_bad.any():
        T_e = np.where(gen_bad, np.minimum(T_e, pt.series_torque_cap), T_e)
        w_e = np.where(k_c == 1, w_clutch, curve_speed(T_e))
        T_g = T_e * p.gear_series * p.engine_gen_eff * (1 - k_c)
        w_g = w_e / p.gear_series
        still = (T_g > gen.max_torque) | ((k_c == 0) & (w_g > gen.max_speed))
        T_e, w_e, T_g, w_g = (np.where(still, 0.0, x) for x in (T_e, w_e, T_g, w_g))

    on = (T_e > 0) & (w_e > 0)
    fuel = np.where(on, T_e * w_e * eng.bsfc.evaluate(w_e, T_e) / J_PER_KWH, 0.0)

    w_m = w_d * p.gear_ev
    k = p.gear_ev * p.driveline_eff
    limit = pt.motor.torque_limit(w_m)
    T_mb = T_d - T_e * p.gear_parallel * k_c * p.driveline_eff
    brake = T_mb < -limit * k
    T_m = np.where(brake, -limit, T_mb / k)
    T_b = np.where(brake, T_mb + limit * k, 0.0)
    if not regen:
        neg = T_mb < 0
        T_m = np.where(neg, 0.0, T_m)
        T_b = np.where(neg, T_mb, T_b)
    over = T_m > limit
    code[over & (code == 0)] = 3
    T_m = np.where(over, limit, T_m)

    mech = T_m * w_m
    torque_q = T_m if pt.motor.signed_map else np.abs(T_m)
    eta = pt.motor.efficiency.evaluate(w_m, torque_q)
    p_mot = np.where(mech == 0.0, 0.0, np.where(T_m > 0, mech / eta, mech * eta))
    P_b = p_mot - T_g * w_g * gen.efficiency + p.aux_power
    return dict(T_d=T_d, omega_d=w_d, T_e=T_e, k_c=k_c, omega_e=w_e, T_m=T_m, omega_m=w_m,
                T_g=T_g, omega_g=w_g, T_b=T_b, P_b=P_b, fuel_rate=fuel, code=code)


def battery_transition(P_b, soc, bat: BatteryModel, dt: float = 1.0):
    """Vectorised SOC update. Returns ``(soc_next, ok)`` with ok False where
    the requested power exceeds V_oc^2 / 4R (no clamping here)."""
    soc = np.asarray(soc, dtype=float)
    v = bat.ocv.evaluate(soc)
    r = bat.resistance.evaluate(soc)
    disc = v * v - 4.0 * r * np.asarray(P_b, dtype=float)
    ok = disc >= 0.0
    current = (v - np.sqrt(np.where(ok, disc, 0.0))) / (2.0 * r)
    return soc - current * dt / bat.capacity, ok
