"""Charge-depleting / charge-sustaining rule-based controller.

All torque comparisons happen at the wheel: an engine torque ``T`` is worth
``T * gear_parallel * driveline_eff`` there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cycle import KMH
from .env import EnvState, HybridAction
from .powertrain import Powertrain, motor_electric_power

MODES = ("EV", "series", "parallel", "engine_direct", "regen", "mech_brake")


@dataclass(frozen=True)
class RuleThresholds:
    soc_cd_floor: float = 0.3
    soc_ceiling: float = 0.9
    v_parallel: float = 60.0 * KMH
    bsfc_band: float = 0.10  # T_e_min: lowest economy-curve torque within this BSFC margin

    def __post_init__(self):
        if not 0 < self.soc_cd_floor < self.soc_ceiling <= 1:
            raise ValueError("need 0 < soc_cd_floor < soc_ceiling <= 1")
        if self.v_parallel <= 0 or self.bsfc_band < 0:
            raise ValueError("v_parallel must be > 0 and bsfc_band >= 0")


class CdcsController:
    """Memoryless rule tree; call it with an :class:`EnvState`."""

    def __init__(self, pt: Powertrain, thresholds: RuleThresholds | None = None):
        self.pt = pt
        self.th = thresholds or RuleThresholds()
        eng = pt.engine
        p = pt.vehicle
        self.wheel_gain = p.gear_parallel * p.driveline_eff

        tq = eng.economy_curve.x
        speeds = eng.economy_curve.y
        bsfc = eng.bsfc.evaluate(speeds, tq)
        best = bsfc.min()
        self.T_curve_opt = float(tq[np.argmin(bsfc)])
        self.T_e_min = float(tq[np.nonzero(bsfc <= best * (1.0 + self.th.bsfc_band))[0][0]])
        self.T_e_max = eng.max_torque
        self.T_series_max = pt.series_torque_cap
        if self.T_e_min > self.T_series_max:
            self.T_e_min = self.T_series_max

        # electrical output along the economy curve, for setpoint inversion
        self._gen_gain = p.engine_gen_eff * pt.generator.efficiency

    # ---------------------------------------------------------------- helpers

    def series_power(self, T_e: float) -> float:
        """Electrical power delivered by the generator with the engine at T_e on the curve."""
        return T_e * self.pt.engine.speed_on_curve(T_e) * self._gen_gain

    def series_engine_setpoint(self, P_req: float) -> float:
        """Curve torque whose generator output covers ``P_req``, within [T_e_min, T_series_max]."""
        lo, hi = self.T_e_min, self.T_series_max
        if P_req <= self.series_power(lo):
            return lo
        if P_req >= self.series_power(hi):
            return hi
        # exact inversion on the piecewise-linear speed curve: P = c*T*(w0 + s*(T - T0))
        curve = self.pt.engine.economy_curve
        xs, ys = curve.x, curve.y
        c = self._gen_gain
        for i in range(xs.size - 1):
            t0, t1 = xs[i], xs[i + 1]
            if self.series_power(min(t1, hi)) < P_req:
                continue
            s = (ys[i + 1] - ys[i]) / (t1 - t0)
            qa, qb, qc = c * s, c * (ys[i] - s * t0), -P_req
            if abs(qa) < 1e-15:
                T = -qc / qb
            else:
                T = (-qb + math.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
            return float(min(max(T, max(lo, t0)), min(hi, t1)))
        return hi

    def optimal_point_threshold(self, v: float) -> float:
        """Wheel-torque equivalent of the engine's optimal working point."""
        if v >= self.th.v_parallel:
            w_e = v / self.pt.vehicle.tyre_radius * self.pt.vehicle.gear_parallel
            return self.pt.engine.optimal_torque(w_e) * self.wheel_gain
        return self.T_curve_opt * self.wheel_gain

    def ev_electric_demand(self, state: EnvState) -> float:
        p = self.pt.vehicle
        w_m = state.v / p.tyre_radius * p.gear_ev
        T_m = min(state.T_d / (p.gear_ev * p.driveline_eff), self.pt.motor.torque_limit(w_m))
        return max(motor_electric_power(T_m, w_m, self.pt.motor) + p.aux_power, 0.0)

    # ------------------------------------------------------------------ rules

    def decide(self, state: EnvState) -> tuple[HybridAction, str]:
        th = self.th
        v, T_d, soc = state.v, state.T_d, state.soc
        g = self.wheel_gain

        def series():
            return HybridAction(self.series_engine_setpoint(self.ev_electric_demand(state)), 0), "series"

        if soc > th.soc_cd_floor:
            if T_d >= self.optimal_point_threshold(v):
                if v >= th.v_parallel and T_d <= self.T_e_max * g:
                    w_e = v / self.pt.vehicle.tyre_radius * self.pt.vehicle.gear_parallel
                    return HybridAction(self.pt.engine.optimal_torque(w_e), 1), "parallel"
                return series()
            if T_d < 0:
                if soc > th.soc_ceiling:
                    return HybridAction(0.0, 0, regen=False), "mech_brake"
                return HybridAction(0.0, 0), "regen"
            return HybridAction(0.0, 0), "EV"

        if T_d < 0:
            return HybridAction(0.0, 0), "regen"
        if T_d >= self.T_e_min * g and v > th.v_parallel:
            return HybridAction(min(T_d / g, self.T_e_max), 1), "engine_direct"
        return series()

    def __call__(self, state: EnvState) -> HybridAction:
        return self.decide(state)[0]
