"""Energy-management MDP on top of the powertrain model.

State is (v, T_d, SOC); an action is an engine torque plus a clutch command.
The reward is the negated per-step running cost (fuel + electricity, CNY)
minus constraint penalties.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .cycle import DriveCycle
from .powertrain import J_PER_KWH, Powertrain, PowertrainStep, Violation, demand_torque, resolve_step

SOC_RANDOM_RANGE = (0.3, 0.8)


@dataclass(frozen=True)
class RewardParams:
    fuel_price: float = 7.6  # CNY/L
    elec_price: float = 1.0  # CNY/kWh
    battery_eff: float = 0.95
    charger_eff: float = 0.90
    p_max: float = 0.1
    soc_low: float = 0.3
    soc_high: float = 0.9
    dt: float = 1.0
    penalties: bool = True

    def __post_init__(self):
        for name in ("battery_eff", "charger_eff", "p_max", "soc_low", "soc_high", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"RewardParams.{name} must be > 0")
        if self.fuel_price < 0 or self.elec_price < 0:
            raise ValueError("prices must be non-negative")
        if not self.soc_low < self.soc_high < 1:
            raise ValueError("need soc_low < soc_high < 1")


@dataclass(frozen=True)
class EnvState:
    v: float
    T_d: float
    soc: float
    t: int

    V_SCALE = 33.3
    T_SCALE = 2000.0

    def observation(self) -> np.ndarray:
        return np.array([self.v / self.V_SCALE, self.T_d / self.T_SCALE, self.soc])


@dataclass(frozen=True)
class HybridAction:
    T_e: float
    k_c: int
    regen: bool = True  # False: friction brake takes all braking torque


@dataclass(frozen=True)
class RewardTerms:
    running_cost: float
    engine_speed_penalty: float
    soc_penalty: float
    battery_penalty: float

    @property
    def reward(self) -> float:
        return -(self.running_cost + self.engine_speed_penalty + self.soc_penalty
                 + self.battery_penalty)


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: HybridAction
    reward: float
    next_state: EnvState
    done: bool
    terms: RewardTerms


def running_cost(step: PowertrainStep, rp: RewardParams, fuel_density: float) -> float:
    """Fuel plus grid-electricity cost of one step (CNY); negative P_b is a credit."""
    fuel_l = step.fuel_rate / fuel_density
    elec_kwh = step.P_b / (rp.battery_eff * rp.charger_eff) / J_PER_KWH
    return (rp.fuel_price * fuel_l + rp.elec_price * elec_kwh) * rp.dt


def soc_penalty(soc: float, rp: RewardParams) -> float:
    """Linear in the distance outside [soc_low, soc_high]; zero on the band edges."""
    if soc > rp.soc_high:
        return rp.p_max * (soc - rp.soc_high) / (1.0 - rp.soc_high)
    if soc < rp.soc_low:
        return rp.p_max * (rp.soc_low - soc) / rp.soc_low
    return 0.0


def reward_terms(step: PowertrainStep, rp: RewardParams, fuel_density: float) -> RewardTerms:
    r_c = running_cost(step, rp, fuel_density)
    if not rp.penalties:
        return RewardTerms(r_c, 0.0, 0.0, 0.0)
    p_we = rp.p_max * rp.dt if step.violation is Violation.ENGINE_SPEED else 0.0
    p_bat = rp.p_max * rp.dt if step.violation is Violation.BATTERY_POWER else 0.0
    return RewardTerms(r_c, p_we, soc_penalty(step.soc_next, rp), p_bat)


class EpisodeFinished(RuntimeError):
    pass


class EmsEnv:
    """Single-threaded episode runner over one drive cycle."""

    def __init__(self, cycle: DriveCycle, powertrain: Powertrain | None = None,
                 reward: RewardParams | None = None, seed: int | np.random.Generator | None = None):
        self.cycle = cycle
        self.pt = powertrain or Powertrain.default()
        self.rp = reward or RewardParams()
        self.rng = np.random.default_rng(seed)
        self._acc = cycle.accelerations
        self._state: EnvState | None = None

    @property
    def n_steps(self) -> int:
        return len(self.cycle) - 1

    def _make_state(self, t: int, soc: float) -> EnvState:
        v = float(self.cycle.speeds[t])
        a = float(self._acc[t]) if t < self.n_steps else 0.0
        T_d, _ = demand_torque(v, a, self.pt.vehicle)
        return EnvState(v, T_d, soc, t)

    def reset(self, soc_init: float | str = "random", cycle: DriveCycle | None = None) -> EnvState:
        if cycle is not None:
            self.cycle = cycle
            self._acc = cycle.accelerations
        if soc_init == "random":
            soc = float(self.rng.uniform(*SOC_RANDOM_RANGE))
        else:
            soc = float(soc_init)
            if not 0.0 <= soc <= 1.0:
                raise ValueError(f"initial SOC {soc} outside [0, 1]")
        self._state = self._make_state(0, soc)
        return self._state

    def step(self, action: HybridAction) -> tuple[Transition, PowertrainStep]:
        s = self._state
        if s is None or s.t >= self.n_steps:
            raise EpisodeFinished("reset() the environment before stepping")
        t = s.t
        res = resolve_step(s.v, float(self._acc[t]), action.T_e, action.k_c, s.soc, self.pt,
                           self.rp.dt, action.regen)
        terms = reward_terms(res, self.rp, self.pt.vehicle.fuel_density)
        nxt = self._make_state(t + 1, res.soc_next)
        self._state = nxt
        return Transition(s, action, terms.reward, nxt, nxt.t >= self.n_steps, terms), res


# ------------------------------------------------------------------- rollouts

Controller = Callable[[EnvState], HybridAction]

TRACE_COLUMNS = ["t", "v", "a", "T_d", "T_e", "k_c", "omega_e", "T_m", "T_g", "T_b", "P_b",
                 "soc", "fuel_g", "cost_cny", "violation", "soc_next", "reward"]


@dataclass(frozen=True)
class TraceRow:
    t: int
    v: float
    a: float
    step: PowertrainStep
    soc: float
    terms: RewardTerms
    reward: float

    def as_list(self, dt: float) -> list:
        s = self.step
        # brake torque is stored signed (<= 0) but reported as a magnitude
        return [self.t, self.v, self.a, s.T_d, s.T_e, s.k_c, s.omega_e, s.T_m, s.T_g, abs(s.T_b),
                s.P_b, self.soc, s.fuel_rate * dt, self.terms.running_cost, s.violation.value,
                s.soc_next, self.reward]


@dataclass
class Rollout:
    trace: list[TraceRow]
    totals: dict = field(default_factory=dict)


def summarize(trace: Iterable[TraceRow], pt: Powertrain, rp: RewardParams) -> dict:
    trace = list(trace)
    dt = rp.dt
    fuel_g = math.fsum(r.step.fuel_rate * dt for r in trace)
    elec = math.fsum(r.step.P_b * dt for r in trace) / J_PER_KWH
    cost = math.fsum(r.terms.running_cost for r in trace)
    engaged = sum(r.step.k_c for r in trace)
    socs = [r.step.soc_next for r in trace]
    inside = sum(rp.soc_low <= s <= rp.soc_high for s in socs)
    n = len(trace)
    return {
        "steps": n,
        "fuel_l": fuel_g / pt.vehicle.fuel_density,
        "electricity_kwh": elec,
        "cost_cny": cost,
        "return_cny": math.fsum(r.reward for r in trace),
        "clutch_engagement_pct": 100.0 * engaged / n if n else 0.0,
        "soc_initial": trace[0].soc if trace else float("nan"),
        "soc_final": socs[-1] if trace else float("nan"),
        "soc_in_bounds_pct": 100.0 * inside / n if n else 0.0,
        "infeasible_steps": sum(not r.step.feasible for r in trace),
    }


def rollout(controller: Controller, cycle: DriveCycle, soc_init: float | str = 0.8,
            powertrain: Powertrain | None = None, reward: RewardParams | None = None,
            seed: int | None = None) -> Rollout:
    env = EmsEnv(cycle, powertrain, reward, seed)
    state = env.reset(soc_init)
    trace = []
    done = False
    while not done:
        action = controller(state)
        tr, res = env.step(action)
        trace.append(TraceRow(state.t, state.v, float(env._acc[state.t]), res, state.soc,
                              tr.terms, tr.reward))
        state, done = tr.next_state, tr.done
    return Rollout(trace, summarize(trace, env.pt, env.rp))


def write_trace(trace: list[TraceRow], path, dt: float = 1.0) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([x if isinstance(x, (int, str)) else repr(float(x)) for x in row.as_list(dt)])


def read_trace(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k != "violation":
                r[k] = float(v)
    return rows
