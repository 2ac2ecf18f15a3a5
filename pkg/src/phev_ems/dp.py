"""Backward dynamic programming over a SOC grid (global-optimum benchmark).

The cycle is known in advance, so SOC is the only state.  Each stage
minimises running cost plus the linearly interpolated cost-to-go over an
(engine torque x clutch) action grid.  Constraints are enforced exactly:
infeasible actuations and transitions below the lower SOC bound cost
``infeasible_cost``.  Above the upper SOC bound the cost-to-go saturates at the
top grid value (surplus charge is taken by the friction brake), which keeps
the cost-to-go non-increasing in SOC.

Near the lower bound a plain grid would interpolate between feasible nodes and
``infeasible_cost`` nodes, which builds a steep artificial wall and pushes the
optimum away from the bound.  Instead every stage also tracks the exact lowest
SOC from which the rest of the cycle is still feasible (the boundary line) and
its cost-to-go; interpolation runs over the boundary point plus the grid nodes
above it, and anything below the boundary is infeasible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cycle import DriveCycle
from .env import EnvState, HybridAction, RewardParams, Rollout, rollout
from .powertrain import J_PER_KWH, Powertrain, battery_transition, resolve_actions


@dataclass(frozen=True)
class DpConfig:
    soc_min: float = 0.3
    soc_max: float = 0.9
    n_soc: int = 60
    torque_max: float = 120.0
    n_torque: int = 120
    infeasible_cost: float = 1e6
    terminal_cost: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.n_soc < 2 or self.n_torque < 1:
            raise ValueError("DP grids must not be empty (need n_soc >= 2, n_torque >= 1)")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")

    @property
    def soc_grid(self) -> np.ndarray:
        return np.linspace(self.soc_min, self.soc_max, self.n_soc)

    @property
    def torque_grid(self) -> np.ndarray:
        if self.n_torque == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.torque_max, self.n_torque)

    def refined(self, factor: int = 2) -> "DpConfig":
        return DpConfig(self.soc_min, self.soc_max, self.n_soc * factor, self.torque_max,
                        self.n_torque * factor, self.infeasible_cost, self.terminal_cost)

    def terminal(self, soc: np.ndarray) -> np.ndarray:
        if self.terminal_cost is None:
            return np.zeros_like(soc, dtype=float)
        return np.asarray(self.terminal_cost(soc), dtype=float)


@dataclass
class _Stage:
    cost: np.ndarray  # running cost per action
    P_b: np.ndarray
    feasible: np.ndarray


@dataclass
class DpSolution:
    config: DpConfig
    cost_to_go: np.ndarray  # (stages + 1, n_soc)
    policy_torque: np.ndarray  # (stages, n_soc) torque-grid index
    policy_clutch: np.ndarray  # (stages, n_soc)
    trajectory: Rollout | None
    total_cost: float
    soc_grid: np.ndarray
    action_torque: np.ndarray
    action_clutch: np.ndarray
    soc_floor: np.ndarray  # (stages + 1,) lowest feasible SOC, inf if none
    floor_cost: np.ndarray  # cost-to-go at soc_floor
    _problem: "_Problem" = field(repr=False)

    @property
    def n_stages(self) -> int:
        return self.policy_torque.shape[0]

    def floor_at(self, t: int) -> tuple[float, float]:
        return float(self.soc_floor[t]), float(self.floor_cost[t])


class _Problem:
    """Cached per-stage action data plus the stage Q-function."""

    def __init__(self, cycle: DriveCycle, pt: Powertrain, rp: RewardParams, cfg: DpConfig):
        self.cycle, self.pt, self.rp, self.cfg = cycle, pt, rp, cfg
        self.soc_grid = cfg.soc_grid
        tq = cfg.torque_grid
        # torque-major, clutch-open first: argmin ties go to the lowest torque, then k_c = 0
        self.T = np.repeat(tq, 2)
        self.K = np.tile([0, 1], tq.size)
        acc = cycle.accelerations
        elec_gain = rp.elec_price / (rp.battery_eff * rp.charger_eff) / J_PER_KWH
        fuel_gain = rp.fuel_price / pt.vehicle.fuel_density
        self.stages = []
        for t in range(len(cycle) - 1):
            r = resolve_actions(float(cycle.speeds[t]), float(acc[t]), self.T, self.K, pt)
            cost = (fuel_gain * r["fuel_rate"] + elec_gain * r["P_b"]) * rp.dt
            self.stages.append(_Stage(cost, r["P_b"], r["code"] == 0))

    def next_value(self, t: int, soc_next: np.ndarray, J_next: np.ndarray,
                   floor: tuple[float, float]) -> np.ndarray:
        """Interpolated cost-to-go at stage t + 1, honouring its boundary point."""
        lo, J_lo = floor
        cfg = self.cfg
        if not np.isfinite(lo):
            return np.full(np.shape(soc_next), cfg.infeasible_cost)
        above = self.soc_grid > lo
        xs = np.concatenate(([lo], self.soc_grid[above]))
        ys = np.concatenate(([J_lo], J_next[above]))
        J = np.interp(soc_next, xs, ys) if xs.size > 1 else np.full(np.shape(soc_next), J_lo)
        return np.where(soc_next < lo, cfg.infeasible_cost, J)

    def q_values(self, t: int, soc: np.ndarray, J_next: np.ndarray,
                 floor: tuple[float, float]) -> np.ndarray:
        """Stage cost + cost-to-go, shape (len(soc), n_actions)."""
        cfg, st = self.cfg, self.stages[t]
        soc_next, ok = battery_transition(st.P_b[None, :], np.asarray(soc, float)[:, None],
                                          self.pt.battery, self.rp.dt)
        q = st.cost[None, :] + self.next_value(t, soc_next, J_next, floor)
        bad = ~(ok & st.feasible[None, :]) | (soc_next < cfg.soc_min)
        return np.where(bad, cfg.infeasible_cost, q)

    def backup(self, t: int, soc: np.ndarray, J_next: np.ndarray, floor: tuple[float, float]):
        q = self.q_values(t, soc, J_next, floor)
        idx = np.argmin(q, axis=1)
        best = np.minimum(q[np.arange(q.shape[0]), idx], self.cfg.infeasible_cost)
        return best, idx

    def lowest_feasible(self, t: int, target: float) -> float:
        """Smallest SOC at stage t with some feasible action landing at or above ``target``."""
        cfg, st, bat, dt = self.cfg, self.stages[t], self.pt.battery, self.rp.dt
        if not np.isfinite(target):
            return np.inf
        P = st.P_b[st.feasible]
        if P.size == 0:
            return np.inf
        # soc - I(P, soc) dt / Q = target; I depends only weakly on soc, so the
        # fixed-point iteration contracts by roughly 1e-4 per sweep
        s = np.full(P.shape, target)
        for _ in range(6):
            nxt, ok = battery_transition(P, s, bat, dt)
            s = s + (target - nxt)
        for _ in range(8):  # round upwards until the landing point clears the target
            nxt, ok = battery_transition(P, s, bat, dt)
            short = nxt < target
            if not short.any():
                break
            s = np.where(short, np.nextafter(s, np.inf), s)
        nxt, ok = battery_transition(P, s, bat, dt)
        valid = ok & (nxt >= target) & (s <= cfg.soc_max)
        if not valid.any():
            return np.inf
        return max(cfg.soc_min, float(s[valid].min()))


def solve(cycle: DriveCycle, pt: Powertrain | None = None, rp: RewardParams | None = None,
          cfg: DpConfig | None = None, soc_init: float | None = 0.8) -> DpSolution:
    """Backward recursion, then a forward pass from ``soc_init`` (skipped if None).

    The forward pass re-minimises at the actual continuous SOC each step.
    """
    pt = pt or Powertrain.default()
    rp = rp or RewardParams()
    cfg = cfg or DpConfig()
    prob = _Problem(cycle, pt, rp, cfg)
    n, grid = len(prob.stages), prob.soc_grid
    J = np.empty((n + 1, grid.size))
    J[n] = cfg.terminal(grid)
    floor = np.empty(n + 1)
    floor_cost = np.empty(n + 1)
    floor[n] = cfg.soc_min
    floor_cost[n] = float(cfg.terminal(np.array([cfg.soc_min]))[0])
    idx = np.empty((n, grid.size), dtype=int)
    for t in range(n - 1, -1, -1):
        nxt = (floor[t + 1], floor_cost[t + 1])
        J[t], idx[t] = prob.backup(t, grid, J[t + 1], nxt)
        floor[t] = prob.lowest_feasible(t, floor[t + 1])
        if np.isfinite(floor[t]):
            floor_cost[t] = prob.backup(t, np.array([floor[t]]), J[t + 1], nxt)[0][0]
        else:
            floor_cost[t] = cfg.infeasible_cost

    sol = DpSolution(cfg, J, idx // 2, prob.K[idx], None, float("nan"), grid,
                     prob.T, prob.K, floor, floor_cost, prob)
    if soc_init is not None:
        sol.trajectory = rollout(forward_controller(sol), cycle, soc_init, pt, rp)
        sol.total_cost = sol.trajectory.totals["cost_cny"]
    return sol


def forward_controller(sol: DpSolution) -> Callable[[EnvState], HybridAction]:
    prob = sol._problem

    def act(state: EnvState) -> HybridAction:
        t = state.t
        _, i = prob.backup(t, np.array([state.soc]), sol.cost_to_go[t + 1], sol.floor_at(t + 1))
        a = int(i[0])
        return HybridAction(float(prob.T[a]), int(prob.K[a]))

    return act


def bellman_residual(sol: DpSolution, t: int, soc_index: int) -> float:
    """J_t(soc) minus a fresh one-step minimisation; zero by construction."""
    prob = sol._problem
    soc = sol.soc_grid[soc_index : soc_index + 1]
    if t == sol.n_stages:
        return float(sol.cost_to_go[t, soc_index] - sol.config.terminal(soc)[0])
    best, _ = prob.backup(t, soc, sol.cost_to_go[t + 1], sol.floor_at(t + 1))
    return float(sol.cost_to_go[t, soc_index] - best[0])


def write_cost_to_go(sol: DpSolution, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "soc", "cost"])
        for t in range(sol.cost_to_go.shape[0]):
            for i, s in enumerate(sol.soc_grid):
                w.writerow([t, repr(float(s)), repr(float(sol.cost_to_go[t, i]))])
