"""Independent reference computations shared by the unit and acceptance suites."""

import numpy as np

from phev_ems.env import RewardParams, running_cost
from phev_ems.neural import Mlp
from phev_ems.powertrain import resolve_step


def enumerate_min_cost(cycle, pt, rp: RewardParams, torques, soc_init: float):
    """Exhaustive minimum running cost over every (T_e, k_c) sequence.

    Each sequence is simulated step by step with continuous SOC through
    ``resolve_step``; sequences with an infeasible step or a SOC outside
    [soc_low, soc_high] are discarded.  There is no cost-based pruning, since
    regeneration credits make partial costs non-monotone.  Returns
    (cost, sequence, sequences covered); the count includes every sequence
    that shares an infeasible prefix, so a full sweep covers len(actions)**n.
    """
    actions = [(float(T), k) for T in torques for k in (0, 1)]
    acc = cycle.accelerations
    n = len(cycle) - 1
    best, best_seq, covered = np.inf, None, 0
    stack = [(0, soc_init, 0.0, ())]
    while stack:
        t, soc, cost, seq = stack.pop()
        if t == n:
            covered += 1
            if cost < best:
                best, best_seq = cost, seq
            continue
        for a in actions:
            st = resolve_step(float(cycle.speeds[t]), float(acc[t]), a[0], a[1], soc, pt, rp.dt)
            if not st.feasible or not rp.soc_low <= st.soc_next <= rp.soc_high:
                covered += len(actions) ** (n - t - 1)
                continue
            stack.append((t + 1, st.soc_next, cost + running_cost(st, rp, pt.vehicle.fuel_density),
                          seq + (a,)))
    return best, best_seq, covered


def fd_max_rel_error(net: Mlp, x: np.ndarray, dy: np.ndarray, h: float = 1e-6) -> float:
    """Central-difference check of d(sum(dy * net(x))) against backward()."""
    y, cache = net.forward(x, cache=True)
    grads, dx = net.backward(cache, dy)
    loss = lambda: float(np.sum(dy * net.forward(x)))
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num) + abs(gflat[i]), 1e-8))
    # input gradient, used by the actor update through the critic
    xf = x.reshape(-1)
    for i in range(xf.size):
        keep = xf[i]
        xf[i] = keep + h
        up = loss()
        xf[i] = keep - h
        down = loss()
        xf[i] = keep
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - dx.reshape(-1)[i]) / max(abs(num) + abs(dx.reshape(-1)[i]), 1e-8))
    return worst


def mini_cycle(synth, start: int = 20, steps: int = 6):
    from phev_ems.cycle import DriveCycle

    return DriveCycle("mini", synth.speeds[start : start + steps + 1])
