"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Criterion 6-8 share a single 170k-step training run (seed 0) that is built
once per module; expect this file to take several minutes.
"""

import time

import numpy as np
import pytest
from oracles import enumerate_min_cost, fd_max_rel_error, mini_cycle

from phev_ems.agent import AgentHyperparams, PdqnTd3, ReplayBuffer, curve_trend, train
from phev_ems.cdcs import CdcsController
from phev_ems.cli import main as cli_main
from phev_ems.cycle import repeat
from phev_ems.dp import DpConfig, bellman_residual, solve
from phev_ems.env import EmsEnv, RewardParams, rollout
from phev_ems.neural import Mlp
from phev_ems.powertrain import resolve_step

TRAIN_STEPS = 170_000
TRAIN_SEED = 0
SOC_INITS = (0.8, 0.3)


@pytest.fixture(scope="module")
def dp3(pt, synth3):
    return {soc: solve(synth3, pt, cfg=DpConfig(), soc_init=soc) for soc in SOC_INITS}


@pytest.fixture(scope="module")
def cdcs3(pt, synth3):
    ctrl = CdcsController(pt)
    return {soc: rollout(ctrl, synth3, soc, pt) for soc in SOC_INITS}


@pytest.fixture(scope="module")
def trained(pt, synth3):
    agent = PdqnTd3(pt, AgentHyperparams(), seed=TRAIN_SEED)
    t0 = time.perf_counter()
    train(agent, synth3, TRAIN_STEPS)
    elapsed = time.perf_counter() - t0
    evals = {soc: rollout(agent.policy(), synth3, soc, pt) for soc in SOC_INITS}
    return agent, elapsed, evals


def test_c01_torque_balance_identity(pt, criterion):
    rng = np.random.default_rng(1)
    n = 100_000
    v = rng.uniform(0.0, 33.3, n).tolist()
    a = rng.uniform(-3.0, 3.0, n).tolist()
    T = rng.uniform(0.0, 120.0, n).tolist()
    k = rng.integers(0, 2, n).tolist()
    soc = rng.uniform(0.2, 0.95, n).tolist()
    veh = pt.vehicle
    worst, feasible = 0.0, 0
    t0 = time.perf_counter()
    for i in range(n):
        st = resolve_step(v[i], a[i], T[i], k[i], soc[i], pt)
        if st.feasible:
            feasible += 1
            r = abs(st.torque_residual(veh))
            if r > worst:
                worst = r
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed <= 5.0 and feasible > n // 4
    criterion(1, ok, f"max residual {worst:.2e} N.m over {feasible} feasible of {n} calls, {elapsed:.2f} s")
    assert ok


def test_c02_dp_matches_enumeration(pt, synth, criterion):
    rp = RewardParams()
    mini = mini_cycle(synth, 60)
    cfg = DpConfig(n_torque=3)
    t0 = time.perf_counter()
    best, _, covered = enumerate_min_cost(mini, pt, rp, cfg.torque_grid, 0.5)
    sol = solve(mini, pt, rp, cfg, 0.5)
    elapsed = time.perf_counter() - t0
    rel = abs(sol.total_cost - best) / abs(best)
    ok = covered == 6**6 and rel <= 0.03 and elapsed <= 30.0
    criterion(2, ok, f"DP {sol.total_cost:.6f} vs exhaustive {best:.6f} over {covered} sequences "
                     f"(rel {rel:.2e}), {elapsed:.2f} s")
    assert ok


def test_c03_dp_internal_audit(pt, synth, criterion):
    sol = solve(synth, pt, cfg=DpConfig(), soc_init=0.8)
    rng = np.random.default_rng(3)
    cells = [(int(rng.integers(0, sol.n_stages + 1)), int(rng.integers(0, sol.soc_grid.size)))
             for _ in range(100)]
    residual = max(abs(bellman_residual(sol, t, i)) for t, i in cells)
    monotone = bool(np.all(np.diff(sol.cost_to_go, axis=1) <= 0.0))
    deltas = {}
    for soc in SOC_INITS:
        coarse = sol if soc == 0.8 else solve(synth, pt, cfg=DpConfig(), soc_init=soc)
        fine = solve(synth, pt, cfg=DpConfig().refined(2), soc_init=soc)
        deltas[soc] = abs(fine.total_cost - coarse.total_cost) / abs(coarse.total_cost)
    ok = residual <= 1e-9 and monotone and max(deltas.values()) <= 0.01
    shown = ", ".join(f"soc {s} {100 * d:.3f}%" for s, d in deltas.items())
    criterion(3, ok, f"max Bellman residual {residual:.1e}, monotone {monotone}, "
                     f"refinement delta {shown}")
    assert ok


def test_c04_gradient_check(criterion):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    errs = {}
    for name, sizes, out in (("actor", (3, 64, 64, 2), "tanh"), ("critic", (5, 64, 64, 2), "linear")):
        net = Mlp(sizes, out, rng)
        errs[name] = fd_max_rel_error(net, rng.normal(size=(4, sizes[0])), rng.normal(size=(4, 2)))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-4 and elapsed <= 10.0
    criterion(4, ok, f"max relative error actor {errs['actor']:.1e}, critic {errs['critic']:.1e}, "
                     f"{elapsed:.2f} s")
    assert ok


def test_c05_td3_mechanics(pt, criterion):
    rng = np.random.default_rng(5)
    agent = PdqnTd3(pt, AgentHyperparams(sigma_target=1.0), seed=5)
    for c in (agent.critic1_targ, agent.critic2_targ):
        c.params[-1] += rng.normal(size=2)

    def batch(n=128):
        return {"s": rng.normal(size=(n, 3)), "k": rng.integers(0, 2, n),
                "x": rng.uniform(-1, 1, (n, 2)), "r": rng.normal(size=n),
                "s2": rng.normal(size=(n, 3)), "done": rng.random(n) < 0.1}

    dominance = smoothing = True
    for _ in range(50):
        b = batch()
        y, parts = agent.compute_target(b, return_parts=True)
        cont = 1.0 - b["done"]
        for q in (parts["q1"], parts["q2"]):
            dominance &= bool(np.all(y <= b["r"] + agent.hp.gamma * cont * q.max(axis=1)))
        smoothing &= bool(np.all(np.abs(parts["x_tilde"] - parts["mu"]) <= agent.hp.noise_clip))

    delayed = True
    agent = PdqnTd3(pt, AgentHyperparams(policy_delay=2), seed=6)
    for i in range(1, 11):
        before = [p.copy() for p in agent.actor.params]
        agent.update(batch())
        same = all(np.array_equal(p, q) for p, q in zip(before, agent.actor.params))
        delayed &= same == (i % 2 == 1)

    buf = ReplayBuffer(100, rng)
    for i in range(100 + 37):
        buf.push(np.full(3, i), i % 2, np.zeros(2), float(i), np.zeros(3), False)
    fifo = buf.arrays()[3].tolist() == [float(i) for i in range(37, 137)]

    ok = dominance and smoothing and delayed and fifo
    criterion(5, ok, f"clipped-min dominance {dominance}, smoothing bound {smoothing}, "
                     f"delayed actor bit-identity {delayed}, replay FIFO {fifo}")
    assert ok


def test_c06_cost_ordering(trained, dp3, cdcs3, criterion):
    agent, elapsed, evals = trained
    ok = elapsed <= 30 * 60
    parts = [f"training {elapsed / 60:.1f} min"]
    for soc in SOC_INITS:
        dp_c = dp3[soc].total_cost
        ag_c = evals[soc].totals["cost_cny"]
        cd_c = cdcs3[soc].totals["cost_cny"]
        gap = (ag_c - dp_c) / dp_c
        good = dp_c <= ag_c <= cd_c and gap <= 0.15
        ok &= good
        parts.append(f"soc {soc}: DP {dp_c:.4f} <= agent {ag_c:.4f} <= CD-CS {cd_c:.4f} "
                     f"gap {100 * gap:.1f}% [{'ok' if good else 'violated'}]")
    criterion(6, ok, "; ".join(parts))
    assert ok


def test_c07_learning_trend(trained, synth3, criterion):
    agent = trained[0]
    first, last = curve_trend(agent.curve, 10, full_steps=len(synth3) - 1)
    ok = last > first
    criterion(7, ok, f"mean return first 10 episodes {first:.3f}, last 10 {last:.3f}")
    assert ok


def test_c08_soc_discipline(pt, synth, trained, dp3, criterion):
    dp_ok = True
    for soc in SOC_INITS:
        socs = [r.step.soc_next for r in dp3[soc].trajectory.trace]
        dp_ok &= min(socs) >= 0.3 and max(socs) <= 0.9
    evals = trained[2]
    inside = sum(ro.totals["soc_in_bounds_pct"] * ro.totals["steps"] for ro in evals.values())
    agent_pct = inside / sum(ro.totals["steps"] for ro in evals.values())
    per_init = ", ".join(f"{soc}: {evals[soc].totals['soc_in_bounds_pct']:.1f}%" for soc in SOC_INITS)
    long = rollout(CdcsController(pt), repeat(synth, 20), 0.8, pt)
    socs = np.array([r.step.soc_next for r in long.trace])
    tail = float(socs[3 * socs.size // 4 :].mean())
    ok = dp_ok and agent_pct >= 99.0 and abs(tail - 0.3) <= 0.05
    criterion(8, ok, f"DP within [0.3, 0.9]: {dp_ok}; agent in bounds {agent_pct:.1f}% ({per_init}); "
                     f"CD-CS final-quarter mean SOC {tail:.4f}")
    assert ok


def test_c09_clutch_statistics(dp3, cdcs3, criterion):
    dp_pct = dp3[0.8].trajectory.totals["clutch_engagement_pct"]
    cd_pct = cdcs3[0.8].totals["clutch_engagement_pct"]
    ok = cd_pct < dp_pct
    criterion(9, ok, f"CD-CS engagement {cd_pct:.2f}% < DP engagement {dp_pct:.2f}%")
    assert ok


def test_c10_soc_randomisation(pt, synth, criterion):
    env = EmsEnv(synth, pt, seed=10)
    draws = np.array([env.reset("random").soc for _ in range(1000)])
    mean, lo, hi = float(draws.mean()), float(draws.min()), float(draws.max())
    ok = 0.52 <= mean <= 0.58 and lo >= 0.3 and hi <= 0.8
    criterion(10, ok, f"mean {mean:.4f}, range [{lo:.4f}, {hi:.4f}]")
    assert ok


def test_c11_determinism(tmp_path, criterion):
    def run(*argv, out):
        assert cli_main([str(a) for a in argv] + ["--out", str(out)]) == 0

    def snapshot(d):
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    commands = {
        "train": ("train", "--steps", 1500, "--seed", 7, "--checkpoint-every", 2),
        "simulate": ("simulate", "--soc", "random", "--seed", 7, "--repeats", 3),
        "dp": ("dp", "--soc", 0.3, "--repeats", 2),
        "cycle-info": ("cycle-info", "--repeats", 3),
    }
    same = {}
    for name, argv in commands.items():
        run(*argv, out=tmp_path / f"{name}_a")
        run(*argv, out=tmp_path / f"{name}_b")
        same[name] = snapshot(tmp_path / f"{name}_a") == snapshot(tmp_path / f"{name}_b")
    ckpt = tmp_path / "train_a" / "agent.npz"
    for name, argv in {
        "simulate-agent": ("simulate", "--controller", "agent", "--checkpoint", ckpt, "--soc", 0.6),
        "compare": ("compare", "--soc", 0.8, "--checkpoint", ckpt),
    }.items():
        run(*argv, out=tmp_path / f"{name}_a")
        run(*argv, out=tmp_path / f"{name}_b")
        same[name] = snapshot(tmp_path / f"{name}_a") == snapshot(tmp_path / f"{name}_b")
    ok = all(same.values())
    criterion(11, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok
