import math

import numpy as np
import pytest

from phev_ems.cycle import DriveCycle, repeat
from phev_ems.env import (
    EmsEnv,
    EpisodeFinished,
    HybridAction,
    RewardParams,
    read_trace,
    rollout,
    soc_penalty,
    write_trace,
)
from phev_ems.powertrain import J_PER_KWH

OFF = HybridAction(0.0, 0)


def test_standstill_reward_is_aux_energy(pt):
    env = EmsEnv(DriveCycle("idle", [0.0, 0.0, 0.0]), pt)
    env.reset(0.6)
    tr, res = env.step(OFF)
    expect = -1.0 * res.P_b / (0.95 * 0.90) / J_PER_KWH
    assert res.P_b == 300.0
    assert tr.reward == pytest.approx(expect, rel=1e-12)
    assert tr.terms.soc_penalty == tr.terms.engine_speed_penalty == 0.0


def test_soc_penalty_shape():
    rp = RewardParams()
    assert soc_penalty(0.3, rp) == 0.0
    assert soc_penalty(0.9, rp) == 0.0
    assert soc_penalty(0.15, rp) == pytest.approx(0.05)
    assert soc_penalty(0.95, rp) == pytest.approx(0.05)
    assert soc_penalty(0.0, rp) == pytest.approx(0.1)


def test_engaged_clutch_at_walking_pace_is_penalised(pt):
    env = EmsEnv(DriveCycle("slow", [2.0, 2.0]), pt)
    env.reset(0.6)
    tr, res = env.step(HybridAction(60.0, 1))
    assert tr.terms.engine_speed_penalty == 0.1
    assert tr.reward <= -0.1


def test_reward_decomposition_exact(pt, synth, rng):
    env = EmsEnv(synth, pt, seed=1)
    env.reset("random")
    done = False
    while not done:
        tr, _ = env.step(HybridAction(float(rng.uniform(0, 120)), int(rng.integers(2))))
        t = tr.terms
        assert tr.reward + t.running_cost + t.engine_speed_penalty + t.soc_penalty + t.battery_penalty == 0.0
        done = tr.done


def test_pure_electric_accounting_identity(pt, synth):
    rp = RewardParams(fuel_price=0.0, penalties=False)
    ro = rollout(lambda s: HybridAction(40.0, 0), synth, 0.7, pt, rp)
    energy = math.fsum(r.step.P_b for r in ro.trace) / J_PER_KWH
    expect = 1.0 * energy / (0.95 * 0.90)
    assert -ro.totals["return_cny"] == pytest.approx(expect, rel=1e-9)


def test_reset_modes(pt, synth):
    env = EmsEnv(synth, pt, seed=7)
    assert env.reset(0.8).soc == 0.8
    assert env.reset(0.3).soc == 0.3
    s = env.reset(0.5)
    assert s.t == 0 and s.v == synth.speeds[0]
    with pytest.raises(ValueError):
        env.reset(1.2)
    draws = np.array([env.reset("random").soc for _ in range(1000)])
    assert abs(draws.mean() - 0.55) <= 0.03
    assert draws.min() >= 0.3 and draws.max() <= 0.8


def test_random_reset_is_seeded(pt, synth):
    a = [EmsEnv(synth, pt, seed=3).reset().soc for _ in range(2)]
    assert a[0] == a[1]


def test_stepping_finished_episode_raises(pt):
    env = EmsEnv(DriveCycle("two", [0.0, 0.0]), pt)
    with pytest.raises(EpisodeFinished):
        env.step(OFF)
    env.reset(0.5)
    tr, _ = env.step(OFF)
    assert tr.done
    with pytest.raises(EpisodeFinished):
        env.step(OFF)


def test_observation_normalised(pt, synth3):
    env = EmsEnv(synth3, pt)
    s = env.reset(0.5)
    done = False
    while not done:
        obs = s.observation()
        assert obs.shape == (3,) and np.all(np.abs(obs) <= 1.5)
        tr, _ = env.step(OFF)
        s, done = tr.next_state, tr.done


def test_all_off_controller_uses_no_fuel(pt, synth):
    ro = rollout(lambda s: OFF, synth, 0.8, pt)
    assert ro.totals["fuel_l"] == 0.0
    assert ro.totals["clutch_engagement_pct"] == 0.0
    assert ro.totals["steps"] == len(synth) - 1


def test_episode_length_for_any_controller(pt, synth):
    ro = rollout(lambda s: HybridAction(84.0, int(s.v > 20)), synth, 0.5, pt)
    assert len(ro.trace) == len(synth) - 1
    assert [r.t for r in ro.trace] == list(range(len(synth) - 1))


def test_trace_csv_resummation(pt, synth, tmp_path):
    ro = rollout(lambda s: HybridAction(60.0, int(s.v > 17)), synth, 0.8, pt)
    path = tmp_path / "trace.csv"
    write_trace(ro.trace, path)
    rows = read_trace(path)
    assert len(rows) == len(ro.trace)
    fuel_g = math.fsum(r["fuel_g"] for r in rows)
    assert fuel_g / pt.vehicle.fuel_density == pytest.approx(ro.totals["fuel_l"], rel=1e-12)
    assert math.fsum(r["cost_cny"] for r in rows) == pytest.approx(ro.totals["cost_cny"], rel=1e-12)
    pct = 100.0 * sum(r["k_c"] for r in rows) / len(rows)
    assert pct == ro.totals["clutch_engagement_pct"]


def test_rollouts_bit_identical(pt, synth, tmp_path):
    ctrl = lambda s: HybridAction(70.0 * s.soc, int(s.v > 18))
    for name in ("a.csv", "b.csv"):
        write_trace(rollout(ctrl, repeat(synth, 2), "random", pt, seed=11).trace, tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(p_max=0.0)
    with pytest.raises(ValueError):
        RewardParams(soc_low=0.9, soc_high=0.3)
