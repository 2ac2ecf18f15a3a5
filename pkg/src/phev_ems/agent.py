"""PDQN-TD3 agent: parametrised actions (engine torque per clutch state) with twin critics.

The actor maps a normalised state to one torque parameter in [-1, 1] per
discrete action k (0: clutch open, 1: clutch engaged).  Each critic maps the
state plus *all* parameters to one Q-value per k.  The discrete choice is the
argmax of critic 1, epsilon-greedy while exploring.

Torque parameters are scaled per k: with the clutch open the engine only
drives the generator, so its useful range ends at the generator's torque cap;
with the clutch engaged it spans the full engine range.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cycle import DriveCycle
from .env import EmsEnv, EnvState, HybridAction, RewardParams
from .neural import Adam, Mlp, load_arrays, save_arrays, soft_update
from .powertrain import Powertrain

N_DISCRETE = 2
OBS_DIM = 3
STREAMS = ("init", "explore", "target", "replay", "env")


@dataclass(frozen=True)
class AgentHyperparams:
    gamma: float = 0.99
    tau: float = 0.001
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    buffer_capacity: int = 200_000
    batch_size: int = 128
    warmup: int = 512
    sigma_explore: float = 0.02
    sigma_target: float = 0.05
    noise_clip: float = 0.1
    policy_delay: int = 2
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 10.0  # learner-side multiplier on rewards; the optimal policy is unchanged

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 1 <= self.batch_size <= self.warmup <= self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= warmup <= buffer_capacity")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.noise_clip <= 0 or self.sigma_target < 0 or self.sigma_explore < 0:
            raise ValueError("noise_clip must be > 0 and noise scales >= 0")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0 or self.eps_decay_steps < 0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1 and eps_decay_steps >= 0")
        if self.lr_actor <= 0 or self.lr_critic <= 0 or self.reward_scale <= 0:
            raise ValueError("learning rates and reward_scale must be > 0")

    def epsilon(self, step: int) -> float:
        if self.eps_decay_steps == 0 or step >= self.eps_decay_steps:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * step / self.eps_decay_steps


class ReplayBuffer:
    """Fixed-capacity ring of transitions, FIFO eviction."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = int(capacity)
        self.rng = rng
        self.s = np.zeros((capacity, OBS_DIM))
        self.k = np.zeros(capacity, dtype=np.int64)
        self.x = np.zeros((capacity, N_DISCRETE))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, OBS_DIM))
        self.done = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, k: int, x, r: float, s2, done: bool) -> None:
        i = self.ptr
        self.s[i], self.k[i], self.x[i], self.r[i], self.s2[i], self.done[i] = s, k, x, r, s2, done
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.ptr + np.arange(self.capacity)) % self.capacity

    def sample(self, n: int) -> dict:
        idx = self.rng.choice(self.size, size=n, replace=False)
        return self.batch(idx)

    def batch(self, idx) -> dict:
        return {"s": self.s[idx], "k": self.k[idx], "x": self.x[idx], "r": self.r[idx],
                "s2": self.s2[idx], "done": self.done[idx]}

    ARRAYS = ("s", "k", "x", "r", "s2", "done")

    def arrays(self) -> list[np.ndarray]:
        order = self.order()
        return [getattr(self, a)[order] for a in self.ARRAYS]

    def restore(self, arrays) -> None:
        n = arrays[0].shape[0]
        if n > self.capacity:
            raise ValueError("stored buffer larger than capacity")
        for name, arr in zip(self.ARRAYS, arrays):
            getattr(self, name)[:n] = arr
        self.size = n
        self.ptr = n % self.capacity


@dataclass(frozen=True)
class CurveRow:
    episode: int
    steps: int
    return_cny: float
    soc_init: float


@dataclass
class UpdateInfo:
    critic1_loss: float
    critic2_loss: float
    actor_loss: float | None = None


class PdqnTd3:
    def __init__(self, pt: Powertrain | None = None, hp: AgentHyperparams | None = None,
                 seed: int = 0, rp: RewardParams | None = None):
        self.pt = pt or Powertrain.default()
        self.hp = hp or AgentHyperparams()
        self.rp = rp or RewardParams()
        self.seed = int(seed)
        seqs = np.random.SeedSequence(self.seed).spawn(len(STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(STREAMS, seqs)}
        init = self.rngs["init"]
        h = self.hp.hidden
        self.actor = Mlp((OBS_DIM, *h, N_DISCRETE), "tanh", init)
        self.critic1 = Mlp((OBS_DIM + N_DISCRETE, *h, N_DISCRETE), "linear", init)
        self.critic2 = Mlp((OBS_DIM + N_DISCRETE, *h, N_DISCRETE), "linear", init)
        self.actor_targ = self.actor.copy()
        self.critic1_targ = self.critic1.copy()
        self.critic2_targ = self.critic2.copy()
        self.opt_actor = Adam(self.actor.params, self.hp.lr_actor, names=self.actor.layer_names())
        self.opt_c1 = Adam(self.critic1.params, self.hp.lr_critic, names=self.critic1.layer_names())
        self.opt_c2 = Adam(self.critic2.params, self.hp.lr_critic, names=self.critic2.layer_names())
        self.buffer = ReplayBuffer(self.hp.buffer_capacity, self.rngs["replay"])
        self.steps = 0  # environment steps taken while training
        self.n_updates = 0
        self.curve: list[CurveRow] = []
        self.torque_lo = np.zeros(N_DISCRETE)
        self.torque_hi = np.array([self.pt.series_torque_cap, self.pt.engine.max_torque])

    # ----------------------------------------------------------------- acting

    def torque(self, k: int, x_k: float) -> float:
        lo, hi = self.torque_lo[k], self.torque_hi[k]
        return float(lo + 0.5 * (x_k + 1.0) * (hi - lo))

    def q_values(self, obs, x) -> np.ndarray:
        return self.critic1(np.concatenate([obs, x], axis=-1))

    def act(self, state: EnvState, explore: bool = False) -> tuple[HybridAction, int, np.ndarray]:
        """Returns the action plus the chosen k and the full parameter vector x."""
        obs = state.observation()
        x = self.actor(obs)
        rng = self.rngs["explore"]
        eps = 0.0
        if explore:
            x = np.clip(x + rng.normal(0.0, self.hp.sigma_explore, N_DISCRETE), -1.0, 1.0)
            eps = self.hp.epsilon(self.steps)
        if explore and rng.random() < eps:
            k = int(rng.integers(N_DISCRETE))
        else:
            k = int(np.argmax(self.q_values(obs, x)))
        return HybridAction(self.torque(k, float(x[k])), k), k, x

    def policy(self) -> Callable[[EnvState], HybridAction]:
        """Greedy controller for rollouts."""
        return lambda state: self.act(state)[0]

    # --------------------------------------------------------------- learning

    def compute_target(self, batch: dict, return_parts: bool = False):
        hp = self.hp
        s2 = batch["s2"]
        mu = self.actor_targ(s2)
        noise = np.clip(self.rngs["target"].normal(0.0, hp.sigma_target, mu.shape),
                        -hp.noise_clip, hp.noise_clip)
        x_t = np.clip(mu + noise, -1.0, 1.0)
        # rounding in mu + noise can overshoot the clip radius by an ulp
        for _ in range(4):
            over = np.abs(x_t - mu) > hp.noise_clip
            if not over.any():
                break
            x_t = np.where(over, np.nextafter(x_t, mu), x_t)
        inp = np.concatenate([s2, x_t], axis=1)
        q1, q2 = self.critic1_targ(inp), self.critic2_targ(inp)
        q_min = np.minimum(q1, q2)
        cont = 1.0 - batch["done"].astype(float)
        y = batch["r"] + hp.gamma * cont * q_min.max(axis=1)
        if return_parts:
            return y, {"mu": mu, "x_tilde": x_t, "q1": q1, "q2": q2}
        return y

    def _critic_step(self, net: Mlp, opt: Adam, inp, k, y) -> float:
        q, cache = net.forward(inp, cache=True)
        rows = np.arange(k.size)
        err = q[rows, k] - y
        dq = np.zeros_like(q)
        dq[rows, k] = err / k.size
        grads, _ = net.backward(cache, dq)
        opt.step(grads)
        return float(0.5 * np.mean(err * err))

    def _actor_step(self, s) -> float:
        x, a_cache = self.actor.forward(s, cache=True)
        q, c_cache = self.critic1.forward(np.concatenate([s, x], axis=1), cache=True)
        n = s.shape[0]
        _, d_inp = self.critic1.backward(c_cache, np.full(q.shape, -1.0 / n))
        grads, _ = self.actor.backward(a_cache, d_inp[:, OBS_DIM:])
        self.opt_actor.step(grads)
        return float(-q.sum() / n)

    def update(self, batch: dict | None = None) -> UpdateInfo | None:
        """One critic step on both critics; every ``policy_delay``-th call also
        steps the actor and soft-updates all targets.  None before warmup."""
        hp = self.hp
        if batch is None:
            if len(self.buffer) < hp.warmup:
                return None
            batch = self.buffer.sample(hp.batch_size)
        y = self.compute_target(batch)
        inp = np.concatenate([batch["s"], batch["x"]], axis=1)
        l1 = self._critic_step(self.critic1, self.opt_c1, inp, batch["k"], y)
        l2 = self._critic_step(self.critic2, self.opt_c2, inp, batch["k"], y)
        self.n_updates += 1
        info = UpdateInfo(l1, l2)
        if self.n_updates % hp.policy_delay == 0:
            info.actor_loss = self._actor_step(batch["s"])
            for t, o in ((self.actor_targ, self.actor), (self.critic1_targ, self.critic1),
                         (self.critic2_targ, self.critic2)):
                soft_update(t, o, hp.tau)
        return info

    # -------------------------------------------------------------- persistence

    _NETS = ("actor", "critic1", "critic2", "actor_targ", "critic1_targ", "critic2_targ")
    _OPTS = ("opt_actor", "opt_c1", "opt_c2")

    def save(self, path, include_buffer: bool = True) -> None:
        meta = {
            "kind": "pdqn_td3",
            "seed": self.seed,
            "hyperparams": asdict(self.hp),
            "reward": asdict(self.rp),
            "nets": {n: getattr(self, n).describe() for n in self._NETS},
            "adam_steps": {o: getattr(self, o).t for o in self._OPTS},
            "rng_states": {n: g.bit_generator.state for n, g in self.rngs.items()},
            "steps": self.steps,
            "n_updates": self.n_updates,
            "curve": [asdict(r) for r in self.curve],
            "buffer": include_buffer,
        }
        groups = {n: getattr(self, n).params for n in self._NETS}
        groups.update({o: getattr(self, o).state_arrays() for o in self._OPTS})
        if include_buffer:
            groups["buffer"] = self.buffer.arrays()
        save_arrays(path, meta, groups)

    @classmethod
    def load(cls, path, pt: Powertrain | None = None) -> "PdqnTd3":
        meta, groups = load_arrays(path)
        if meta.get("kind") != "pdqn_td3":
            raise ValueError(f"{path}: not an agent checkpoint")
        hp = AgentHyperparams(**meta["hyperparams"])
        agent = cls(pt, hp, meta["seed"], RewardParams(**meta["reward"]))
        for n in cls._NETS:
            getattr(agent, n).load_params(groups[n])
        for o, net in zip(cls._OPTS, ("actor", "critic1", "critic2")):
            opt = Adam(getattr(agent, net).params, getattr(agent, o).lr,
                       names=getattr(agent, net).layer_names())
            opt.load_state(meta["adam_steps"][o], groups[o])
            setattr(agent, o, opt)
        for n, st in meta["rng_states"].items():
            agent.rngs[n].bit_generator.state = st
        if meta["buffer"]:
            agent.buffer.restore(groups["buffer"])
        agent.steps = meta["steps"]
        agent.n_updates = meta["n_updates"]
        agent.curve = [CurveRow(**r) for r in meta["curve"]]
        return agent


# ------------------------------------------------------------------- training


@dataclass
class TrainResult:
    agent: PdqnTd3
    curve: list[CurveRow]
    checkpoints: list[Path] = field(default_factory=list)


def train(agent: PdqnTd3, cycle: DriveCycle, total_steps: int, soc_init: float | str = "random",
          checkpoint_every: int = 0, checkpoint_dir=None,
          progress: Callable[[CurveRow], None] | None = None) -> TrainResult:
    """Run episodes until ``agent.steps`` reaches ``total_steps``.

    Checkpoints (every ``checkpoint_every`` finished episodes) land on episode
    boundaries, so loading one and calling ``train`` again with the same
    arguments reproduces the uninterrupted run exactly.  A trailing episode
    cut short by the step budget is recorded with its partial step count.
    """
    if total_steps < agent.hp.warmup:
        raise ValueError(f"total_steps ({total_steps}) must be >= warmup ({agent.hp.warmup})")
    env = EmsEnv(cycle, agent.pt, agent.rp, seed=agent.rngs["env"])
    warmup = agent.hp.warmup
    saved: list[Path] = []
    while agent.steps < total_steps:
        state = env.reset(soc_init)
        soc0, ret, n, done = state.soc, 0.0, 0, False
        while not done and agent.steps < total_steps:
            action, k, x = agent.act(state, explore=True)
            tr, _ = env.step(action)
            agent.buffer.push(state.observation(), k, x, tr.reward * agent.hp.reward_scale,
                              tr.next_state.observation(), tr.done)
            agent.steps += 1
            ret += tr.reward
            n += 1
            if len(agent.buffer) > warmup:
                agent.update()
            state, done = tr.next_state, tr.done
        row = CurveRow(len(agent.curve), n, ret, soc0)
        agent.curve.append(row)
        if progress:
            progress(row)
        if done and checkpoint_every and checkpoint_dir and len(agent.curve) % checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"checkpoint_{len(agent.curve):05d}.npz"
            agent.save(path)
            saved.append(path)
    return TrainResult(agent, list(agent.curve), saved)


CURVE_COLUMNS = ["episode", "steps", "return_cny", "soc_init"]


def write_curve(curve: list[CurveRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in curve:
            w.writerow([r.episode, r.steps, repr(float(r.return_cny)), repr(float(r.soc_init))])


def curve_trend(curve: list[CurveRow], n: int = 10, full_steps: int | None = None) -> tuple[float, float]:
    """Mean return of the first and last ``n`` episodes (complete episodes only
    when ``full_steps`` is given)."""
    rows = [r for r in curve if full_steps is None or r.steps == full_steps]
    if len(rows) < 2 * n:
        raise ValueError(f"need at least {2 * n} episodes, have {len(rows)}")
    first = float(np.mean([r.return_cny for r in rows[:n]]))
    last = float(np.mean([r.return_cny for r in rows[-n:]]))
    return first, last


def hyperparams_json(hp: AgentHyperparams) -> str:
    return json.dumps(asdict(hp), sort_keys=True)
