"""Dense networks in plain numpy: forward, reverse-mode gradients, Adam, soft updates.

Layers are stored as ``W`` of shape (fan_in, fan_out) and ``b`` of shape
(fan_out,), so a batch ``x`` of shape (B, fan_in) maps to ``x @ W + b``.
Hidden layers use the rectifier; the output head is linear or tanh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
ACTIVATIONS = ("linear", "tanh")


class NonFiniteGradientError(FloatingPointError):
    pass


class Mlp:
    def __init__(self, sizes, output: str = "linear", rng: np.random.Generator | None = None,
                 dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        if output not in ACTIVATIONS:
            raise ValueError(f"output activation must be one of {ACTIVATIONS}")
        self.sizes = sizes
        self.output = output
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-lim, lim, fan_out).astype(self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def layer_names(self) -> list[str]:
        return [f"layer{i}.{p}" for i in range(self.n_layers) for p in ("W", "b")]

    # ---------------------------------------------------------------- compute

    def forward(self, x, cache: bool = False):
        """Returns y, or (y, cache) for a later :meth:`backward`."""
        h = np.asarray(x, dtype=self.dtype)
        single = h.ndim == 1
        if single:
            h = h[None, :]
        if h.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[-1]} != {self.sizes[0]}")
        acts = [h]
        last = self.n_layers - 1
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < last:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.output == "tanh" else z
            acts.append(h)
        y = h[0] if single else h
        return (y, (acts, single)) if cache else y

    __call__ = forward

    def backward(self, cache, dy) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(dy * y)`` w.r.t. every parameter and the input."""
        acts, single = cache
        g = np.asarray(dy, dtype=self.dtype)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output {acts[-1].shape}")
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        last = self.n_layers - 1
        for i in range(last, -1, -1):
            out = acts[i + 1]
            if i < last:
                g = g * (out > 0.0)
            elif self.output == "tanh":
                g = g * (1.0 - out * out)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, (g[0] if single else g)

    # ------------------------------------------------------------ bookkeeping

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.sizes, net.output, net.dtype = self.sizes, self.output, self.dtype
        net.params = [p.copy() for p in self.params]
        return net

    def load_params(self, params) -> None:
        if len(params) != len(self.params):
            raise ValueError("parameter count mismatch")
        for i, (dst, src) in enumerate(zip(self.params, params)):
            if dst.shape != np.shape(src):
                raise ValueError(f"{self.layer_names()[i]}: shape {np.shape(src)} != {dst.shape}")
        # in place, so optimisers holding these arrays stay attached
        for dst, src in zip(self.params, params):
            dst[...] = src

    def describe(self) -> dict:
        return {"sizes": list(self.sizes), "output": self.output, "dtype": self.dtype.name}

    def save(self, path) -> None:
        save_arrays(path, {"net": self.describe()}, {"net": self.params})

    @classmethod
    def load(cls, path) -> "Mlp":
        meta, arrays = load_arrays(path)
        return cls.from_arrays(meta["net"], arrays["net"])

    @classmethod
    def from_arrays(cls, desc: dict, params) -> "Mlp":
        net = cls(desc["sizes"], desc["output"], dtype=desc["dtype"])
        net.load_params(params)
        return net


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch: {target.sizes} vs {online.sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o


@dataclass
class Adam:
    """Bias-corrected Adam over a list of parameter arrays (updated in place)."""

    params: list
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    names: list | None = None

    def __post_init__(self):
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient count mismatch")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ValueError(f"{self._name(i)}: gradient shape {g.shape} != {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in {self._name(i)}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def _name(self, i: int) -> str:
        return self.names[i] if self.names else f"param{i}"

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, t: int, arrays) -> None:
        n = len(self.params)
        if len(arrays) != 2 * n:
            raise ValueError("optimizer state size mismatch")
        self.t = int(t)
        self.m = [np.array(a) for a in arrays[:n]]
        self.v = [np.array(a) for a in arrays[n:]]


# ------------------------------------------------------------------ npz files
# Layout: one JSON string under "__meta__" (format version plus caller metadata)
# and arrays named "<group>/<index>", each group an ordered list.


def save_arrays(path, meta: dict, groups: dict[str, list[np.ndarray]]) -> None:
    payload = {f"{g}/{i}": np.asarray(a) for g, arrs in groups.items() for i, a in enumerate(arrs)}
    header = {"format_version": FORMAT_VERSION, "groups": {g: len(a) for g, a in groups.items()},
              **meta}
    payload["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict, dict[str, list[np.ndarray]]]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {version!r}")
        groups = {g: [z[f"{g}/{i}"] for i in range(n)] for g, n in meta["groups"].items()}
    return meta, groups
