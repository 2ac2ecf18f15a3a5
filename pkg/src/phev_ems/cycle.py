"""Drive cycles: loading, resampling, repetition and a bundled synthetic profile."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KMH = 1.0 / 3.6
MAX_ABS_ACCEL = 5.0


class CycleLoadError(ValueError):
    pass


@dataclass(frozen=True)
class DriveCycle:
    name: str
    speeds: np.ndarray = field(repr=False)
    dt: float = 1.0
    repeats: int = 1

    def __post_init__(self):
        v = np.array(self.speeds, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "speeds", v)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a drive cycle needs at least two samples")
        if self.dt != 1.0:
            raise ValueError("drive cycles are sampled at 1 Hz")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("speeds must be finite and non-negative")
        acc = np.abs(np.diff(v)) / self.dt
        if acc.max() > MAX_ABS_ACCEL:
            t = int(np.argmax(acc))
            raise ValueError(f"|a| = {acc[t]:.2f} m/s^2 at t={t} exceeds {MAX_ABS_ACCEL}")

    def __len__(self) -> int:
        return self.speeds.size

    @property
    def accelerations(self) -> np.ndarray:
        """Forward differences; one entry per acted-upon step (len - 1)."""
        return np.diff(self.speeds) / self.dt

    @property
    def distance_km(self) -> float:
        # trapezoidal distance over each 1 s interval
        v = self.speeds
        return float(np.sum(0.5 * (v[1:] + v[:-1])) * self.dt / 1000.0)

    def checksum(self) -> str:
        return hashlib.sha256(self.speeds.astype("<f8").tobytes()).hexdigest()


def load_cycle(path, unit: str = "kmh") -> DriveCycle:
    """Read a ``t_s,v`` CSV and resample it to 1 Hz by linear interpolation."""
    if unit not in ("kmh", "ms"):
        raise ValueError(f"unit must be 'kmh' or 'ms', got {unit!r}")
    path = Path(path)
    ts, vs = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_s", "v"]:
            raise CycleLoadError(f"{path}:1: header must be 't_s,v'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise CycleLoadError(f"{path}:{lineno}: expected 2 columns")
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                raise CycleLoadError(f"{path}:{lineno}: malformed row {row!r}") from None
            if ts and t <= ts[-1]:
                raise CycleLoadError(f"{path}:{lineno}: time is not strictly increasing")
            if v < 0:
                raise CycleLoadError(f"{path}:{lineno}: negative speed {v}")
            ts.append(t)
            vs.append(v)
    if len(ts) < 2:
        raise CycleLoadError(f"{path}: need at least two samples")
    t = np.asarray(ts)
    grid = t[0] + np.arange(int(np.floor(t[-1] - t[0])) + 1, dtype=float)
    speeds = np.interp(grid, t, np.asarray(vs))
    if unit == "kmh":
        speeds = speeds * KMH
    return DriveCycle(path.stem, speeds)


def save_cycle(cycle: DriveCycle, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "v"])
        for i, v in enumerate(cycle.speeds):
            w.writerow([repr(float(i * cycle.dt)), repr(float(v))])


def repeat(cycle: DriveCycle, n: int) -> DriveCycle:
    """Concatenate ``n`` copies; both ends must be stationary so joints splice at 0 m/s."""
    if n < 1:
        raise ValueError("repeat count must be >= 1")
    if n == 1:
        return cycle
    if cycle.speeds[0] != 0.0 or cycle.speeds[-1] != 0.0:
        raise ValueError("only cycles that start and end at standstill can be repeated")
    return DriveCycle(f"{cycle.name}x{n * cycle.repeats}", np.tile(cycle.speeds, n),
                      cycle.dt, cycle.repeats * n)


def _ramp(v0: float, v1: float, accel: float) -> list[float]:
    """1 Hz samples after v0 moving towards v1 with |a| <= accel, ending at v1."""
    out, v = [], v0
    step = accel if v1 > v0 else -accel
    while abs(v1 - v) > 1e-12:
        v = min(v + step, v1) if step > 0 else max(v + step, v1)
        out.append(v)
    return out


SYNTH_LENGTH = 300


def synth_cycle(seed: int = 0) -> DriveCycle:
    """Deterministic 300 s test profile: a short urban trapezoid, a stop, then a
    motorway trapezoid at 30 m/s with a slower cruise section in the middle.

    The seed only perturbs plateau speeds and hold times, drawn on a
    0.5 m/s / 1 s lattice so every sample is an exact binary fraction and the
    profile is platform independent.
    """
    rng = np.random.default_rng(seed)
    v_hw = 30.0
    v_mid = 23.0 + 0.5 * int(rng.integers(0, 3))   # 23..24 m/s
    v_urb = 10.0 + 0.5 * int(rng.integers(0, 5))   # 10..12 m/s
    hold_mid = 36 + int(rng.integers(0, 9))
    hold_urb = 3 + int(rng.integers(0, 4))

    urban = [0.0] * 3 + _ramp(0.0, v_urb, 1.25) + [v_urb] * hold_urb + _ramp(v_urb, 0.0, 1.5)
    up = [0.0] * 10 + _ramp(0.0, v_hw, 1.25)
    mid = _ramp(v_hw, v_mid, 1.0) + [v_mid] * hold_mid + _ramp(v_mid, v_hw, 1.0)
    down = _ramp(v_hw, 0.0, 2.0) + [0.0] * 3
    cruise = SYNTH_LENGTH - len(urban) - len(up) - len(mid) - len(down)
    first = cruise // 2
    speeds = urban + up + [v_hw] * first + mid + [v_hw] * (cruise - first) + down
    assert len(speeds) == SYNTH_LENGTH
    return DriveCycle(f"synth{seed}", np.asarray(speeds))
