"""Lookup tables: bilinear 2-D maps, 1-D curves, CSV loaders and analytic defaults.

Every table has a scalar path (pure Python, used per simulation step) and a
vectorised path (numpy, used by the DP sweep). Queries outside the grid clamp
to the boundary.

The default maps are analytic stand-ins for measured data:

* BSFC     b_e(w, T) = 220 * (1 + 1.4 * ((w/w_max - 0.55)^2 + (T/T_max - 0.70)^2))  g/kWh
* motor    eta(w, T) = clip(0.93 - 0.5 * ((w/w_max - 0.45)^2 + (|T|/T_max - 0.50)^2), 0.70, 0.95)
* battery  V_oc(soc) = 300 + 25 * soc  V,   R_b(soc) = 0.12 - 0.04 * soc  ohm

Replace them with measured grids through :func:`load_map_csv` /
:func:`load_curve_csv`.
"""

from __future__ import annotations

import bisect
import csv
import math
from pathlib import Path

import numpy as np

RPM_TO_RAD = 2.0 * math.pi / 60.0


class MapFormatError(ValueError):
    """Raised for malformed map or curve files."""


def _check_axis(axis: np.ndarray, name: str) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or axis.size < 2:
        raise MapFormatError(f"{name} axis needs at least two points")
    if not np.all(np.diff(axis) > 0):
        raise MapFormatError(f"{name} axis must be strictly increasing")
    return axis


class Grid2D:
    """Bilinear interpolant on a rectangular (speed, torque) grid."""

    def __init__(self, speeds, torques, values):
        self.speeds = _check_axis(speeds, "speed")
        self.torques = _check_axis(torques, "torque")
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.speeds.size, self.torques.size):
            raise MapFormatError(
                f"value grid shape {self.values.shape} does not match axes "
                f"({self.speeds.size}, {self.torques.size})"
            )
        self.speeds.flags.writeable = False
        self.torques.flags.writeable = False
        self.values.flags.writeable = False
        self._xs = self.speeds.tolist()
        self._ys = self.torques.tolist()
        self._v = self.values.tolist()

    def __call__(self, speed: float, torque: float) -> float:
        xs, ys, v = self._xs, self._ys, self._v
        x = min(max(speed, xs[0]), xs[-1])
        y = min(max(torque, ys[0]), ys[-1])
        i = min(bisect.bisect_right(xs, x) - 1, len(xs) - 2)
        j = min(bisect.bisect_right(ys, y) - 1, len(ys) - 2)
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        lo = v[i][j] + ty * (v[i][j + 1] - v[i][j])
        hi = v[i + 1][j] + ty * (v[i + 1][j + 1] - v[i + 1][j])
        return lo + tx * (hi - lo)

    def evaluate(self, speed, torque) -> np.ndarray:
        """Vectorised counterpart of ``__call__`` (broadcasts its arguments)."""
        xs, ys, v = self.speeds, self.torques, self.values
        x, y = np.broadcast_arrays(
            np.clip(np.asarray(speed, dtype=float), xs[0], xs[-1]),
            np.clip(np.asarray(torque, dtype=float), ys[0], ys[-1]),
        )
        i = np.minimum(np.searchsorted(xs, x, side="right") - 1, xs.size - 2)
        j = np.minimum(np.searchsorted(ys, y, side="right") - 1, ys.size - 2)
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        lo = v[i, j] + ty * (v[i, j + 1] - v[i, j])
        hi = v[i + 1, j] + ty * (v[i + 1, j + 1] - v[i + 1, j])
        return lo + tx * (hi - lo)


class Curve1D:
    """Piecewise-linear curve with boundary clamping."""

    def __init__(self, x, y):
        self.x = _check_axis(x, "curve")
        self.y = np.asarray(y, dtype=float)
        if self.y.shape != self.x.shape:
            raise MapFormatError("curve x and y lengths differ")
        self.x.flags.writeable = False
        self.y.flags.writeable = False
        self._xs = self.x.tolist()
        self._ys = self.y.tolist()

    def __call__(self, q: float) -> float:
        xs, ys = self._xs, self._ys
        q = min(max(q, xs[0]), xs[-1])
        i = min(bisect.bisect_right(xs, q) - 1, len(xs) - 2)
        t = (q - xs[i]) / (xs[i + 1] - xs[i])
        return ys[i] + t * (ys[i + 1] - ys[i])

    def evaluate(self, q) -> np.ndarray:
        # same arithmetic as __call__ so both paths agree bit for bit
        xs, ys = self.x, self.y
        q = np.clip(np.asarray(q, dtype=float), xs[0], xs[-1])
        i = np.minimum(np.searchsorted(xs, q, side="right") - 1, xs.size - 2)
        t = (q - xs[i]) / (xs[i + 1] - xs[i])
        return ys[i] + t * (ys[i + 1] - ys[i])


# --------------------------------------------------------------------------- csv


def load_map_csv(path, *, speed_in_rpm: bool = True) -> Grid2D:
    """Read a ``speed_rpm,torque_nm,value`` grid, rows ordered speed-major."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["speed_rpm", "torque_nm", "value"]:
            raise MapFormatError(f"{path}: header must be 'speed_rpm,torque_nm,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise MapFormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise MapFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise MapFormatError(f"{path}: no data rows")
    data = np.array(rows)
    speeds = list(dict.fromkeys(data[:, 0].tolist()))
    torques = list(dict.fromkeys(data[:, 1].tolist()))
    ns, nt = len(speeds), len(torques)
    if ns * nt != len(rows):
        raise MapFormatError(f"{path}: {len(rows)} rows do not form a {ns}x{nt} grid")
    expect_s = np.repeat(speeds, nt)
    expect_t = np.tile(torques, ns)
    if not (np.array_equal(expect_s, data[:, 0]) and np.array_equal(expect_t, data[:, 1])):
        raise MapFormatError(f"{path}: rows are not a speed-major rectangular grid")
    speeds = np.asarray(speeds) * (RPM_TO_RAD if speed_in_rpm else 1.0)
    return Grid2D(speeds, torques, data[:, 2].reshape(ns, nt))


def save_map_csv(grid: Grid2D, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speed_rpm", "torque_nm", "value"])
        for i, s in enumerate(grid.speeds):
            for j, t in enumerate(grid.torques):
                w.writerow([repr(float(s / RPM_TO_RAD)), repr(float(t)), repr(float(grid.values[i, j]))])


def load_curve_csv(path) -> Curve1D:
    """Read a two-column ``soc,value`` curve."""
    path = Path(path)
    xs, ys = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise MapFormatError(f"{path}: expected a two-column header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                x, y = (float(c) for c in row)
            except ValueError:
                raise MapFormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            xs.append(x)
            ys.append(y)
    return Curve1D(xs, ys)


# ---------------------------------------------------------------------- defaults

ENGINE_MAX_RPM = 6000.0
ENGINE_MAX_TORQUE = 120.0
MOTOR_MAX_RPM = 16000.0
MOTOR_MAX_TORQUE = 325.0


def analytic_bsfc(speed, torque, max_speed=ENGINE_MAX_RPM * RPM_TO_RAD, max_torque=ENGINE_MAX_TORQUE):
    ds = np.asarray(speed) / max_speed - 0.55
    dt = np.asarray(torque) / max_torque - 0.70
    return 220.0 * (1.0 + 0.35 * (ds**2 + dt**2) * 4.0)


def analytic_motor_eff(speed, torque, max_speed=MOTOR_MAX_RPM * RPM_TO_RAD, max_torque=MOTOR_MAX_TORQUE):
    ds = np.asarray(speed) / max_speed - 0.45
    dt = np.abs(np.asarray(torque)) / max_torque - 0.50
    return np.clip(0.93 - 0.25 * (ds**2 + dt**2) * 2.0, 0.70, 0.95)


def default_bsfc_map() -> Grid2D:
    # 100 rpm x 1 N.m nodes: the analytic formula is reproduced exactly on them
    rpm = np.arange(0.0, ENGINE_MAX_RPM + 1.0, 100.0)
    tq = np.arange(0.0, ENGINE_MAX_TORQUE + 0.5, 1.0)
    w = rpm * RPM_TO_RAD
    return Grid2D(w, tq, analytic_bsfc(w[:, None], tq[None, :]))


def default_motor_eff_map() -> Grid2D:
    rpm = np.arange(0.0, MOTOR_MAX_RPM + 1.0, 200.0)
    tq = np.arange(0.0, MOTOR_MAX_TORQUE + 0.5, 5.0)
    w = rpm * RPM_TO_RAD
    return Grid2D(w, tq, analytic_motor_eff(w[:, None], tq[None, :]))


def default_ocv_curve() -> Curve1D:
    return Curve1D([0.0, 1.0], [300.0, 325.0])


def default_resistance_curve() -> Curve1D:
    return Curve1D([0.0, 1.0], [0.12, 0.08])
