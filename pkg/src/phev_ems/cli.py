"""Command line harness: simulate, dp, train, compare, cycle-info.

Every command writes into one output directory (``--out``, else the
``PHEV_EMS_OUT`` environment variable, else ``./runs``).  Outputs carry no
timestamps, so re-running a command with the same config and seed rewrites
byte-identical files.

Config files are INI style.  Sections and keys::

    [run]      seed, soc, cycle, repeats, unit, controller, checkpoint, steps,
               checkpoint_every
    [vehicle]  any VehicleParams field
    [maps]     bsfc, motor_efficiency, ocv, resistance   (CSV paths)
    [reward]   any RewardParams field
    [dp]       n_soc, n_torque, soc_min, soc_max
    [agent]    any AgentHyperparams field (hidden as "64,64")

Command line flags override the [run] section.  Relative paths inside a config
file resolve against the file's directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import agent as agent_mod
from .cdcs import CdcsController
from .cycle import DriveCycle, load_cycle, repeat, synth_cycle
from .dp import DpConfig, solve, write_cost_to_go
from .env import RewardParams, Rollout, rollout, write_trace
from .maps import load_curve_csv, load_map_csv, save_map_csv
from .powertrain import BatteryModel, EngineModel, MotorModel, Powertrain, VehicleParams

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
REPORT_COLUMNS = ["controller", "cost_cny", "gap_pct", "fuel_l", "electricity_kwh",
                  "clutch_engagement_pct", "soc_final", "soc_in_bounds_pct", "infeasible_steps"]


RUN_KEYS = ("seed", "soc", "cycle", "repeats", "unit", "out", "controller", "checkpoint",
            "steps", "checkpoint_every")


class ConfigError(Exception):
    pass


@dataclass
class Settings:
    seed: int = 0
    soc: float | str = 0.8
    cycle: str = "synth"
    repeats: int = 1
    unit: str = "kmh"
    out: Path = Path("runs")
    controller: str = "cdcs"
    checkpoint: Path | None = None
    steps: int = 170_000
    checkpoint_every: int = 50
    pt: Powertrain = field(default_factory=Powertrain.default)
    reward: RewardParams = field(default_factory=RewardParams)
    dp: DpConfig = field(default_factory=DpConfig)
    agent: agent_mod.AgentHyperparams = field(default_factory=agent_mod.AgentHyperparams)


# ------------------------------------------------------------------ parsing


def _parse_soc(text) -> float | str:
    if str(text).strip().lower() == "random":
        return "random"
    try:
        soc = float(text)
    except ValueError:
        raise ConfigError(f"soc must be a number or 'random', got {text!r}") from None
    if not 0.0 <= soc <= 1.0:
        raise ConfigError(f"soc {soc} outside [0, 1]")
    return soc


def _typed(cls, values: dict, section: str) -> dict:
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in kinds:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kind = str(kinds[key])
        try:
            if "tuple" in kind:
                out[key] = tuple(int(v) for v in raw.split(","))
            elif kind == "int":
                out[key] = int(raw)
            elif kind == "bool":
                out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                out[key] = float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return out


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _existing(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _build_powertrain(vehicle: dict, maps: dict, base: Path) -> Powertrain:
    pt = Powertrain.default()
    try:
        if vehicle:
            pt = replace(pt, vehicle=VehicleParams.from_mapping(vehicle))
        if "bsfc" in maps:
            grid = load_map_csv(_existing(_resolve(base, maps["bsfc"]), "BSFC map"))
            pt = replace(pt, engine=EngineModel.from_bsfc(grid))
        if "motor_efficiency" in maps:
            grid = load_map_csv(_existing(_resolve(base, maps["motor_efficiency"]), "motor map"))
            pt = replace(pt, motor=MotorModel.from_maps(grid))
        if "ocv" in maps or "resistance" in maps:
            ocv = (load_curve_csv(_existing(_resolve(base, maps["ocv"]), "OCV curve"))
                   if "ocv" in maps else pt.battery.ocv)
            res = (load_curve_csv(_existing(_resolve(base, maps["resistance"]), "resistance curve"))
                   if "resistance" in maps else pt.battery.resistance)
            pt = replace(pt, battery=BatteryModel(ocv, res))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(maps) - {"bsfc", "motor_efficiency", "ocv", "resistance"}
    if unknown:
        raise ConfigError(f"[maps] unknown keys: {', '.join(sorted(unknown))}")
    return pt


def load_settings(args: argparse.Namespace) -> Settings:
    st = Settings(out=Path(os.environ.get("PHEV_EMS_OUT", "runs")))
    run: dict = {}
    sections: dict = {}
    base = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        known = {"run", "vehicle", "maps", "reward", "dp", "agent"}
        extra = set(cp.sections()) - known
        if extra:
            raise ConfigError(f"{path}: unknown sections {', '.join(sorted(extra))}")
        sections = {s: dict(cp.items(s)) for s in cp.sections()}
        run = sections.get("run", {})
        base = path.parent
    for key in RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            run[key] = flag
            if key in ("cycle", "checkpoint", "out"):
                run[f"_{key}_cli"] = True
    unknown = {k for k in run if not k.startswith("_")} - set(RUN_KEYS)
    if unknown:
        raise ConfigError(f"[run] unknown keys: {', '.join(sorted(unknown))}")
    try:
        st.seed = int(run.get("seed", st.seed))
        st.repeats = int(run.get("repeats", st.repeats))
        st.steps = int(run.get("steps", st.steps))
        st.checkpoint_every = int(run.get("checkpoint_every", st.checkpoint_every))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if st.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    st.soc = _parse_soc(run.get("soc", st.soc))
    st.unit = str(run.get("unit", st.unit))
    if st.unit not in ("kmh", "ms"):
        raise ConfigError(f"unit must be kmh or ms, got {st.unit!r}")
    st.controller = str(run.get("controller", st.controller))
    for key in ("cycle", "checkpoint", "out"):
        if key in run:
            value = str(run[key])
            here = Path.cwd() if run.get(f"_{key}_cli") else base
            if key == "cycle":
                st.cycle = value if value == "synth" else str(_resolve(here, value))
            else:
                setattr(st, key, _resolve(here, value))
    st.pt = _build_powertrain(sections.get("vehicle", {}), sections.get("maps", {}), base)
    try:
        st.reward = RewardParams(**_typed(RewardParams, sections.get("reward", {}), "reward"))
        dp = _typed(DpConfig, {k: v for k, v in sections.get("dp", {}).items()}, "dp")
        st.dp = DpConfig(**dp)
        hp = _typed(agent_mod.AgentHyperparams, sections.get("agent", {}), "agent")
        st.agent = agent_mod.AgentHyperparams(**hp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return st


def load_drive_cycle(st: Settings) -> DriveCycle:
    if st.cycle == "synth":
        base = synth_cycle(st.seed)
    else:
        path = _existing(Path(st.cycle), "cycle file")
        try:
            base = load_cycle(path, st.unit)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return repeat(base, st.repeats)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ outputs


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, (int, str)) else repr(float(x)) for x in row])


def _emit_rollout(out: Path, name: str, ro: Rollout, st: Settings, cycle: DriveCycle) -> dict:
    write_trace(ro.trace, out / f"trace_{name}.csv", st.reward.dt)
    summary = dict(ro.totals, controller=name, cycle=cycle.name, seed=st.seed,
                   soc_init_mode=st.soc if isinstance(st.soc, str) else "fixed")
    _write_json(out / f"summary_{name}.json", summary)
    return summary


def _load_agent(st: Settings) -> agent_mod.PdqnTd3:
    if st.checkpoint is None:
        raise ConfigError("an agent checkpoint is required (--checkpoint)")
    path = _existing(Path(st.checkpoint), "checkpoint")
    try:
        return agent_mod.PdqnTd3.load(path, st.pt)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def report_rows(summaries: dict[str, dict]) -> list[dict]:
    """Totals per controller plus the cost gap to DP in percent (DP = 0)."""
    dp_cost = summaries["dp"]["cost_cny"] if "dp" in summaries else None
    rows = []
    for name, s in summaries.items():
        gap = (s["cost_cny"] - dp_cost) / dp_cost * 100.0 if dp_cost else float("nan")
        rows.append({"controller": name, "gap_pct": 0.0 if name == "dp" else gap,
                     **{k: s[k] for k in REPORT_COLUMNS[3:] + ["cost_cny"]}})
    return rows


def write_plot_data(out: Path, pt: Powertrain, rollouts: dict[str, Rollout]) -> None:
    names = list(rollouts)
    n = len(next(iter(rollouts.values())).trace)
    soc_rows = []
    for t in range(n + 1):
        row = [t]
        for name in names:
            tr = rollouts[name].trace
            row.append(tr[t].soc if t < n else tr[-1].step.soc_next)
        soc_rows.append(row)
    _write_rows(out / "plot_soc.csv", ["t"] + [f"soc_{x}" for x in names], soc_rows)
    _write_rows(out / "plot_engine_points.csv", ["controller", "t", "omega_e", "T_e", "fuel_g"],
                ([name, r.t, r.step.omega_e, r.step.T_e, r.step.fuel_rate]
                 for name in names for r in rollouts[name].trace if r.step.T_e > 0))
    _write_rows(out / "plot_motor_points.csv", ["controller", "t", "omega_m", "T_m"],
                ([name, r.t, r.step.omega_m, r.step.T_m]
                 for name in names for r in rollouts[name].trace if r.step.T_m != 0))
    save_map_csv(pt.engine.bsfc, out / "plot_bsfc_grid.csv")
    save_map_csv(pt.motor.efficiency, out / "plot_motor_eff_grid.csv")


# ----------------------------------------------------------------- commands


def cmd_simulate(st: Settings, out: Path) -> int:
    cycle = load_drive_cycle(st)
    if st.controller == "cdcs":
        ctrl = CdcsController(st.pt)
    elif st.controller == "agent":
        ctrl = _load_agent(st).policy()
    else:
        raise ConfigError(f"controller must be cdcs or agent, got {st.controller!r}")
    ro = rollout(ctrl, cycle, st.soc, st.pt, st.reward, seed=st.seed)
    summary = _emit_rollout(out, st.controller, ro, st, cycle)
    print(json.dumps({k: summary[k] for k in ("cost_cny", "clutch_engagement_pct", "soc_final")},
                     sort_keys=True))
    return EXIT_OK


def _soc_fixed(st: Settings) -> float:
    if isinstance(st.soc, str):
        raise ConfigError("dp and compare need a fixed initial soc")
    return st.soc


def cmd_dp(st: Settings, out: Path) -> int:
    cycle = load_drive_cycle(st)
    sol = solve(cycle, st.pt, st.reward, st.dp, _soc_fixed(st))
    summary = _emit_rollout(out, "dp", sol.trajectory, st, cycle)
    write_cost_to_go(sol, out / "cost_to_go.csv")
    print(json.dumps({"cost_cny": summary["cost_cny"]}, sort_keys=True))
    return EXIT_OK


def cmd_train(st: Settings, out: Path) -> int:
    cycle = load_drive_cycle(st)
    ckpt_dir = out / "checkpoints"
    if st.checkpoint is not None:
        ag = _load_agent(st)
    else:
        ag = agent_mod.PdqnTd3(st.pt, st.agent, st.seed, st.reward)
    if st.steps < ag.hp.warmup:
        raise ConfigError(f"steps ({st.steps}) must be >= warmup ({ag.hp.warmup})")
    if st.checkpoint_every:
        ckpt_dir.mkdir(exist_ok=True)
    res = agent_mod.train(ag, cycle, st.steps, st.soc, st.checkpoint_every, ckpt_dir)
    ag.save(out / "agent.npz")
    agent_mod.write_curve(res.curve, out / "learning_curve.csv")
    (out / "hyperparams.json").write_text(agent_mod.hyperparams_json(ag.hp) + "\n")
    _write_json(out / "summary_train.json", {
        "episodes": len(res.curve), "steps": ag.steps, "updates": ag.n_updates,
        "seed": ag.seed, "cycle": cycle.name,
        "checkpoints": [p.name for p in res.checkpoints],
    })
    print(json.dumps({"episodes": len(res.curve), "steps": ag.steps}, sort_keys=True))
    return EXIT_OK


def cmd_compare(st: Settings, out: Path) -> int:
    cycle = load_drive_cycle(st)
    soc = _soc_fixed(st)
    ag = _load_agent(st)
    sol = solve(cycle, st.pt, st.reward, st.dp, soc)
    rollouts = {
        "dp": sol.trajectory,
        "agent": rollout(ag.policy(), cycle, soc, st.pt, st.reward),
        "cdcs": rollout(CdcsController(st.pt), cycle, soc, st.pt, st.reward),
    }
    summaries = {name: _emit_rollout(out, name, ro, st, cycle) for name, ro in rollouts.items()}
    rows = report_rows(summaries)
    _write_rows(out / "report.csv", REPORT_COLUMNS,
                ([r[c] for c in REPORT_COLUMNS] for r in rows))
    _write_json(out / "report.json", {"cycle": cycle.name, "soc_init": soc, "seed": st.seed,
                                      "controllers": rows})
    write_cost_to_go(sol, out / "cost_to_go.csv")
    write_plot_data(out, st.pt, rollouts)
    for r in rows:
        print(f"{r['controller']:6s} cost {r['cost_cny']:.4f} CNY  gap {r['gap_pct']:6.2f}%  "
              f"clutch {r['clutch_engagement_pct']:5.1f}%")
    return EXIT_OK


def cmd_cycle_info(st: Settings, out: Path) -> int:
    cycle = load_drive_cycle(st)
    acc = cycle.accelerations
    info = {"name": cycle.name, "samples": len(cycle), "duration_s": (len(cycle) - 1) * cycle.dt,
            "distance_km": cycle.distance_km, "max_speed_ms": float(cycle.speeds.max()),
            "mean_speed_ms": float(cycle.speeds.mean()), "max_accel_ms2": float(acc.max()),
            "min_accel_ms2": float(acc.min()), "repeats": cycle.repeats,
            "sha256": cycle.checksum()}
    _write_json(out / "cycle_info.json", info)
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "dp": cmd_dp, "train": cmd_train,
            "compare": cmd_compare, "cycle-info": cmd_cycle_info}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--soc", help="initial SOC in [0, 1] or 'random'")
    common.add_argument("--cycle", help="cycle CSV (t_s,v) or 'synth'")
    common.add_argument("--repeats", type=int)
    common.add_argument("--unit", choices=("kmh", "ms"), help="speed unit of the cycle file")
    common.add_argument("--out", help="output directory (default $PHEV_EMS_OUT or ./runs)")

    p = argparse.ArgumentParser(prog="phev-ems", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="roll out CD-CS or a trained agent")
    s.add_argument("--controller", choices=("cdcs", "agent"))
    s.add_argument("--checkpoint", help="agent checkpoint (.npz)")
    sub.add_parser("dp", parents=[common], help="dynamic-programming benchmark")
    t = sub.add_parser("train", parents=[common], help="train the PDQN-TD3 agent")
    t.add_argument("--steps", type=int, help="environment steps (default 170000)")
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   help="episodes between checkpoints, 0 disables (default 50)")
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    c = sub.add_parser("compare", parents=[common], help="DP vs agent vs CD-CS report")
    c.add_argument("--checkpoint", help="agent checkpoint (.npz)")
    sub.add_parser("cycle-info", parents=[common], help="describe a drive cycle")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        st = load_settings(args)
        st.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](st, st.out)
    except ConfigError as exc:
        print(f"phev-ems: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"phev-ems: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
