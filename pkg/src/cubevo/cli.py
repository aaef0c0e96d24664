"""Command-line harness.

Subcommands: ``genenv`` (generate and save an environment), ``evolve``
(run evolution), ``replay`` (record a saved genome's trajectory in a saved
environment), ``analyze`` (behavioral and neural analyses), ``sweep``
(occupancy sweep experiment), ``metrics`` (occupancy/difficulty of a
saved environment). Every command is headless and writes its resolved
configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from cubevo import __version__, analysis, config, seeds
from cubevo.env import EnvironmentSpec, GeneratorParams, difficulty, generate_environment, occupancy
from cubevo.evo import EvolutionHistory, evolve
from cubevo.net import Network

__all__ = ["cli_dispatch", "main"]


# ----------------------------------------------------------------------
# file writers / readers
# ----------------------------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_csv(path: Path, meta: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(meta + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_history_csv(path: Path, history: EvolutionHistory, meta: str) -> None:
    _write_csv(
        path,
        meta,
        ["generation", "mean_fitness", "max_fitness", "interneuron_count_mean", "synapse_count_mean"],
        (
            (r.generation, r.mean_fitness, r.max_fitness, r.interneuron_count_mean, r.synapse_count_mean)
            for r in history.records
        ),
    )


def _bits_to_str(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def _write_trajectory_csv(path: Path, traj: analysis.Trajectory, meta: str) -> None:
    rows = (
        (
            t,
            _bits_to_str(traj.states[t]),
            int(traj.actions[t]) // 2,
            int(traj.actions[t]) % 2,
            int(traj.effective[t]),
            float(traj.rewards[t]),
            ";".join(str(g) for g in traj.achieved[t]),
            ";".join(str(i) for i in traj.noise_flips[t]),
        )
        for t in range(traj.steps)
    )
    _write_csv(
        path,
        meta,
        ["t", "state", "action_bit", "action_value", "effective", "reward", "goals", "noise_flips"],
        rows,
    )


def _write_activity_csv(path: Path, traj: analysis.Trajectory, meta: str) -> None:
    header = ["t"] + [str(nid) for nid in traj.neuron_ids]
    rows = ((t, *[float(v) for v in traj.outputs[t]]) for t in range(traj.steps))
    _write_csv(path, meta, header, rows)


def _write_raster_csv(path: Path, traj: analysis.Trajectory, meta: str) -> None:
    header = ["neuron_id"] + [str(t) for t in range(traj.steps)]
    active = (traj.outputs > traj.threshold).astype(int)
    rows = (
        (nid, *[int(v) for v in active[:, column]])
        for column, nid in enumerate(traj.neuron_ids)
    )
    _write_csv(path, meta, header, rows)


def _read_data_rows(path: Path) -> list[list[str]]:
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and not row[0].startswith("#")]


def read_trajectory_csv(traj_path, activity_path, threshold: float = 0.5) -> analysis.Trajectory:
    """Rebuild a Trajectory from trajectory.csv + activity.csv."""
    rows = _read_data_rows(Path(traj_path))
    header, body = rows[0], rows[1:]
    expected = ["t", "state", "action_bit", "action_value", "effective", "reward", "goals", "noise_flips"]
    if header != expected:
        raise ValueError(f"unexpected trajectory header in {traj_path}: {header}")
    states, actions, effective, rewards, achieved, flips = [], [], [], [], [], []
    for row in body:
        states.append([int(c) for c in row[1]])
        actions.append(2 * int(row[2]) + int(row[3]))
        effective.append(bool(int(row[4])))
        rewards.append(float(row[5]))
        achieved.append([int(g) for g in row[6].split(";") if g])
        flips.append([int(i) for i in row[7].split(";") if i])

    activity_rows = _read_data_rows(Path(activity_path))
    neuron_ids = [int(c) for c in activity_rows[0][1:]]
    outputs = np.array([[float(c) for c in row[1:]] for row in activity_rows[1:]])
    if len(outputs) != len(body):
        raise ValueError("trajectory and activity files disagree on step count")
    return analysis.Trajectory(
        states=np.array(states, dtype=np.int8),
        actions=np.array(actions, dtype=np.int32),
        effective=np.array(effective, dtype=np.bool_),
        rewards=np.array(rewards, dtype=np.float64),
        achieved=achieved,
        noise_flips=flips,
        outputs=outputs,
        neuron_ids=neuron_ids,
        threshold=threshold,
    )


def _load_genome(path) -> Network:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return Network.from_json(path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed JSON in {path}: {err}") from None


def _parse_bits(text: str, n_env: int) -> np.ndarray:
    if len(text) != n_env or set(text) - {"0", "1"}:
        raise ValueError(f"initial state must be {n_env} characters of 0/1, got {text!r}")
    return np.array([int(c) for c in text], dtype=np.int8)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def _generator_from_args(args, file_cfg: dict, preset: dict) -> GeneratorParams:
    flags = {
        "n_env": args.n_env,
        "n_root_goals": args.roots,
        "max_complexity": args.max_complexity,
        "min_complexity": args.min_complexity,
        "split_prob": args.split_prob,
        "t_rec": args.t_rec,
        "p_stoch": args.p_stoch,
        "reward_scale": args.reward_scale,
    }
    return config.generator_params_from_layers(
        preset.get("generator"), file_cfg.get("generator"), flags
    )


def _add_generator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-env", type=int, help="number of world bits")
    parser.add_argument("--roots", type=int, help="number of root goals")
    parser.add_argument("--max-complexity", type=int, help="maximum root goal length")
    parser.add_argument("--min-complexity", type=int, help="minimum root goal length")
    parser.add_argument("--split-prob", type=float, help="probability of splitting a segment into subgoals")
    parser.add_argument("--t-rec", type=int, help="reward recovery time in steps")
    parser.add_argument("--p-stoch", type=float, help="per-bit flip probability per step")
    parser.add_argument("--reward-scale", type=float, help="reward units per unit goal complexity")


def cmd_genenv(args) -> int:
    out = _out_dir(args)
    file_cfg = config.load_json(args.config) if args.config else {}
    preset = config.PRESETS[args.preset] if args.preset else {}
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    params = _generator_from_args(args, file_cfg, preset)
    spec = generate_environment(params, seeds.stream(seed, "envgen"))
    config.save_environment(out / "env.json", spec)
    science = {"seed": seed, "generator": asdict(params)}
    config.write_resolved_config(out, {**science, "command": "genenv", "version": __version__})
    print(
        json.dumps(
            {
                "env": str(out / "env.json"),
                "n_goals": len(spec.goals),
                "occupancy": occupancy(spec),
            }
        )
    )
    return 0


def cmd_evolve(args) -> int:
    out = _out_dir(args)
    file_cfg = config.load_json(args.config) if args.config else {}
    preset = config.PRESETS[args.preset] if args.preset else {}
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)

    flags = {
        "population_size": args.population,
        "generations": args.generations,
        "lifetime": args.lifetime,
        "evals_per_agent": args.evals_per_agent,
        "elitism": False if args.no_elitism else None,
    }
    evo_params = config.evo_params_from_layers(
        preset.get("evo"), file_cfg.get("evo"), flags, {"seed": seed}
    )

    env_path = args.env or file_cfg.get("env")
    if env_path:
        spec = config.load_environment(env_path)
        if args.p_stoch is not None:
            spec = spec.with_noise(args.p_stoch)
    else:
        gen_params = _generator_from_args(args, file_cfg, preset)
        spec = generate_environment(gen_params, seeds.stream(seed, "envgen"))
    config.save_environment(out / "env.json", spec)

    science = {"seed": seed, "evo": asdict(evo_params), "env": spec.to_json_dict()}
    meta = config.csv_meta_line(seed, science)
    config.write_resolved_config(
        out,
        {
            **science,
            "command": "evolve",
            "version": __version__,
            "workers": args.workers,
            "champion_every": args.champion_every,
        },
    )

    def save_champion(record) -> None:
        if args.champion_every and record.generation % args.champion_every == 0:
            path = out / f"champion_{record.generation}.json"
            path.write_text(record.champion.to_json() + "\n")

    history = evolve(spec, evo_params, workers=args.workers, on_generation=save_champion)
    _write_history_csv(out / "history.csv", history, meta)
    (out / "champion_final.json").write_text(history.champion.to_json() + "\n")
    final = history.records[-1]
    print(
        json.dumps(
            {
                "generations": len(history.records),
                "max_fitness": final.max_fitness,
                "mean_fitness": final.mean_fitness,
                "history": str(out / "history.csv"),
                # replaying the champion from this world reproduces its score
                "final_initial_state": _bits_to_str(history.final_initial_states[0]),
                "final_noise_seed": history.final_noise_seeds[0],
            }
        )
    )
    return 0


def _replay_trajectory(args, spec: EnvironmentSpec, genome: Network):
    steps = args.steps
    if args.initial_state is not None:
        initial = _parse_bits(args.initial_state, spec.n_env)
    elif args.state_seed is not None:
        initial = seeds.stream(args.state_seed, "state").integers(0, 2, spec.n_env).astype(np.int8)
    else:
        initial = np.zeros(spec.n_env, dtype=np.int8)
    return analysis.record_trajectory(genome, spec, steps, initial, args.seed), initial


def cmd_replay(args) -> int:
    out = _out_dir(args)
    spec = config.load_environment(args.env)
    genome = _load_genome(args.genome)
    traj, initial = _replay_trajectory(args, spec, genome)
    science = {
        "seed": args.seed,
        "steps": args.steps,
        "initial_state": _bits_to_str(initial),
        "env": spec.to_json_dict(),
        "genome": genome.to_json_dict(),
    }
    meta = config.csv_meta_line(args.seed, science)
    config.write_resolved_config(out, {**science, "command": "replay", "version": __version__})
    _write_trajectory_csv(out / "trajectory.csv", traj, meta)
    _write_activity_csv(out / "activity.csv", traj, meta)
    print(
        json.dumps(
            {"steps": traj.steps, "total_reward": traj.total_reward, "out": str(out)}
        )
    )
    return 0


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    if args.trajectory:
        if not args.activity:
            raise ValueError("--trajectory requires --activity")
        traj = read_trajectory_csv(args.trajectory, args.activity, threshold=args.threshold)
        science = {"trajectory": str(args.trajectory), "activity": str(args.activity)}
        seed = 0
    else:
        if not (args.genome and args.env):
            raise ValueError("analyze needs either --genome and --env, or --trajectory and --activity")
        spec = config.load_environment(args.env)
        if not args.keep_noise:
            # Cycle structure is a property of the deterministic limit
            # behavior; replay without stochastic flips unless asked.
            spec = spec.with_noise(0.0)
        genome = _load_genome(args.genome)
        traj, initial = _replay_trajectory(args, spec, genome)
        seed = args.seed
        science = {
            "seed": seed,
            "steps": args.steps,
            "initial_state": _bits_to_str(initial),
            "keep_noise": bool(args.keep_noise),
            "env": spec.to_json_dict(),
            "genome": genome.to_json_dict(),
        }
    meta = config.csv_meta_line(seed, science)
    config.write_resolved_config(out, {**science, "command": "analyze", "version": __version__})

    cycle = analysis.detect_main_cycle(traj)
    events = analysis.detect_alternatives(traj)
    specialization = analysis.neuron_specialization(traj)
    oscillations = analysis.slow_oscillation_scan(traj, args.min_period)

    report = {
        "meta": {"version": __version__, "seed": seed, "config": config.config_digest(science)},
        "steps": traj.steps,
        "total_reward": traj.total_reward,
        "cycle": None
        if cycle is None
        else {
            "start": cycle.start,
            "period": cycle.period,
            "actions": [[a.bit_index, a.target_value] for a in cycle.action_sequence],
            "goals": cycle.goal_sequence,
        },
        "signature": None if cycle is None else analysis.strategy_signature(traj, cycle),
        "alternatives": [
            {
                "state": _bits_to_str(e.state),
                "t1": e.t1,
                "action1": [e.action1.bit_index, e.action1.target_value],
                "t2": e.t2,
                "action2": [e.action2.bit_index, e.action2.target_value],
                "stm_lower_bound": e.stm_lower_bound,
            }
            for e in events
        ],
        "max_stm_lower_bound": max((e.stm_lower_bound for e in events), default=0),
        "specialization": {
            str(nid): {"activity_fraction": frac, "distinct_active_states": count}
            for nid, (frac, count) in specialization.items()
        },
        "slow_oscillations": [
            {"neuron": nid, "intervals": intervals} for nid, intervals in oscillations
        ],
        "min_period": args.min_period,
    }
    config.save_json(out / "analysis.json", report)
    _write_trajectory_csv(out / "trajectory.csv", traj, meta)
    _write_activity_csv(out / "activity.csv", traj, meta)
    _write_raster_csv(out / "raster.csv", traj, meta)
    print(
        json.dumps(
            {
                "cycle_period": None if cycle is None else cycle.period,
                "alternative_events": len(events),
                "max_stm_lower_bound": report["max_stm_lower_bound"],
                "out": str(out),
            }
        )
    )
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    doc = config.load_json(args.config)
    try:
        raw_bands = doc["bands"]
        envs_per_band = int(doc["envs_per_band"])
        runs_per_env = int(doc["runs_per_env"])
    except KeyError as err:
        raise ValueError(f"sweep config missing field {err.args[0]!r}") from None
    bands = []
    for raw in raw_bands:
        if isinstance(raw, dict):
            generator = (
                config.dataclass_from_dict(GeneratorParams, raw["generator"], "bands.generator")
                if "generator" in raw
                else None
            )
            bands.append(analysis.SweepBand(lo=float(raw["lo"]), hi=float(raw["hi"]), generator=generator))
        else:
            lo, hi = raw
            bands.append(analysis.SweepBand(lo=float(lo), hi=float(hi)))
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    sweep_config = analysis.SweepConfig(
        bands=bands,
        envs_per_band=envs_per_band,
        runs_per_env=runs_per_env,
        evo=config.evo_params_from_layers(doc.get("evo")),
        generator=config.generator_params_from_layers(doc.get("generator")),
        conditions={k: float(v) for k, v in doc.get(
            "conditions", {"deterministic": 0.0, "stochastic": 0.0085}
        ).items()},
        seed=seed,
        retry_budget=int(doc.get("retry_budget", 200)),
        workers=args.workers,
    )
    science = {k: v for k, v in doc.items()}
    science["seed"] = seed
    meta = config.csv_meta_line(seed, science)
    config.write_resolved_config(
        out, {**science, "command": "sweep", "version": __version__, "workers": args.workers}
    )

    result = analysis.occupancy_sweep(sweep_config)
    _write_csv(
        out / "sweep.csv",
        meta,
        [
            "band_index", "band_lo", "band_hi", "env_index", "env_occupancy",
            "run_index", "condition", "p_stoch", "final_mean_fitness", "champion_fitness",
        ],
        (
            (
                c.band_index, c.band_lo, c.band_hi, c.env_index, c.env_occupancy,
                c.run_index, c.condition, c.p_stoch, c.final_mean_fitness, c.champion_fitness,
            )
            for c in result.cells
        ),
    )
    for (band_index, env_index), spec in result.environments.items():
        config.save_environment(out / f"env_band{band_index}_env{env_index}.json", spec)
    summary = {
        "bands": [
            {
                "band_index": s.band_index,
                "condition_means": s.condition_means,
                "welch": None
                if s.welch is None
                else {"t": s.welch.statistic, "df": s.welch.df, "p": s.welch.p_value},
                "note": s.note,
            }
            for s in result.summaries
        ],
        "skipped_bands": [{"band_index": i, "reason": r} for i, r in result.skipped_bands],
    }
    config.save_json(out / "sweep_summary.json", summary)
    print(json.dumps(summary))
    return 0


def cmd_metrics(args) -> int:
    spec = config.load_environment(args.env)
    occ = occupancy(spec)
    print(
        json.dumps(
            {
                "n_env": spec.n_env,
                "n_goals": len(spec.goals),
                "occupancy": occ,
                "difficulty": difficulty(spec) if occ > 0 else None,
            }
        )
    )
    return 0


# ----------------------------------------------------------------------
# dispatch
# ----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cubevo",
        description="Neuroevolution of recurrent agents in multi-goal hypercube worlds.",
    )
    parser.add_argument("--version", action="version", version=f"cubevo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genenv", help="generate an environment and save it")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(config.PRESETS))
    _add_generator_flags(p)
    p.set_defaults(func=cmd_genenv)

    p = sub.add_parser("evolve", help="run evolution")
    p.add_argument("--out", required=True)
    p.add_argument("--env", help="environment JSON (otherwise one is generated)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(config.PRESETS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--generations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--lifetime", type=int)
    p.add_argument("--evals-per-agent", type=int)
    p.add_argument("--no-elitism", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--champion-every", type=int, default=0, help="save champion_<gen>.json every N generations")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("replay", help="record a genome's trajectory in an environment")
    p.add_argument("--out", required=True)
    p.add_argument("--genome", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--seed", type=int, default=0, help="noise seed (stochastic environments)")
    p.add_argument("--initial-state", help="bitstring, e.g. 00000000")
    p.add_argument("--state-seed", type=int, help="draw the initial state from this seed")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="behavioral and neural analyses")
    p.add_argument("--out", required=True)
    p.add_argument("--genome")
    p.add_argument("--env")
    p.add_argument("--trajectory", help="existing trajectory.csv")
    p.add_argument("--activity", help="existing activity.csv")
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-state")
    p.add_argument("--state-seed", type=int)
    p.add_argument("--keep-noise", action="store_true", help="replay with the environment's stochastic flips")
    p.add_argument("--threshold", type=float, default=0.5, help="activity threshold for trajectory files")
    p.add_argument("--min-period", type=int, default=10, help="slow-oscillation reporting threshold")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="occupancy sweep experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="occupancy and difficulty of a saved environment")
    p.add_argument("--env", required=True)
    p.set_defaults(func=cmd_metrics)

    return parser


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))
