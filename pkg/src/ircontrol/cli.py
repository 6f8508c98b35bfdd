"""Command-line harness: train, generate, infer, grid, sweep, eval.

Every command is a pure function of its input files, config, and seed, and
writes its outputs plus a manifest with sha256 digests into --out. Exit
codes: 0 success, 1 usage or config error, 2 data or schema error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import agent, env, inverse, trajio
from .trajio import SchemaError


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _code_version() -> str:
    try:
        from importlib.metadata import version
        return version("ircontrol")
    except Exception:
        return "unknown"


def _load_config(path, cls):
    if path is None:
        return cls()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        return trajio.load_config(p, cls)
    except SchemaError as exc:
        raise UsageError(f"bad config {p}: {exc}") from exc


def _load_params(path) -> env.TaskParams:
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"parameter file not found: {p}")
    return trajio.parse_params(p.read_text())


def _load_checkpoint(path) -> agent.ActorCritic:
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"checkpoint not found: {p}")
    try:
        return agent.load_actor_critic(p.read_text())
    except ValueError as exc:
        raise SchemaError(f"bad checkpoint {p}: {exc}") from exc


def _load_trajectories(path):
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"trajectory file not found: {p}")
    return trajio.load_dataset(p)


def _out_dir(args) -> Path:
    out = Path(args.out if args.out is not None else "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, config, seeds: dict,
              inputs: list, outputs: list) -> None:
    snapshot = dataclasses.asdict(config) if dataclasses.is_dataclass(config) else dict(config)
    trajio.write_manifest(out / f"{command}_manifest.json", command, snapshot,
                          seeds, inputs, outputs, _code_version())


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _load_config(args.config, agent.TrainingConfig)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = _out_dir(args)
    ckpt_path = out / "checkpoint.txt"

    def checkpoint_fn(episode, ac):
        tag = ckpt_path if episode != -1 else out / "checkpoint_diverged.txt"
        tag.write_text(agent.save_actor_critic(ac))

    ac, curve = agent.train(config, checkpoint_fn=checkpoint_fn)
    curve_path = out / "curve.tsv"
    with open(curve_path, "w") as fh:
        fh.write("episode\tmean_reward\tcritic_loss\tactor_objective\tnoise_std\n")
        for ep, rew, cl, ao, ns in curve:
            fh.write(f"{ep}\t{rew:.6f}\t{cl:.6f}\t{ao:.6f}\t{ns:.6f}\n")
    _manifest(out, "train", config, {"seed": config.seed}, [],
              [ckpt_path, curve_path])
    print(f"trained {config.episodes} episodes -> {ckpt_path}")
    return 0


def cmd_generate(args) -> int:
    ac = _load_checkpoint(args.checkpoint)
    theta_star = _load_params(args.params)
    arr = theta_star.as_array()
    if np.any(arr < env.BOX_LO) or np.any(arr > env.BOX_HI):
        raise UsageError("theta-star lies outside the prior box")
    phi = _load_params(args.phi) if args.phi else None
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)

    records = agent.generate_dataset(ac, theta_star, args.episodes, seed, phi=phi)
    phi_id = "world" if phi is not None else "self"
    episodes = [inverse.EpisodeRecord(phi_id=phi_id, **r) for r in records]
    traj_path = out / "trajectories.jsonl"
    trajio.save_dataset(traj_path, episodes)
    _manifest(out, "generate",
              {"episodes": args.episodes, "theta_star": dict(zip(env.PARAM_NAMES, arr)),
               "phi": args.phi or "theta_star"},
              {"seed": seed}, [Path(args.checkpoint), Path(args.params)], [traj_path])
    print(f"wrote {len(episodes)} episodes -> {traj_path}")
    return 0


def cmd_infer(args) -> int:
    ac = _load_checkpoint(args.checkpoint)
    episodes = _load_trajectories(args.data)
    config = _load_config(args.config, inverse.IRCConfig)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = _out_dir(args)

    t0 = time.perf_counter()
    result = inverse.fit(episodes, ac.actor, config)
    wall = time.perf_counter() - t0
    fit_path = out / "fit.json"
    fit_path.write_text(trajio.fit_report(result, config))
    _manifest(out, "infer",
              {**dataclasses.asdict(config), "wall_clock_seconds": round(wall, 3)},
              {"seed": config.seed},
              [Path(args.checkpoint), Path(args.data)], [fit_path])
    flag = "converged" if result.converged else "NOT converged"
    print(f"{flag} after {result.n_iter} iterations -> {fit_path}")
    for name, v in zip(env.PARAM_NAMES, result.theta):
        print(f"  {name} = {v:.4f}")
    return 0


def cmd_grid(args) -> int:
    ac = _load_checkpoint(args.checkpoint)
    episodes = _load_trajectories(args.data)
    config = _load_config(args.config, inverse.IRCConfig)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    names = args.components.split(",")
    if len(names) != 2 or any(n not in env.PARAM_NAMES for n in names):
        raise UsageError(
            f"--components takes two comma-separated names from {env.PARAM_NAMES}")
    center = _load_params(args.center).as_array()
    ix = env.PARAM_NAMES.index(names[0])
    iy = env.PARAM_NAMES.index(names[1])
    out = _out_dir(args)

    # grid cell centers across each component's prior-box range
    xs = _cell_centers(env.BOX_LO[ix], env.BOX_HI[ix], args.nx)
    ys = _cell_centers(env.BOX_LO[iy], env.BOX_HI[iy], args.ny)
    thetas = np.tile(center, (args.nx * args.ny, 1))
    xv, yv = np.meshgrid(xs, ys, indexing="ij")
    thetas[:, ix] = xv.ravel()
    thetas[:, iy] = yv.ravel()

    data = inverse.PackedDataset(episodes)
    bank = inverse.NoiseBank(config.seed + 1, config.n_samples,
                             data.n_episodes, env.MAX_STEPS)
    lls = inverse._loglik_multi(thetas, data, bank, ac.actor, config.sigma_a)

    grid_path = out / "grid.tsv"
    with open(grid_path, "w") as fh:
        fh.write(f"{names[0]}\t{names[1]}\tlog_likelihood\n")
        for (x, y), ll in zip(thetas[:, [ix, iy]], lls):
            fh.write(f"{x:.6f}\t{y:.6f}\t{ll:.6f}\n")
    _manifest(out, "grid",
              {**dataclasses.asdict(config), "components": args.components,
               "nx": args.nx, "ny": args.ny},
              {"seed": config.seed},
              [Path(args.checkpoint), Path(args.data), Path(args.center)], [grid_path])
    print(f"wrote {args.nx * args.ny} grid rows -> {grid_path}")
    return 0


def _cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise UsageError("grid dimensions must be >= 1")
    edges = np.linspace(lo, hi, n + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def cmd_sweep(args) -> int:
    ac = _load_checkpoint(args.checkpoint)
    theta_star = _load_params(args.params)
    config = _load_config(args.config, inverse.IRCConfig)
    counts = [int(c) for c in args.counts.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    if counts != sorted(counts) or any(c < 1 for c in counts):
        raise UsageError("--counts must be positive and ascending")
    out = _out_dir(args)
    arr = theta_star.as_array()
    width = env.BOX_HI - env.BOX_LO

    rows = []
    for count in counts:
        for seed in seeds:
            records = agent.generate_dataset(ac, theta_star, count, seed)
            episodes = [inverse.EpisodeRecord(phi_id="self", **r) for r in records]
            fit_cfg = dataclasses.replace(config, seed=seed)
            result = inverse.fit(episodes, ac.actor, fit_cfg)
            err = np.abs(result.theta - arr) / width
            for i, name in enumerate(env.PARAM_NAMES):
                rows.append((count, seed, name, arr[i], result.theta[i], err[i]))
            print(f"count={count} seed={seed} mean_err={err.mean():.4f}", flush=True)

    sweep_path = out / "sweep.tsv"
    with open(sweep_path, "w") as fh:
        fh.write("count\tseed\tcomponent\ttrue\testimated\tabs_error\n")
        for count, seed, name, tv, ev, er in rows:
            fh.write(f"{count}\t{seed}\t{name}\t{tv:.6f}\t{ev:.6f}\t{er:.6f}\n")
    _manifest(out, "sweep",
              {**dataclasses.asdict(config), "counts": args.counts, "seeds": args.seeds},
              {"seeds": seeds},
              [Path(args.checkpoint), Path(args.params)], [sweep_path])
    print(f"wrote {len(rows)} rows -> {sweep_path}")
    return 0


def cmd_eval(args) -> int:
    ac = _load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    if args.params == "prior":
        srs, steps = [], []
        for _ in range(args.draws):
            theta = env.sample_params(rng)
            sr, st = agent.evaluate(ac, theta, args.episodes, rng)
            srs.append(sr)
            steps.append(st)
        report = {"mode": "prior", "draws": args.draws,
                  "episodes_per_draw": args.episodes,
                  "success_rate": float(np.mean(srs)),
                  "mean_steps": float(np.mean(steps)), "seed": seed}
    else:
        theta = _load_params(args.params)
        sr, st = agent.evaluate(ac, theta, args.episodes, rng)
        report = {"mode": "fixed", "episodes": args.episodes,
                  "success_rate": sr, "mean_steps": st, "seed": seed}
    text = json.dumps(report, sort_keys=True, indent=1)
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "eval.json").write_text(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="ircontrol",
                     description="Optimal-control ensembles and inverse "
                                 "rational inference for the firefly task.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--seed", type=int, default=None, help="rng seed override")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="accepted for interface compatibility; execution "
                             "is single-threaded for bit-reproducibility")

    p = sub.add_parser("train", parents=[common], help="train the ensemble")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="roll out behavior data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", required=True, help="theta-star parameter file")
    p.add_argument("--phi", default=None, help="world parameter file (default: theta-star)")
    p.add_argument("--episodes", type=int, default=500)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("infer", parents=[common], help="fit theta to trajectories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="trajectory file")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("grid", parents=[common], help="likelihood surface table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--components", required=True, help="two names, comma-separated")
    p.add_argument("--center", required=True, help="parameter file pinning the rest")
    p.add_argument("--nx", type=int, default=21)
    p.add_argument("--ny", type=int, default=21)
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("sweep", parents=[common], help="recovery error vs data volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", required=True, help="theta-star parameter file")
    p.add_argument("--counts", required=True, help="episode counts, ascending")
    p.add_argument("--seeds", required=True, help="dataset seeds, comma-separated")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval", parents=[common], help="success-rate report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", required=True, help="parameter file or 'prior'")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--draws", type=int, default=50, help="prior draws in 'prior' mode")
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SchemaError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
