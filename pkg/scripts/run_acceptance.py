"""Produce the cached artifacts that the long-running acceptance criteria
read from results/acceptance/.

Everything goes through the CLI so each artifact carries a manifest. The
script is resumable: finished pieces (detected by their output files) are
skipped, so it can be re-run after an interruption.

Usage: python3 scripts/run_acceptance.py [--skip-sweep] [--skip-grids]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from ircontrol import cli, env, trajio  # noqa: E402

RESULTS = ROOT / "results" / "acceptance"
CKPT = RESULTS / "checkpoint.txt"

GRID_COMPONENTS = "gain_v,goal_radius"
GRID_N = 9
GRID_SEEDS = [0, 1, 2, 3, 4]


def run(args):
    print("+ ircontrol " + " ".join(str(a) for a in args), flush=True)
    t0 = time.perf_counter()
    code = cli.main([str(a) for a in args])
    print(f"  -> exit {code} in {time.perf_counter() - t0:.1f}s", flush=True)
    if code != 0:
        sys.exit(f"command failed with exit code {code}")


def interior_draw(rng):
    """A parameter vector from the middle 60% of the prior box."""
    frac = rng.uniform(0.2, 0.8, size=len(env.PARAM_NAMES))
    return env.TaskParams(*(env.BOX_LO + frac * (env.BOX_HI - env.BOX_LO)))


def recovery_fits():
    rng = np.random.default_rng(100)
    for i in range(5):
        theta_star = interior_draw(rng)
        d = RESULTS / "recovery" / f"agent{i}"
        d.mkdir(parents=True, exist_ok=True)
        star_path = d / "theta_star.txt"
        star_path.write_text(trajio.serialize_params(theta_star))
        if not (d / "trajectories.jsonl").exists():
            run(["generate", "--checkpoint", CKPT, "--params", star_path,
                 "--episodes", 500, "--seed", i, "--out", d])
        if not (d / "fit.json").exists():
            run(["infer", "--checkpoint", CKPT,
                 "--data", d / "trajectories.jsonl", "--seed", i, "--out", d])


def grids():
    d = RESULTS / "grids"
    d.mkdir(parents=True, exist_ok=True)
    theta_star = interior_draw(np.random.default_rng(200))
    star_path = d / "theta_star.txt"
    star_path.write_text(trajio.serialize_params(theta_star))
    (d / "meta.json").write_text(
        '{"components": ["%s", "%s"], "seeds": %s}\n'
        % (*GRID_COMPONENTS.split(","), GRID_SEEDS))
    for seed in GRID_SEEDS:
        for count in (10, 500):
            out = d / f"seed{seed}_n{count}"
            if (out / "grid.tsv").exists():
                continue
            out.mkdir(exist_ok=True)
            run(["generate", "--checkpoint", CKPT, "--params", star_path,
                 "--episodes", count, "--seed", seed, "--out", out])
            run(["grid", "--checkpoint", CKPT,
                 "--data", out / "trajectories.jsonl",
                 "--components", GRID_COMPONENTS, "--center", star_path,
                 "--nx", GRID_N, "--ny", GRID_N, "--seed", seed, "--out", out])


def sweep():
    d = RESULTS / "sweep"
    if (d / "sweep.tsv").exists():
        return
    d.mkdir(parents=True, exist_ok=True)
    theta_star = interior_draw(np.random.default_rng(300))
    star_path = d / "theta_star.txt"
    star_path.write_text(trajio.serialize_params(theta_star))
    run(["sweep", "--checkpoint", CKPT, "--params", star_path,
         "--counts", "10,50,500", "--seeds", "0,1,2,3,4", "--out", d])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--skip-sweep", action="store_true")
    ap.add_argument("--skip-grids", action="store_true")
    ap.add_argument("--skip-recovery", action="store_true")
    args = ap.parse_args()
    if not CKPT.exists():
        sys.exit(f"no trained checkpoint at {CKPT}; run "
                 "`ircontrol train --out results/acceptance` first")
    if not args.skip_recovery:
        recovery_fits()
    if not args.skip_grids:
        grids()
    if not args.skip_sweep:
        sweep()
    print("all artifacts present under", RESULTS, flush=True)


if __name__ == "__main__":
    main()
