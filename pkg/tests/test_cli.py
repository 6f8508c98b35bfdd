"""Command-line harness: exit codes, output artifacts, and seeded
reproducibility at smoke scale."""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from ircontrol import agent, cli, env, trajio


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A directory holding a small (untrained) checkpoint and a params file."""
    d = tmp_path_factory.mktemp("cli")
    ac = agent.ActorCritic.build(agent.TrainingConfig(), np.random.default_rng(1))
    (d / "ckpt.txt").write_text(agent.save_actor_critic(ac))
    theta = env.TaskParams(2.0, 2.0, 0.2, 0.2, 0.2, 0.2, 0.5)
    (d / "theta.txt").write_text(trajio.serialize_params(theta))
    (d / "irc_smoke.cfg").write_text("n_samples = 2\nmax_iter = 3\n")
    return d


def run(args):
    return cli.main([str(a) for a in args])


class TestExitCodes:
    def test_no_arguments_is_usage_error(self):
        assert run([]) == 1

    def test_unknown_verb_is_usage_error(self):
        assert run(["frobnicate"]) == 1

    def test_missing_checkpoint_is_data_error(self, workdir):
        assert run(["eval", "--checkpoint", workdir / "nope.txt",
                    "--params", workdir / "theta.txt"]) == 2

    def test_missing_config_names_path(self, workdir, capsys):
        code = run(["train", "--config", workdir / "absent.cfg",
                    "--out", workdir / "t"])
        assert code == 1
        assert "absent.cfg" in capsys.readouterr().err

    def test_bad_config_key_is_usage_error(self, workdir, capsys):
        bad = workdir / "bad.cfg"
        bad.write_text("episodez = 10\n")
        assert run(["train", "--config", bad, "--out", workdir / "t"]) == 1
        assert "episodez" in capsys.readouterr().err

    def test_corrupt_trajectory_is_data_error(self, workdir, capsys):
        traj = workdir / "corrupt.jsonl"
        traj.write_text('{"format_version": 1, "prior_box": {}}\nnot json\n')
        assert run(["infer", "--checkpoint", workdir / "ckpt.txt",
                    "--data", traj, "--out", workdir / "i"]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_bad_threads_rejected(self, workdir):
        assert run(["eval", "--checkpoint", workdir / "ckpt.txt",
                    "--params", workdir / "theta.txt", "--threads", "0"]) == 1


class TestGenerate:
    def test_writes_trajectories_and_manifest(self, workdir):
        out = workdir / "gen"
        assert run(["generate", "--checkpoint", workdir / "ckpt.txt",
                    "--params", workdir / "theta.txt", "--episodes", "4",
                    "--seed", "3", "--out", out]) == 0
        eps = trajio.load_dataset(out / "trajectories.jsonl")
        assert len(eps) == 4
        manifest = json.loads((out / "generate_manifest.json").read_text())
        assert str(out / "trajectories.jsonl") in manifest["outputs"]

    def test_theta_outside_box_rejected(self, workdir):
        bad = workdir / "outside.txt"
        bad.write_text(trajio.serialize_params(
            env.TaskParams(2.0, 2.0, 0.2, 0.2, 0.2, 0.2, 0.5)).replace(
            "gain_v = 2", "gain_v = 9"))
        assert run(["generate", "--checkpoint", workdir / "ckpt.txt",
                    "--params", bad, "--episodes", "2",
                    "--out", workdir / "g2"]) == 1

    def test_seeded_rerun_identical(self, workdir):
        a, b = workdir / "gen_a", workdir / "gen_b"
        for out in (a, b):
            assert run(["generate", "--checkpoint", workdir / "ckpt.txt",
                        "--params", workdir / "theta.txt", "--episodes", "3",
                        "--seed", "11", "--out", out]) == 0
        assert ((a / "trajectories.jsonl").read_bytes()
                == (b / "trajectories.jsonl").read_bytes())


class TestTrain:
    def test_smoke_train_outputs(self, workdir):
        cfg = workdir / "train_smoke.cfg"
        cfg.write_text("episodes = 40\ncheckpoint_every = 40\nseed = 5\n")
        out = workdir / "train1"
        assert run(["train", "--config", cfg, "--out", out]) == 0
        assert (out / "checkpoint.txt").exists()
        curve = (out / "curve.tsv").read_text().splitlines()
        assert curve[0].startswith("episode\t")

    def test_seeded_rerun_identical_checkpoint(self, workdir):
        cfg = workdir / "train_smoke.cfg"
        out2 = workdir / "train2"
        assert run(["train", "--config", cfg, "--out", out2]) == 0
        assert ((workdir / "train1" / "checkpoint.txt").read_bytes()
                == (out2 / "checkpoint.txt").read_bytes())


@pytest.fixture(scope="module")
def traj(workdir):
    out = workdir / "gen_for_infer"
    run(["generate", "--checkpoint", workdir / "ckpt.txt",
         "--params", workdir / "theta.txt", "--episodes", "5",
         "--seed", "21", "--out", out])
    return out / "trajectories.jsonl"


class TestInferGridSweep:
    def test_infer_writes_report(self, workdir, traj):
        out = workdir / "inf"
        assert run(["infer", "--checkpoint", workdir / "ckpt.txt",
                    "--data", traj, "--config", workdir / "irc_smoke.cfg",
                    "--seed", "2", "--out", out]) == 0
        doc = trajio.parse_fit_report((out / "fit.json").read_text())
        assert set(doc["theta_hat"]) == set(env.PARAM_NAMES)
        assert len(doc["trace_loglik"]) == doc["n_iter"]

    def test_infer_seeded_rerun_identical(self, workdir, traj):
        out2 = workdir / "inf2"
        assert run(["infer", "--checkpoint", workdir / "ckpt.txt",
                    "--data", traj, "--config", workdir / "irc_smoke.cfg",
                    "--seed", "2", "--out", out2]) == 0
        a = trajio.parse_fit_report((workdir / "inf" / "fit.json").read_text())
        b = trajio.parse_fit_report((out2 / "fit.json").read_text())
        assert a["theta_hat"] == b["theta_hat"]
        assert a["trace_loglik"] == b["trace_loglik"]

    def test_grid_shape_and_determinism(self, workdir, traj):
        out = workdir / "grid"
        args = ["grid", "--checkpoint", workdir / "ckpt.txt", "--data", traj,
                "--components", "gain_v,goal_radius", "--center",
                workdir / "theta.txt", "--nx", "3", "--ny", "4",
                "--config", workdir / "irc_smoke.cfg", "--seed", "4"]
        assert run(args + ["--out", out]) == 0
        rows = (out / "grid.tsv").read_text().splitlines()
        assert rows[0] == "gain_v\tgoal_radius\tlog_likelihood"
        assert len(rows) == 1 + 3 * 4
        out2 = workdir / "grid2"
        assert run(args + ["--out", out2]) == 0
        assert ((out / "grid.tsv").read_bytes() == (out2 / "grid.tsv").read_bytes())

    def test_grid_unknown_component(self, workdir, traj, capsys):
        code = run(["grid", "--checkpoint", workdir / "ckpt.txt", "--data", traj,
                    "--components", "gain_v,bogus", "--center", workdir / "theta.txt",
                    "--out", workdir / "g3"])
        assert code == 1
        assert "gain_w" in capsys.readouterr().err  # lists the valid names

    def test_grid_single_cell(self, workdir, traj):
        out = workdir / "grid1x1"
        assert run(["grid", "--checkpoint", workdir / "ckpt.txt", "--data", traj,
                    "--components", "gain_v,gain_w", "--center", workdir / "theta.txt",
                    "--nx", "1", "--ny", "1",
                    "--config", workdir / "irc_smoke.cfg", "--out", out]) == 0
        assert len((out / "grid.tsv").read_text().splitlines()) == 2

    def test_sweep_schema_and_determinism(self, workdir):
        out = workdir / "sweep"
        args = ["sweep", "--checkpoint", workdir / "ckpt.txt",
                "--params", workdir / "theta.txt", "--counts", "2,3",
                "--seeds", "0,1", "--config", workdir / "irc_smoke.cfg"]
        assert run(args + ["--out", out]) == 0
        rows = (out / "sweep.tsv").read_text().splitlines()
        assert rows[0] == "count\tseed\tcomponent\ttrue\testimated\tabs_error"
        assert len(rows) == 1 + 2 * 2 * 7
        out2 = workdir / "sweep2"
        assert run(args + ["--out", out2]) == 0
        assert ((out / "sweep.tsv").read_bytes() == (out2 / "sweep.tsv").read_bytes())

    def test_sweep_counts_must_ascend(self, workdir):
        assert run(["sweep", "--checkpoint", workdir / "ckpt.txt",
                    "--params", workdir / "theta.txt", "--counts", "5,2",
                    "--seeds", "0", "--out", workdir / "s3"]) == 1


class TestEval:
    def test_fixed_params_report(self, workdir, capsys):
        assert run(["eval", "--checkpoint", workdir / "ckpt.txt",
                    "--params", workdir / "theta.txt", "--episodes", "10",
                    "--seed", "6"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert 0.0 <= doc["success_rate"] <= 1.0
        assert "mean_steps" in doc

    def test_prior_mode(self, workdir, capsys):
        assert run(["eval", "--checkpoint", workdir / "ckpt.txt",
                    "--params", "prior", "--episodes", "2", "--draws", "3",
                    "--seed", "6"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["mode"] == "prior" and doc["draws"] == 3

    def test_matches_library_call(self, workdir, capsys):
        assert run(["eval", "--checkpoint", workdir / "ckpt.txt",
                    "--params", workdir / "theta.txt", "--episodes", "10",
                    "--seed", "9"]) == 0
        doc = json.loads(capsys.readouterr().out)
        ac = agent.load_actor_critic((workdir / "ckpt.txt").read_text())
        theta = trajio.parse_params((workdir / "theta.txt").read_text())
        sr, st = agent.evaluate(ac, theta, 10, np.random.default_rng(9))
        assert doc["success_rate"] == sr and doc["mean_steps"] == st


class TestEntryPoint:
    def test_console_script_exists(self):
        exe = shutil.which("ircontrol")
        if exe is None:
            pytest.skip("console script not on PATH")
        proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "train" in proc.stdout and "infer" in proc.stdout

    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "ircontrol.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
