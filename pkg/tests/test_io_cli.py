import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from mocapfuse import cli, io, metrics
from mocapfuse.body import PoseSequence, load_skeleton
from mocapfuse.errors import ConfigError
from mocapfuse.optimize import data_term


def short_config(tmp_path, **opt):
    cfg = cli.PipelineConfig(seed=11, out=str(tmp_path))
    cfg.scene = replace(cfg.scene, duration=5.0)
    cfg.optimizer = replace(cfg.optimizer, **opt)
    return cfg.validate()


@pytest.fixture()
def simulated(tmp_path):
    cfg = short_config(tmp_path)
    return cfg, cli.cmd_simulate(cfg)


class TestFormats:
    def test_dataset_round_trip(self, simulated, tmp_path):
        _, path = simulated
        ds = io.read_dataset(path)
        io.write_dataset(ds, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
        again = io.read_dataset(tmp_path / "again.json")
        for a, b in zip(ds.persons, again.persons):
            for k in a:
                np.testing.assert_array_equal(a[k], b[k])
        np.testing.assert_array_equal(ds.between[(0, 1)], again.between[(0, 1)])
        assert again.scripts == ds.scripts and again.noise == ds.noise

    def test_pose_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pose = PoseSequence(rng.normal(size=(4, 72)), rng.normal(size=(4, 3)), 30.0)
        io.write_pose_csv(pose, tmp_path / "p.csv")
        again = io.read_pose_csv(tmp_path / "p.csv")
        np.testing.assert_array_equal(again.theta, pose.theta)
        np.testing.assert_array_equal(again.trans, pose.trans)
        assert again.fps == 30.0

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ConfigError, match="format"):
            io.read_dataset(tmp_path / "x.json")

    def test_bad_json_reports_line(self, tmp_path):
        (tmp_path / "x.json").write_text('{\n"format":\n}')
        with pytest.raises(ConfigError, match="line 3"):
            io.read_estimates(tmp_path / "x.json")


class TestSimulate:
    def test_idempotent(self, simulated, tmp_path):
        cfg, path = simulated
        first = path.read_bytes()
        cli.cmd_simulate(cfg)
        assert path.read_bytes() == first

    def test_two_persons_six_sensors(self, simulated):
        ds = io.read_dataset(simulated[1])
        assert ds.n_persons == 2
        assert all(p["A"].shape[1:] == (6, 3) and p["D"].shape[1:] == (6, 6) for p in ds.persons)


class TestEstimate:
    def test_zero_drift_is_ground_truth(self, simulated):
        cfg, path = simulated
        cfg.estimator.drift_rate = 0.0
        poses, mode = io.read_estimates(cli.cmd_estimate(cfg, path))
        ds = io.read_dataset(path)
        assert mode == "drift"
        for p, g in zip(poses, ds.persons):
            assert len(p) == ds.frames
            np.testing.assert_array_equal(p.theta, g["theta"])
            np.testing.assert_array_equal(p.trans, g["trans"])

    def test_missing_checkpoint(self, tmp_path):
        cfg = cli.PipelineConfig(out=str(tmp_path))
        cfg.estimator.mode = "checkpoint"
        with pytest.raises(ConfigError, match="checkpoint"):
            cfg.validate()

    def test_checkpoint_file_missing(self, tmp_path):
        cfg = cli.PipelineConfig(out=str(tmp_path))
        cfg.estimator.checkpoint = str(tmp_path / "nope.json")
        with pytest.raises(ConfigError, match="not found"):
            cfg.validate()


class TestOptimize:
    def run(self, cfg, path):
        epath = cli.cmd_estimate(cfg, path)
        out = cli.cmd_optimize(cfg, epath, path)
        return epath, out

    def test_both_disabled_pass_through(self, simulated):
        cfg, path = simulated
        cfg.optimizer.init_opt = cfg.optimizer.traj_opt = False
        epath, out = self.run(cfg, path)
        poses, _ = io.read_estimates(epath)
        trans, _, flags = io.read_optimized(out)
        assert flags["init_opt"] is False
        for t, p in zip(trans, poses):
            np.testing.assert_array_equal(t, p.trans)

    def test_full_not_worse_than_init_only(self, simulated):
        cfg, path = simulated
        ds = io.read_dataset(path)
        poses, _ = io.read_estimates(cli.cmd_estimate(cfg, path))
        values = {}
        for traj in (False, True):
            trans, pos, _ = cli.optimize_estimates(cfg, ds, poses, init_opt=True, traj_opt=traj)
            pb = _problem(ds, poses, pos)
            values[traj] = data_term(pb, trans)[0]
        assert values[True] <= values[False]

    def test_report_trace_monotone(self, simulated):
        cfg, path = simulated
        _, out = self.run(cfg, path)
        report = json.loads((out.parent / "report.json").read_text())
        assert report["objective_trace"]
        for passes in report["objective_trace"]:
            for tr in passes:
                assert all(b <= a for a, b in zip(tr, tr[1:]))
        assert len(report["t12_0"]) == 3


def _problem(ds, poses, positions):
    from mocapfuse.optimize import TrajectoryProblem

    return TrajectoryProblem.from_poses(
        load_skeleton(), [p.theta for p in poses], [p.trans for p in poses],
        {k: (ds.between[k], ds.between_valid[k]) for k in ds.between}, positions,
    )


class TestEvaluate:
    def test_perfect_predictions(self, simulated, tmp_path):
        cfg, path = simulated
        cfg.estimator.drift_rate = 0.0
        epath = cli.cmd_estimate(cfg, path)
        ds = io.read_dataset(path)
        origin = ds.persons[0]["initial_position"]
        io.write_optimized(
            [p["trans"] for p in ds.persons],
            [p["initial_position"] - origin for p in ds.persons],
            tmp_path / "perfect.json",
        )
        reports = cli.cmd_evaluate(cfg, [path], [epath], [tmp_path / "perfect.json"])
        assert all(v == 0.0 or np.isnan(v) for v in reports[0].values())
        with open(tmp_path / "metrics.csv") as fh:
            assert next(csv.reader(fh)) == metrics.MetricReport.columns()
        assert (tmp_path / "curves.csv").read_text().startswith("sequence,person,span_m,error_cm")

    def test_summary_is_mean(self, tmp_path):
        cfg = short_config(tmp_path)
        cfg.scene.sequences = 2
        reports = cli.cmd_pipeline(cfg)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["sequences"] == 2
        assert summary["mean"]["rmse_cm"] == pytest.approx((reports[0].rmse_cm + reports[1].rmse_cm) / 2, rel=1e-14)


class TestPipeline:
    def test_deterministic(self, tmp_path):
        a = short_config(tmp_path / "a")
        b = short_config(tmp_path / "b")
        cli.cmd_pipeline(a)
        cli.cmd_pipeline(b)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_worker_pool_matches_sequential(self, tmp_path):
        a = short_config(tmp_path / "a")
        b = short_config(tmp_path / "b")
        a.scene.sequences = b.scene.sequences = 2
        b.jobs = 2
        cli.cmd_pipeline(a)
        cli.cmd_pipeline(b)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_ablation_table(self, tmp_path):
        cfg = short_config(tmp_path)
        table = cli.cmd_ablate(cfg)
        with open(tmp_path / "ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(cli.ABLATION_COLUMNS)
        assert [r[0] for r in rows[1:]] == ["full", "w/o init. opt.", "w/o traj. opt."]
        assert len(table) == 3


class TestConfig:
    def write(self, tmp_path, text):
        p = tmp_path / "c.toml"
        p.write_text(text)
        return p

    def test_full_file(self, tmp_path):
        p = self.write(
            tmp_path,
            'seed = 4\nout = "x"\n[scene]\npersons = 3\nduration = 10\n[noise]\nbetween_person_sigma = 0.1\n'
            '[estimator]\ndrift_rate = 0.02\n[optimizer]\nlambda1 = 2.0\ninit_opt = false\n'
            '[evaluate]\nwindow_mode = "instant"\n',
        )
        cfg = cli.load_config(p).validate()
        assert cfg.seed == 4 and cfg.scene.persons == 3 and cfg.scene.duration == 10.0
        assert cfg.noise.between_person_sigma == 0.1 and cfg.optimizer.lambda1 == 2.0
        assert cfg.optimizer.init_opt is False and cfg.evaluate.window_mode == "instant"

    def test_scripts(self, tmp_path):
        p = self.write(tmp_path, '[scene]\nduration = 2.0\n[[scene.scripts]]\npath = "circle"\n[[scene.scripts]]\nspeed = 0.5\nstart = [1.0, 1.0, 0.93]\n')
        cfg = cli.load_config(p)
        cfg.out = str(tmp_path)
        ds = io.read_dataset(cli.cmd_simulate(cfg.validate()))
        assert ds.scripts[0].path == "circle" and ds.scripts[1].start == (1.0, 1.0, 0.93)

    @pytest.mark.parametrize(
        "text, message",
        [
            ("[optimizer]\nlamda1 = 1.0\n", "unknown field 'lamda1'"),
            ("[optimizer]\nlambda1 = \"big\"\n", "lambda1: expected float"),
            ("[optimizer]\ninit_opt = 1\n", "init_opt: expected bool"),
            ("sed = 3\n", "unknown field 'sed'"),
            ("[noise]\ndropout_prob = 2.0\n", "dropout_prob"),
            ("[scene]\nscripts = [{path = \"spiral\"}]\n", "scripts\\[0\\]"),
            ("[optimizer\n", "line 1"),
            ("[estimator]\nmode = \"drift\"\ncheckpoint = \"w.json\"\n", "mutually exclusive"),
        ],
    )
    def test_errors(self, tmp_path, text, message):
        with pytest.raises(ConfigError, match=message):
            cli.load_config(self.write(tmp_path, text)).validate()

    def test_overrides(self, tmp_path):
        args = cli.build_parser().parse_args(
            ["pipeline", "--seed", "5", "--out", str(tmp_path), "--no-init-opt", "--lambda1", "3", "--drift-rate", "0.1"]
        )
        cfg = cli.apply_overrides(cli.PipelineConfig(), args)
        assert cfg.seed == 5 and not cfg.optimizer.init_opt and cfg.optimizer.traj_opt
        assert cfg.optimizer.lambda1 == 3.0 and cfg.estimator.drift_rate == 0.1

    def test_drift_and_checkpoint_conflict(self, tmp_path):
        ck = tmp_path / "w.json"
        ck.write_text("{}")
        args = cli.build_parser().parse_args(["pipeline", "--checkpoint", str(ck), "--drift-rate", "0.1"])
        with pytest.raises(ConfigError):
            cli.apply_overrides(cli.PipelineConfig(), args)


class TestMain:
    def test_exit_code_on_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text("[optimizer]\nlamda1 = 1\n")
        assert cli.main(["pipeline", "--config", str(p), "--out", str(tmp_path)]) != 0
        assert "lamda1" in capsys.readouterr().err

    def test_pipeline_main(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text("[scene]\nduration = 3.0\n")
        assert cli.main(["pipeline", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        assert "rmse_cm" in capsys.readouterr().out

    def test_stage_commands(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text("[scene]\nduration = 3.0\n")
        out = str(tmp_path / "o")
        assert cli.main(["simulate", "--config", str(p), "--out", out]) == 0
        d = f"{out}/seq000/dataset.json"
        assert cli.main(["estimate", "--config", str(p), "--out", out, "--dataset", d]) == 0
        e = f"{out}/seq000/estimates.json"
        assert cli.main(["optimize", "--config", str(p), "--out", out, "--dataset", d, "--estimates", e]) == 0
        o = f"{out}/seq000/optimized.json"
        assert cli.main(["evaluate", "--out", out, "--dataset", d, "--estimates", e, "--predictions", o]) == 0

    def test_train_and_checkpoint_mode(self, tmp_path):
        ck = tmp_path / "w.json"
        assert cli.main(["train", "--out", str(tmp_path), "--epochs", "1", "--sequences", "1", "--checkpoint-out", str(ck)]) == 0
        p = tmp_path / "c.toml"
        p.write_text("[scene]\nduration = 2.0\n")
        assert cli.main(["pipeline", "--config", str(p), "--checkpoint", str(ck), "--out", str(tmp_path / "o")]) == 0
        _, mode = io.read_estimates(tmp_path / "o" / "seq000" / "estimates.json")
        assert mode == "checkpoint"
