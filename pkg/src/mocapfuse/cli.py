"""Command-line pipelines: simulate -> estimate -> optimize -> evaluate.

Every stage reads and writes plain JSON/CSV under the output directory::

    seq000/dataset.json      synthesized streams + ground truth
    seq000/estimates.json    per-person pose and translation estimates
    seq000/optimized.json    refined translations and initial positions
    seq000/report.json       optimization report
    metrics.csv              one row per sequence
    summary.json             mean of every metric
    curves.csv               cumulative translation-error series
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io, metrics
from .body import PoseSequence, load_skeleton
from .errors import ConfigError, DimensionError, DivergenceError, LineSearchError, ParameterError
from .optimize import LbfgsConfig, OptimizerConfig, TrajectoryProblem, default_schedule, group_optimize
from .simulate import MotionScript, NoiseModel, apply_drift, default_scene, simulate_dataset, training_sample
from .ssm import EstimatorConfig, EstimatorWeights, pose_estimator_forward, train_toy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("mocapfuse")

ABLATIONS = (
    ("full", True, True),
    ("w/o init. opt.", False, True),
    ("w/o traj. opt.", True, False),
)
ABLATION_COLUMNS = ("method", "sip_deg", "angle_deg", "trans_at_3m_cm", "trans_at_6m_cm", "rmse_cm", "mae_cm")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SceneSection:
    persons: int = 2
    duration: float = 20.0
    fps: float = 60.0
    sequences: int = 1
    scripts: list = field(default_factory=list)


@dataclass
class EstimatorSection:
    mode: str = ""
    checkpoint: str = ""
    drift_rate: float = 0.05


@dataclass
class OptimizerSection:
    lambda1: float = 1.0
    lambda2: float = 0.1
    history_size: int = 10
    max_iterations: int = 4
    max_passes: int = 10
    init_opt: bool = True
    traj_opt: bool = True


@dataclass
class EvaluateSection:
    window_mode: str = "mean"


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "out"
    skeleton: str = ""
    jobs: int = 1
    scene: SceneSection = field(default_factory=SceneSection)
    noise: NoiseModel = field(default_factory=NoiseModel)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def validate(self):
        est = self.estimator
        if not est.mode:
            est.mode = "checkpoint" if est.checkpoint else "drift"
        if est.mode not in ("drift", "checkpoint"):
            raise ConfigError(f"[estimator] mode: expected 'drift' or 'checkpoint', got {est.mode!r}")
        if est.mode == "drift" and est.checkpoint:
            raise ConfigError("[estimator] checkpoint and drift emulation are mutually exclusive")
        if est.mode == "checkpoint":
            if not est.checkpoint:
                raise ConfigError("[estimator] mode 'checkpoint' needs a checkpoint path (or use drift emulation)")
            if not Path(est.checkpoint).is_file():
                raise ConfigError(f"[estimator] checkpoint: file not found: {est.checkpoint}")
        if est.drift_rate < 0:
            raise ConfigError("[estimator] drift_rate must be non-negative")
        if self.scene.persons < 2:
            raise ConfigError("[scene] persons must be at least 2")
        if self.scene.sequences < 1:
            raise ConfigError("[scene] sequences must be at least 1")
        if self.scene.duration * self.scene.fps < 2:
            raise ConfigError("[scene] duration * fps must give at least 3 frames")
        if self.scene.scripts and len(self.scene.scripts) != self.scene.persons:
            raise ConfigError("[scene] scripts must list one entry per person")
        opt = self.optimizer
        if opt.lambda1 < 0 or opt.lambda2 < 0:
            raise ConfigError("[optimizer] lambda1 and lambda2 must be non-negative")
        if opt.history_size < 1 or opt.max_iterations < 1 or opt.max_passes < 1:
            raise ConfigError("[optimizer] history_size, max_iterations and max_passes must be positive")
        if self.evaluate.window_mode not in ("mean", "instant"):
            raise ConfigError("[evaluate] window_mode: expected 'mean' or 'instant'")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        if self.skeleton and not Path(self.skeleton).is_file():
            raise ConfigError(f"skeleton: file not found: {self.skeleton}")
        return self

    def optimizer_config(self):
        o = self.optimizer
        return OptimizerConfig(LbfgsConfig(history_size=o.history_size, max_iterations=o.max_iterations), o.max_passes)

    def to_dict(self):
        return asdict(self)


def _check_value(where, name, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}{name}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _fill(cls, table, where):
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kw = {}
    for name, value in table.items():
        if name not in known:
            raise ConfigError(f"{where}unknown field {name!r}")
        kw[name] = _check_value(where, name, value, getattr(defaults, name))
    try:
        return cls(**kw)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}{exc}") from exc


SECTIONS = {
    "scene": SceneSection,
    "noise": NoiseModel,
    "estimator": EstimatorSection,
    "optimizer": OptimizerSection,
    "evaluate": EvaluateSection,
}


def config_from_dict(doc, source="config"):
    top = {}
    sections = {}
    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{source}: [{key}] must be a table")
            sections[key] = _fill(SECTIONS[key], value, f"{source}: [{key}] ")
        else:
            top[key] = value
    cfg = _fill(PipelineConfig, top, f"{source}: ")
    for key, value in sections.items():
        setattr(cfg, key, value)
    for k, s in enumerate(cfg.scene.scripts):
        if not isinstance(s, dict):
            raise ConfigError(f"{source}: [scene] scripts[{k}] must be a table")
        _fill(MotionScript, s, f"{source}: [scene] scripts[{k}] ")
    return cfg


def load_config(path=None):
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, str(path))


def apply_overrides(cfg, args):
    """Command-line flags take precedence over the config file."""
    cfg = replace(
        cfg,
        scene=replace(cfg.scene),
        noise=replace(cfg.noise),
        estimator=replace(cfg.estimator),
        optimizer=replace(cfg.optimizer),
        evaluate=replace(cfg.evaluate),
    )
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "no_init_opt", False):
        cfg.optimizer.init_opt = False
    if getattr(args, "no_traj_opt", False):
        cfg.optimizer.traj_opt = False
    if getattr(args, "lambda1", None) is not None:
        cfg.optimizer.lambda1 = args.lambda1
    if getattr(args, "lambda2", None) is not None:
        cfg.optimizer.lambda2 = args.lambda2
    if getattr(args, "checkpoint", None) is not None:
        cfg.estimator.checkpoint = args.checkpoint
        cfg.estimator.mode = "checkpoint"
    if getattr(args, "drift_rate", None) is not None:
        if cfg.estimator.mode == "checkpoint" or cfg.estimator.checkpoint:
            raise ConfigError("--drift-rate selects drift emulation, but a checkpoint is also configured")
        cfg.estimator.drift_rate = args.drift_rate
        cfg.estimator.mode = "drift"
    return cfg.validate()


def sub_seed(seed, sequence, stream, *extra):
    """Independent integer seed for one (sequence, stream) pair."""
    return int(np.random.SeedSequence([seed, sequence, stream, *extra]).generate_state(1)[0])


def _skeleton(cfg):
    return load_skeleton(cfg.skeleton or None)


def _seq_dir(cfg, k):
    return Path(cfg.out) / f"seq{k:03d}"


# ---------------------------------------------------------------------------
# stages


def cmd_simulate(cfg, sequence=0):
    """Synthesize one sequence and write ``dataset.json``; returns the path."""
    skeleton = _skeleton(cfg)
    sc = cfg.scene
    if sc.scripts:
        scripts = [MotionScript(**{"duration": sc.duration, "fps": sc.fps, **s}) for s in sc.scripts]
    else:
        scripts = default_scene(sc.persons, sc.duration, sc.fps, seed=sub_seed(cfg.seed, sequence, 0))
    noise = replace(cfg.noise, seed=sub_seed(cfg.seed, sequence, 1, cfg.noise.seed))
    ds = simulate_dataset(scripts, skeleton, noise)
    path = _seq_dir(cfg, sequence) / "dataset.json"
    io.write_dataset(ds, path)
    return path


def estimate_dataset(cfg, ds, sequence=0):
    """Per-person pose estimates for a dataset, as PoseSequence objects."""
    est = cfg.estimator
    poses = []
    if est.mode == "drift":
        for i in range(ds.n_persons):
            p = ds.pose(i)
            trans = apply_drift(p.trans, est.drift_rate, ds.fps, seed=sub_seed(cfg.seed, sequence, 100 + i))
            poses.append(replace(p, trans=trans, meta={}))
        return poses
    weights = EstimatorWeights.load(est.checkpoint)
    if weights.config.sensors != ds.persons[0]["A"].shape[1]:
        raise ConfigError(f"checkpoint expects {weights.config.sensors} sensors")
    for p in ds.persons:
        theta, trans, _, _ = pose_estimator_forward(weights, p["A"], p["R"], p["D"])
        poses.append(PoseSequence(theta, trans, ds.fps))
    return poses


def cmd_estimate(cfg, dataset_path, sequence=0):
    ds = io.read_dataset(dataset_path)
    poses = estimate_dataset(cfg, ds, sequence)
    for p in poses:
        if len(p) != ds.frames:
            raise DimensionError("estimate length differs from the input streams")
    path = Path(dataset_path).parent / "estimates.json"
    io.write_estimates(poses, path, cfg.estimator.mode)
    return path


def optimize_estimates(cfg, ds, poses, init_opt=None, traj_opt=None):
    """Run the group optimizer on estimates; returns ``(trans, positions, report)``."""
    skeleton = _skeleton(cfg)
    o = cfg.optimizer
    init_opt = o.init_opt if init_opt is None else init_opt
    traj_opt = o.traj_opt if traj_opt is None else traj_opt
    observations = {k: (ds.between[k], ds.between_valid[k]) for k in ds.between}
    problem = TrajectoryProblem.from_poses(
        skeleton,
        [p.theta for p in poses],
        [p.trans for p in poses],
        observations,
        [np.zeros(3)] * len(poses),
        o.lambda1,
        o.lambda2,
    )
    return group_optimize(
        problem, default_schedule(len(poses)), cfg.optimizer_config(), init_opt=init_opt, traj_opt=traj_opt
    )


def cmd_optimize(cfg, estimates_path, dataset_path):
    ds = io.read_dataset(dataset_path)
    poses, _ = io.read_estimates(estimates_path)
    trans, positions, report = optimize_estimates(cfg, ds, poses)
    if report.flags.get("failed"):
        raise DivergenceError("trajectory optimization failed: " + "; ".join(report.flags["messages"]))
    out = Path(estimates_path).parent
    io.write_optimized(trans, positions, out / "optimized.json", report.flags)
    io.write_report(report, out / "report.json")
    return out / "optimized.json"


def world_roots(trans, positions, anchor=0):
    return [np.asarray(t) + np.asarray(p) for t, p in zip(trans, positions)]


def ground_truth_roots(ds, anchor=0):
    """Ground-truth roots in the anchor-centered frame the optimizer reconstructs."""
    origin = ds.persons[anchor]["initial_position"]
    return [p["trans"] + (p["initial_position"] - origin) for p in ds.persons]


def evaluate_sequence(ds, poses, trans, positions, skeleton, name, mode="mean"):
    """MetricReport for persons 0 and 1 plus their translation-error curves."""
    pred = world_roots(trans, positions)
    gt = ground_truth_roots(ds)
    report = metrics.evaluate_pair(
        [poses[0].theta, poses[1].theta],
        [ds.persons[0]["theta"], ds.persons[1]["theta"]],
        pred[:2],
        gt[:2],
        ds.fps,
        skeleton,
        name,
        mode,
    )
    curves = [
        (name, i, span, err)
        for i in range(2)
        for span, err in metrics.translation_error_curve(pred[i], gt[i])
    ]
    return report, curves


def cmd_evaluate(cfg, dataset_paths, estimates_paths, predictions_paths=None):
    """Write metrics.csv, summary.json and curves.csv; returns the reports."""
    skeleton = _skeleton(cfg)
    reports, curves = [], []
    predictions_paths = predictions_paths or [None] * len(dataset_paths)
    for dpath, epath, ppath in zip(dataset_paths, estimates_paths, predictions_paths):
        ds = io.read_dataset(dpath)
        poses, _ = io.read_estimates(epath)
        if ppath is None:
            trans, positions = [p.trans for p in poses], [np.zeros(3)] * len(poses)
        else:
            trans, positions, _ = io.read_optimized(ppath)
        r, c = evaluate_sequence(
            ds, poses, trans, positions, skeleton, Path(dpath).parent.name, cfg.evaluate.window_mode
        )
        reports.append(r)
        curves.extend(c)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(reports, out / "metrics.csv")
    metrics.write_summary(reports, out / "summary.json")
    io.write_series(out / "curves.csv", ["sequence", "person", "span_m", "error_cm"], curves)
    return reports


def _pipeline_sequence(cfg, k):
    dpath = cmd_simulate(cfg, k)
    epath = cmd_estimate(cfg, dpath, k)
    ppath = cmd_optimize(cfg, epath, dpath)
    return dpath, epath, ppath


def _map_sequences(cfg, fn):
    if cfg.jobs == 1 or cfg.scene.sequences == 1:
        return [fn(cfg, k) for k in range(cfg.scene.sequences)]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, [cfg] * cfg.scene.sequences, range(cfg.scene.sequences)))


def cmd_pipeline(cfg):
    """simulate -> estimate -> optimize -> evaluate for every sequence."""
    paths = _map_sequences(cfg, _pipeline_sequence)
    d, e, p = zip(*paths)
    return cmd_evaluate(cfg, list(d), list(e), list(p))


def _ablate_sequence(cfg, k):
    dpath = cmd_simulate(cfg, k)
    epath = cmd_estimate(cfg, dpath, k)
    ds = io.read_dataset(dpath)
    poses, _ = io.read_estimates(epath)
    skeleton = _skeleton(cfg)
    rows = {}
    for method, init_opt, traj_opt in ABLATIONS:
        trans, positions, report = optimize_estimates(cfg, ds, poses, init_opt, traj_opt)
        rows[method] = evaluate_sequence(ds, poses, trans, positions, skeleton, dpath.parent.name)[0]
    return rows


def cmd_ablate(cfg):
    """Table of mean metrics for the full optimizer and each stage removed."""
    per_seq = _map_sequences(cfg, _ablate_sequence)
    table = []
    for method, _, _ in ABLATIONS:
        agg = metrics.aggregate([rows[method] for rows in per_seq])
        table.append([method] + [agg[c] for c in ABLATION_COLUMNS[1:]])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_series(out / "ablation.csv", list(ABLATION_COLUMNS), table)
    return table


def cmd_train(cfg, epochs, out_path, sequences=4):
    """Toy-train an estimator on simulated single-person sequences and save a checkpoint."""
    skeleton = _skeleton(cfg)
    samples = []
    for k in range(sequences):
        for script in default_scene(1, cfg.scene.duration, cfg.scene.fps, seed=sub_seed(cfg.seed, k, 2)):
            ds = simulate_dataset([script], skeleton, replace(cfg.noise, seed=sub_seed(cfg.seed, k, 3)))
            samples.append(training_sample(ds.pose(0), skeleton, cfg.noise, seed=sub_seed(cfg.seed, k, 4)))
    ecfg = EstimatorConfig(seed=cfg.seed, epochs=epochs, fps=cfg.scene.fps, joints=skeleton.joint_count)
    result = train_toy(ecfg, samples, log_every=max(1, epochs // 10))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    result.weights.save(out_path)
    return result


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="mocapfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes for independent sequences")
        return p

    def estimator_flags(p):
        p.add_argument("--drift-rate", type=float, help="drift emulation rate (m/s)")
        p.add_argument("--checkpoint", help="estimator checkpoint (JSON)")

    def optimizer_flags(p):
        p.add_argument("--no-init-opt", action="store_true", help="skip initial-position optimization")
        p.add_argument("--no-traj-opt", action="store_true", help="skip trajectory optimization")
        p.add_argument("--lambda1", type=float, help="velocity regularizer weight")
        p.add_argument("--lambda2", type=float, help="acceleration regularizer weight")

    common(sub.add_parser("simulate", help="synthesize sensor streams"))
    p = common(sub.add_parser("estimate", help="per-person pose estimates"))
    p.add_argument("--dataset", required=True, nargs="+")
    estimator_flags(p)
    p = common(sub.add_parser("optimize", help="initial-position and trajectory optimization"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimates", required=True)
    optimizer_flags(p)
    p = common(sub.add_parser("evaluate", help="metrics against ground truth"))
    p.add_argument("--dataset", required=True, nargs="+")
    p.add_argument("--estimates", required=True, nargs="+")
    p.add_argument("--predictions", nargs="+", help="optimized translations (default: raw estimates)")
    p = common(sub.add_parser("pipeline", help="all stages end to end"))
    estimator_flags(p)
    optimizer_flags(p)
    p = common(sub.add_parser("ablate", help="full vs. single-stage ablation table"))
    estimator_flags(p)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p = common(sub.add_parser("train", help="toy-train an estimator checkpoint"))
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--checkpoint-out", default=None, help="default: <out>/checkpoint.json")
    return parser


def run(args):
    cfg = apply_overrides(load_config(args.config), args)
    cmd = args.command
    if cmd == "simulate":
        for k in range(cfg.scene.sequences):
            print(cmd_simulate(cfg, k))
    elif cmd == "estimate":
        for k, d in enumerate(args.dataset):
            print(cmd_estimate(cfg, d, k))
    elif cmd == "optimize":
        print(cmd_optimize(cfg, args.estimates, args.dataset))
    elif cmd == "evaluate":
        if len(args.dataset) != len(args.estimates):
            raise ConfigError("--dataset and --estimates must list the same number of files")
        if args.predictions and len(args.predictions) != len(args.dataset):
            raise ConfigError("--predictions must list one file per dataset")
        _print_summary(cmd_evaluate(cfg, args.dataset, args.estimates, args.predictions))
    elif cmd == "pipeline":
        _print_summary(cmd_pipeline(cfg))
    elif cmd == "ablate":
        for row in cmd_ablate(cfg):
            print("  ".join([f"{row[0]:<16}"] + [f"{v:9.3f}" for v in row[1:]]))
    elif cmd == "train":
        path = args.checkpoint_out or str(Path(cfg.out) / "checkpoint.json")
        res = cmd_train(cfg, args.epochs, path, args.sequences)
        print(f"{path}: final epoch loss {res.epoch_loss[-1]:.6f}")
    return 0


def _print_summary(reports):
    agg = metrics.aggregate(reports)
    for k, v in agg.items():
        print(f"{k:<18} {v:10.4f}" if not math.isnan(v) else f"{k:<18}        nan")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except (ConfigError, DimensionError, ParameterError, DivergenceError, LineSearchError, OSError) as exc:
        print(f"mocapfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
