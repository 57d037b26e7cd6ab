"""Synthetic multi-person motion with virtual IMU and UWB observations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .body import (
    PoseSequence,
    axis_angle_to_matrix,
    global_transforms,
    matrix_to_axis_angle,
    pairwise_between_distances,
    pairwise_same_distances,
    sensor_offsets,
    sensor_world_positions,
)
from .errors import DimensionError, ParameterError

PATHS = ("line", "circle", "figure8")
PELVIS_HEIGHT = 0.93
FOOT_JOINTS = ("left_foot", "right_foot")


@dataclass
class MotionScript:
    """Parametric walk for one person.

    ``heading`` is the initial walking direction in radians, measured
    counter-clockwise from +x in the ground plane. For ``circle`` and
    ``figure8`` the angular rate is speed / radius.
    """

    path: str = "line"
    speed: float = 1.0
    start: tuple = (0.0, 0.0, PELVIS_HEIGHT)
    heading: float = 0.0
    radius: float = 2.0
    turn: int = 1
    step_freq: float = 0.9
    arm_swing: float = 0.35
    leg_swing: float = 0.4
    idle_amplitude: float = 0.05
    bob: float = 0.02
    duration: float = 20.0
    fps: float = 60.0

    def __post_init__(self):
        self.start = tuple(float(v) for v in self.start)
        if self.path not in PATHS:
            raise ParameterError(f"unknown path {self.path!r}; choose from {PATHS}")
        if self.speed < 0:
            raise ParameterError("speed must be non-negative")
        if self.fps <= 0 or self.duration * self.fps < 2:
            raise ParameterError("a script needs at least two frames")
        if self.radius <= 0:
            raise ParameterError("radius must be positive")

    @property
    def frames(self):
        return int(round(self.duration * self.fps)) + 1

    def to_dict(self):
        return asdict(self)


@dataclass
class NoiseModel:
    same_person_sigma: float = 0.05
    between_person_sigma: float = 0.15
    nlos_bias: float = 0.0
    nlos_pair_prob: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.same_person_sigma < 0 or self.between_person_sigma < 0:
            raise ParameterError("noise sigmas must be non-negative")
        if self.nlos_bias < 0:
            raise ParameterError("NLOS bias must be non-negative")
        if not 0 <= self.dropout_prob <= 1:
            raise ParameterError("dropout_prob must lie in [0, 1]")
        if not 0 <= self.nlos_pair_prob <= 1:
            raise ParameterError("nlos_pair_prob must lie in [0, 1]")

    @classmethod
    def noiseless(cls, seed=0):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)

    def to_dict(self):
        return asdict(self)


def _root_path(script, t):
    """Ground-plane root position (L, 2) and velocity (L, 2), starting at the origin."""
    ch, sh = math.cos(script.heading), math.sin(script.heading)
    fwd = np.array([ch, sh])
    left = np.array([-sh, ch]) * script.turn
    v = script.speed
    if script.path == "line" or v == 0:
        s = v * t
        pos = s[:, None] * fwd
        vel = np.broadcast_to(v * fwd, pos.shape).copy()
        return pos, vel
    r = script.radius
    w = v / r
    if script.path == "circle":
        a, da = r * np.sin(w * t), r * w * np.cos(w * t)
        b, db = r * (1 - np.cos(w * t)), r * w * np.sin(w * t)
    else:
        a, da = r * np.sin(w * t), r * w * np.cos(w * t)
        b, db = 0.5 * r * np.sin(2 * w * t), r * w * np.cos(2 * w * t)
    pos = a[:, None] * fwd + b[:, None] * left
    vel = da[:, None] * fwd + db[:, None] * left
    return pos, vel


def _rot_x(angle):
    return axis_angle_to_matrix(np.stack([angle, 0 * angle, 0 * angle], axis=-1))


def generate_motion(script, skeleton):
    """Ground-truth pose sequence for one script.

    The root follows the scripted path, yaws to face its velocity and bobs
    vertically; hips, knees, shoulders and elbows swing periodically with
    the step phase. ``meta['initial_position']`` holds the start position.
    """
    L = script.frames
    t = np.arange(L) / script.fps
    xy, vxy = _root_path(script, t)
    J = skeleton.joint_count
    theta = np.zeros((L, J, 3))

    speed = np.linalg.norm(vxy, axis=1)
    fwd0 = np.array([math.cos(script.heading), math.sin(script.heading)])
    dirs = np.where(speed[:, None] > 1e-9, vxy, fwd0)
    # body faces +y at rest; yaw so that it faces the direction of travel
    yaw = np.unwrap(np.arctan2(-dirs[:, 0], dirs[:, 1]))
    theta[:, 0, 2] = yaw

    phase = 2 * math.pi * script.step_freq * t
    gait = min(script.speed, 1.5) / 1.0
    leg = script.leg_swing * gait + script.idle_amplitude
    arm = script.arm_swing * gait + script.idle_amplitude
    idx = skeleton.index
    hip = leg * np.sin(phase)
    theta[:, idx("left_hip"), 0] = hip
    theta[:, idx("right_hip"), 0] = -hip
    theta[:, idx("left_knee"), 0] = -0.5 * leg * (1 - np.cos(phase))
    theta[:, idx("right_knee"), 0] = -0.5 * leg * (1 + np.cos(phase))
    theta[:, idx("spine1"), 0] = 0.05 * gait
    for side, sign in (("left", -1.0), ("right", 1.0)):
        down = axis_angle_to_matrix(np.array([0.0, sign * 1.3, 0.0]))
        # arms swing against the same-side leg
        swing = _rot_x(sign * arm * np.sin(phase))
        theta[:, idx(f"{side}_shoulder")] = matrix_to_axis_angle(swing @ down)
        theta[:, idx(f"{side}_elbow"), 2] = -sign * (0.3 + 0.5 * arm * (1 + np.sin(phase)))

    z = script.bob * gait * (1 - np.cos(2 * phase))
    trans = np.column_stack([xy - xy[0], z - z[0]])
    return PoseSequence(
        theta.reshape(L, 3 * J),
        trans,
        script.fps,
        meta={"initial_position": list(script.start), "script": script.to_dict()},
    )


def world_sensor_positions(pose, skeleton, initial_position=None):
    if initial_position is None:
        initial_position = pose.meta.get("initial_position", (0.0, 0.0, 0.0))
    return sensor_world_positions(skeleton, pose.theta, pose.trans, initial_position)


def synthesize_imu(pose, skeleton, initial_position=None):
    """Virtual sensor readings: accelerations (L, S, 3) and orientations (L, S, 3, 3).

    Accelerations are central second differences of world sensor positions
    times fps^2, gravity excluded, with the first and last frames copied from
    their neighbours.
    """
    if len(pose) < 3:
        raise DimensionError("IMU synthesis needs at least 3 frames")
    pos = world_sensor_positions(pose, skeleton, initial_position)
    acc = np.empty_like(pos)
    acc[1:-1] = (pos[2:] - 2.0 * pos[1:-1] + pos[:-2]) * pose.fps**2
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    _, rot = global_transforms(skeleton, pose.theta)
    return acc, rot[:, list(skeleton.sensor_joints)]


@dataclass
class UwbObservations:
    same: list
    same_valid: list
    between: dict
    between_valid: dict


def synthesize_uwb(sensor_positions, noise):
    """Noisy same-person and between-person distance matrices.

    ``sensor_positions`` is a list of (L, S, 3) world positions, one per
    person. Between-person matrices are keyed by ``(i, j)`` with i < j, rows
    indexing person i's sensors. Dropped readings are zeroed and marked
    invalid; same-person diagonals are always valid zeros.
    """
    lengths = {len(p) for p in sensor_positions}
    if len(lengths) > 1:
        raise DimensionError("sensor position sequences must share their length")
    streams = np.random.default_rng(noise.seed).spawn(len(sensor_positions) + 1)
    same, same_valid = [], []
    for sp, rng in zip(sensor_positions, streams[:-1]):
        d = pairwise_same_distances(sp)
        L, S, _ = d.shape
        iu = np.triu_indices(S, 1)
        e = rng.normal(0.0, 1.0, (L, len(iu[0]))) * noise.same_person_sigma
        upper = np.maximum(d[:, iu[0], iu[1]] + e, 0.0)
        keep = rng.random(upper.shape) >= noise.dropout_prob
        out = np.zeros_like(d)
        valid = np.ones(d.shape, dtype=bool)
        out[:, iu[0], iu[1]] = np.where(keep, upper, 0.0)
        out[:, iu[1], iu[0]] = out[:, iu[0], iu[1]]
        valid[:, iu[0], iu[1]] = keep
        valid[:, iu[1], iu[0]] = keep
        same.append(out)
        same_valid.append(valid)
    between, between_valid = {}, {}
    rng = streams[-1]
    n = len(sensor_positions)
    for i in range(n):
        for j in range(i + 1, n):
            d = pairwise_between_distances(sensor_positions[i], sensor_positions[j])
            nlos = rng.random(d.shape[1:]) < noise.nlos_pair_prob
            noisy = d + rng.normal(0.0, 1.0, d.shape) * noise.between_person_sigma + noise.nlos_bias * nlos
            keep = rng.random(d.shape) >= noise.dropout_prob
            between[(i, j)] = np.where(keep, np.maximum(noisy, 0.0), 0.0)
            between_valid[(i, j)] = keep
    return UwbObservations(same, same_valid, between, between_valid)


def apply_drift(trans, drift_rate, fps=60.0, seed=0, heading_diffusion=0.05):
    """Add a horizontal drift whose magnitude grows like drift_rate * t.

    The drift velocity has constant speed ``drift_rate`` and a heading that
    starts uniformly at random and then performs a random walk with
    ``heading_diffusion`` rad/sqrt(s). Its integral is added to ``trans``
    (zero offset at frame 0).
    """
    if drift_rate < 0:
        raise ParameterError("drift_rate must be non-negative")
    trans = np.asarray(trans, dtype=float)
    if drift_rate == 0:
        return trans.copy()
    rng = np.random.default_rng(seed)
    L = len(trans)
    steps = rng.normal(0.0, heading_diffusion / math.sqrt(fps), L - 1)
    heading = rng.uniform(0, 2 * math.pi) + np.concatenate([[0.0], np.cumsum(steps)])
    vel = drift_rate * np.column_stack([np.cos(heading), np.sin(heading), np.zeros(L)])
    offset = np.zeros_like(trans)
    offset[1:] = np.cumsum(vel[:-1], axis=0) / fps
    return trans + offset


def foot_contacts(pose, skeleton, clearance=0.03):
    """Binary left/right foot contact labels (L, 2).

    A foot is in contact while it is within ``clearance`` meters of the
    lowest foot height in the sequence.
    """
    pos, _ = global_transforms(skeleton, pose.theta)
    feet_z = pos[:, [skeleton.index(n) for n in FOOT_JOINTS], 2] + pose.trans[:, None, 2]
    return (feet_z <= feet_z.min() + clearance).astype(float)


def root_velocity(trans, fps):
    """Per-frame velocity with v_t = (T_t - T_{t-1}) fps and v_0 copied from v_1."""
    trans = np.asarray(trans, dtype=float)
    vel = np.zeros_like(trans)
    vel[1:] = np.diff(trans, axis=0) * fps
    vel[0] = vel[1] if len(trans) > 1 else 0.0
    return vel


@dataclass
class Dataset:
    """Synthesized streams and ground truth for a group of people."""

    fps: float
    persons: list
    between: dict
    between_valid: dict
    noise: NoiseModel = field(default_factory=NoiseModel)
    scripts: list = field(default_factory=list)

    @property
    def frames(self):
        return len(self.persons[0]["theta"])

    @property
    def n_persons(self):
        return len(self.persons)

    def pose(self, i):
        p = self.persons[i]
        return PoseSequence(p["theta"], p["trans"], self.fps, meta={"initial_position": list(p["initial_position"])})


def simulate_dataset(scripts, skeleton, noise):
    """Generate motion, IMU and UWB streams for every script."""
    fps = {s.fps for s in scripts}
    frames = {s.frames for s in scripts}
    if len(fps) != 1 or len(frames) != 1:
        raise DimensionError("all scripts must share fps and duration")
    poses = [generate_motion(s, skeleton) for s in scripts]
    world = [world_sensor_positions(p, skeleton) for p in poses]
    uwb = synthesize_uwb(world, noise)
    persons = []
    for i, p in enumerate(poses):
        acc, rot = synthesize_imu(p, skeleton)
        persons.append(
            {
                "initial_position": np.asarray(p.meta["initial_position"], dtype=float),
                "theta": p.theta,
                "trans": p.trans,
                "A": acc,
                "R": rot.reshape(len(p), -1, 9),
                "D": uwb.same[i],
                "D_valid": uwb.same_valid[i],
            }
        )
    return Dataset(fps.pop(), persons, uwb.between, uwb.between_valid, noise, list(scripts))


def training_sample(pose, skeleton, noise=None, seed=0):
    """Inputs and per-head targets for one sequence, in estimator layout."""
    acc, rot = synthesize_imu(pose, skeleton)
    pos = world_sensor_positions(pose, skeleton)
    if noise is None:
        D = pairwise_same_distances(pos)
    else:
        D = synthesize_uwb([pos], NoiseModel(noise.same_person_sigma, 0.0, seed=seed)).same[0]
    L = len(pose)
    return {
        "A": acc.reshape(L, -1),
        "R": rot.reshape(L, -1),
        "D": D.reshape(L, -1),
        "pos": sensor_offsets(skeleton, pose.theta).reshape(L, -1),
        "theta": pose.theta,
        "vel": root_velocity(pose.trans, pose.fps),
        "contact": foot_contacts(pose, skeleton),
    }


def default_scene(n_persons=2, duration=20.0, fps=60.0, seed=0):
    """Walkers spread over a few meters moving on mixed paths.

    Person 0 starts at the origin; the others start 1.5-3 m away.
    """
    rng = np.random.default_rng(seed)
    scripts = []
    for i in range(n_persons):
        if i == 0:
            start = (0.0, 0.0, PELVIS_HEIGHT)
        else:
            ang = rng.uniform(0, 2 * math.pi)
            rad = rng.uniform(1.5, 3.0)
            start = (rad * math.cos(ang), rad * math.sin(ang), PELVIS_HEIGHT)
        scripts.append(
            MotionScript(
                path=PATHS[int(rng.integers(0, 3))],
                speed=float(rng.uniform(0.5, 1.2)),
                start=start,
                heading=float(rng.uniform(0, 2 * math.pi)),
                radius=float(rng.uniform(1.5, 3.0)),
                turn=int(rng.choice([-1, 1])),
                step_freq=float(rng.uniform(0.8, 1.0)),
                duration=duration,
                fps=fps,
            )
        )
    return scripts
