"""Kinematic skeleton, forward kinematics, sensor placement and sensor distances.

World frame is z-up with the body facing +y in the rest pose. Rotations are
axis-angle in files and 3x3 matrices internally; composition runs from parent
to child.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError

SMALL_ANGLE = 1e-8

SENSOR_NAMES = ("head", "pelvis", "left_wrist", "right_wrist", "left_knee", "right_knee")


def axis_angle_to_matrix(aa):
    """Rodrigues' formula for arrays of axis-angle vectors with shape (..., 3).

    Below a rotation magnitude of 1e-8 the second-order series is used, so
    a zero vector maps exactly to the identity.
    """
    aa = np.asarray(aa, dtype=float)
    if aa.shape[-1] != 3:
        raise DimensionError(f"axis-angle arrays need a trailing axis of 3, got {aa.shape}")
    theta = np.linalg.norm(aa, axis=-1)[..., None, None]
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * k + b * (k @ k)


def matrix_to_axis_angle(rot):
    """Inverse of :func:`axis_angle_to_matrix` for rotations below pi."""
    rot = np.asarray(rot, dtype=float)
    w = np.stack(
        [rot[..., 2, 1] - rot[..., 1, 2], rot[..., 0, 2] - rot[..., 2, 0], rot[..., 1, 0] - rot[..., 0, 1]],
        axis=-1,
    )
    angle = geodesic_angle(np.broadcast_to(np.eye(3), rot.shape), rot)
    s = np.sin(angle)
    small = s < SMALL_ANGLE
    scale = np.where(small, 0.5, angle / (2.0 * np.where(small, 1.0, s)))
    return w * scale[..., None]


def geodesic_angle(r1, r2):
    """Angle in radians of the relative rotation r1^T r2."""
    rel = np.swapaxes(np.asarray(r1), -1, -2) @ np.asarray(r2)
    tr = rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2]
    w = np.stack(
        [rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0], rel[..., 1, 0] - rel[..., 0, 1]],
        axis=-1,
    )
    return np.arctan2(0.5 * np.linalg.norm(w, axis=-1), 0.5 * (tr - 1.0))


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with fixed rest offsets and the joints carrying sensors."""

    names: tuple
    parent: tuple
    rest_offset: np.ndarray
    sensor_joints: tuple
    name: str = "skeleton"

    def __post_init__(self):
        offsets = np.asarray(self.rest_offset, dtype=float)
        object.__setattr__(self, "rest_offset", offsets)
        n = len(self.parent)
        if offsets.shape != (n, 3) or len(self.names) != n:
            raise DimensionError("names, parents and offsets must describe the same joints")
        if self.parent[0] is not None and self.parent[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j in range(1, n):
            p = self.parent[j]
            if p is None or not 0 <= p < j:
                raise ValueError(f"joint {self.names[j]!r} has parent {p}; parents must precede children")
            if not np.any(offsets[j]):
                raise ValueError(f"joint {self.names[j]!r} has a zero rest offset")
        for s in self.sensor_joints:
            if not 0 <= s < n:
                raise ValueError(f"sensor joint index {s} out of range")

    @property
    def joint_count(self):
        return len(self.parent)

    @property
    def sensor_count(self):
        return len(self.sensor_joints)

    def index(self, name):
        return self.names.index(name)

    def to_dict(self):
        return {
            "name": self.name,
            "units": "meters",
            "joints": [
                {
                    "name": n,
                    "parent": None if j == 0 else self.names[self.parent[j]],
                    "offset": [float(v) for v in self.rest_offset[j]],
                }
                for j, n in enumerate(self.names)
            ],
            "sensors": [self.names[s] for s in self.sensor_joints],
        }

    @classmethod
    def from_dict(cls, doc):
        joints = doc["joints"]
        names = tuple(j["name"] for j in joints)
        parent = tuple(-1 if j["parent"] is None else names.index(j["parent"]) for j in joints)
        offsets = np.array([j["offset"] for j in joints], dtype=float)
        sensors = tuple(names.index(s) for s in doc["sensors"])
        return cls(names, parent, offsets, sensors, doc.get("name", "skeleton"))


def load_skeleton(path=None):
    """Read a skeleton JSON file; with no path, the bundled 24-joint mean body."""
    if path is None:
        text = resources.files("mocapfuse").joinpath("data/skeleton_smpl24.json").read_text()
    else:
        text = Path(path).read_text()
    return Skeleton.from_dict(json.loads(text))


def save_skeleton(skeleton, path):
    Path(path).write_text(json.dumps(skeleton.to_dict(), indent=1) + "\n")


@dataclass
class PoseSequence:
    """Per-frame axis-angle joint rotations and root translation.

    ``trans`` is relative to the person's own initial position, so a
    generated sequence starts at the origin.
    """

    theta: np.ndarray
    trans: np.ndarray
    fps: float = 60.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        if self.theta.shape[0] < 1 or self.theta.shape[1] % 3:
            raise DimensionError(f"theta must be N x 3J, got {self.theta.shape}")
        if self.trans.shape != (self.theta.shape[0], 3):
            raise DimensionError(f"trans must be N x 3 matching theta, got {self.trans.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite values")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    def __len__(self):
        return self.theta.shape[0]


def _check_theta(skeleton, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 3 * skeleton.joint_count:
        raise DimensionError(
            f"pose vector has length {theta.shape[-1]}, expected {3 * skeleton.joint_count}"
        )
    return theta


def global_transforms(skeleton, theta):
    """Root-relative joint positions and global rotations.

    ``theta`` has shape (..., 3J). Returns positions (..., J, 3) and rotation
    matrices (..., J, 3, 3).
    """
    theta = _check_theta(skeleton, theta)
    local = axis_angle_to_matrix(theta.reshape(theta.shape[:-1] + (skeleton.joint_count, 3)))
    J = skeleton.joint_count
    rot = np.empty_like(local)
    pos = np.zeros(theta.shape[:-1] + (J, 3))
    rot[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, J):
        p = skeleton.parent[j]
        rot[..., j, :, :] = rot[..., p, :, :] @ local[..., j, :, :]
        pos[..., j, :] = pos[..., p, :] + rot[..., p, :, :] @ skeleton.rest_offset[j]
    return pos, rot


def forward_kinematics(skeleton, theta):
    """Joint positions (..., J, 3) with the root at the origin."""
    return global_transforms(skeleton, theta)[0]


def sensor_offsets(skeleton, theta):
    """Root-relative sensor positions (..., S, 3)."""
    return forward_kinematics(skeleton, theta)[..., list(skeleton.sensor_joints), :]


def sensor_world_positions(skeleton, theta, trans, initial_position):
    """Sensor positions in the shared frame: initial position + translation + FK.

    Broadcasts over leading frame axes of ``theta`` and ``trans``.
    """
    trans = np.asarray(trans, dtype=float)
    p0 = np.asarray(initial_position, dtype=float)
    return p0 + trans[..., None, :] + sensor_offsets(skeleton, theta)


def pairwise_between_distances(sp1, sp2):
    """Matrix (..., S, S) of distances from each sensor of sp1 to each of sp2."""
    sp1 = np.asarray(sp1, dtype=float)
    sp2 = np.asarray(sp2, dtype=float)
    diff = sp1[..., :, None, :] - sp2[..., None, :, :]
    return np.sqrt(np.einsum("...k,...k->...", diff, diff))


def pairwise_same_distances(sp):
    """Symmetric same-body distance matrix (..., S, S) with a zero diagonal."""
    d = pairwise_between_distances(sp, sp)
    d = 0.5 * (d + np.swapaxes(d, -1, -2))
    idx = np.arange(d.shape[-1])
    d[..., idx, idx] = 0.0
    return d
