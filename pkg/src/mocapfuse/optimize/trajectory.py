"""Distance-constrained initial-position and trajectory optimization.

Poses are frozen: every person's root-relative sensor offsets are computed
once by forward kinematics, and only translations and initial positions are
decision variables. Person ``anchor`` (default 0) sits at the origin.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..body import pairwise_between_distances, sensor_offsets
from ..errors import DimensionError, ParameterError
from .lbfgs import LbfgsConfig, LbfgsState, lbfgs_minimize

START_RADIUS = 2.0


def diff1(T):
    """Forward difference T[t+1] - T[t] along the first axis."""
    T = np.asarray(T, dtype=float)
    if len(T) < 2:
        raise DimensionError("first difference needs at least 2 frames")
    return T[1:] - T[:-1]


def diff2(T):
    """Second difference T[t+2] - 2 T[t+1] + T[t]."""
    T = np.asarray(T, dtype=float)
    if len(T) < 3:
        raise DimensionError("second difference needs at least 3 frames")
    return T[2:] - 2.0 * T[1:-1] + T[:-2]


def _diff1_adjoint(r):
    z = np.zeros((1,) + r.shape[1:])
    return -np.diff(np.concatenate([z, r, z]), axis=0)


def predicted_between_distances(skeleton, theta1, theta2, trans1, trans2, t12_0):
    """Per-frame (L, S, S) distances with person 1 at the origin and person 2 at ``t12_0``."""
    sp1 = sensor_offsets(skeleton, theta1) + np.asarray(trans1)[:, None, :]
    sp2 = sensor_offsets(skeleton, theta2) + np.asarray(trans2)[:, None, :] + np.asarray(t12_0)
    return pairwise_between_distances(sp1, sp2)


@dataclass
class TrajectoryProblem:
    """Frozen poses, translation estimates and pairwise distance observations.

    ``offsets[i]`` are person i's root-relative sensor positions (L, S, 3);
    ``observations[(i, j)]`` is ``(D, valid)`` with D (L, S_i, S_j).
    ``initial_positions[i]`` places person i in the shared frame.
    """

    offsets: list
    trans_hat: list
    observations: dict
    initial_positions: list
    lambda1: float = 1.0
    lambda2: float = 0.1

    def __post_init__(self):
        self.offsets = [np.asarray(o, dtype=float) for o in self.offsets]
        self.trans_hat = [np.asarray(t, dtype=float) for t in self.trans_hat]
        self.initial_positions = [np.asarray(p, dtype=float).reshape(3) for p in self.initial_positions]
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("regularizer weights must be non-negative")
        L = len(self.trans_hat[0])
        n = len(self.trans_hat)
        if len(self.offsets) != n or len(self.initial_positions) != n:
            raise DimensionError("offsets, translations and initial positions must list the same people")
        for o, t in zip(self.offsets, self.trans_hat):
            if len(o) != L or t.shape != (L, 3):
                raise DimensionError("all sequences must share their length")
        obs = {}
        for (i, j), (D, valid) in self.observations.items():
            D = np.asarray(D, dtype=float)
            valid = np.ones(D.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
            if D.shape != (L, self.offsets[i].shape[1], self.offsets[j].shape[1]) or valid.shape != D.shape:
                raise DimensionError(f"observation {(i, j)} has shape {D.shape}")
            obs[(i, j)] = (D, valid)
        self.observations = obs

    @classmethod
    def from_poses(cls, skeleton, thetas, trans_hat, observations, initial_positions, lambda1=1.0, lambda2=0.1):
        offsets = [sensor_offsets(skeleton, th) for th in thetas]
        return cls(offsets, trans_hat, observations, initial_positions, lambda1, lambda2)

    @classmethod
    def two_person(cls, skeleton, theta1, theta2, trans1, trans2, D12, valid, t12_0, lambda1=1.0, lambda2=0.1):
        return cls.from_poses(
            skeleton, [theta1, theta2], [trans1, trans2], {(0, 1): (D12, valid)}, [np.zeros(3), t12_0],
            lambda1, lambda2,
        )

    @property
    def n_persons(self):
        return len(self.trans_hat)

    @property
    def frames(self):
        return len(self.trans_hat[0])

    def subset(self, members):
        """Problem restricted to ``members`` (re-indexed in the given order)."""
        index = {p: k for k, p in enumerate(members)}
        obs = {}
        for (i, j), v in self.observations.items():
            if i in index and j in index:
                a, b = index[i], index[j]
                D, valid = v
                obs[(a, b) if a < b else (b, a)] = v if a < b else (np.swapaxes(D, 1, 2), np.swapaxes(valid, 1, 2))
        return TrajectoryProblem(
            [self.offsets[p] for p in members],
            [self.trans_hat[p] for p in members],
            obs,
            [self.initial_positions[p] for p in members],
            self.lambda1,
            self.lambda2,
        )

    def with_(self, **kw):
        fields = dict(
            offsets=self.offsets, trans_hat=self.trans_hat, observations=self.observations,
            initial_positions=self.initial_positions, lambda1=self.lambda1, lambda2=self.lambda2,
        )
        fields.update(kw)
        return TrajectoryProblem(**fields)


def data_term(problem, trans, initial_positions=None):
    """Masked distance residual, with gradients per person translation (L, 3)."""
    P = problem.initial_positions if initial_positions is None else initial_positions
    value = 0.0
    grads = [np.zeros_like(t) for t in trans]
    for (i, j), (D, valid) in problem.observations.items():
        pos_i = problem.offsets[i] + (trans[i] + P[i])[:, None, :]
        pos_j = problem.offsets[j] + (trans[j] + P[j])[:, None, :]
        v, gi, gj = kernels.distance_residual(pos_i, pos_j, D, valid)
        value += v
        grads[i] += gi
        grads[j] += gj
    return value, grads


def regularizer(problem, trans):
    value = 0.0
    grads = []
    for T, That in zip(trans, problem.trans_hat):
        r1 = diff1(T) - diff1(That)
        g = 2.0 * problem.lambda1 * _diff1_adjoint(r1)
        value += problem.lambda1 * float(np.sum(r1 * r1))
        if len(T) >= 3:
            r2 = diff2(T) - diff2(That)
            value += problem.lambda2 * float(np.sum(r2 * r2))
            g = g + 2.0 * problem.lambda2 * _diff1_adjoint(_diff1_adjoint(r2))
        grads.append(g)
    return value, grads


def trajectory_objective(problem, trans):
    """Objective value and gradients (one (L, 3) array per person)."""
    trans = [np.asarray(t, dtype=float) for t in trans]
    vd, gd = data_term(problem, trans)
    vr, gr = regularizer(problem, trans)
    return vd + vr, [a + b for a, b in zip(gd, gr)]


@dataclass
class OptimizerConfig:
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    max_passes: int = 10
    pass_tol: float = 1e-9


def _run_passes(fun, x0, config):
    """Repeated short L-BFGS runs sharing curvature history."""
    state = LbfgsState()
    x = x0
    traces = []
    result = None
    for _ in range(config.max_passes):
        result = lbfgs_minimize(fun, x, config.lbfgs, state)
        traces.append(result.trace)
        improvement = result.trace[0] - result.trace[-1]
        x = result.x
        if result.converged or improvement <= config.pass_tol * max(1.0, abs(result.f)):
            break
    return result, traces


@dataclass
class InitialPositionResult:
    position: np.ndarray
    residual: float
    starts: list
    start_residuals: list
    traces: list


def _pair_terms(problem, person, anchor_positions):
    """Observation terms linking ``person`` to already-placed people."""
    terms = []
    for (i, j), (D, valid) in problem.observations.items():
        if j == person and i in anchor_positions:
            terms.append((i, D, valid, False))
        elif i == person and j in anchor_positions:
            terms.append((j, np.swapaxes(D, 1, 2), np.swapaxes(valid, 1, 2), True))
    return terms


def trilateration_start(problem, person, anchor_positions):
    """Initial-position guess from the first frame with enough valid readings.

    Each of the person's sensors is trilaterated by linear least squares from
    the anchored people's sensors, and the guess is the mean of those
    positions minus the person's own sensor offsets.
    """
    terms = _pair_terms(problem, person, anchor_positions)
    own = problem.offsets[person] + problem.trans_hat[person][:, None, :]
    for t in range(problem.frames):
        guesses = []
        for k in range(own.shape[1]):
            anchors, ranges = [], []
            for other, D, valid, _ in terms:
                pos = problem.offsets[other][t] + problem.trans_hat[other][t] + anchor_positions[other]
                ok = valid[t, :, k]
                anchors.append(pos[ok])
                ranges.append(D[t, ok, k])
            if not anchors:
                return None
            a = np.concatenate(anchors)
            r = np.concatenate(ranges)
            if len(a) < 4:
                continue
            M = 2.0 * (a[1:] - a[0])
            rhs = np.sum(a[1:] ** 2, axis=1) - np.sum(a[0] ** 2) - r[1:] ** 2 + r[0] ** 2
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            guesses.append(sol - own[t, k])
        if guesses:
            return np.mean(guesses, axis=0)
    return None


def optimize_initial_position(problem, person=1, anchor_positions=None, config=None, extra_starts=()):
    """Place ``person`` relative to already-positioned people.

    Minimises the masked squared distance residual over a single 3-vector
    (the person's initial position) with multi-start L-BFGS: origin, +-2 m
    along each axis, and the first-frame trilateration guess. Returns the
    lowest-residual solution.
    """
    config = config or OptimizerConfig()
    if anchor_positions is None:
        anchor_positions = {0: np.zeros(3)}
    terms = _pair_terms(problem, person, anchor_positions)
    if not terms or not any(np.any(v) for _, _, v, _ in terms):
        raise ParameterError("no valid between-person distance readings for the initial position")
    fixed = [
        (problem.offsets[o] + (problem.trans_hat[o] + anchor_positions[o])[:, None, :], D, valid)
        for o, D, valid, _ in terms
    ]
    own = problem.offsets[person] + problem.trans_hat[person][:, None, :]

    def fun(p):
        value = 0.0
        grad = np.zeros(3)
        moved = own + p
        for pos_o, D, valid in fixed:
            v, _, g = kernels.distance_residual(pos_o, moved, D, valid)
            value += v
            grad += g.sum(axis=0)
        return value, grad

    starts = [np.zeros(3)]
    for axis, sign in itertools.product(range(3), (1.0, -1.0)):
        s = np.zeros(3)
        s[axis] = sign * START_RADIUS
        starts.append(s)
    tri = trilateration_start(problem, person, anchor_positions)
    if tri is not None and np.all(np.isfinite(tri)):
        starts.append(tri)
    starts.extend(np.asarray(s, dtype=float) for s in extra_starts)
    best = None
    residuals, traces = [], []
    for s in starts:
        result, tr = _run_passes(fun, s, config)
        residuals.append(result.f)
        traces.append(tr)
        if best is None or result.f < best.f:
            best = result
    return InitialPositionResult(best.x, best.f, starts, residuals, traces)


def optimize_initial_positions(problem, members=None, config=None, anchor=None):
    """Place every member of a group relative to its first member.

    Each non-anchor member is first placed against the anchor alone with the
    multi-start search, then all placements are refined jointly over every
    pair constraint in the group.
    """
    config = config or OptimizerConfig()
    members = list(range(problem.n_persons)) if members is None else list(members)
    anchor = members[0] if anchor is None else anchor
    placed = {anchor: problem.initial_positions[anchor]}
    per_member = {}
    for m in members:
        if m == anchor:
            continue
        res = optimize_initial_position(problem, m, {anchor: placed[anchor]}, config)
        per_member[m] = res
    positions = {anchor: placed[anchor], **{m: r.position for m, r in per_member.items()}}
    free = [m for m in members if m != anchor]
    if len(free) > 1:
        sub = problem.subset(members)
        idx = {p: k for k, p in enumerate(members)}

        def fun(x):
            P = [positions[anchor]] * len(members)
            P = list(P)
            for k, m in enumerate(free):
                P[idx[m]] = x[3 * k : 3 * k + 3]
            v, grads = data_term(sub, sub.trans_hat, P)
            g = np.concatenate([grads[idx[m]].sum(axis=0) for m in free])
            return v, g

        x0 = np.concatenate([positions[m] for m in free])
        result, _ = _run_passes(fun, x0, config)
        for k, m in enumerate(free):
            positions[m] = result.x[3 * k : 3 * k + 3]
    return positions, per_member


@dataclass
class TrajectoryResult:
    trans: list
    traces: list
    failed: bool
    message: str
    value_before: float
    value_after: float


def optimize_trajectories(problem, config=None):
    """Refine every person's translation jointly; poses and initial positions stay fixed."""
    config = config or OptimizerConfig()
    L = problem.frames
    n = problem.n_persons
    x0 = np.concatenate([t.ravel() for t in problem.trans_hat])

    def fun(x):
        trans = [x[k * 3 * L : (k + 1) * 3 * L].reshape(L, 3) for k in range(n)]
        v, grads = trajectory_objective(problem, trans)
        return v, np.concatenate([g.ravel() for g in grads])

    f0, _ = fun(x0)
    try:
        result, traces = _run_passes(fun, x0, config)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return TrajectoryResult([t.copy() for t in problem.trans_hat], [], True, str(exc), f0, f0)
    x = result.x
    trans = [x[k * 3 * L : (k + 1) * 3 * L].reshape(L, 3).copy() for k in range(n)]
    return TrajectoryResult(trans, traces, False, result.message, f0, result.f)


@dataclass
class OptimizationReport:
    initial_positions: list
    init_residuals: dict
    traces: list
    wall_time: float
    flags: dict

    def to_dict(self):
        return {
            "initial_positions": [np.asarray(p).tolist() for p in self.initial_positions],
            "t12_0": np.asarray(self.initial_positions[1]).tolist() if len(self.initial_positions) > 1 else None,
            "init_residuals": {str(k): float(v) for k, v in self.init_residuals.items()},
            "objective_trace": [[list(map(float, tr)) for tr in passes] for passes in self.traces],
            "wall_time_s": self.wall_time,
            "flags": self.flags,
        }


def group_optimize(problem, schedule, config=None, init_opt=True, traj_opt=True, anchor=0):
    """Run initial-position then trajectory optimization over each scheduled group.

    A group is a sequence of person indices whose first entry is the anchor.
    Later groups start from (and regularize toward) the refined translations
    and positions of earlier ones; a person's final result is that of the
    last group containing it. Returns ``(trans, initial_positions, report)``.
    """
    config = config or OptimizerConfig()
    t0 = time.perf_counter()
    trans = [t.copy() for t in problem.trans_hat]
    positions = [p.copy() for p in problem.initial_positions]
    flags = {"init_opt": init_opt, "traj_opt": traj_opt, "failed": False, "messages": []}
    traces, init_res = [], {}
    if problem.n_persons == 1:
        return trans, positions, OptimizationReport(positions, init_res, traces, 0.0, flags)
    if not schedule:
        raise ParameterError("a schedule of groups is required for more than one person")
    positions[anchor] = np.zeros(3)
    for group in schedule:
        group = list(group)
        current = problem.with_(trans_hat=trans, initial_positions=positions)
        if init_opt:
            placed, per_member = optimize_initial_positions(current, group, config, anchor=group[0])
            for m, p in placed.items():
                positions[m] = np.asarray(p, dtype=float)
            init_res.update({(group[0], m): r.residual for m, r in per_member.items()})
        if traj_opt:
            sub = problem.with_(trans_hat=trans, initial_positions=positions).subset(group)
            res = optimize_trajectories(sub, config)
            traces.append(res.traces)
            flags["failed"] |= res.failed
            flags["messages"].append(res.message)
            # the data term only sees relative positions: shift the whole group so
            # the anchor keeps its first-frame translation
            shift = res.trans[0][0] - trans[group[0]][0]
            for k, m in enumerate(group):
                trans[m] = res.trans[k] - shift
    report = OptimizationReport(positions, init_res, traces, time.perf_counter() - t0, flags)
    return trans, positions, report


def default_schedule(n_persons, anchor=0):
    """Groups of at most three sharing the anchor: (0,1,2), then (0,1,3), ...

    Two people form the single group (0, 1).
    """
    if n_persons < 2:
        return []
    others = [p for p in range(n_persons) if p != anchor]
    if len(others) <= 2:
        return [tuple([anchor] + others)]
    return [(anchor, others[0], o) for o in others[1:]]
