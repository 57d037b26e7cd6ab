import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mocapfuse import kernels
from mocapfuse.body import axis_angle_to_matrix, matrix_to_axis_angle, pairwise_same_distances
from mocapfuse.metrics import translation_error_at
from mocapfuse.optimize import TrajectoryProblem
from mocapfuse.optimize.trajectory import regularizer
from mocapfuse.ssm import ContinuousSSM, causal_conv, discretize_zoh, ssm_kernel, ssm_scan, zoh

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(float, 3, elements=st.floats(-2, 2, allow_nan=False))


@given(vec3)
def test_axis_angle_round_trip(aa):
    n = np.linalg.norm(aa)
    if n > 3.0:
        aa = aa * 3.0 / n
    np.testing.assert_allclose(matrix_to_axis_angle(axis_angle_to_matrix(aa)), aa, atol=1e-9)


@given(vec3)
def test_rotation_is_orthonormal(aa):
    R = axis_angle_to_matrix(aa)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


@given(st.floats(1e-4, 1e3), st.floats(-5, 5), st.floats(1e-5, 1.0))
def test_zoh_stability(neg_a, b, delta):
    a_bar, b_bar = zoh(-neg_a, b, delta)
    assert 0.0 <= a_bar < 1.0
    assert np.sign(b_bar) == np.sign(b) or b_bar == 0.0
    assert abs(b_bar) <= abs(b) * delta * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(2, 80),
    st.floats(1e-3, 0.5),
    st.integers(0, 2**32 - 1),
)
def test_scan_equals_convolution(N, L, delta, seed):
    rng = np.random.default_rng(seed)
    d = discretize_zoh(ContinuousSSM(-np.exp(rng.uniform(-2, 2, N)), rng.normal(size=N), 0.0, delta))
    c = rng.normal(size=N)
    x = rng.normal(size=L)
    np.testing.assert_allclose(ssm_scan(d, c, x), causal_conv(ssm_kernel(d, c, L), x), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), vec3)
def test_residual_translation_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    p1, p2 = rng.normal(size=(3, 6, 3)), rng.normal(size=(3, 6, 3))
    obs, mask = rng.uniform(0, 3, (3, 6, 6)), rng.random((3, 6, 6)) > 0.5
    v0 = kernels.distance_residual(p1, p2, obs, mask)[0]
    v1 = kernels.distance_residual(p1 + shift, p2 + shift, obs, mask)[0]
    assert abs(v0 - v1) <= 1e-9 * max(1.0, v0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_same_distances_metric(seed):
    sp = np.random.default_rng(seed).normal(size=(1, 6, 3))
    d = pairwise_same_distances(sp)[0]
    for i in range(6):
        for j in range(6):
            for k in range(6):
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0, 5))
def test_regularizer_non_negative(seed, lambda1, lambda2):
    rng = np.random.default_rng(seed)
    L = 6
    pb = TrajectoryProblem(
        [np.zeros((L, 1, 3))], [rng.normal(size=(L, 3))], {}, [np.zeros(3)], lambda1, lambda2
    )
    assert regularizer(pb, [rng.normal(size=(L, 3))])[0] >= 0.0
    assert regularizer(pb, pb.trans_hat)[0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), vec3)
def test_translation_error_offset_free(seed, offset):
    steps = np.random.default_rng(seed).normal(0, 0.2, (200, 3))
    gt = np.cumsum(steps, axis=0)
    err = translation_error_at(gt + offset, gt, 1.0)
    assert np.isnan(err) or err < 1e-9
