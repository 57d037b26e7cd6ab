import numpy as np
import pytest

from mocapfuse import kernels

BACKENDS = sorted(kernels.BACKENDS)


def scan_reference(a_bar, b_bar, c, x):
    H, N = a_bar.shape
    y = np.zeros(x.shape)
    for h in range(H):
        for n in range(N):
            state = 0.0
            for t in range(len(x)):
                state = a_bar[h, n] * state + b_bar[h, n] * x[t, h]
                y[t, h] += c[h, n] * state
    return y


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.BACKENDS[request.param]


def test_compiled_backend_selected():
    assert "python" in kernels.BACKENDS
    assert kernels.BACKEND in kernels.BACKENDS


def test_scan_matches_loop(backend):
    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 0.99, (3, 4))
    b, c = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    x = rng.normal(size=(40, 3))
    np.testing.assert_allclose(backend.ssm_scan(a, b, c, x), scan_reference(a, b, c, x), rtol=1e-12, atol=1e-12)


def test_residual_value_and_gradient(backend):
    rng = np.random.default_rng(1)
    p1, p2 = rng.normal(size=(5, 6, 3)), rng.normal(size=(5, 4, 3)) + 1.0
    obs = rng.uniform(0.5, 2.0, (5, 6, 4))
    mask = rng.random((5, 6, 4)) > 0.3
    v, g1, g2 = backend.distance_residual(p1, p2, obs, mask)
    d = np.linalg.norm(p1[:, :, None] - p2[:, None], axis=-1)
    assert v == pytest.approx(np.sum(((d - obs) * mask) ** 2), rel=1e-13)
    h = 1e-6
    for t in (0, 3):
        for k in range(3):
            e = np.zeros((5, 1, 3))
            e[t, 0, k] = h
            fd = (backend.distance_residual(p1 + e, p2, obs, mask)[0] - backend.distance_residual(p1 - e, p2, obs, mask)[0]) / (2 * h)
            assert g1[t, k] == pytest.approx(fd, rel=1e-6, abs=1e-8)
    np.testing.assert_array_equal(g2, -g1)


def test_coincident_sensors_have_zero_gradient(backend):
    p = np.zeros((1, 1, 3))
    v, g1, _ = backend.distance_residual(p, p, np.ones((1, 1, 1)), np.ones((1, 1, 1), dtype=bool))
    assert v == 1.0
    np.testing.assert_array_equal(g1, 0.0)


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 0.999, (16, 8))
    b, c = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
    x = rng.normal(size=(300, 16))
    ys = [kernels.BACKENDS[k].ssm_scan(a, b, c, x) for k in BACKENDS]
    np.testing.assert_allclose(ys[0], ys[1], rtol=1e-12, atol=1e-12)
    p1, p2 = rng.normal(size=(50, 6, 3)), rng.normal(size=(50, 6, 3))
    obs, mask = rng.uniform(0, 2, (50, 6, 6)), rng.random((50, 6, 6)) > 0.2
    r = [kernels.BACKENDS[k].distance_residual(p1, p2, obs, mask) for k in BACKENDS]
    assert r[0][0] == pytest.approx(r[1][0], rel=1e-12)
    np.testing.assert_allclose(r[0][1], r[1][1], rtol=1e-10, atol=1e-12)
