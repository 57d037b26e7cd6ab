"""Diagonal state-space sequence layers and the four-head pose estimator.

Each channel carries a continuous system h' = a*h + b*x, y = c.h with a real
diagonal, negative ``a``. Zero-order hold turns it into the recurrence
h_t = a_bar*h_{t-1} + b_bar*x_t, whose impulse response c*a_bar^k*b_bar is the
convolution kernel used during training.

A residual layer computes, for hidden activations z of shape (L, H)::

    z <- z + dropout(silu(ssm(layer_norm(z))))

and a head is ``decoder(layer^n(encoder(x)))``. Gradients are hand-written;
``tests/test_ssm_grad.py`` checks them against central differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionError, DivergenceError, ParameterError

log = logging.getLogger(__name__)

ZOH_LIMIT = 1e-8
LN_EPS = 1e-5
HEADS = ("J", "R", "V", "C")


# ---------------------------------------------------------------------------
# single-channel primitives


@dataclass(frozen=True)
class ContinuousSSM:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))


@dataclass(frozen=True)
class DiscreteSSM:
    a_bar: np.ndarray
    b_bar: np.ndarray


def _phi(z):
    """expm1(z)/z with its limit 1 at z = 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < ZOH_LIMIT
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _dphi(z):
    """Derivative of :func:`_phi`."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / safe**2
    series = 0.5 + z / 3.0 + z**2 / 8.0 + z**3 / 30.0
    return np.where(small, series, exact)


def zoh(a, b, delta):
    """Elementwise zero-order hold; broadcasts ``delta`` against ``a`` and ``b``."""
    delta = np.asarray(delta, dtype=float)
    if np.any(~(delta > 0)):
        raise ParameterError("timescale delta must be positive")
    z = delta * np.asarray(a, dtype=float)
    return np.exp(z), _phi(z) * delta * np.asarray(b, dtype=float)


def discretize_zoh(cssm):
    a_bar, b_bar = zoh(cssm.a, cssm.b, cssm.delta)
    return DiscreteSSM(a_bar, b_bar)


def ssm_scan(dssm, c, x):
    """Run the recurrence over a 1-D input sequence, h_0 = 0."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError("ssm_scan expects a non-empty 1-D sequence")
    y = kernels.ssm_scan(
        np.atleast_2d(dssm.a_bar), np.atleast_2d(dssm.b_bar), np.atleast_2d(c), x[:, None]
    )
    return y[:, 0]


def ssm_kernel(dssm, c, L):
    """Impulse response kernel[k] = c . a_bar^k b_bar for k < L."""
    if L < 1:
        raise DimensionError("kernel length must be at least 1")
    k = np.arange(L)
    powers = np.asarray(dssm.a_bar, dtype=float)[:, None] ** k
    return np.einsum("n,n,nk->k", np.atleast_1d(c), np.atleast_1d(dssm.b_bar), powers)


def causal_conv(kernel, x):
    """y[t] = sum_{k<=t} kernel[k] x[t-k]."""
    x = np.asarray(x, dtype=float)
    return np.convolve(x, np.asarray(kernel, dtype=float)[: len(x)])[: len(x)]


# ---------------------------------------------------------------------------
# batched building blocks with backward passes


def _fft_len(L):
    return 1 << int(math.ceil(math.log2(2 * L)))


def _conv_time(kernel, u):
    """Causal convolution of u (..., L, H) with kernel (H, L) along time."""
    L = u.shape[-2]
    n = _fft_len(L)
    kf = np.fft.rfft(kernel, n=n, axis=-1).T
    uf = np.fft.rfft(u, n=n, axis=-2)
    return np.fft.irfft(uf * kf, n=n, axis=-2)[..., :L, :]


def _ssm_params(log_a, b, log_dt):
    a = -np.exp(log_a)
    dt = np.exp(log_dt)
    z = dt[:, None] * a
    a_bar = np.exp(z)
    b_bar = _phi(z) * dt[:, None] * b
    return a, dt, z, a_bar, b_bar


def ssm_layer_kernel(log_a, b, c, log_dt, L):
    """Per-channel kernels (H, L) for a bank of diagonal SSMs."""
    _, _, z, _, b_bar = _ssm_params(log_a, b, log_dt)
    powers = np.exp(z[..., None] * np.arange(L))
    return np.einsum("hn,hn,hnk->hk", c, b_bar, powers)


def _ssm_forward(p, u, mode):
    log_a, b, c, log_dt = p
    a, dt, z, a_bar, b_bar = _ssm_params(log_a, b, log_dt)
    L = u.shape[-2]
    if mode == "scan":
        flat = u.reshape(-1, L, u.shape[-1])
        y = np.stack([kernels.ssm_scan(a_bar, b_bar, c, seq) for seq in flat])
        return y.reshape(u.shape), None
    powers = np.exp(z[..., None] * np.arange(L))
    K = np.einsum("hn,hn,hnk->hk", c, b_bar, powers)
    cache = (a, dt, z, b_bar, powers, K, u)
    return _conv_time(K, u), cache


def _ssm_backward(p, cache, gy):
    log_a, b, c, log_dt = p
    a, dt, z, b_bar, powers, K, u = cache
    L = u.shape[-2]
    n = _fft_len(L)
    gf = np.fft.rfft(gy, n=n, axis=-2)
    uf = np.fft.rfft(u, n=n, axis=-2)
    kf = np.fft.rfft(K, n=n, axis=-1).T
    gu = np.fft.irfft(gf * np.conj(kf), n=n, axis=-2)[..., :L, :]
    corr = np.fft.irfft(gf * np.conj(uf), n=n, axis=-2)[..., :L, :]
    gK = corr.reshape(-1, L, corr.shape[-1]).sum(axis=0).T  # (H, L)
    k = np.arange(L)
    gc = np.einsum("hk,hnk->hn", gK, powers) * b_bar
    gbbar = np.einsum("hk,hnk->hn", gK, powers) * c
    gz = np.einsum("hk,hnk,k->hn", gK, powers, k) * c * b_bar
    gz += gbbar * dt[:, None] * b * _dphi(z)
    gdt = np.sum(gz * a, axis=1) + np.sum(gbbar * _phi(z) * b, axis=1)
    ga = gz * dt[:, None]
    grads = (ga * a, gbbar * _phi(z) * dt[:, None], gc, gdt * dt)
    return grads, gu


def _layer_norm(z, g, b):
    mu = z.mean(axis=-1, keepdims=True)
    xc = z - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(cache, g, gy):
    xhat, inv = cache
    gxhat = gy * g
    gz = inv * (
        gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
    )
    red = tuple(range(gy.ndim - 1))
    return gz, (gy * xhat).sum(axis=red), gy.sum(axis=red)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def silu(v):
    return v * _sigmoid(v)


# ---------------------------------------------------------------------------
# estimator


@dataclass
class EstimatorConfig:
    hidden: int = 64
    contact_hidden: int = 32
    state_size: int = 16
    layers: int = 2
    dropout: float = 0.2
    sensors: int = 6
    joints: int = 24
    fps: float = 60.0
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    seed: int = 0
    # training
    lr: float = 1e-3
    lr_decay: float = 0.33
    decay_every: int = 20
    epochs: int = 40
    steps_per_epoch: int = 10
    batch_size: int = 16
    seq_len: int = 100
    loss_weights: dict = field(default_factory=lambda: {"pos": 1.0, "theta": 1.0, "vel": 1.0, "contact": 1.0})

    @classmethod
    def full_width(cls, **kw):
        kw = {"hidden": 256, "contact_hidden": 32, "batch_size": 256, "seq_len": 200, **kw}
        return cls(**kw)

    def head_dims(self):
        S, J = self.sensors, self.joints
        d_j = S * 3 + S * 9
        d_feat = d_j + S * S + S * 3
        return {
            "J": (d_j, self.hidden, S * 3),
            "R": (d_feat, self.hidden, 3 * J),
            "V": (d_feat, self.hidden, 3),
            "C": (d_feat, self.contact_hidden, 2),
        }


@dataclass
class EstimatorWeights:
    config: EstimatorConfig
    params: dict

    def copy(self):
        return EstimatorWeights(self.config, {k: v.copy() for k, v in self.params.items()})

    def save(self, path):
        doc = {
            "format": "mocapfuse-checkpoint/1",
            "config": asdict(self.config),
            "tensors": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()
            },
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        cfg = EstimatorConfig(**doc["config"])
        params = {
            k: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for k, t in doc["tensors"].items()
        }
        weights = cls(cfg, params)
        expected = init_estimator(cfg).params
        for k, v in expected.items():
            if k not in params or params[k].shape != v.shape:
                raise DimensionError(f"checkpoint tensor {k!r} missing or misshapen")
        return weights


def _layer_keys(head, i):
    pre = f"{head}.l{i}."
    return [pre + s for s in ("ln.g", "ln.b", "log_a", "b", "c", "log_dt")]


def init_estimator(config, rng=None):
    """Random initial weights.

    Encoder/decoder: uniform +-1/sqrt(fan_in). SSM: a_n = -(n+1), b = 1,
    c ~ N(0, 1/N), delta log-uniform on [dt_min, dt_max].
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    N = config.state_size
    params = {}
    for head, (d_in, H, d_out) in config.head_dims().items():
        lim = 1.0 / math.sqrt(d_in)
        params[f"{head}.enc.w"] = rng.uniform(-lim, lim, (d_in, H))
        params[f"{head}.enc.b"] = np.zeros(H)
        for i in range(config.layers):
            g, bb, la, b, c, ldt = _layer_keys(head, i)
            params[g] = np.ones(H)
            params[bb] = np.zeros(H)
            params[la] = np.tile(np.log(np.arange(1, N + 1, dtype=float)), (H, 1))
            params[b] = np.ones((H, N))
            params[c] = rng.normal(0.0, math.sqrt(1.0 / N), (H, N))
            params[ldt] = rng.uniform(math.log(config.dt_min), math.log(config.dt_max), H)
        lim = 1.0 / math.sqrt(H)
        params[f"{head}.dec.w"] = rng.uniform(-lim, lim, (H, d_out))
        params[f"{head}.dec.b"] = np.zeros(d_out)
    return EstimatorWeights(config, params)


def zero_estimator(config):
    w = init_estimator(config)
    return EstimatorWeights(config, {k: np.zeros_like(v) for k, v in w.params.items()})


def s4_block_forward(weights, head, x, *, train=False, rng=None, mode="conv", _cache=None):
    """Encoder followed by the residual SSM layers; returns (..., L, H)."""
    p = weights.params
    cfg = weights.config
    x = np.asarray(x, dtype=float)
    w_enc = p[f"{head}.enc.w"]
    if x.shape[-1] != w_enc.shape[0]:
        raise DimensionError(f"head {head} expects {w_enc.shape[0]} input features, got {x.shape[-1]}")
    z = x @ w_enc + p[f"{head}.enc.b"]
    layers = []
    for i in range(cfg.layers):
        g, bb, la, b, c, ldt = _layer_keys(head, i)
        u, ln_cache = _layer_norm(z, p[g], p[bb])
        v, ssm_cache = _ssm_forward((p[la], p[b], p[c], p[ldt]), u, mode)
        s = _sigmoid(v)
        act = v * s
        mask = None
        if train and cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            mask = (rng.random(act.shape) < keep) / keep
            act = act * mask
        z = z + act
        layers.append((ln_cache, ssm_cache, v, s, mask))
    if _cache is not None:
        _cache.update(x=x, layers=layers, hidden=z)
    return z


def _head_forward(weights, head, x, train, rng, mode):
    cache = {}
    z = s4_block_forward(weights, head, x, train=train, rng=rng, mode=mode, _cache=cache)
    p = weights.params
    return z @ p[f"{head}.dec.w"] + p[f"{head}.dec.b"], cache


def _sum_leading(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _head_backward(weights, head, cache, gy, grads):
    p = weights.params
    cfg = weights.config
    z = cache["hidden"]
    grads[f"{head}.dec.w"] = z.reshape(-1, z.shape[-1]).T @ gy.reshape(-1, gy.shape[-1])
    grads[f"{head}.dec.b"] = _sum_leading(gy)
    gz = gy @ p[f"{head}.dec.w"].T
    for i in reversed(range(cfg.layers)):
        g, bb, la, b, c, ldt = _layer_keys(head, i)
        ln_cache, ssm_cache, v, s, mask = cache["layers"][i]
        gact = gz if mask is None else gz * mask
        gv = gact * s * (1.0 + v * (1.0 - s))
        (g_la, g_b, g_c, g_ldt), gu = _ssm_backward((p[la], p[b], p[c], p[ldt]), ssm_cache, gv)
        gz_ln, g_g, g_bb = _layer_norm_backward(ln_cache, p[g], gu)
        grads.update({la: g_la, b: g_b, c: g_c, ldt: g_ldt, g: g_g, bb: g_bb})
        gz = gz + gz_ln
    x = cache["x"]
    grads[f"{head}.enc.w"] = x.reshape(-1, x.shape[-1]).T @ gz.reshape(-1, gz.shape[-1])
    grads[f"{head}.enc.b"] = _sum_leading(gz)
    return gz @ p[f"{head}.enc.w"].T


def integrate_velocity(vel, fps):
    """Translation from per-frame root velocity: T_0 = 0, T_t = T_{t-1} + v_t / fps."""
    vel = np.asarray(vel, dtype=float)
    trans = np.cumsum(vel, axis=-2) / fps
    return trans - trans[..., :1, :]


def _as_features(arr, S, per_sensor):
    arr = np.asarray(arr, dtype=float)
    if per_sensor == 9 and arr.ndim >= 4 and arr.shape[-3:] == (S, 3, 3):
        return arr.reshape(arr.shape[:-3] + (S * 9,))
    if arr.ndim >= 3 and arr.shape[-2:] == (S, per_sensor):
        return arr.reshape(arr.shape[:-2] + (S * per_sensor,))
    return arr


def _estimator_inputs(A, R, D_same, cfg):
    S = cfg.sensors
    A, R, D_same = _as_features(A, S, 3), _as_features(R, S, 9), _as_features(D_same, S, S)
    if A.shape[-1] != 3 * S or R.shape[-1] != 9 * S or D_same.shape[-1] != S * S:
        raise DimensionError("estimator inputs must be L x S*3, L x S*9 and L x S*S")
    if not (A.shape[:-1] == R.shape[:-1] == D_same.shape[:-1]):
        raise DimensionError("estimator inputs must share their sequence length")
    for name, arr in (("acceleration", A), ("orientation", R), ("distance", D_same)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} input contains NaN or inf")
    return A, R, D_same


def _forward_all(weights, A, R, D_same, train=False, rng=None, mode="conv"):
    cfg = weights.config
    A, R, D_same = _estimator_inputs(A, R, D_same, cfg)
    base = np.concatenate([A, R], axis=-1)
    pos, cj = _head_forward(weights, "J", base, train, rng, mode)
    feat = np.concatenate([base, D_same, pos], axis=-1)
    out = {"pos": pos}
    caches = {"J": cj}
    for head, key in (("R", "theta"), ("V", "vel"), ("C", "contact")):
        out[key], caches[head] = _head_forward(weights, head, feat, train, rng, mode)
    out["trans"] = integrate_velocity(out["vel"], cfg.fps)
    return out, caches


def pose_estimator_forward(weights, A, R, D_same, mode="scan"):
    """Inference pass (dropout off).

    Returns ``(theta_hat, trans_hat, contacts, velocities)`` with shapes
    (L, 3J), (L, 3), (L, 2), (L, 3). ``mode="scan"`` runs the recurrence,
    ``"conv"`` the FFT convolution; both give the same result.
    """
    out, _ = _forward_all(weights, A, R, D_same, train=False, mode=mode)
    return out["theta"], out["trans"], out["contact"], out["vel"]


def predict_sensor_positions(weights, A, R, mode="scan"):
    S = weights.config.sensors
    A, R = _as_features(A, S, 3), _as_features(R, S, 9)
    pos, _ = _head_forward(weights, "J", np.concatenate([A, R], axis=-1), False, None, mode)
    return pos.reshape(-1, S, 3)


def estimator_loss(weights, batch, train=False, rng=None):
    """Weighted mean-squared error over the four heads; returns (loss, parts, caches)."""
    out, caches = _forward_all(weights, batch["A"], batch["R"], batch["D"], train=train, rng=rng)
    lw = weights.config.loss_weights
    parts = {}
    resid = {}
    for key in ("pos", "theta", "vel", "contact"):
        r = out[key] - np.asarray(batch[key], dtype=float).reshape(out[key].shape)
        resid[key] = r
        parts[key] = float(np.mean(r * r))
    loss = sum(lw[k] * parts[k] for k in parts)
    return loss, parts, (out, caches, resid)


def estimator_backward(weights, batch, train=False, rng=None):
    """Loss and gradient of :func:`estimator_loss` with respect to every tensor."""
    loss, parts, (out, caches, resid) = estimator_loss(weights, batch, train=train, rng=rng)
    lw = weights.config.loss_weights
    S = weights.config.sensors
    grads = {}
    g = {k: 2.0 * lw[k] * resid[k] / resid[k].size for k in resid}
    d_base = 3 * S + 9 * S
    d_dist = S * S
    gpos = g["pos"].copy()
    for head, key in (("R", "theta"), ("V", "vel"), ("C", "contact")):
        gfeat = _head_backward(weights, head, caches[head], g[key], grads)
        gpos += gfeat[..., d_base + d_dist :]
    _head_backward(weights, "J", caches["J"], gpos, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    weights: EstimatorWeights
    epoch_loss: list
    step_loss: list


def _sample_batch(dataset, cfg, rng):
    lengths = [len(s["A"]) for s in dataset]
    L = min(cfg.seq_len, min(lengths))
    keys = ("A", "R", "D", "pos", "theta", "vel", "contact")
    picks = rng.integers(0, len(dataset), cfg.batch_size)
    out = {k: [] for k in keys}
    for i in picks:
        s = dataset[i]
        start = int(rng.integers(0, len(s["A"]) - L + 1))
        for k in keys:
            arr = np.asarray(s[k], dtype=float)
            out[k].append(arr[start : start + L].reshape(L, -1))
    return {k: np.stack(v) for k, v in out.items()}


def train_toy(config, dataset, weights=None, log_every=0):
    """Adam on mean-squared head losses with step decay of the learning rate.

    ``dataset`` is a list of per-sequence dicts with keys A, R, D, pos, theta,
    vel, contact (see :func:`mocapfuse.simulate.training_sample`). Each epoch
    draws ``steps_per_epoch`` batches of random windows. The learning rate is
    multiplied by ``lr_decay`` every ``decay_every`` epochs.
    """
    rng = np.random.default_rng(config.seed + 1)
    weights = init_estimator(config) if weights is None else weights.copy()
    opt = Adam(weights.params, config.lr)
    epoch_loss, step_loss = [], []
    for epoch in range(config.epochs):
        opt.lr = config.lr * config.lr_decay ** (epoch // config.decay_every)
        losses = []
        for _ in range(config.steps_per_epoch):
            batch = _sample_batch(dataset, config, rng)
            loss, grads = estimator_backward(weights, batch, train=True, rng=rng)
            if not np.isfinite(loss) or loss > 1e6:
                raise DivergenceError(f"training diverged at epoch {epoch}: loss={loss!r}, lr={opt.lr}")
            opt.step(weights.params, grads)
            losses.append(loss)
        step_loss.extend(losses)
        epoch_loss.append(float(np.mean(losses)))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.6f lr %.2e", epoch, epoch_loss[-1], opt.lr)
    return TrainResult(weights, epoch_loss, step_loss)
