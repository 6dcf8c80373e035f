"""Convolutional-recurrent frame classifier in plain numpy.

Pipeline for a batch of windows shaped (b, 2, n, 21, 3)::

    conv1 (3,4,3)/pad (1,3,0)/stride (1,4,1) -> BN -> ReLU
    conv2 (1,6,1)                            -> BN -> ReLU
    reshape (b, n, c2) -> GRU -> GRU -> dropout -> FC -> ReLU -> FC -> softmax

Activations are kept channel-last internally; the public conv helpers return
the channel-first layout (b, c, n, h, w).  Everything runs in float64.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

NUM_CLASSES = 28
N_POINTS = 21
N_GROUPS = 6  # wrist + five fingers after the first conv
GROUP_SIZE = 4
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeMismatch(ValueError):
    pass


class DegenerateBatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    conv1_channels: int = 32
    conv2_channels: int = 64
    gru_hidden: int = 128
    fc_hidden: int = 64
    dropout: float = 0.2
    window_size: int = 128
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        for name in ("conv1_channels", "conv2_channels", "gru_hidden", "fc_hidden",
                     "window_size", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor's shape, derived from the config alone."""
    c1, c2, h = config.conv1_channels, config.conv2_channels, config.gru_hidden
    return {
        "conv1.weight": (c1, 2, 3, GROUP_SIZE, 3),
        "conv1.bias": (c1,),
        "bn1.gamma": (c1,),
        "bn1.beta": (c1,),
        "conv2.weight": (c2, c1, 1, N_GROUPS, 1),
        "conv2.bias": (c2,),
        "bn2.gamma": (c2,),
        "bn2.beta": (c2,),
        "gru1.w_ih": (3 * h, c2),
        "gru1.w_hh": (3 * h, h),
        "gru1.b_ih": (3 * h,),
        "gru1.b_hh": (3 * h,),
        "gru2.w_ih": (3 * h, h),
        "gru2.w_hh": (3 * h, h),
        "gru2.b_ih": (3 * h,),
        "gru2.b_hh": (3 * h,),
        "fc1.weight": (config.fc_hidden, h),
        "fc1.bias": (config.fc_hidden,),
        "fc2.weight": (config.num_classes, config.fc_hidden),
        "fc2.bias": (config.num_classes,),
    }


def buffer_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    c1, c2 = config.conv1_channels, config.conv2_channels
    return {
        "bn1.running_mean": (c1,),
        "bn1.running_var": (c1,),
        "bn2.running_mean": (c2,),
        "bn2.running_var": (c2,),
    }


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.weights, **self.buffers}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.weights.values())


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("conv"):
        return int(np.prod(shape[1:]))
    return shape[1]


def init_params(config: ModelConfig, rng: np.random.Generator | int | None = 0) -> ModelParams:
    """Uniform fan-in init for weight matrices, zero biases, identity batchnorm."""
    rng = np.random.default_rng(rng)
    weights = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            weights[name] = np.ones(shape)
        elif name.endswith((".bias", ".beta", ".b_ih", ".b_hh")):
            weights[name] = np.zeros(shape)
        else:
            bound = np.sqrt(3.0 / _fan_in(name, shape))
            weights[name] = rng.uniform(-bound, bound, size=shape)
    buffers = {
        name: (np.ones(shape) if name.endswith("var") else np.zeros(shape))
        for name, shape in buffer_shapes(config).items()
    }
    return ModelParams(config, weights, buffers)


# --- primitive layers ---------------------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs, dprobs):
    return probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))


def conv1_columns(x: np.ndarray) -> np.ndarray:
    """Unfold (b, 2, n, 21, 3) into (b, n, 6, 72) patches for the first conv.

    Height padding of 3 on top lines the stride-4 windows up with the wrist
    (alone, after 3 pad rows) and the five 4-point fingers.  The 3 bottom pad
    rows are never reached by a window, so they are skipped.
    """
    if x.ndim != 5 or x.shape[1] != 2 or x.shape[3:] != (N_POINTS, 3):
        raise ShapeMismatch(f"expected (b, 2, n, 21, 3), got {x.shape}")
    b, _, n, _, _ = x.shape
    xp = np.zeros((b, 2, n + 2, N_GROUPS * GROUP_SIZE, 3))
    xp[:, :, 1:n + 1, 3:] = x
    xp = xp.reshape(b, 2, n + 2, N_GROUPS, GROUP_SIZE, 3)
    cols = np.stack([xp[:, :, k:k + n] for k in range(3)], axis=2)  # (b, 2, 3, n, 6, 4, 3)
    return cols.transpose(0, 3, 4, 1, 2, 5, 6).reshape(b, n, N_GROUPS, 2 * 3 * GROUP_SIZE * 3)


def conv3d_forward(x: np.ndarray, params: ModelParams, config: ModelConfig | None = None) -> np.ndarray:
    """First 3D conv: (b, 2, n, 21, 3) -> (b, c1, n, 6, 1)."""
    w, bias = params.weights["conv1.weight"], params.weights["conv1.bias"]
    y = conv1_columns(x) @ w.reshape(len(w), -1).T + bias
    return y.transpose(0, 3, 1, 2)[..., None]


def _conv2_matrix(w: np.ndarray) -> np.ndarray:
    # (c2, c1, 1, 6, 1) -> (c2, 6*c1) matching a (b, n, 6, c1) activation flattened on its last two axes
    return w[:, :, 0, :, 0].transpose(0, 2, 1).reshape(w.shape[0], -1)


def conv3d_second_forward(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Second 3D conv with a (1, 6, 1) kernel: (b, c1, n, 6, 1) -> (b, c2, n, 1, 1)."""
    w, bias = params.weights["conv2.weight"], params.weights["conv2.bias"]
    if x.ndim != 5 or x.shape[3:] != (N_GROUPS, 1) or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"expected (b, {w.shape[1]}, n, 6, 1), got {x.shape}")
    xl = x[..., 0].transpose(0, 2, 3, 1)  # (b, n, 6, c1)
    y = xl.reshape(*xl.shape[:2], -1) @ _conv2_matrix(w).T + bias
    return y.transpose(0, 2, 1)[..., None, None]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization of a channel-last array.

    In train mode the running statistics are updated in place.
    Returns (y, cache); cache is None in eval mode.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        count = x.size // x.shape[-1]
        if x.shape[0] < 2 or count < 2:
            raise DegenerateBatch("batchnorm in train mode needs at least 2 samples")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        return xhat * gamma + beta, (xhat, inv_std, gamma)
    inv_std = 1.0 / np.sqrt(running_var + eps)
    return (x - running_mean) * inv_std * gamma + beta, None


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = tuple(range(dy.ndim - 1))
    count = dy.size // dy.shape[-1]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dx = inv_std / count * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def dropout_forward(x, p: float, mode="train", rng: np.random.Generator | None = None):
    """Inverted dropout.  Returns (y, mask); mask is None when inactive."""
    if mode != "train" or p == 0.0:
        return x, None
    rng = np.random.default_rng() if rng is None else rng
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def gru_step(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU step; gate blocks are stacked in (reset, update, candidate) order."""
    hid = h.shape[-1]
    gi = x @ w_ih.T + b_ih
    gh = h @ w_hh.T + b_hh
    r = sigmoid(gi[..., :hid] + gh[..., :hid])
    z = sigmoid(gi[..., hid:2 * hid] + gh[..., hid:2 * hid])
    cand = np.tanh(gi[..., 2 * hid:] + r * gh[..., 2 * hid:])
    return (1.0 - z) * cand + z * h


def gru_forward(x_seq, h0, w_ih, w_hh, b_ih, b_hh, return_cache=False):
    """Run a GRU over (b, n, f_in) and return all hidden states (b, n, h).

    The last hidden state is ``out[:, -1]`` and can be fed back as ``h0``.
    """
    b, n, f_in = x_seq.shape
    hid = w_hh.shape[1]
    if w_ih.shape != (3 * hid, f_in) or h0.shape != (b, hid):
        raise ShapeMismatch(f"GRU shapes: x {x_seq.shape}, h0 {h0.shape}, w_ih {w_ih.shape}")
    gi_all = x_seq @ w_ih.T + b_ih
    out = np.empty((b, n, hid))
    rs, zs, cands, ghn = (np.empty((b, n, hid)) for _ in range(4))
    h = h0
    for t in range(n):
        gi = gi_all[:, t]
        gh = h @ w_hh.T + b_hh
        r = sigmoid(gi[:, :hid] + gh[:, :hid])
        z = sigmoid(gi[:, hid:2 * hid] + gh[:, hid:2 * hid])
        cand = np.tanh(gi[:, 2 * hid:] + r * gh[:, 2 * hid:])
        h = (1.0 - z) * cand + z * h
        out[:, t] = h
        rs[:, t], zs[:, t], cands[:, t], ghn[:, t] = r, z, cand, gh[:, 2 * hid:]
    if not return_cache:
        return out
    return out, (x_seq, h0, out, rs, zs, cands, ghn)


def gru_backward(dout, cache, w_ih, w_hh):
    """Backprop through time.  Returns (dx, dh0, dw_ih, dw_hh, db_ih, db_hh)."""
    x_seq, h0, out, rs, zs, cands, ghn = cache
    b, n, hid = out.shape
    dgi = np.empty((b, n, 3 * hid))
    dw_hh = np.zeros_like(w_hh)
    db_hh = np.zeros(3 * hid)
    dh_next = np.zeros((b, hid))
    for t in range(n - 1, -1, -1):
        h_prev = out[:, t - 1] if t > 0 else h0
        r, z, cand = rs[:, t], zs[:, t], cands[:, t]
        dh = dout[:, t] + dh_next
        dcand_pre = dh * (1.0 - z) * (1.0 - cand * cand)
        dz_pre = dh * (h_prev - cand) * z * (1.0 - z)
        dr_pre = dcand_pre * ghn[:, t] * r * (1.0 - r)
        dgh = np.concatenate([dr_pre, dz_pre, dcand_pre * r], axis=1)
        dgi[:, t] = np.concatenate([dr_pre, dz_pre, dcand_pre], axis=1)
        dw_hh += dgh.T @ h_prev
        db_hh += dgh.sum(axis=0)
        dh_next = dh * z + dgh @ w_hh
    flat_dgi = dgi.reshape(b * n, -1)
    dw_ih = flat_dgi.T @ x_seq.reshape(b * n, -1)
    db_ih = flat_dgi.sum(axis=0)
    dx = dgi @ w_ih
    return dx, dh_next, dw_ih, dw_hh, db_ih, db_hh


# --- full model ---------------------------------------------------------------

def _check_input(x):
    if x.ndim != 5 or x.shape[1] != 2 or x.shape[3:] != (N_POINTS, 3):
        raise ShapeMismatch(f"expected (b, 2, n, 21, 3), got {x.shape}")


def model_forward(x, params: ModelParams, mode: str = "eval", rng: np.random.Generator | None = None,
                  h0: tuple[np.ndarray, np.ndarray] | None = None, return_cache: bool = False):
    """Per-frame class probabilities (b, n, 28).

    ``mode`` is "train" (batch statistics, dropout active, running stats
    updated) or "eval".  ``h0`` optionally seeds both GRUs.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    config = params.config
    x = np.asarray(x, dtype=np.float64)
    _check_input(x)
    w, buf = params.weights, params.buffers
    b, _, n, _, _ = x.shape
    hid = config.gru_hidden

    cols = conv1_columns(x)
    c1w = w["conv1.weight"].reshape(config.conv1_channels, -1)
    y1 = cols @ c1w.T + w["conv1.bias"]  # (b, n, 6, c1)
    bn1, bn1_cache = batchnorm_forward(y1, w["bn1.gamma"], w["bn1.beta"],
                                       buf["bn1.running_mean"], buf["bn1.running_var"], mode)
    a1 = np.maximum(bn1, 0.0)

    a1f = a1.reshape(b, n, -1)
    c2w = _conv2_matrix(w["conv2.weight"])
    y2 = a1f @ c2w.T + w["conv2.bias"]  # (b, n, c2)
    bn2, bn2_cache = batchnorm_forward(y2, w["bn2.gamma"], w["bn2.beta"],
                                       buf["bn2.running_mean"], buf["bn2.running_var"], mode)
    feats = np.maximum(bn2, 0.0)

    h1_0, h2_0 = h0 if h0 is not None else (np.zeros((b, hid)), np.zeros((b, hid)))
    g1, g1_cache = gru_forward(feats, h1_0, w["gru1.w_ih"], w["gru1.w_hh"], w["gru1.b_ih"],
                               w["gru1.b_hh"], return_cache=True)
    g2, g2_cache = gru_forward(g1, h2_0, w["gru2.w_ih"], w["gru2.w_hh"], w["gru2.b_ih"],
                               w["gru2.b_hh"], return_cache=True)
    d, mask = dropout_forward(g2, config.dropout, mode, rng)
    f1 = d @ w["fc1.weight"].T + w["fc1.bias"]
    a3 = np.maximum(f1, 0.0)
    logits = a3 @ w["fc2.weight"].T + w["fc2.bias"]
    probs = softmax(logits)
    if not return_cache:
        return probs
    cache = dict(x=x, cols=cols, y1=y1, bn1=bn1, bn1_cache=bn1_cache, a1f=a1f, y2=y2,
                 bn2=bn2, bn2_cache=bn2_cache, feats=feats, g1=g1, g1_cache=g1_cache, g2=g2,
                 g2_cache=g2_cache, d=d, mask=mask, f1=f1, a3=a3, probs=probs, mode=mode)
    return probs, cache


def model_backward(dprobs, cache, params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of every weight given dL/dprobs and the forward cache."""
    if cache["mode"] != "train":
        raise ValueError("backward needs a train-mode forward cache")
    w = params.weights
    config = params.config
    b, n, _ = dprobs.shape
    grads = {}

    dlogits = softmax_backward(cache["probs"], dprobs)
    grads["fc2.weight"] = np.einsum("bnk,bnj->kj", dlogits, cache["a3"])
    grads["fc2.bias"] = dlogits.sum(axis=(0, 1))
    da3 = dlogits @ w["fc2.weight"]
    df1 = da3 * (cache["f1"] > 0)
    grads["fc1.weight"] = np.einsum("bnk,bnj->kj", df1, cache["d"])
    grads["fc1.bias"] = df1.sum(axis=(0, 1))
    dd = df1 @ w["fc1.weight"]
    dg2 = dd if cache["mask"] is None else dd * cache["mask"]

    dg1, _, *g2_grads = gru_backward(dg2, cache["g2_cache"], w["gru2.w_ih"], w["gru2.w_hh"])
    dfeats, _, *g1_grads = gru_backward(dg1, cache["g1_cache"], w["gru1.w_ih"], w["gru1.w_hh"])
    for prefix, gs in (("gru2", g2_grads), ("gru1", g1_grads)):
        for suffix, g in zip(("w_ih", "w_hh", "b_ih", "b_hh"), gs):
            grads[f"{prefix}.{suffix}"] = g

    dbn2 = dfeats * (cache["bn2"] > 0)
    dy2, grads["bn2.gamma"], grads["bn2.beta"] = batchnorm_backward(dbn2, cache["bn2_cache"])
    c1 = config.conv1_channels
    dc2 = np.einsum("bno,bnj->oj", dy2, cache["a1f"])  # (c2, 6*c1)
    grads["conv2.weight"] = dc2.reshape(-1, N_GROUPS, c1).transpose(0, 2, 1)[:, :, None, :, None]
    grads["conv2.bias"] = dy2.sum(axis=(0, 1))
    da1 = (dy2 @ _conv2_matrix(w["conv2.weight"])).reshape(b, n, N_GROUPS, c1)

    dbn1 = da1 * (cache["bn1"] > 0)
    dy1, grads["bn1.gamma"], grads["bn1.beta"] = batchnorm_backward(dbn1, cache["bn1_cache"])
    dc1 = np.einsum("bngc,bngk->ck", dy1, cache["cols"])
    grads["conv1.weight"] = dc1.reshape(w["conv1.weight"].shape)
    grads["conv1.bias"] = dy1.sum(axis=(0, 1, 2))
    return grads


# --- losses -------------------------------------------------------------------

LOG_CLAMP = 1e-12


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")


def mse_loss(pred, target) -> float:
    _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target, scale: float = 1.0):
    _check_pair(pred, target)
    return scale * 2.0 * (pred - target) / pred.size


def weighted_ce_loss(pred, target, weights) -> float:
    _check_pair(pred, target)
    frames = pred.size // pred.shape[-1]
    return float(-(np.asarray(weights) * target * np.log(np.maximum(pred, LOG_CLAMP))).sum() / frames)


def weighted_ce_grad(pred, target, weights, scale: float = 1.0):
    _check_pair(pred, target)
    frames = pred.size // pred.shape[-1]
    safe = np.maximum(pred, LOG_CLAMP)
    return -scale * np.asarray(weights) * target * (pred >= LOG_CLAMP) / safe / frames


def loss_and_grads(x, target, params: ModelParams, loss_kind: str = "mse", class_weights=None,
                   rng: np.random.Generator | None = None, loss_scale: float = 1.0):
    """Train-mode forward + backward.  Returns (loss, grads, probs)."""
    probs, cache = model_forward(x, params, mode="train", rng=rng, return_cache=True)
    if loss_kind == "mse":
        loss = mse_loss(probs, target)
        dprobs = mse_grad(probs, target, loss_scale)
    elif loss_kind == "ce":
        weights = np.ones(params.config.num_classes) if class_weights is None else class_weights
        loss = weighted_ce_loss(probs, target, weights)
        dprobs = weighted_ce_grad(probs, target, weights, loss_scale)
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    return loss_scale * loss, model_backward(dprobs, cache, params), probs
