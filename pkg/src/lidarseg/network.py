"""Dense float64 CNN built on numpy: forward, analytic gradients, ADAM.

Architecture: three blocks of conv(3x3, same padding) -> ReLU -> maxpool(2x2),
then two ReLU fully-connected layers of equal width and a linear classifier
head with softmax. Everything is float64 so gradient checks against central
finite differences hold to tight tolerances.

Parameters travel as a plain dict of named arrays (see PLANES for the
canonical order); optimizer steps are functional and return new dicts, so a
checkpoint is always a consistent snapshot.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import truncnorm

from .errors import DataError, NumericAbort

PLANES = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
    "head_w", "head_b",
)

_WEIGHT_STD = 0.1
_TRUNC_SIGMAS = 2.0
_LOSS_CLAMP = 1e-12

_CKPT_MAGIC = b"LCKP"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHI")  # magic, version, json header length


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 64
    conv_channels: tuple[int, int, int] = (32, 32, 64)
    fc_width: int = 128
    n_classes: int = 5
    kernel_size: int = 3
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.input_size < 8 or self.input_size % 4 != 0:
            raise ValueError("input_size must be >= 8 and divisible by 4")
        if len(self.conv_channels) != 3 or min(self.conv_channels) < 1:
            raise ValueError("conv_channels must be three positive counts")
        if self.fc_width < 1:
            raise ValueError("fc_width must be positive")
        if self.n_classes not in (5, 7):
            raise ValueError("n_classes must be 5 or 7")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd (same padding)")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")

    @property
    def flat_dim(self) -> int:
        s = self.input_size
        for _ in range(3):
            s //= 2
        return s * s * self.conv_channels[2]


def plane_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    k = cfg.kernel_size
    c1, c2, c3 = cfg.conv_channels
    f = cfg.fc_width
    return {
        "conv1_w": (k, k, cfg.in_channels, c1),
        "conv1_b": (c1,),
        "conv2_w": (k, k, c1, c2),
        "conv2_b": (c2,),
        "conv3_w": (k, k, c2, c3),
        "conv3_b": (c3,),
        "fc1_w": (cfg.flat_dim, f),
        "fc1_b": (f,),
        "fc2_w": (f, f),
        "fc2_b": (f,),
        "head_w": (f, cfg.n_classes),
        "head_b": (cfg.n_classes,),
    }


def _draw_weights(rng: np.random.Generator, shape) -> np.ndarray:
    return truncnorm.rvs(
        -_TRUNC_SIGMAS, _TRUNC_SIGMAS, scale=_WEIGHT_STD, size=shape, random_state=rng
    )


def init_params(cfg: NetworkConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Truncated-normal weights (std 0.1, cut at 2 std), zero biases."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    shapes = plane_shapes(cfg)
    params: dict[str, np.ndarray] = {}
    for name in PLANES:
        if name.endswith("_w"):
            params[name] = _draw_weights(rng, shapes[name])
        else:
            params[name] = np.zeros(shapes[name])
    return params


def replace_head(params: dict[str, np.ndarray], new_k: int, seed: int) -> dict[str, np.ndarray]:
    """Copy the conv stack, draw fresh fully-connected layers for new_k classes."""
    if new_k not in (5, 7):
        raise ValueError("n_classes must be 5 or 7")
    rng = np.random.default_rng(seed)
    flat, f = params["fc1_w"].shape
    out = {name: params[name].copy() for name in PLANES if name.startswith("conv")}
    out["fc1_w"] = _draw_weights(rng, (flat, f))
    out["fc1_b"] = np.zeros(f)
    out["fc2_w"] = _draw_weights(rng, (f, f))
    out["fc2_b"] = np.zeros(f)
    out["head_w"] = _draw_weights(rng, (f, new_k))
    out["head_b"] = np.zeros(new_k)
    return {name: out[name] for name in PLANES}


# ---------------------------------------------------------------- layer ops


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution of (B,H,W,Cin) with (k,k,Cin,Cout)."""
    return _conv_forward(x, w, b)[0]


def _conv_forward(x, w, b):
    k = w.shape[0]
    pad = k // 2
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        bsz, h, wd, k * k * cin
    )
    out = cols @ w.reshape(k * k * cin, cout) + b
    return out, cols


def _conv_backward(dpre, cols, w, x_shape, need_dx=True):
    k = w.shape[0]
    pad = k // 2
    bsz, h, wd, cin = x_shape
    cout = w.shape[3]
    dw = cols.reshape(-1, k * k * cin).T @ dpre.reshape(-1, cout)
    dw = dw.reshape(k, k, cin, cout)
    db = dpre.sum(axis=(0, 1, 2))
    if not need_dx:
        return dw, db, None
    dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin))
    for di in range(k):
        for dj in range(k):
            dxp[:, di : di + h, dj : dj + wd, :] += dpre @ w[di, dj].T
    return dw, db, dxp[:, pad : pad + h, pad : pad + wd, :]


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pooling; odd trailing rows/cols are dropped."""
    return _pool_forward(x)[0]


def _pool_forward(x):
    bsz, h, wd, c = x.shape
    he, we = (h // 2) * 2, (wd // 2) * 2
    xe = x[:, :he, :we, :]
    r = xe.reshape(bsz, he // 2, 2, we // 2, 2, c)
    r = r.transpose(0, 1, 3, 2, 4, 5).reshape(bsz, he // 2, we // 2, 4, c)
    arg = r.argmax(axis=3)  # first max wins on ties
    out = np.take_along_axis(r, arg[..., None, :], axis=3)[..., 0, :]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    bsz, h, wd, c = x_shape
    ph, pw = dout.shape[1], dout.shape[2]
    scat = np.zeros((bsz, ph, pw, 4, c))
    np.put_along_axis(scat, arg[..., None, :], dout[..., None, :], axis=3)
    r = scat.reshape(bsz, ph, pw, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    dx = np.zeros((bsz, h, wd, c))
    dx[:, : 2 * ph, : 2 * pw, :] = r.reshape(bsz, 2 * ph, 2 * pw, c)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError("labels out of range")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, onehot_labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class; probabilities are
    clamped at 1e-12 before the log so an exact zero stays finite."""
    p_true = (probs * onehot_labels).sum(axis=1)
    return float(-np.log(np.maximum(p_true, _LOSS_CLAMP)).mean())


# ------------------------------------------------------------ full network


def _check_batch(params, x):
    if x.ndim != 4:
        raise ValueError(f"batch must be 4D, got shape {x.shape}")
    cin = params["conv1_w"].shape[2]
    if x.shape[3] != cin:
        raise ValueError(f"batch has {x.shape[3]} channels, network expects {cin}")


def _forward_cache(params, x):
    x = np.asarray(x, dtype=np.float64)
    _check_batch(params, x)
    cache = {"x": x}
    h = x
    for i in (1, 2, 3):
        pre, cols = _conv_forward(h, params[f"conv{i}_w"], params[f"conv{i}_b"])
        act = np.maximum(pre, 0.0)
        pooled, arg = _pool_forward(act)
        cache[f"in{i}"] = h
        cache[f"pre{i}"] = pre
        cache[f"cols{i}"] = cols
        cache[f"arg{i}"] = arg
        cache[f"act_shape{i}"] = act.shape
        h = pooled
    flat = h.reshape(h.shape[0], -1)
    if flat.shape[1] != params["fc1_w"].shape[0]:
        raise ValueError(
            f"flattened size {flat.shape[1]} does not match fc1 input "
            f"{params['fc1_w'].shape[0]}"
        )
    a1 = flat @ params["fc1_w"] + params["fc1_b"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params["fc2_w"] + params["fc2_b"]
    h2 = np.maximum(a2, 0.0)
    logits = h2 @ params["head_w"] + params["head_b"]
    probs = softmax(logits)
    cache.update(
        pool_out_shape=h.shape, flat=flat, a1=a1, h1=h1, a2=a2, h2=h2, probs=probs
    )
    return cache


def forward(params: dict[str, np.ndarray], batch: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per batch element."""
    x = np.asarray(batch, dtype=np.float64)
    _check_batch(params, x)
    h = x
    for i in (1, 2, 3):
        pre = conv2d(h, params[f"conv{i}_w"], params[f"conv{i}_b"])
        h = maxpool2(np.maximum(pre, 0.0))
    flat = h.reshape(h.shape[0], -1)
    if flat.shape[1] != params["fc1_w"].shape[0]:
        raise ValueError(
            f"flattened size {flat.shape[1]} does not match fc1 input "
            f"{params['fc1_w'].shape[0]}"
        )
    h1 = np.maximum(flat @ params["fc1_w"] + params["fc1_b"], 0.0)
    h2 = np.maximum(h1 @ params["fc2_w"] + params["fc2_b"], 0.0)
    return softmax(h2 @ params["head_w"] + params["head_b"])


def loss_and_grad(params, batch, onehot_labels):
    """Mean cross-entropy and its analytic gradient in one pass."""
    cache = _forward_cache(params, batch)
    probs = cache["probs"]
    bsz = probs.shape[0]
    p_true = (probs * onehot_labels).sum(axis=1)
    loss = float(-np.log(np.maximum(p_true, _LOSS_CLAMP)).mean())

    dlogits = (probs - onehot_labels) / bsz
    dlogits[p_true <= _LOSS_CLAMP] = 0.0  # clamped rows are flat

    grads: dict[str, np.ndarray] = {}
    grads["head_w"] = cache["h2"].T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dh2 = dlogits @ params["head_w"].T
    da2 = dh2 * (cache["a2"] > 0)
    grads["fc2_w"] = cache["h1"].T @ da2
    grads["fc2_b"] = da2.sum(axis=0)
    dh1 = da2 @ params["fc2_w"].T
    da1 = dh1 * (cache["a1"] > 0)
    grads["fc1_w"] = cache["flat"].T @ da1
    grads["fc1_b"] = da1.sum(axis=0)
    dflat = da1 @ params["fc1_w"].T

    dh = dflat.reshape(cache["pool_out_shape"])
    for i in (3, 2, 1):
        dact = _pool_backward(dh, cache[f"arg{i}"], cache[f"act_shape{i}"])
        dpre = dact * (cache[f"pre{i}"] > 0)
        dw, db, dh = _conv_backward(
            dpre,
            cache[f"cols{i}"],
            params[f"conv{i}_w"],
            cache[f"in{i}"].shape,
            need_dx=(i > 1),
        )
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return loss, {name: grads[name] for name in PLANES}


def backward(params, batch, onehot_labels) -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch, onehot_labels)[1]


# ------------------------------------------------------------------- ADAM


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, np.ndarray], lr: float = 1e-4) -> AdamState:
    m = {name: np.zeros_like(params[name]) for name in PLANES}
    v = {name: np.zeros_like(params[name]) for name in PLANES}
    return AdamState(m=m, v=v, t=0, lr=lr)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected ADAM update; returns (new_params, new_state)."""
    for name in PLANES:
        if not np.all(np.isfinite(grads[name])):
            raise NumericAbort(f"non-finite gradient in {name}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name in PLANES:
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, t=t)


# ------------------------------------------------------------- checkpoints


def _config_dict(cfg: NetworkConfig) -> dict:
    return {
        "input_size": cfg.input_size,
        "conv_channels": list(cfg.conv_channels),
        "fc_width": cfg.fc_width,
        "n_classes": cfg.n_classes,
        "kernel_size": cfg.kernel_size,
        "in_channels": cfg.in_channels,
        "seed": cfg.seed,
    }


def save_checkpoint(path, cfg: NetworkConfig, params, adam: AdamState | None = None) -> None:
    """Bit-exact snapshot: JSON manifest then raw float64 planes (params,
    then ADAM moments when present)."""
    manifest = {
        "config": _config_dict(cfg),
        "planes": [[name, list(params[name].shape)] for name in PLANES],
        "adam": None
        if adam is None
        else {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
              "eps": adam.eps, "t": adam.t},
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for name in PLANES:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
        if adam is not None:
            for acc in (adam.m, adam.v):
                for name in PLANES:
                    fh.write(np.ascontiguousarray(acc[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (config, params, adam_state_or_None)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise DataError(f"{path}: checkpoint file not found") from exc
    with fh:
        head = fh.read(_CKPT_HEADER.size)
        if len(head) != _CKPT_HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, hlen = _CKPT_HEADER.unpack(head)
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if version != _CKPT_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise DataError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: bad manifest: {exc}") from exc
        payload = fh.read()

    cdict = manifest["config"]
    cfg = NetworkConfig(
        input_size=cdict["input_size"],
        conv_channels=tuple(cdict["conv_channels"]),
        fc_width=cdict["fc_width"],
        n_classes=cdict["n_classes"],
        kernel_size=cdict["kernel_size"],
        in_channels=cdict["in_channels"],
        seed=cdict["seed"],
    )
    names = [name for name, _ in manifest["planes"]]
    if names != list(PLANES):
        raise DataError(f"{path}: unexpected plane manifest")
    shapes = {name: tuple(shape) for name, shape in manifest["planes"]}
    want = plane_shapes(cfg)
    if shapes != want:
        raise DataError(f"{path}: plane shapes disagree with config")

    n_groups = 1 if manifest["adam"] is None else 3
    counts = {name: int(np.prod(shapes[name])) for name in PLANES}
    total = sum(counts.values()) * n_groups
    if len(payload) != total * 8:
        raise DataError(f"{path}: expected {total * 8} payload bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")

    groups = []
    offset = 0
    for _ in range(n_groups):
        planes = {}
        for name in PLANES:
            n = counts[name]
            planes[name] = flat[offset : offset + n].reshape(shapes[name]).copy()
            offset += n
        groups.append(planes)

    params = groups[0]
    adam = None
    if manifest["adam"] is not None:
        a = manifest["adam"]
        adam = AdamState(
            m=groups[1], v=groups[2], t=a["t"],
            lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
        )
    return cfg, params, adam
