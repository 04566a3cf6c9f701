"""Compact residual CNN over (H, W, 2) eye tensors, trained from scratch.

Forward/backward passes are plain numpy (im2col convolutions, batch
normalization, ReLU, global average pooling, affine head).  The
optimizer is classic SGD with momentum.  A finite-difference harness
checks every layer's gradients in double precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DivergedError, EmptySplit, ShapeError
from . import dataset as ds
from .report import ConfusionMatrix

__all__ = [
    "ModelConfig", "TrainConfig", "init_params", "forward", "loss_and_grad",
    "sgdm_step", "init_velocity", "train", "train_batches", "evaluate",
    "predict_logits", "save_checkpoint", "load_checkpoint", "gradient_check",
]

CHECKPOINT_MAGIC = b"EYENET1\n"
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelConfig:
    input_h: int = 64
    input_w: int = 128
    in_channels: int = 2
    class_count: int = 14
    stem_channels: int = 8
    block_channels: tuple[int, ...] = (16, 32, 64)
    residual: bool = True
    init_seed: int = 0
    # Multiplier on the conv weight init.  Because every conv feeds a
    # normalization layer, shrinking the weights leaves the initial
    # function unchanged while raising the effective step size of SGD on
    # those weights (~1/scale^2); useful when the epoch budget is tight.
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "block_channels",
                           tuple(int(c) for c in self.block_channels))
        if self.in_channels != 2:
            raise ValueError("input must have exactly 2 channels")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not self.block_channels:
            raise ValueError("block_channels must be nonempty")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    eval_each_epoch: bool = True
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


# ---------------------------------------------------------------------------
# layer primitives
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, stride: int) -> tuple[np.ndarray, int, int]:
    """3x3 patches with pad 1: (N, C*9, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, 3 * i + j] = xp[:, :, i:i + stride * ho:stride,
                                       j:j + stride * wo:stride]
    return cols.reshape(n, c * 9, ho * wo), ho, wo


def _col2im(dcols: np.ndarray, x_shape, stride: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, 9, ho, wo)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + stride * ho:stride,
                j:j + stride * wo:stride] += dcols[:, :, 3 * i + j]
    return dxp[:, :, 1:-1, 1:-1]


def _conv_forward(x, w, b, stride):
    n = x.shape[0]
    f = w.shape[0]
    cols, ho, wo = _im2col(x, stride)
    wmat = w.reshape(f, -1)
    out = np.matmul(wmat, cols) + b[None, :, None]
    return out.reshape(n, f, ho, wo), (x.shape, cols, w, stride)


def _conv_backward(dout, cache):
    x_shape, cols, w, stride = cache
    n, f = dout.shape[:2]
    dmat = dout.reshape(n, f, -1)
    dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dmat.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T, dmat)
    dx = _col2im(dcols, x_shape, stride)
    return dx, dw, db


def _bn_forward(x, gamma, beta, running_mean, running_var, train):
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= (1 - BN_MOMENTUM)
        running_mean += BN_MOMENTUM * mean
        running_var *= (1 - BN_MOMENTUM)
        running_var += BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma)


def _bn_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
    return dx, dgamma, dbeta


def _relu_forward(x):
    mask = x > 0
    return x * mask, mask


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def _layer_plan(config: ModelConfig):
    plan = [("stem", config.in_channels, config.stem_channels, 2)]
    prev = config.stem_channels
    for i, c in enumerate(config.block_channels):
        plan.append((f"block{i}.down", prev, c, 2))
        if config.residual:
            plan.append((f"block{i}.res", c, c, 1))
        prev = c
    return plan


def init_params(config: ModelConfig,
                dtype=np.float32) -> tuple[dict, dict]:
    """Fan-in-scaled Gaussian convs, unit BN, zero affine head.

    Returns (params, state); state holds the BN running statistics.
    """
    rng = np.random.default_rng(config.init_seed)
    params: dict[str, np.ndarray] = {}
    state: dict[str, np.ndarray] = {}
    for name, cin, cout, _stride in _layer_plan(config):
        fan_in = cin * 9
        params[f"{name}.w"] = (rng.standard_normal((cout, cin, 3, 3))
                               * (config.init_scale
                                  * np.sqrt(2.0 / fan_in))).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
        params[f"{name}.gamma"] = np.ones(cout, dtype=dtype)
        params[f"{name}.beta"] = np.zeros(cout, dtype=dtype)
        state[f"{name}.running_mean"] = np.zeros(cout, dtype=dtype)
        state[f"{name}.running_var"] = np.ones(cout, dtype=dtype)
    last = config.block_channels[-1]
    params["head.w"] = np.zeros((last, config.class_count), dtype=dtype)
    params["head.b"] = np.zeros(config.class_count, dtype=dtype)
    return params, state


def _check_batch(x: np.ndarray, config: ModelConfig) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != (config.input_h, config.input_w,
                                      config.in_channels):
        raise ShapeError(
            f"expected batch of shape (N, {config.input_h}, "
            f"{config.input_w}, {config.in_channels}), got {x.shape}")
    return np.transpose(x, (0, 3, 1, 2))  # NHWC -> NCHW


def forward(params: dict, x: np.ndarray, config: ModelConfig, state: dict,
            train: bool = False) -> tuple[np.ndarray, list]:
    """Run the network; returns (logits, caches for backward)."""
    h = _check_batch(x, config).astype(params["head.w"].dtype)
    caches = []
    plan = _layer_plan(config)
    for name, _cin, _cout, stride in plan:
        is_res = name.endswith(".res")
        skip = h if is_res else None
        h, conv_cache = _conv_forward(h, params[f"{name}.w"],
                                      params[f"{name}.b"], stride)
        h, bn_cache = _bn_forward(h, params[f"{name}.gamma"],
                                  params[f"{name}.beta"],
                                  state[f"{name}.running_mean"],
                                  state[f"{name}.running_var"], train)
        if is_res:
            h = h + skip
        h, mask = _relu_forward(h)
        caches.append((name, conv_cache, bn_cache, mask, is_res))
    pooled = h.mean(axis=(2, 3))
    logits = pooled @ params["head.w"] + params["head.b"]
    caches.append(("head", pooled, h.shape))
    return logits, caches


def _backward(dlogits: np.ndarray, params: dict, caches: list) -> dict:
    grads: dict[str, np.ndarray] = {}
    name, pooled, h_shape = caches[-1]
    grads["head.w"] = pooled.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.w"].T
    dh = (dpooled[:, :, None, None]
          * np.ones(h_shape, dtype=dpooled.dtype)
          / (h_shape[2] * h_shape[3]))
    for name, conv_cache, bn_cache, mask, is_res in reversed(caches[:-1]):
        dh = dh * mask
        dskip = dh if is_res else None
        dh, dgamma, dbeta = _bn_backward(dh, bn_cache)
        grads[f"{name}.gamma"] = dgamma
        grads[f"{name}.beta"] = dbeta
        dh, dw, db = _conv_backward(dh, conv_cache)
        grads[f"{name}.w"] = dw
        grads[f"{name}.b"] = db
        if is_res:
            dh = dh + dskip
    return grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(params: dict, x: np.ndarray, labels: np.ndarray,
                  config: ModelConfig, state: dict,
                  train: bool = True) -> tuple[float, dict]:
    """Mean softmax cross-entropy and gradients for every parameter."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(x):
        raise ShapeError("labels must be 1-D and match the batch")
    if labels.min() < 0 or labels.max() >= config.class_count:
        raise ShapeError("label outside [0, class_count)")
    logits, caches = forward(params, x, config, state, train=train)
    probs = _softmax(logits)
    n = len(labels)
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = _backward(dlogits.astype(probs.dtype), params, caches)
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def init_velocity(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sgdm_step(params: dict, grads: dict, velocity: dict,
              cfg: TrainConfig) -> dict:
    """Classic momentum: v <- mu*v + g; w <- w - lr*v.  In place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergedError(f"non-finite gradient in {k}")
        v = velocity[k]
        v *= cfg.momentum
        v += g.astype(v.dtype)
        params[k] -= (cfg.learning_rate * v).astype(params[k].dtype)
    return params


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

def train_batches(model_cfg: ModelConfig, train_cfg: TrainConfig,
                  batch_factory, val_batches=None,
                  params=None, state=None):
    """Core loop: `batch_factory(epoch)` yields (x, labels) batches.

    Returns (params, state, metrics) where metrics is one dict per epoch
    with keys epoch, train_loss, val_acc (val_acc is None when no
    validation stream is given).
    """
    if params is None or state is None:
        params, state = init_params(model_cfg)
    velocity = init_velocity(params)
    metrics = []
    for epoch in range(train_cfg.epochs):
        losses = []
        for x, labels in batch_factory(epoch):
            try:
                loss, grads = loss_and_grad(params, x, labels, model_cfg,
                                            state, train=True)
                if not np.isfinite(loss):
                    raise DivergedError(f"non-finite loss at epoch {epoch}")
                sgdm_step(params, grads, velocity, train_cfg)
            except DivergedError as exc:
                exc.metrics = metrics
                raise
            losses.append(loss)
        val_acc = None
        if val_batches is not None and train_cfg.eval_each_epoch:
            val_acc = _accuracy_on(params, state, model_cfg, val_batches())
        metrics.append({"epoch": epoch + 1,
                        "train_loss": float(np.mean(losses)) if losses else None,
                        "val_acc": val_acc})
    return params, state, metrics


def train(model_cfg: ModelConfig, train_cfg: TrainConfig,
          container: ds.DatasetContainer):
    """Train on a dataset container's train split, validating on val."""
    if "train" not in container.manifest or \
            len(container.manifest.get("train", ())) == 0:
        raise EmptySplit("container has no train split")

    def batch_factory(epoch):
        for x, labels, _snr in ds.iterate(container, "train",
                                          train_cfg.batch_size,
                                          train_cfg.shuffle_seed + epoch):
            yield x, labels

    def val_batches():
        for x, labels, _snr in ds.iterate(container, "val",
                                          train_cfg.batch_size):
            yield x, labels

    has_val = len(container.manifest.get("val", ())) > 0
    return train_batches(model_cfg, train_cfg, batch_factory,
                         val_batches if has_val else None)


def predict_logits(params: dict, state: dict, config: ModelConfig,
                   x: np.ndarray) -> np.ndarray:
    logits, _ = forward(params, x, config, state, train=False)
    return logits


def _accuracy_on(params, state, config, batches) -> float:
    correct = total = 0
    for x, labels in batches:
        pred = predict_logits(params, state, config, x).argmax(axis=1)
        correct += int((pred == labels).sum())
        total += len(labels)
    return correct / total if total else 0.0


def evaluate(params: dict, state: dict, config: ModelConfig,
             container: ds.DatasetContainer, split: str = "test",
             batch_size: int = 64):
    """Confusion matrix per SNR level plus a pooled matrix.

    Returns (per_snr, pooled) where per_snr maps snr_db -> ConfusionMatrix.
    """
    names = container.class_names
    per_snr = {snr: ConfusionMatrix(names, tag=snr)
               for snr in container.snr_table}
    pooled = ConfusionMatrix(names, tag="pooled")
    for x, labels, snr_idx in ds.iterate(container, split, batch_size):
        pred = predict_logits(params, state, config, x).argmax(axis=1)
        for t, p, si in zip(labels, pred, snr_idx):
            per_snr[container.snr_table[si]].accumulate(int(t), int(p))
            pooled.accumulate(int(t), int(p))
    return per_snr, pooled


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: dict, state: dict, config: ModelConfig,
                    class_names: list[str] | None = None) -> None:
    """Magic + JSON directory + raw little-endian arrays."""
    arrays = {f"param.{k}": v for k, v in params.items()}
    arrays.update({f"state.{k}": v for k, v in state.items()})
    directory = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        directory.append({"name": name, "dtype": str(arr.dtype),
                          "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "config": {"input_h": config.input_h, "input_w": config.input_w,
                   "in_channels": config.in_channels,
                   "class_count": config.class_count,
                   "stem_channels": config.stem_channels,
                   "block_channels": list(config.block_channels),
                   "residual": config.residual,
                   "init_seed": config.init_seed,
                   "init_scale": config.init_scale},
        "class_names": class_names,
        "arrays": directory,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in arrays.values():
            a = np.ascontiguousarray(arr)
            if a.dtype.byteorder == ">":
                a = a.astype(a.dtype.newbyteorder("<"))
            f.write(a.tobytes())


def load_checkpoint(path):
    """Returns (params, state, ModelConfig, class_names)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        state: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arr = np.frombuffer(f.read(size * dtype.itemsize),
                                dtype=dtype).reshape(entry["shape"]).copy()
            name = entry["name"]
            if name.startswith("param."):
                params[name[len("param."):]] = arr
            else:
                state[name[len("state."):]] = arr
    cfg = header["config"]
    config = ModelConfig(input_h=cfg["input_h"], input_w=cfg["input_w"],
                         in_channels=cfg["in_channels"],
                         class_count=cfg["class_count"],
                         stem_channels=cfg["stem_channels"],
                         block_channels=tuple(cfg["block_channels"]),
                         residual=cfg["residual"],
                         init_seed=cfg["init_seed"],
                         init_scale=cfg.get("init_scale", 1.0))
    return params, state, config, header.get("class_names")


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

def gradient_check(config: ModelConfig | None = None, batch: int = 2,
                   coords_per_layer: int = 20, step: float = 1e-4,
                   seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients against central differences (float64).

    Returns the max relative error per parameter array.
    """
    if config is None:
        config = ModelConfig(input_h=8, input_w=12, class_count=3,
                             stem_channels=4, block_channels=(6, 8),
                             residual=True, init_seed=seed)
    rng = np.random.default_rng(seed)
    params, state = init_params(config, dtype=np.float64)
    # Non-degenerate head so head gradients flow everywhere.
    params["head.w"] = rng.standard_normal(params["head.w"].shape) * 0.1
    params["head.b"] = rng.standard_normal(params["head.b"].shape) * 0.1
    x = rng.random((batch, config.input_h, config.input_w,
                    config.in_channels))
    labels = rng.integers(0, config.class_count, size=batch)

    def loss_only():
        frozen = {k: v.copy() for k, v in state.items()}
        logits, _ = forward(params, x, config, frozen, train=True)
        probs = _softmax(logits)
        return float(-np.mean(np.log(probs[np.arange(batch), labels])))

    frozen = {k: v.copy() for k, v in state.items()}
    _, grads = loss_and_grad(params, x, labels, config, frozen, train=True)
    errors: dict[str, float] = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        n_coords = min(coords_per_layer, flat.size)
        picks = rng.choice(flat.size, size=n_coords, replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_only()
            flat[i] = orig - step
            lm = loss_only()
            flat[i] = orig
            numeric = (lp - lm) / (2 * step)
            analytic = grads[name].reshape(-1)[i]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
        errors[name] = worst
    return errors
