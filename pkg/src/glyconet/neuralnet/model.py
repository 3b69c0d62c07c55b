"""A fully convolutional classifier for fixed-length glucose windows.

Three conv blocks (conv -> batch norm -> ReLU) with SAME padding and stride
1, global average pooling over time, then a linear head with softmax. All
math is float64 and every backward pass is written out by hand; the only
things delegated to a kernel backend are the conv forward/backward, which
dominate the run time.

Weights initialize from U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with zero biases
and identity batch-norm, drawn from a counter-based generator keyed on the
seed so the draw sequence is reproducible across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelFormatError
from . import backend as backend_mod

MODEL_FORMAT = "fcn_v1"

DEFAULT_CHANNELS = (128, 256, 128)
DEFAULT_KERNELS = (8, 5, 3)


@dataclass(frozen=True)
class FcnConfig:
    input_len: int
    n_classes: int
    channels: tuple[int, int, int] = DEFAULT_CHANNELS
    kernels: tuple[int, int, int] = DEFAULT_KERNELS
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.input_len < 2 or self.n_classes < 2:
            raise ValueError("need at least 2 input points and 2 classes")
        if len(self.channels) != 3 or len(self.kernels) != 3:
            raise ValueError("the architecture has exactly three conv blocks")
        if min(self.channels) < 1 or min(self.kernels) < 1:
            raise ValueError("channel and kernel sizes must be positive")

    def to_dict(self) -> dict:
        return {"bn_eps": self.bn_eps, "bn_momentum": self.bn_momentum,
                "channels": list(self.channels), "input_len": self.input_len,
                "kernels": list(self.kernels), "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, doc: dict) -> "FcnConfig":
        return cls(input_len=int(doc["input_len"]), n_classes=int(doc["n_classes"]),
                   channels=tuple(int(c) for c in doc["channels"]),
                   kernels=tuple(int(k) for k in doc["kernels"]),
                   bn_eps=float(doc["bn_eps"]), bn_momentum=float(doc["bn_momentum"]))


@dataclass
class FcnModel:
    config: FcnConfig
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def parameter_shapes(config: FcnConfig) -> dict[str, tuple[int, ...]]:
    c1, c2, c3 = config.channels
    k1, k2, k3 = config.kernels
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (cin, cout, k) in enumerate(((1, c1, k1), (c1, c2, k2), (c2, c3, k3)), start=1):
        shapes[f"conv{i}_w"] = (cout, cin, k)
        shapes[f"conv{i}_b"] = (cout,)
        shapes[f"bn{i}_gamma"] = (cout,)
        shapes[f"bn{i}_beta"] = (cout,)
    shapes["head_w"] = (c3, config.n_classes)
    shapes["head_b"] = (config.n_classes,)
    return shapes


def init_model(config: FcnConfig, seed: int) -> FcnModel:
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    shapes = parameter_shapes(config)
    params: dict[str, np.ndarray] = {}
    # Weight tensors draw in a fixed order so the stream is reproducible.
    for name in ("conv1_w", "conv2_w", "conv3_w", "head_w"):
        shape = shapes[name]
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    for name, shape in shapes.items():
        if name in params:
            continue
        if name.endswith("_gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    running = {}
    for i, cout in enumerate(config.channels, start=1):
        running[f"bn{i}_mean"] = np.zeros(cout)
        running[f"bn{i}_var"] = np.ones(cout)
    return FcnModel(config, params, running, meta={"seed": seed})


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _bn_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                run_mean: np.ndarray, run_var: np.ndarray, eps: float,
                momentum: float, training: bool):
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        n = x.shape[0] * x.shape[2]
        if n > 1:
            run_mean *= 1.0 - momentum
            run_mean += momentum * mean
            run_var *= 1.0 - momentum
            run_var += momentum * var * (n / (n - 1.0))
    else:
        mean, var = run_mean, run_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, xhat, inv_std


def _bn_backward(dy: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray,
                 gamma: np.ndarray):
    n = dy.shape[0] * dy.shape[2]
    dbeta = dy.sum(axis=(0, 2))
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    sum_dxhat = dxhat.sum(axis=(0, 2))[None, :, None]
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
    dx = (inv_std[None, :, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


def forward(model: FcnModel, features: np.ndarray, training: bool,
            backend_name: str | None = None) -> tuple[np.ndarray, dict]:
    """Run the network on (batch, input_len) features; returns (probs, cache)."""
    kernels = backend_mod.get_kernels(backend_name)
    cfg = model.config
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != cfg.input_len:
        raise ValueError(f"expected features of shape (batch, {cfg.input_len})")
    p = model.params
    cache: dict = {"training": training, "backend": kernels}

    act = x[:, None, :]
    for i in (1, 2, 3):
        conv_in = act
        conv_out = kernels.conv1d_forward(conv_in, p[f"conv{i}_w"], p[f"conv{i}_b"])
        bn_out, xhat, inv_std = _bn_forward(
            conv_out, p[f"bn{i}_gamma"], p[f"bn{i}_beta"],
            model.running[f"bn{i}_mean"], model.running[f"bn{i}_var"],
            cfg.bn_eps, cfg.bn_momentum, training)
        act = np.maximum(bn_out, 0.0)
        cache[f"conv{i}_in"] = conv_in
        cache[f"bn{i}_xhat"] = xhat
        cache[f"bn{i}_inv_std"] = inv_std
        cache[f"relu{i}_in"] = bn_out
    pooled = act.mean(axis=2)                       # global average over time
    logits = pooled @ p["head_w"] + p["head_b"]
    cache["pool_in_len"] = act.shape[2]
    cache["pooled"] = pooled
    return softmax(logits), cache


def backward(model: FcnModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every parameter given d(loss)/d(logits)."""
    kernels = cache["backend"]
    p = model.params
    grads: dict[str, np.ndarray] = {}
    grads["head_w"] = cache["pooled"].T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ p["head_w"].T
    length = cache["pool_in_len"]
    dact = np.repeat(dpooled[:, :, None] / length, length, axis=2)
    for i in (3, 2, 1):
        drelu = dact * (cache[f"relu{i}_in"] > 0.0)
        dbn, dgamma, dbeta = _bn_backward(drelu, cache[f"bn{i}_xhat"],
                                          cache[f"bn{i}_inv_std"], p[f"bn{i}_gamma"])
        grads[f"bn{i}_gamma"] = dgamma
        grads[f"bn{i}_beta"] = dbeta
        dact, dw, db = kernels.conv1d_backward(cache[f"conv{i}_in"], p[f"conv{i}_w"], dbn)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return grads


def predict_proba(model: FcnModel, features: np.ndarray, batch_size: int = 2048,
                  backend_name: str | None = None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    out = np.empty((features.shape[0], model.config.n_classes))
    for start in range(0, features.shape[0], batch_size):
        stop = min(start + batch_size, features.shape[0])
        out[start:stop], _ = forward(model, features[start:stop], training=False,
                                     backend_name=backend_name)
    return out


def predict(model: FcnModel, features: np.ndarray, batch_size: int = 2048,
            backend_name: str | None = None) -> np.ndarray:
    return predict_proba(model, features, batch_size, backend_name).argmax(axis=1)


def save_model(path, model: FcnModel) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "config": model.config.to_dict(),
        "meta": dict(model.meta),
        "params": {k: v.ravel().tolist() for k, v in sorted(model.params.items())},
        "running": {k: v.tolist() for k, v in sorted(model.running.items())},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FcnModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"{path} is not a {MODEL_FORMAT} model file (format={doc.get('format')!r})"
            if isinstance(doc, dict) else f"{path} does not hold a model object")
    try:
        config = FcnConfig.from_dict(doc["config"])
        shapes = parameter_shapes(config)
        params: dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            flat = np.asarray(doc["params"][name], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise ModelFormatError(f"parameter {name} has {flat.size} values, "
                                       f"expected shape {shape}")
            params[name] = flat.reshape(shape)
        running = {}
        for i, cout in enumerate(config.channels, start=1):
            for stat in ("mean", "var"):
                arr = np.asarray(doc["running"][f"bn{i}_{stat}"], dtype=np.float64)
                if arr.shape != (cout,):
                    raise ModelFormatError(f"running stat bn{i}_{stat} has wrong shape")
                running[f"bn{i}_{stat}"] = arr
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
    for name, arr in {**params, **running}.items():
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError(f"non-finite values in {name} of {path}")
    return FcnModel(config, params, running, meta=dict(doc.get("meta", {})))
