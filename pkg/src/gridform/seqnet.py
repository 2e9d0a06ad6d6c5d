"""
Small transformer encoder for per-point curve regression, in plain numpy.

Forward pass, per sequence of ``seq_len`` points with 4 input channels::

    h = x W_in + b_in + PE
    for each layer:
        h = LN1(h + MHA(h))          # post-norm
        h = LN2(h + FFN(h))          # FFN = GELU(h W1 + b1) W2 + b2
    y = h W_out + b_out

Gradients are derived by hand (see :func:`backward`) and checked against
central differences in the test-suite.  Keys carry no bias: a key bias only
adds a per-query constant to the attention scores, which softmax discards.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from .data import FoldSpec, SequenceDataset, Stats, denormalize_targets, normalize, normalize_features

LN_EPS = 1e-9


class NumericError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    in_channels: int = 4
    out_channels: int = 4
    seq_len: int = 21

    def __post_init__(self):
        for name, val in asdict(self).items():
            if int(val) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self):
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


LAYER_KEYS = ("Wq", "bq", "Wk", "Wv", "bv", "Wo", "bo", "ln1_g", "ln1_b",
              "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")


@dataclass(eq=False)
class ModelParameters:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    stats: Stats | None = None

    def layer(self, i):
        return {k: self.weights[f"layers.{i}.{k}"] for k in LAYER_KEYS}

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.weights.items()}, self.stats)

    def to_dict(self) -> dict:
        return {"config": asdict(self.config),
                "stats": None if self.stats is None else self.stats.to_dict(),
                "weights": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                            for k, v in self.weights.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParameters":
        cfg = ModelConfig(**d["config"])
        weights = {k: np.asarray(v["values"], float).reshape(v["shape"]) for k, v in d["weights"].items()}
        expected = param_shapes(cfg)
        if set(weights) != set(expected) or any(weights[k].shape != s for k, s in expected.items()):
            raise ValueError("weight set does not match the model configuration")
        stats = None if d.get("stats") is None else Stats.from_dict(d["stats"])
        return cls(cfg, weights, stats)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ModelParameters":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"in_W": (cfg.in_channels, d), "in_b": (d,)}
    per_layer = {"Wq": (d, d), "bq": (d,), "Wk": (d, d), "Wv": (d, d), "bv": (d,),
                 "Wo": (d, d), "bo": (d,), "ln1_g": (d,), "ln1_b": (d,),
                 "W1": (d, f), "b1": (f,), "W2": (f, d), "b2": (d,), "ln2_g": (d,), "ln2_b": (d,)}
    for i in range(cfg.n_layers):
        shapes.update({f"layers.{i}.{k}": s for k, s in per_layer.items()})
    shapes.update({"out_W": (d, cfg.out_channels), "out_b": (cfg.out_channels,)})
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParameters:
    """Glorot-uniform matrices, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(cfg).items():
        key = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            lim = math.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-lim, lim, shape)
        elif key.endswith("_g"):
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    return ModelParameters(cfg, weights)


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i2 = 2 * (np.arange(d_model) // 2)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def gelu(z):
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


def gelu_grad(z):
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return cdf + z * pdf


def layer_norm(r):
    mu = r.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(((r - mu) ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    return (r - mu) * inv, inv


def layer_norm_backward(dn, n, inv):
    return inv * (dn - dn.mean(axis=-1, keepdims=True) - n * (dn * n).mean(axis=-1, keepdims=True))


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _split(t, n_heads):
    B, S, d = t.shape
    return t.reshape(B, S, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge(t):
    B, H, S, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(B, S, H * dh)


def encoder_forward(params: ModelParameters, x):
    """Run the encoder on ``x`` of shape ``(seq_len, 4)`` or ``(batch, seq_len, 4)``.

    Returns ``(y, cache)``; ``cache`` holds the intermediates for :func:`backward`
    and the attention weights under ``cache["layers"][i]["attn"]``.
    """
    cfg = params.config
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[1:] != (cfg.seq_len, cfg.in_channels):
        raise ValueError(f"input shape {x.shape[1:]} != {(cfg.seq_len, cfg.in_channels)}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite encoder input")
    W = params.weights
    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_head)
    h = x @ W["in_W"] + W["in_b"] + positional_encoding(cfg.seq_len, cfg.d_model)
    cache = {"x": x, "layers": [], "squeeze": squeeze}
    for i in range(cfg.n_layers):
        p = params.layer(i)
        c = {"h": h}
        q = _split(h @ p["Wq"] + p["bq"], H)
        k = _split(h @ p["Wk"], H)
        v = _split(h @ p["Wv"] + p["bv"], H)
        attn = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        ctx = _merge(attn @ v)
        n1, inv1 = layer_norm(h + ctx @ p["Wo"] + p["bo"])
        h1 = n1 * p["ln1_g"] + p["ln1_b"]
        z = h1 @ p["W1"] + p["b1"]
        f = gelu(z)
        n2, inv2 = layer_norm(h1 + f @ p["W2"] + p["b2"])
        h = n2 * p["ln2_g"] + p["ln2_b"]
        c.update(q=q, k=k, v=v, attn=attn, ctx=ctx, n1=n1, inv1=inv1, h1=h1, z=z, f=f, n2=n2, inv2=inv2)
        cache["layers"].append(c)
    cache["h_out"] = h
    y = h @ W["out_W"] + W["out_b"]
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite encoder output")
    return (y[0] if squeeze else y), cache


def _mm_grad(a, g):
    """Weight gradient of ``a @ W`` given upstream ``g`` (batch dims summed)."""
    return a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def backward(params: ModelParameters, cache, dy) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dy = dL/dy``."""
    cfg = params.config
    W = params.weights
    dy = np.asarray(dy, dtype=float)
    if cache["squeeze"] and dy.ndim == 2:
        dy = dy[None]
    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_head)
    g = {}
    g["out_W"] = _mm_grad(cache["h_out"], dy)
    g["out_b"] = dy.sum(axis=(0, 1))
    dh = dy @ W["out_W"].T
    for i in reversed(range(cfg.n_layers)):
        p = params.layer(i)
        c = cache["layers"][i]
        pre = f"layers.{i}."
        # second sub-layer: LN2(h1 + FFN(h1))
        g[pre + "ln2_g"] = (dh * c["n2"]).sum(axis=(0, 1))
        g[pre + "ln2_b"] = dh.sum(axis=(0, 1))
        dr2 = layer_norm_backward(dh * p["ln2_g"], c["n2"], c["inv2"])
        g[pre + "W2"] = _mm_grad(c["f"], dr2)
        g[pre + "b2"] = dr2.sum(axis=(0, 1))
        dz = (dr2 @ p["W2"].T) * gelu_grad(c["z"])
        g[pre + "W1"] = _mm_grad(c["h1"], dz)
        g[pre + "b1"] = dz.sum(axis=(0, 1))
        dh1 = dr2 + dz @ p["W1"].T
        # first sub-layer: LN1(h + MHA(h))
        g[pre + "ln1_g"] = (dh1 * c["n1"]).sum(axis=(0, 1))
        g[pre + "ln1_b"] = dh1.sum(axis=(0, 1))
        dr1 = layer_norm_backward(dh1 * p["ln1_g"], c["n1"], c["inv1"])
        g[pre + "Wo"] = _mm_grad(c["ctx"], dr1)
        g[pre + "bo"] = dr1.sum(axis=(0, 1))
        dctx = _split(dr1 @ p["Wo"].T, H)
        attn = c["attn"]
        dattn = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = _merge(ds @ c["k"])
        dk = _merge(ds.transpose(0, 1, 3, 2) @ c["q"])
        dv = _merge(dv)
        h = c["h"]
        g[pre + "Wq"] = _mm_grad(h, dq)
        g[pre + "bq"] = dq.sum(axis=(0, 1))
        g[pre + "Wk"] = _mm_grad(h, dk)
        g[pre + "Wv"] = _mm_grad(h, dv)
        g[pre + "bv"] = dv.sum(axis=(0, 1))
        dh = dr1 + dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T
    g["in_W"] = _mm_grad(cache["x"], dh)
    g["in_b"] = dh.sum(axis=(0, 1))
    return {k: g[k] for k in W}


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_and_grad(params: ModelParameters, x, t):
    """Mean-squared error over a batch and its parameter gradients."""
    y, cache = encoder_forward(params, x)
    t = np.asarray(t, dtype=float)
    loss = mse_loss(y, t)
    return loss, backward(params, cache, 2.0 * (y - t) / y.size)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, weights, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, gk in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * gk
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * gk * gk
            weights[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, weights, lr):
        self.lr = lr

    def step(self, weights, grads):
        for k, gk in grads.items():
            weights[k] -= self.lr * gk


@dataclass
class TrainResult:
    params: ModelParameters
    history: np.ndarray                  # (epochs, 2): train loss, validation loss
    fold_val_losses: list[float] = field(default_factory=list)
    holdout: int = -1

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for e, (tr, va) in enumerate(self.history, start=1):
            lines.append(f"{e},{format(tr, '.17g')},{format(va, '.17g')}")
        return "\n".join(lines) + "\n"


def _fit(train: SequenceDataset, val: SequenceDataset | None, model_cfg, cfg: TrainConfig):
    params = init_params(model_cfg, cfg.seed)
    W = params.weights
    opt = (Adam(W, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps) if cfg.optimizer == "adam"
           else SGD(W, cfg.learning_rate))
    rng = np.random.default_rng(cfg.seed + 1)
    n = train.n_curves
    history = np.zeros((cfg.epochs, 2))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(params, train.features[idx], train.targets[idx])
            if not math.isfinite(loss):
                raise TrainingError(epoch + 1, loss)
            total += loss * len(idx)
            opt.step(W, grads)
        tr = total / n
        va = mse_loss(encoder_forward(params, val.features)[0], val.targets) if val is not None and val.n_curves else float("nan")
        history[epoch] = tr, va
    return params, history


def train(dataset: SequenceDataset, folds: FoldSpec, model_cfg: ModelConfig = ModelConfig(),
          train_cfg: TrainConfig = TrainConfig(), holdout: int = -1, cross_validate: bool = True) -> TrainResult:
    """K-fold training on raw (unnormalized) sequences.

    For each fold, a model is fitted on the remaining folds with statistics
    taken from those folds alone, and its final validation loss recorded.  The
    model and per-epoch history returned are those of the ``holdout`` fold.
    """
    if dataset.seq_len != model_cfg.seq_len:
        raise ValueError(f"dataset sequences have length {dataset.seq_len}, model expects {model_cfg.seq_len}")
    n_folds = len(folds.folds)
    holdout %= n_folds
    rotations = range(n_folds) if cross_validate else [holdout]
    fold_losses, kept = [], None
    for k in rotations:
        train_ids = folds.train_ids(k) if n_folds > 1 else list(folds.folds[0])
        val_ids = list(folds.folds[k]) if n_folds > 1 else []
        norm, stats = normalize(dataset, train_ids)
        params, history = _fit(norm.subset(train_ids), norm.subset(val_ids) if val_ids else None,
                               model_cfg, train_cfg)
        params.stats = stats
        fold_losses.append(float(history[-1, 1]))
        if k == holdout:
            kept = (params, history)
    return TrainResult(kept[0], kept[1], fold_losses, holdout)


def predict_curve_properties(params: ModelParameters, points):
    """Curvature and unit tangent for one sequence of ``(x, y, z, u)`` points.

    Returns ``(kappa, tangents)`` with ``kappa >= 0`` and ``|tangent| = 1``.
    """
    cfg = params.config
    points = np.asarray(points, dtype=float)
    if points.shape != (cfg.seq_len, 4):
        raise ValueError(f"expected {cfg.seq_len} points of (x, y, z, u), got shape {points.shape}")
    if params.stats is None:
        raise ValueError("model has no normalization statistics")
    y, _ = encoder_forward(params, normalize_features(points, params.stats))
    out = denormalize_targets(y, params.stats)
    kappa = np.maximum(out[:, 0], 0.0)
    t = out[:, 1:]
    norm = np.linalg.norm(t, axis=1)
    if np.any(norm < 1e-12):
        raise NumericError("predicted tangent vanished")
    return kappa, t / norm[:, None]
