"""Denoising autoencoder in plain numpy.

Architecture: D -> 50 -> 30 -> 50 -> D.  Each hidden layer is
affine -> batch norm -> sigmoid; the output layer is affine with identity
activation.  Training minimizes the mean squared error between the clean
input and the reconstruction of a Gaussian-corrupted copy, with Adam on
shuffled mini-batches.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .context import ContextParams
from .features import FeatureSchema, Normalizer, SchemaError

logger = logging.getLogger(__name__)

HIDDEN_SIZES = (50, 30, 50)
MAGIC = "ctxvad-dae"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LayerParams:
    W: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.99

    @property
    def running_std(self) -> np.ndarray:
        return np.sqrt(self.running_var)


@dataclass
class TrainConfig:
    noise: float = 0.1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 120
    max_epochs: int = 200
    seed: int = 0
    patience: int | None = 20
    min_delta: float = 0.0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError(f"noise factor must be >= 0, got {self.noise}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class DaeModel:
    schema: FeatureSchema
    normalizer: Normalizer
    layers: list[LayerParams]
    bn: list[BnParams]
    context_params: ContextParams | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (live references, not copies)."""
        p = {}
        for i, layer in enumerate(self.layers):
            p[f"W{i}"] = layer.W
            p[f"b{i}"] = layer.b
        for i, bn in enumerate(self.bn):
            p[f"gamma{i}"] = bn.gamma
            p[f"beta{i}"] = bn.beta
        return p

    def copy(self) -> "DaeModel":
        return copy.deepcopy(self)

    def check_schema(self, schema: FeatureSchema):
        if schema.total_dim != self.input_dim:
            raise SchemaError(
                f"model expects input dimension {self.input_dim}, schema has {schema.total_dim}"
            )
        if schema != self.schema:
            raise SchemaError("schema does not match the one the model was trained on")


def init(schema: FeatureSchema, seed: int = 0, normalizer: Normalizer | None = None,
         hidden=HIDDEN_SIZES, context_params: ContextParams | None = None) -> DaeModel:
    """Xavier-uniform weights, zero biases, identity batch norm."""
    d = schema.total_dim
    if d < 1:
        raise SchemaError("cannot build a model for a zero-dimensional schema")
    if normalizer is None:
        normalizer = Normalizer(np.zeros(d), np.ones(d))
    elif normalizer.dim != d:
        raise SchemaError(f"normalizer dim {normalizer.dim} != schema dim {d}")
    rng = np.random.default_rng(seed)
    dims = (d, *hidden, d)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(LayerParams(rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    bn = [BnParams(np.ones(h), np.zeros(h), np.zeros(h), np.ones(h)) for h in hidden]
    return DaeModel(schema, normalizer, layers, bn, context_params, {"init_seed": seed})


def corrupt(x, s: float, rng: np.random.Generator) -> np.ndarray:
    """x + s * t with t standard normal per component."""
    if s < 0:
        raise ValueError("noise factor must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if s == 0:
        return x.copy()
    return x + s * rng.standard_normal(x.shape)


@dataclass
class ForwardPass:
    output: np.ndarray
    activations: list[np.ndarray]  # input, then each hidden activation
    cache: list[dict]  # per hidden layer: z_hat, inv_std, batch mean/var


def forward(model: DaeModel, x, mode: str = "eval") -> ForwardPass:
    """Run the network on a vector or a batch of row vectors.

    ``mode="train"`` normalizes with the batch's own statistics (needs at
    least 2 rows); ``mode="eval"`` uses the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise SchemaError(f"input dimension {X.shape[1]} != model dimension {model.input_dim}")
    if mode == "train" and X.shape[0] < 2:
        raise ValueError("train-mode forward needs a batch of at least 2 rows")
    acts, cache = [X], []
    h = X
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = h @ layer.W + layer.b
        if i == last:
            h = z
            break
        bn = model.bn[i]
        if mode == "train":
            mu, var = z.mean(axis=0), z.var(axis=0)
        else:
            mu, var = bn.running_mean, bn.running_var
        inv_std = 1.0 / np.sqrt(var + bn.eps)
        z_hat = (z - mu) * inv_std
        h = sigmoid(z_hat * bn.gamma + bn.beta)
        cache.append({"z_hat": z_hat, "inv_std": inv_std, "mean": mu, "var": var})
        acts.append(h)
    out = h[0] if single else h
    return ForwardPass(out, acts, cache)


def reconstruct(model: DaeModel, x) -> np.ndarray:
    return forward(model, x, "eval").output


def loss(x_clean, y) -> float:
    """Mean squared reconstruction error over all entries."""
    x_clean = np.asarray(x_clean, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x_clean.shape != y.shape:
        raise ValueError(f"shape mismatch {x_clean.shape} vs {y.shape}")
    return float(np.mean((x_clean - y) ** 2))


def _backward(model: DaeModel, fp: ForwardPass, batch_clean) -> dict[str, np.ndarray]:
    Y = fp.output
    n = Y.shape[0]
    d_out = 2.0 * (Y - batch_clean) / Y.size
    grads = {}
    last = len(model.layers) - 1
    grads[f"W{last}"] = fp.activations[last].T @ d_out
    grads[f"b{last}"] = d_out.sum(axis=0)
    dh = d_out @ model.layers[last].W.T
    for i in range(last - 1, -1, -1):
        bn, c = model.bn[i], fp.cache[i]
        h = fp.activations[i + 1]
        du = dh * h * (1.0 - h)
        z_hat = c["z_hat"]
        grads[f"gamma{i}"] = (du * z_hat).sum(axis=0)
        grads[f"beta{i}"] = du.sum(axis=0)
        dz_hat = du * bn.gamma
        dz = (c["inv_std"] / n) * (
            n * dz_hat - dz_hat.sum(axis=0) - z_hat * (dz_hat * z_hat).sum(axis=0)
        )
        grads[f"W{i}"] = fp.activations[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i:
            dh = dz @ model.layers[i].W.T
    return grads


def gradients(model: DaeModel, batch_clean, batch_corrupted) -> dict[str, np.ndarray]:
    """Analytic gradients of the train-mode batch loss for every parameter."""
    batch_clean = np.atleast_2d(np.asarray(batch_clean, dtype=np.float64))
    fp = forward(model, batch_corrupted, "train")
    return _backward(model, fp, batch_clean)


def batch_loss(model: DaeModel, batch_clean, batch_corrupted) -> float:
    return loss(np.atleast_2d(batch_clean), forward(model, batch_corrupted, "train").output)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def train(model: DaeModel, train_vectors, config: TrainConfig):
    """Train a copy of ``model`` on already-normalized vectors.

    Returns ``(trained_model, epoch_losses)``.  Each epoch reshuffles the
    data and draws fresh corruption per mini-batch; training stops after
    ``max_epochs`` or ``patience`` epochs without improvement.
    """
    X = np.asarray(train_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise SchemaError(f"training data shape {X.shape} does not fit model dim {model.input_dim}")
    if len(X) < max(config.batch_size, 2):
        raise ValueError(f"need at least {max(config.batch_size, 2)} training vectors, got {len(X)}")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps_adam)
    history: list[float] = []
    best, stale = math.inf, 0
    # running BN statistics: EMA started from zero and bias-corrected, so
    # the identity statistics set at init carry no weight after training
    ema = [[np.zeros_like(bn.running_mean), np.zeros_like(bn.running_var)] for bn in model.bn]
    steps = 0
    for epoch in range(config.max_epochs):
        total, count = 0.0, 0
        for bi, idx in enumerate(_batches(len(X), config.batch_size, rng)):
            clean = X[idx]
            noisy = corrupt(clean, config.noise, rng)
            fp = forward(model, noisy, "train")
            batch = loss(clean, fp.output)
            if not math.isfinite(batch):
                raise TrainingError(
                    f"non-finite loss {batch} at epoch {epoch}, batch {bi} "
                    f"(lr={config.learning_rate}, noise={config.noise})"
                )
            grads = _backward(model, fp, clean)
            steps += 1
            for bn, c, acc in zip(model.bn, fp.cache, ema):
                acc[0] *= bn.momentum
                acc[0] += (1.0 - bn.momentum) * c["mean"]
                acc[1] *= bn.momentum
                acc[1] += (1.0 - bn.momentum) * c["var"]
                debias = 1.0 - bn.momentum ** steps
                bn.running_mean[:] = acc[0] / debias
                bn.running_var[:] = acc[1] / debias
            opt.step(grads)
            total += batch * len(idx)
            count += len(idx)
        epoch_loss = total / count
        history.append(epoch_loss)
        logger.debug("epoch %d loss %.6g", epoch, epoch_loss)
        if epoch_loss < best - config.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                logger.info("early stop at epoch %d (no improvement for %d epochs)", epoch, stale)
                break
    model.metadata.update({
        "seed": config.seed,
        "noise_factor": config.noise,
        "epochs_run": len(history),
        "train_config": asdict(config),
    })
    return model, history


# -- persistence -------------------------------------------------------------

def _enc(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [repr(float(v)) for v in a.ravel()]}


def _dec(d) -> np.ndarray:
    data = np.array([float(v) for v in d["data"]], dtype=np.float64)
    return data.reshape(d["shape"])


def model_to_dict(model: DaeModel) -> dict:
    cp = model.context_params
    return {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "normalizer": {
            "mins": _enc(model.normalizer.mins),
            "maxs": _enc(model.normalizer.maxs),
            "upper": None if model.normalizer.upper is None else repr(model.normalizer.upper),
        },
        "layers": [{"W": _enc(l.W), "b": _enc(l.b)} for l in model.layers],
        "bn": [
            {
                "gamma": _enc(bn.gamma),
                "beta": _enc(bn.beta),
                "running_mean": _enc(bn.running_mean),
                "running_var": _enc(bn.running_var),
                "eps": repr(bn.eps),
                "momentum": repr(bn.momentum),
            }
            for bn in model.bn
        ],
        "context_params": None if cp is None else {
            "window": cp.window,
            "speed_threshold": repr(cp.speed_threshold),
            "radius_scale": repr(cp.radius_scale),
            "speed_percentile": repr(cp.speed_percentile),
        },
        "metadata": model.metadata,
    }


def model_from_dict(d: dict) -> DaeModel:
    if not isinstance(d, dict) or d.get("magic") != MAGIC:
        raise ModelFormatError("not a ctxvad model file (bad magic string)")
    if d.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {d.get('format_version')!r} (expected {FORMAT_VERSION})"
        )
    try:
        schema = FeatureSchema.from_dict(d["schema"])
        nd = d["normalizer"]
        upper = nd.get("upper")
        normalizer = Normalizer(_dec(nd["mins"]), _dec(nd["maxs"]),
                                None if upper is None else float(upper))
        layers = [LayerParams(_dec(l["W"]), _dec(l["b"])) for l in d["layers"]]
        bn = [
            BnParams(_dec(b["gamma"]), _dec(b["beta"]), _dec(b["running_mean"]),
                     _dec(b["running_var"]), float(b["eps"]), float(b["momentum"]))
            for b in d["bn"]
        ]
        cp = d.get("context_params")
        context_params = None if cp is None else ContextParams(
            window=int(cp["window"]),
            speed_threshold=float(cp["speed_threshold"]),
            radius_scale=float(cp["radius_scale"]),
            speed_percentile=float(cp["speed_percentile"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"corrupted model file: {e!r}") from None
    if len(layers) != len(bn) + 1:
        raise ModelFormatError("layer / batch-norm count mismatch")
    for a, b in zip(layers[:-1], layers[1:]):
        if a.W.shape[1] != b.W.shape[0]:
            raise ModelFormatError(f"layer dims do not chain: {a.W.shape} -> {b.W.shape}")
    for l in layers:
        if l.b.shape != (l.W.shape[1],):
            raise ModelFormatError("bias shape does not match weight matrix")
    dim = layers[0].W.shape[0]
    if layers[-1].W.shape[1] != dim or schema.total_dim != dim or normalizer.dim != dim:
        raise ModelFormatError(
            f"inconsistent dimensions: input {dim}, output {layers[-1].W.shape[1]}, "
            f"schema {schema.total_dim}, normalizer {normalizer.dim}"
        )
    return DaeModel(schema, normalizer, layers, bn, context_params, d.get("metadata", {}))


def save(model: DaeModel, path) -> Path:
    return atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def load(path, schema: FeatureSchema | None = None) -> DaeModel:
    """Read a model file; with ``schema`` given, also check it matches."""
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path}: corrupted model file ({e})") from None
    model = model_from_dict(d)
    if schema is not None:
        model.check_schema(schema)
    return model
