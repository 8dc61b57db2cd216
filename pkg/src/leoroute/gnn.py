"""Learning core: dual graph-convolution extractors, splice cross, dense head.

Two parallel two-layer graph convolutions (one over the low-order features,
one over the high-order features) are concatenated per node and fed through a
shared two-layer dense head that regresses each node's hop distance to the
destination. Forward, loss, and reverse-mode gradients are implemented
explicitly in numpy so they can be verified against finite differences.
"""
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graphs import F_HIGH, F_LOW
from .oracle import Dataset, TrainingSample
from .util import substream

__all__ = [
    "ModelParameters",
    "Hyperparameters",
    "TrainReport",
    "DegenerateSampleError",
    "TrainingDivergedError",
    "ParameterFormatError",
    "init_params",
    "gcn_layer",
    "forward",
    "predict_field",
    "loss",
    "backward",
    "train",
    "save_params",
    "load_params",
    "finite_difference_check",
]

MODEL_FORMAT = "leoroute.model"
MODEL_VERSION = 1

# fixed serialization / optimizer ordering of the parameter tensors
_TENSOR_NAMES = (
    "low_w1",
    "low_w2",
    "high_w1",
    "high_w2",
    "dense_w1",
    "dense_b1",
    "dense_w2",
    "dense_b2",
)
_WEIGHT_NAMES = ("low_w1", "low_w2", "high_w1", "high_w2", "dense_w1", "dense_w2")


class DegenerateSampleError(ValueError):
    """Raised when a sample has no masked-in node to regress on."""


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite during training."""


class ParameterFormatError(ValueError):
    """Raised when a parameter file cannot be decoded or has wrong shapes."""


@dataclass
class ModelParameters:
    """All trainable tensors; float64 throughout."""

    low_w1: np.ndarray
    low_w2: np.ndarray
    high_w1: np.ndarray
    high_w2: np.ndarray
    dense_w1: np.ndarray
    dense_b1: np.ndarray
    dense_w2: np.ndarray
    dense_b2: np.ndarray

    @property
    def f_low(self) -> int:
        return self.low_w1.shape[0]

    @property
    def f_high(self) -> int:
        return self.high_w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.low_w1.shape[1]

    def tensors(self) -> list:
        return [(name, getattr(self, name)) for name in _TENSOR_NAMES]

    def weights(self) -> list:
        return [(name, getattr(self, name)) for name in _WEIGHT_NAMES]

    def copy(self) -> "ModelParameters":
        return ModelParameters(**{name: getattr(self, name).copy() for name in _TENSOR_NAMES})

    def squared_weight_norm(self) -> float:
        return float(sum(np.sum(w**2) for _, w in self.weights()))


@dataclass
class Hyperparameters:
    learning_rate: float = 1e-3
    beta: float = 1e-4
    epochs: int = 200
    batch: int = 1
    early_stop_patience: int = 20
    hidden: int = 32
    optimizer: str = "adam"  # or "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    wall_clock_s: float = 0.0


def _glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(f_low: int = F_LOW, f_high: int = F_HIGH, hidden: int = 32, seed: int = 0) -> ModelParameters:
    """Glorot-uniform weight matrices, zero biases, seeded."""
    rng = substream(seed, "init")
    return ModelParameters(
        low_w1=_glorot(rng, f_low, hidden),
        low_w2=_glorot(rng, hidden, hidden),
        high_w1=_glorot(rng, f_high, hidden),
        high_w2=_glorot(rng, hidden, hidden),
        dense_w1=_glorot(rng, 2 * hidden, hidden),
        dense_b1=np.zeros(hidden),
        dense_w2=_glorot(rng, hidden, 1),
        dense_b2=np.zeros(1),
    )


def gcn_layer(ahat: np.ndarray, h_in: np.ndarray, w: np.ndarray, activate: bool = True) -> np.ndarray:
    """One graph-convolution layer: sigma(ahat @ h_in @ w).

    ahat is the symmetric degree-normalized adjacency with self-loops, so each
    output row aggregates the node's own features and its neighbors', scaled
    by 1/sqrt((deg_i + 1)(deg_j + 1)); sigma is relu, or identity when
    activate is False.
    """
    ahat = np.asarray(ahat, dtype=float)
    h_in = np.asarray(h_in, dtype=float)
    w = np.asarray(w, dtype=float)
    if ahat.ndim != 2 or ahat.shape[0] != ahat.shape[1]:
        raise ValueError(f"ahat must be square, got {ahat.shape}")
    if h_in.shape[0] != ahat.shape[0]:
        raise ValueError(f"h_in rows {h_in.shape[0]} != n {ahat.shape[0]}")
    if h_in.shape[1] != w.shape[0]:
        raise ValueError(f"h_in cols {h_in.shape[1]} != w rows {w.shape[0]}")
    z = ahat @ h_in @ w
    return np.maximum(z, 0.0) if activate else z


def _check_dims(params: ModelParameters, sample: TrainingSample) -> None:
    if sample.features.low_order.shape[1] != params.f_low:
        raise ValueError(
            f"low-order feature width {sample.features.low_order.shape[1]} "
            f"!= model f_low {params.f_low}"
        )
    if sample.features.high_order.shape[1] != params.f_high:
        raise ValueError(
            f"high-order feature width {sample.features.high_order.shape[1]} "
            f"!= model f_high {params.f_high}"
        )
    if sample.ahat.shape != (sample.n, sample.n):
        raise ValueError(f"ahat shape {sample.ahat.shape} != ({sample.n}, {sample.n})")


def forward(params: ModelParameters, sample: TrainingSample):
    """Per-node predicted hop distances, plus the cache needed by backward."""
    _check_dims(params, sample)
    ahat = sample.ahat
    x_low = sample.features.low_order
    x_high = sample.features.high_order

    z1_low = ahat @ x_low @ params.low_w1
    a1_low = np.maximum(z1_low, 0.0)
    z2_low = ahat @ a1_low @ params.low_w2
    a2_low = np.maximum(z2_low, 0.0)

    z1_high = ahat @ x_high @ params.high_w1
    a1_high = np.maximum(z1_high, 0.0)
    z2_high = ahat @ a1_high @ params.high_w2
    a2_high = np.maximum(z2_high, 0.0)

    crossed = np.concatenate([a2_low, a2_high], axis=1)
    z3 = crossed @ params.dense_w1 + params.dense_b1
    a3 = np.maximum(z3, 0.0)
    pred = (a3 @ params.dense_w2).ravel() + params.dense_b2[0]

    cache = {
        "sample": sample,
        "z1_low": z1_low, "a1_low": a1_low, "z2_low": z2_low, "a2_low": a2_low,
        "z1_high": z1_high, "a1_high": a1_high, "z2_high": z2_high, "a2_high": a2_high,
        "crossed": crossed, "z3": z3, "a3": a3, "pred": pred,
    }
    return pred, cache


def predict_field(params: ModelParameters, ahat: np.ndarray, features) -> np.ndarray:
    """Inference-only forward pass for routing (no labels needed)."""
    n = ahat.shape[0]
    sample = TrainingSample(
        ahat=ahat, features=features, labels=np.zeros(n), mask=np.ones(n)
    )
    pred, _ = forward(params, sample)
    return pred


def loss(predictions, labels, mask, params: ModelParameters, beta: float) -> float:
    """Masked mean squared error plus beta times the squared weight norm.

    The mean is over masked-in nodes only; biases are excluded from the
    regularization term.
    """
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if not (predictions.shape == labels.shape == mask.shape):
        raise ValueError(
            f"length mismatch: predictions {predictions.shape}, labels "
            f"{labels.shape}, mask {mask.shape}"
        )
    n_eff = float(mask.sum())
    if n_eff == 0:
        raise DegenerateSampleError("sample has no masked-in node")
    data = float(np.sum(mask * (predictions - labels) ** 2) / n_eff)
    return data + beta * params.squared_weight_norm()


def _backward_data(params: ModelParameters, sample: TrainingSample, cache: dict) -> ModelParameters:
    """Gradients of the masked-MSE data term only (no regularization)."""
    if cache.get("sample") is not sample:
        raise ValueError("stale cache: backward must receive the cache from a "
                         "forward pass on the same sample")
    ahat = sample.ahat
    mask = sample.mask
    n_eff = float(mask.sum())
    if n_eff == 0:
        raise DegenerateSampleError("sample has no masked-in node")

    r = 2.0 * mask * (cache["pred"] - sample.labels) / n_eff
    d_dense_b2 = np.array([r.sum()])
    d_dense_w2 = cache["a3"].T @ r[:, None]
    d_a3 = np.outer(r, params.dense_w2.ravel())
    d_z3 = d_a3 * (cache["z3"] > 0)
    d_dense_w1 = cache["crossed"].T @ d_z3
    d_dense_b1 = d_z3.sum(axis=0)
    d_crossed = d_z3 @ params.dense_w1.T

    hid = params.hidden
    d_a2_low, d_a2_high = d_crossed[:, :hid], d_crossed[:, hid:]

    def extractor(x_in, z1, a1, z2, w2, d_a2):
        d_z2 = d_a2 * (z2 > 0)
        d_w2 = (ahat @ a1).T @ d_z2
        d_a1 = ahat.T @ d_z2 @ w2.T
        d_z1 = d_a1 * (z1 > 0)
        d_w1 = (ahat @ x_in).T @ d_z1
        return d_w1, d_w2

    d_low_w1, d_low_w2 = extractor(
        sample.features.low_order, cache["z1_low"], cache["a1_low"],
        cache["z2_low"], params.low_w2, d_a2_low,
    )
    d_high_w1, d_high_w2 = extractor(
        sample.features.high_order, cache["z1_high"], cache["a1_high"],
        cache["z2_high"], params.high_w2, d_a2_high,
    )
    return ModelParameters(
        low_w1=d_low_w1, low_w2=d_low_w2,
        high_w1=d_high_w1, high_w2=d_high_w2,
        dense_w1=d_dense_w1, dense_b1=d_dense_b1,
        dense_w2=d_dense_w2, dense_b2=d_dense_b2,
    )


def backward(params: ModelParameters, sample: TrainingSample, cache: dict, beta: float = 0.0) -> ModelParameters:
    """Exact reverse-mode gradients of loss() for every parameter tensor."""
    grads = _backward_data(params, sample, cache)
    if beta != 0.0:
        for name in _WEIGHT_NAMES:
            getattr(grads, name)[...] += 2.0 * beta * getattr(params, name)
    return grads


class _Adam:
    """Adam with bias correction (decay 0.9/0.999, epsilon 1e-8)."""

    def __init__(self, params: ModelParameters, learning_rate: float):
        self.lr = learning_rate
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.tensors()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.tensors()}

    def step(self, params: ModelParameters, grads: ModelParameters) -> None:
        self.t += 1
        for name, arr in params.tensors():
            g = getattr(grads, name)
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g**2
            m_hat = self.m[name] / (1 - self.b1**self.t)
            v_hat = self.v[name] / (1 - self.b2**self.t)
            arr[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, params: ModelParameters, learning_rate: float):
        self.lr = learning_rate

    def step(self, params: ModelParameters, grads: ModelParameters) -> None:
        for name, arr in params.tensors():
            arr[...] -= self.lr * getattr(grads, name)


def _mean_loss(params, samples, beta):
    return float(np.mean([
        loss(forward(params, s)[0], s.labels, s.mask, params, beta) for s in samples
    ]))


def train(dataset: Dataset, hyper: Hyperparameters, progress=None):
    """Fit the model on the dataset's train split.

    Runs seeded-shuffle epochs of Adam (or plain gradient descent) steps,
    evaluates the validation split after each epoch, keeps the parameters of
    the best validation epoch, and stops early after `early_stop_patience`
    epochs without improvement. When the validation split is empty the train
    loss is used for best-epoch selection instead.

    progress, when given, is called as progress(epoch, train_loss, val_loss)
    after every epoch (val_loss is nan without a validation split).

    Returns (best ModelParameters, TrainReport).
    """
    t0 = time.perf_counter()
    train_samples = [dataset.samples[i] for i in dataset.train_indices]
    val_samples = [dataset.samples[i] for i in dataset.val_indices]
    if not train_samples:
        raise ValueError("train split is empty")

    f_low = train_samples[0].features.low_order.shape[1]
    f_high = train_samples[0].features.high_order.shape[1]
    params = init_params(f_low, f_high, hyper.hidden, hyper.seed)
    opt = (_Adam if hyper.optimizer == "adam" else _Sgd)(params, hyper.learning_rate)
    shuffle_rng = substream(hyper.seed, "shuffle")

    report = TrainReport()
    best_params = params.copy()
    best_metric = math.inf
    stale = 0
    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        epoch_losses = []
        for start in range(0, len(order), hyper.batch):
            batch = [train_samples[i] for i in order[start:start + hyper.batch]]
            contribs = []
            total_eff = 0.0
            for s in batch:
                pred, cache = forward(params, s)
                epoch_losses.append(loss(pred, s.labels, s.mask, params, hyper.beta))
                n_eff = float(s.mask.sum())
                contribs.append((n_eff, _backward_data(params, s, cache)))
                total_eff += n_eff
            grads = contribs[0][1]
            for name, arr in grads.tensors():
                arr[...] *= contribs[0][0] / total_eff
            for n_eff, g in contribs[1:]:
                for name, arr in grads.tensors():
                    arr[...] += (n_eff / total_eff) * getattr(g, name)
            if hyper.beta != 0.0:
                for name in _WEIGHT_NAMES:
                    getattr(grads, name)[...] += 2.0 * hyper.beta * getattr(params, name)
            opt.step(params, grads)

        train_loss = float(np.mean(epoch_losses))
        val_loss = _mean_loss(params, val_samples, hyper.beta) if val_samples else math.nan
        if not math.isfinite(train_loss) or (val_samples and not math.isfinite(val_loss)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        if progress is not None:
            progress(epoch, train_loss, val_loss)

        metric = val_loss if val_samples else train_loss
        if metric < best_metric:
            best_metric = metric
            best_params = params.copy()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= hyper.early_stop_patience:
                break

    report.wall_clock_s = time.perf_counter() - t0
    return best_params, report


# --- persistence ------------------------------------------------------------
# Layout: one JSON header line with the dimensions, then the tensors in
# _TENSOR_NAMES order as float64 little-endian row-major bytes.


def save_params(params: ModelParameters, path) -> None:
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "f_low": params.f_low,
        "f_high": params.f_high,
        "hidden": params.hidden,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in params.tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _tensor_shapes(f_low, f_high, hidden):
    return {
        "low_w1": (f_low, hidden),
        "low_w2": (hidden, hidden),
        "high_w1": (f_high, hidden),
        "high_w2": (hidden, hidden),
        "dense_w1": (2 * hidden, hidden),
        "dense_b1": (hidden,),
        "dense_w2": (hidden, 1),
        "dense_b2": (1,),
    }


def load_params(path, expect_f_low: int | None = None, expect_f_high: int | None = None,
                expect_hidden: int | None = None) -> ModelParameters:
    """Load a parameter file, optionally enforcing expected dimensions."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParameterFormatError(f"bad parameter header: {exc}") from exc
        if header.get("format") != MODEL_FORMAT:
            raise ParameterFormatError(f"not a model file: format={header.get('format')!r}")
        if header.get("version") != MODEL_VERSION:
            raise ParameterFormatError(
                f"unsupported model version: expected {MODEL_VERSION}, "
                f"found {header.get('version')}"
            )
        f_low, f_high, hidden = header["f_low"], header["f_high"], header["hidden"]
        for label, expected, found in (
            ("f_low", expect_f_low, f_low),
            ("f_high", expect_f_high, f_high),
            ("hidden", expect_hidden, hidden),
        ):
            if expected is not None and expected != found:
                raise ParameterFormatError(
                    f"shape mismatch: expected {label}={expected}, found {found}"
                )
        tensors = {}
        for name, shape in _tensor_shapes(f_low, f_high, hidden).items():
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ParameterFormatError(f"truncated file while reading {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return ModelParameters(**tensors)


_RELU_KEYS = ("z1_low", "z2_low", "z1_high", "z2_high", "z3")


def _same_activation_pattern(cache_a: dict, cache_b: dict) -> bool:
    return all(np.array_equal(cache_a[k] > 0, cache_b[k] > 0) for k in _RELU_KEYS)


def finite_difference_check(params: ModelParameters, sample: TrainingSample,
                            beta: float = 1e-4, h: float = 1e-5,
                            gradients_fn=None):
    """Max relative error of the analytic gradients vs central differences.

    Returns ({tensor name: max relative error}, skipped count). The relative
    error uses a small-magnitude floor so numerically zero gradients compare
    under an absolute tolerance. Coordinates where the two probe points land
    on different relu activation patterns are skipped: the loss is not
    differentiable there, so the central difference estimates no derivative.
    gradients_fn defaults to backward and is injectable for self-tests.
    """
    if gradients_fn is None:
        gradients_fn = backward
    pred, cache = forward(params, sample)
    analytic = gradients_fn(params, sample, cache, beta)
    errors = {}
    skipped = 0
    for name, arr in params.tensors():
        an = getattr(analytic, name).ravel()
        worst = 0.0
        flat = arr.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            pred_up, cache_up = forward(params, sample)
            up = loss(pred_up, sample.labels, sample.mask, params, beta)
            flat[idx] = orig - h
            pred_dn, cache_dn = forward(params, sample)
            down = loss(pred_dn, sample.labels, sample.mask, params, beta)
            flat[idx] = orig
            if not _same_activation_pattern(cache_up, cache_dn):
                skipped += 1
                continue
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - an[idx]) / max(abs(fd), abs(an[idx]), 1e-3))
        errors[name] = worst
    return errors, skipped
