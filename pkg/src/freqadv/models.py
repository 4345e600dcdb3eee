"""Differentiable forgery classifiers, training, ensembles, checkpoints.

Every model maps an (H, W, C) pixel array in [0, 1] to a single logit whose
sign is the decision: positive means fake (label 1), nonpositive means real
(label 0). Models expose closed-form gradients of both the logit and the
binary cross-entropy loss with respect to the input pixels; attacks consume
those directly.
"""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, spectral
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    EmptyEnsemble,
    EmptyInput,
    NumericError,
    ShapeMismatch,
)
from .imaging import Image

CHECKPOINT_MAGIC = b"FADV"
CHECKPOINT_VERSION = 1

# sigma(z) is clamped into [_P_MIN, 1 - _P_MIN] before the log so saturated
# logits give a large finite loss instead of inf.
_P_MIN = 1e-12

ENSEMBLE_MODES = ("logits", "loss", "pixel")


def sigmoid(z):
    """Numerically stable logistic function for scalars or arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _check_label(label) -> float:
    y = float(label)
    if y not in (0.0, 1.0):
        raise ConfigError(f"label must be 0 or 1, got {label!r}")
    return y


def bce_loss(logit: float, label) -> float:
    """Binary cross-entropy of one logit against a 0/1 label, clamped finite."""
    y = _check_label(label)
    p = np.clip(sigmoid(float(logit)), _P_MIN, 1.0 - _P_MIN)
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _pixels(x) -> np.ndarray:
    if isinstance(x, Image):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"expected (H, W, C) pixels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("pixel array contains non-finite values")
    return arr


class Classifier(ABC):
    """Binary forgery classifier with input gradients.

    Subclasses implement the logit, its pixel gradient, and parameter access;
    prediction and loss plumbing are derived here.
    """

    kind: int = 0

    @abstractmethod
    def logit(self, x) -> float:
        ...

    @abstractmethod
    def logit_and_grad_logit(self, x) -> tuple[float, np.ndarray]:
        """Logit and its gradient with respect to the input pixels."""

    @abstractmethod
    def param_arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed declaration order."""

    @abstractmethod
    def load_param_arrays(self, arrays: list[np.ndarray]) -> None:
        ...

    @abstractmethod
    def train_step(self, batch: np.ndarray, labels: np.ndarray, lr: float) -> float:
        """One gradient-descent step on the mean BCE; returns the pre-step loss."""

    def predict(self, x) -> int:
        return 1 if self.logit(x) > 0.0 else 0

    def loss(self, x, label) -> float:
        return bce_loss(self.logit(x), label)

    def loss_and_grad(self, x, label) -> tuple[float, np.ndarray]:
        """BCE loss and its gradient with respect to the input pixels."""
        y = _check_label(label)
        z, gz = self.logit_and_grad_logit(x)
        # dL/dz = sigma(z) - y; the loss clamp only shields the log, the
        # gradient keeps the exact unclamped form.
        return bce_loss(z, y), (sigmoid(z) - y) * gz

    def grad_input(self, x, label) -> np.ndarray:
        return self.loss_and_grad(x, label)[1]

    def logits_batch(self, xs) -> np.ndarray:
        return np.array([self.logit(x) for x in xs], dtype=np.float64)


class LinearSpectralClassifier(Classifier):
    """Affine model on block-averaged DCT coefficients.

    The feature vector is the mean coefficient tile over all blocks, one
    (N, N) tile per channel; the logit is a learned inner product plus bias.
    Exactly linear in the pixels, so its input gradient is constant per
    image shape and cached.
    """

    kind = 1

    def __init__(self, block_size: int = 8, channels: int = 1, seed: int = 0):
        if block_size < 2:
            raise DimensionError(f"block_size must be >= 2, got {block_size}")
        if channels < 1:
            raise DimensionError(f"channels must be >= 1, got {channels}")
        self.block_size = int(block_size)
        self.channels = int(channels)
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(0.0, 0.01, size=(channels, block_size, block_size))
        self.bias = np.zeros(1, dtype=np.float64)
        self._grad_cache: dict[tuple[int, int], np.ndarray] = {}

    def _features(self, arr: np.ndarray) -> np.ndarray:
        spec = spectral.forward_spectrum(arr, self.block_size)
        if spec.channels != self.channels:
            raise ShapeMismatch(
                f"model expects {self.channels} channels, got {spec.channels}"
            )
        return spec.coeffs.mean(axis=(0, 1))

    def logit(self, x) -> float:
        f = self._features(_pixels(x))
        return float((self.weights * f).sum() + self.bias[0])

    def _grad_for_shape(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        cached = self._grad_cache.get(key)
        if cached is None:
            n = self.block_size
            n_blocks = (h // n) * (w // n)
            tile = np.stack(
                [spectral.idct2_block(self.weights[c]) for c in range(self.channels)],
                axis=-1,
            )
            cached = np.tile(tile, (h // n, w // n, 1)) / n_blocks
            cached.flags.writeable = False
            self._grad_cache[key] = cached
        return cached

    def logit_and_grad_logit(self, x) -> tuple[float, np.ndarray]:
        arr = _pixels(x)
        return self.logit(arr), self._grad_for_shape(arr.shape[0], arr.shape[1])

    def param_arrays(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def load_param_arrays(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != 2:
            raise ShapeMismatch(f"expected 2 parameter arrays, got {len(arrays)}")
        w, b = (np.asarray(a, dtype=np.float64) for a in arrays)
        if w.shape != self.weights.shape or b.shape != self.bias.shape:
            raise ShapeMismatch(
                f"parameter shapes {w.shape}, {b.shape} do not match model"
            )
        self.weights = w.copy()
        self.bias = b.copy()
        self._grad_cache.clear()

    def train_step(self, batch: np.ndarray, labels: np.ndarray, lr: float) -> float:
        n = batch.shape[0]
        feats = np.stack([self._features(batch[i]) for i in range(n)])
        z = feats.reshape(n, -1) @ self.weights.ravel() + self.bias[0]
        p = sigmoid(z)
        resid = p - labels
        loss = float(np.mean([bce_loss(zi, yi) for zi, yi in zip(z, labels)]))
        self.weights -= lr * np.tensordot(resid, feats, axes=1) / n
        self.bias -= lr * resid.mean()
        self._grad_cache.clear()
        return loss


def _avgpool2(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _unpool2(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0


def _bandpass_init(rng, shape, fan_in, gain) -> np.ndarray:
    """Scaled kernels re-centered so each 3x3 filter sums to zero.

    The gain lifts conv responses to order one on [0,1] images; without it
    the pooled features sit orders of magnitude below the head bias and no
    single learning rate can serve both.
    """
    w = rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)
    w -= w.mean(axis=(0, 1), keepdims=True)
    return w


class TinyCnnClassifier(Classifier):
    """Two-block convolutional classifier.

    conv3x3(C -> 8, same padding, no bias), ReLU, avgpool 2x2,
    conv3x3(8 -> 16, no bias), ReLU, avgpool 2x2, global average pool,
    affine head to one logit. Input height and width must be multiples of 4.

    The convolutions are bias-free on purpose: a bias coordinate sits at
    unit feature scale while the texture responses live two orders of
    magnitude lower, and a single global learning rate lets the biases
    drift far enough to shut every ReLU before the class signal is found.
    """

    kind = 2

    def __init__(self, channels: int = 1, seed: int = 0):
        if channels < 1:
            raise DimensionError(f"channels must be >= 1, got {channels}")
        self.channels = int(channels)
        rng = np.random.default_rng(seed)
        # Zero-mean kernels: a flat patch produces zero response, so the
        # positive-mean input cannot push every ReLU dead before training
        # finds the texture signal.
        self.w1 = _bandpass_init(rng, (3, 3, channels, 8), 9 * channels, 8.0)
        self.w2 = _bandpass_init(rng, (3, 3, 8, 16), 9 * 8, 6.0)
        # Zero head: the first updates follow the pure class-separation
        # gradient instead of amplifying the random projection of the
        # feature noise.
        self.fc_w = np.zeros(16, dtype=np.float64)
        self.fc_b = np.zeros(1, dtype=np.float64)
        self._zero8 = np.zeros(8, dtype=np.float64)
        self._zero16 = np.zeros(16, dtype=np.float64)

    def _forward(self, x: np.ndarray) -> dict:
        n, h, w, c = x.shape
        if c != self.channels:
            raise ShapeMismatch(f"model expects {self.channels} channels, got {c}")
        if h % 4 or w % 4:
            raise DimensionError(
                f"input sides must be multiples of 4, got {h}x{w}"
            )
        a1 = _kernels.conv3x3_forward(np.ascontiguousarray(x), self.w1, self._zero8)
        r1 = np.maximum(a1, 0.0)
        p1 = _avgpool2(r1)
        a2 = _kernels.conv3x3_forward(np.ascontiguousarray(p1), self.w2, self._zero16)
        r2 = np.maximum(a2, 0.0)
        p2 = _avgpool2(r2)
        gap = p2.mean(axis=(1, 2))
        z = gap @ self.fc_w + self.fc_b[0]
        return {"x": x, "a1": a1, "p1": p1, "a2": a2, "p2": p2, "gap": gap, "z": z}

    def _backward(self, cache: dict, dz: np.ndarray, want_input: bool, want_params: bool):
        gap, p2, a2, p1, a1, x = (
            cache["gap"], cache["p2"], cache["a2"], cache["p1"], cache["a1"], cache["x"],
        )
        hp, wp = p2.shape[1], p2.shape[2]
        dgap = dz[:, np.newaxis] * self.fc_w[np.newaxis, :]
        dp2 = np.broadcast_to(
            dgap[:, np.newaxis, np.newaxis, :] / (hp * wp), p2.shape
        )
        da2 = _unpool2(dp2) * (a2 > 0.0)
        da2 = np.ascontiguousarray(da2)
        dx = None
        grads = None
        dp1 = _kernels.conv3x3_input_grad(da2, self.w2)
        da1 = np.ascontiguousarray(_unpool2(dp1) * (a1 > 0.0))
        if want_input:
            dx = _kernels.conv3x3_input_grad(da1, self.w1)
        if want_params:
            dw2, _ = _kernels.conv3x3_param_grad(np.ascontiguousarray(p1), da2)
            dw1, _ = _kernels.conv3x3_param_grad(np.ascontiguousarray(x), da1)
            dfc_w = dz @ gap
            dfc_b = np.array([dz.sum()])
            grads = [dw1, dw2, dfc_w, dfc_b]
        return dx, grads

    def logit(self, x) -> float:
        arr = _pixels(x)
        return float(self._forward(arr[np.newaxis])["z"][0])

    def logit_and_grad_logit(self, x) -> tuple[float, np.ndarray]:
        arr = _pixels(x)
        cache = self._forward(arr[np.newaxis])
        dx, _ = self._backward(cache, np.ones(1), want_input=True, want_params=False)
        return float(cache["z"][0]), dx[0]

    def param_arrays(self) -> list[np.ndarray]:
        return [self.w1, self.w2, self.fc_w, self.fc_b]

    def load_param_arrays(self, arrays: list[np.ndarray]) -> None:
        current = self.param_arrays()
        if len(arrays) != len(current):
            raise ShapeMismatch(
                f"expected {len(current)} parameter arrays, got {len(arrays)}"
            )
        fresh = []
        for got, cur in zip(arrays, current):
            a = np.asarray(got, dtype=np.float64)
            if a.shape != cur.shape:
                raise ShapeMismatch(
                    f"parameter shape {a.shape} does not match {cur.shape}"
                )
            fresh.append(a.copy())
        self.w1, self.w2, self.fc_w, self.fc_b = fresh

    def train_step(self, batch: np.ndarray, labels: np.ndarray, lr: float) -> float:
        n = batch.shape[0]
        cache = self._forward(batch)
        z = cache["z"]
        p = sigmoid(z)
        dz = (p - labels) / n
        _, grads = self._backward(cache, dz, want_input=False, want_params=True)
        loss = float(np.mean([bce_loss(zi, yi) for zi, yi in zip(z, labels)]))
        for param, g in zip(self.param_arrays(), grads):
            param -= lr * g
        return loss


@dataclass
class TrainResult:
    """Per-epoch mean losses from one training run."""

    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]

    @property
    def n_epochs(self) -> int:
        return len(self.epoch_losses)


def train(
    model: Classifier,
    images,
    labels,
    *,
    epochs: int,
    lr: float,
    batch_size: int | None = None,
    seed: int = 0,
) -> TrainResult:
    """Minibatch gradient descent on mean BCE. Deterministic for a given seed.

    Raises DivergenceError as soon as the epoch loss or any parameter stops
    being finite.
    """
    if len(images) == 0:
        raise EmptyInput("no training images")
    if len(labels) != len(images):
        raise ShapeMismatch(
            f"{len(images)} images but {len(labels)} labels"
        )
    stack = np.stack([_pixels(x) for x in images])
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ConfigError("labels must be 0 or 1")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    n = stack.shape[0]
    bs = n if batch_size is None else int(batch_size)
    if bs < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    result = TrainResult()
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            loss = model.train_step(stack[idx], y[idx], lr)
            total += loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss) or not all(
            np.all(np.isfinite(p)) for p in model.param_arrays()
        ):
            raise DivergenceError(
                f"training diverged at epoch {len(result.epoch_losses) + 1}"
            )
        result.epoch_losses.append(epoch_loss)
    return result


class EnsembleClassifier(Classifier):
    """Aggregate of two or more trained classifiers.

    mode 'logits' averages member logits and differentiates through the mean;
    mode 'loss' averages member losses and their gradients; mode 'pixel'
    averages the per-member gradient signs. Prediction is always the sign of
    the mean logit.
    """

    kind = 0

    def __init__(self, members, mode: str = "logits"):
        members = list(members)
        if len(members) < 2:
            raise EmptyEnsemble(
                f"ensemble needs at least 2 members, got {len(members)}"
            )
        if mode not in ENSEMBLE_MODES:
            raise ConfigError(
                f"unknown ensemble mode {mode!r}; expected one of {ENSEMBLE_MODES}"
            )
        self.members = members
        self.mode = mode

    def logit(self, x) -> float:
        return float(np.mean([m.logit(x) for m in self.members]))

    def logit_and_grad_logit(self, x) -> tuple[float, np.ndarray]:
        pairs = [m.logit_and_grad_logit(x) for m in self.members]
        z = float(np.mean([p[0] for p in pairs]))
        g = np.mean([p[1] for p in pairs], axis=0)
        return z, g

    def loss_and_grad(self, x, label) -> tuple[float, np.ndarray]:
        if self.mode == "logits":
            return super().loss_and_grad(x, label)
        pairs = [m.loss_and_grad(x, label) for m in self.members]
        loss = float(np.mean([p[0] for p in pairs]))
        if self.mode == "loss":
            grad = np.mean([p[1] for p in pairs], axis=0)
        else:
            grad = np.mean([np.sign(p[1]) for p in pairs], axis=0)
        return loss, grad

    def loss(self, x, label) -> float:
        if self.mode == "logits":
            return super().loss(x, label)
        return float(np.mean([m.loss(x, label) for m in self.members]))

    def param_arrays(self) -> list[np.ndarray]:
        raise ConfigError("ensembles expose no trainable parameters")

    def load_param_arrays(self, arrays) -> None:
        raise ConfigError("ensembles expose no trainable parameters")

    def train_step(self, batch, labels, lr) -> float:
        raise ConfigError("ensembles are frozen; train the members instead")


def finite_diff_grad(f, x: np.ndarray, coords, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function at selected coordinates.

    coords is a sequence of index tuples into x; returns one estimate per
    coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(coords), dtype=np.float64)
    for k, idx in enumerate(coords):
        idx = tuple(idx)
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[k] = (f(xp) - f(xm)) / (2.0 * h)
    return out


_MODEL_KINDS: dict[int, type] = {1: LinearSpectralClassifier, 2: TinyCnnClassifier}


def save_checkpoint(model: Classifier, path) -> None:
    """Write model parameters in a little-endian binary container."""
    if model.kind not in _MODEL_KINDS:
        raise ConfigError(f"model kind {model.kind} cannot be checkpointed")
    arrays = model.param_arrays()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HHH", CHECKPOINT_VERSION, model.kind, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<H", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Classifier:
    """Rebuild a classifier from save_checkpoint output."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ConfigError("not a model checkpoint (bad magic)")
    version, kind, n_arrays = struct.unpack_from("<HHH", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    if kind not in _MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind}")
    offset = 10
    shapes = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}q", blob, offset)
        offset += 8 * ndim
        shapes.append(tuple(shape))
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        arrays.append(arr.reshape(shape).astype(np.float64))
    if kind == 1:
        w = arrays[0]
        if w.ndim != 3:
            raise ConfigError("malformed linear checkpoint")
        model = LinearSpectralClassifier(block_size=w.shape[1], channels=w.shape[0])
    else:
        w1 = arrays[0]
        if w1.ndim != 4:
            raise ConfigError("malformed conv checkpoint")
        model = TinyCnnClassifier(channels=w1.shape[2])
    model.load_param_arrays(arrays)
    return model
