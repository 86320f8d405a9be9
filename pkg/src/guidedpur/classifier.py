"""Small classifiers with hand-written gradients, a training loop, and the
toy Gaussian-mixture image dataset they are trained on."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import GaussianMixtureModel
from .errors import ConfigError, ShapeError
from .numerics import RandomSource, load_tensor, save_tensor


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


class _Model:
    input_shape: tuple[int, ...]
    num_classes: int

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x.reshape(1, -1), True
        if x.shape[1:] == self.input_shape:
            return x.reshape(len(x), -1), False
        raise ShapeError(f"input shape {x.shape} does not match model input {self.input_shape}")

    def forward(self, x) -> np.ndarray:
        """Logits, shape (num_classes,) or (B, num_classes)."""
        xb, single = self._batch(x)
        z = self._logits(xb)
        return z[0] if single else z

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward(x), axis=-1)

    def loss_and_input_grad(self, x, y):
        """Cross-entropy loss per example and its exact gradient w.r.t. the input.

        For a batch each example's gradient is that of its own loss.
        """
        xb, single = self._batch(x)
        yb = np.atleast_1d(np.asarray(y))
        if yb.shape != (len(xb),):
            raise ShapeError("one label per example required")
        if np.any((yb < 0) | (yb >= self.num_classes)) or not np.issubdtype(yb.dtype, np.integer):
            raise IndexError(f"labels must be integers in 0..{self.num_classes - 1}")
        loss, gx = self._loss_grad_x(xb, yb)
        gx = gx.reshape((len(xb),) + self.input_shape)
        return (float(loss[0]), gx[0]) if single else (loss, gx)

    def _check_labels(self, y):
        if np.any((y < 0) | (y >= self.num_classes)):
            raise IndexError(f"labels must be in 0..{self.num_classes - 1}")


@dataclass(eq=False)
class SoftmaxLinear(_Model):
    W: np.ndarray  # (num_classes, input_dim)
    b: np.ndarray
    input_shape: tuple[int, ...]

    @classmethod
    def zeros(cls, input_shape, num_classes: int) -> "SoftmaxLinear":
        d = math.prod(input_shape)
        return cls(np.zeros((num_classes, d)), np.zeros(num_classes), tuple(input_shape))

    @classmethod
    def init(cls, input_shape, num_classes: int, rng: RandomSource,
             init_std: float = 0.0) -> "SoftmaxLinear":
        """Weights drawn i.i.d. N(0, init_std^2), zero biases.

        Gradient descent only moves weights along directions the training
        images vary in, so on low-variance data most of this initial
        weight survives training untouched.
        """
        model = cls.zeros(input_shape, num_classes)
        if init_std > 0:
            model.W += init_std * rng.normal(model.W.shape)
        return model

    @property
    def num_classes(self) -> int:
        return len(self.b)

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def _logits(self, x):
        return x @ self.W.T + self.b

    def _loss_grad_x(self, x, y):
        z = self._logits(x)
        lp = log_softmax(z)
        loss = -lp[np.arange(len(y)), y]
        dz = np.exp(lp)
        dz[np.arange(len(y)), y] -= 1.0
        return loss, dz @ self.W

    def loss_and_param_grads(self, x, y):
        """Mean loss over the batch and its gradient per parameter."""
        z = self._logits(x)
        lp = log_softmax(z)
        n = len(y)
        dz = np.exp(lp)
        dz[np.arange(n), y] -= 1.0
        dz /= n
        return -lp[np.arange(n), y].mean(), {"W": dz.T @ x, "b": dz.sum(0)}


@dataclass(eq=False)
class Mlp1(_Model):
    """One tanh hidden layer."""

    W1: np.ndarray  # (hidden, input_dim)
    b1: np.ndarray
    W2: np.ndarray  # (num_classes, hidden)
    b2: np.ndarray
    input_shape: tuple[int, ...]

    @classmethod
    def init(cls, input_shape, num_classes: int, hidden: int, rng: RandomSource,
             init_scale: float = 1.0) -> "Mlp1":
        d = math.prod(input_shape)
        W1 = init_scale * rng.normal((hidden, d)) / np.sqrt(d)
        W2 = rng.normal((num_classes, hidden)) / np.sqrt(hidden)
        return cls(W1, np.zeros(hidden), W2, np.zeros(num_classes), tuple(input_shape))

    @property
    def num_classes(self) -> int:
        return len(self.b2)

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def _logits(self, x):
        return np.tanh(x @ self.W1.T + self.b1) @ self.W2.T + self.b2

    def _backward(self, x, y, scale):
        h = np.tanh(x @ self.W1.T + self.b1)
        lp = log_softmax(h @ self.W2.T + self.b2)
        n = len(y)
        dz = np.exp(lp)
        dz[np.arange(n), y] -= 1.0
        dz *= scale
        da = (dz @ self.W2) * (1.0 - h * h)
        return -lp[np.arange(n), y], h, dz, da

    def _loss_grad_x(self, x, y):
        loss, _, _, da = self._backward(x, y, 1.0)
        return loss, da @ self.W1

    def loss_and_param_grads(self, x, y):
        loss, h, dz, da = self._backward(x, y, 1.0 / len(y))
        return loss.mean(), {"W1": da.T @ x, "b1": da.sum(0), "W2": dz.T @ h, "b2": dz.sum(0)}


Model = SoftmaxLinear | Mlp1


@dataclass(eq=False)
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C)
    labels: np.ndarray  # (N,) int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ShapeError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], dict(self.metadata))


def class_mean_patterns(num_classes: int, H: int, W: int, C: int,
                        contrast: float, background: float = 0.5) -> np.ndarray:
    """Per-class block patterns, shape (K, H, W, C).

    The image is cut into a ``g x g`` grid of blocks (g = ceil(sqrt(K))).
    Class k brightens block k by ``contrast`` and darkens block
    ``(k + 1) mod K`` by the same amount.
    """
    g = math.ceil(math.sqrt(num_classes))
    rows = np.array_split(np.arange(H), g)
    cols = np.array_split(np.arange(W), g)
    blocks = [(r, c) for r in rows for c in cols]
    means = np.full((num_classes, H, W, C), background)
    for k in range(num_classes):
        r, c = blocks[k]
        means[k][np.ix_(r, c)] += contrast
        r, c = blocks[(k + 1) % num_classes]
        means[k][np.ix_(r, c)] -= contrast
    return means


def make_gmm_image_dataset(num_classes: int = 4, H: int = 8, W: int = 8, C: int = 1,
                           n_per_class: int = 100, contrast: float = 0.2, var: float = 0.01,
                           rng: RandomSource | None = None, background: float = 0.5
                           ) -> tuple[LabeledDataset, GaussianMixtureModel]:
    """Draw ``n_per_class`` images per class from N(m_k, var I), clamped to [0, 1].

    The returned mixture (uniform weights, same means and variance) is the
    prior the analytic denoiser should use, so classifier data and diffusion
    prior agree.
    """
    if min(num_classes, H, W, C, n_per_class) < 1 or contrast <= 0 or var < 0:
        raise ConfigError("dataset parameters must be positive")
    if rng is None:
        rng = RandomSource(0)
    means = class_mean_patterns(num_classes, H, W, C, contrast, background)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    noise = rng.normal((len(labels), H, W, C))
    images = np.clip(means[labels] + np.sqrt(var) * noise, 0.0, 1.0)
    gmm = GaussianMixtureModel(np.full(num_classes, 1.0 / num_classes), means,
                               max(var, 1e-12))
    meta = {"num_classes": num_classes, "H": H, "W": W, "C": C, "n_per_class": n_per_class,
            "contrast": contrast, "var": var, "background": background,
            "seed": rng.seed, "stream": list(rng.stream)}
    return LabeledDataset(images, labels, meta), gmm


def train(model: Model, data: LabeledDataset, epochs: int, lr: float, rng: RandomSource,
          batch_size: int = 50, weight_decay: float = 0.0):
    """Minibatch gradient descent on mean cross-entropy; updates ``model`` in place.

    Returns ``(model, history)`` where history holds the full-data loss
    before training and after each epoch.
    """
    if len(data) == 0:
        raise ConfigError("cannot train on an empty dataset")
    x = data.images.reshape(len(data), -1)
    y = data.labels
    model._check_labels(y)

    def full_loss():
        return float(model.loss_and_param_grads(x, y)[0])

    history = [full_loss()]
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            _, grads = model.loss_and_param_grads(x[idx], y[idx])
            for name, p in model.params().items():
                p -= lr * (grads[name] + weight_decay * p)
        history.append(full_loss())
    return model, history


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.predict(images) == labels))


def save_model(model: Model, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = "softmax_linear" if isinstance(model, SoftmaxLinear) else "mlp1"
    manifest = {"kind": kind, "input_shape": list(model.input_shape),
                "num_classes": model.num_classes,
                "activation": None if kind == "softmax_linear" else "tanh",
                "params": {name: list(p.shape) for name, p in model.params().items()}}
    for name, p in model.params().items():
        save_tensor(directory / name, p)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_model(directory: str | Path) -> Model:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    params = {name: load_tensor(directory / name).copy() for name in manifest["params"]}
    shape = tuple(manifest["input_shape"])
    if manifest["kind"] == "softmax_linear":
        return SoftmaxLinear(params["W"], params["b"], shape)
    if manifest["kind"] == "mlp1":
        return Mlp1(params["W1"], params["b1"], params["W2"], params["b2"], shape)
    raise ConfigError(f"unknown model kind {manifest['kind']!r}")


def save_dataset(data: LabeledDataset, gmm: GaussianMixtureModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "images", data.images)
    save_tensor(directory / "labels", data.labels.astype(np.float64))
    save_tensor(directory / "gmm_means", gmm.means)
    meta = {"metadata": data.metadata, "gmm": {"weights": gmm.weights.tolist(),
                                                "var": gmm.var.tolist()}}
    (directory / "dataset.json").write_text(json.dumps(meta, indent=2))


def load_dataset(directory: str | Path) -> tuple[LabeledDataset, GaussianMixtureModel]:
    directory = Path(directory)
    meta = json.loads((directory / "dataset.json").read_text())
    images = load_tensor(directory / "images")
    labels = load_tensor(directory / "labels").astype(np.int64)
    gmm = GaussianMixtureModel(np.array(meta["gmm"]["weights"]), load_tensor(directory / "gmm_means"),
                               np.array(meta["gmm"]["var"]))
    return LabeledDataset(images, labels, meta["metadata"]), gmm
