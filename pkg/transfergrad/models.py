"""
Small trainable classifiers: two-layer-ish MLPs and conv/pool CNNs.

Architectures
-------------
mlp   flatten -> [dense -> relu] * len(hidden) -> logits
cnn   [conv(k, same) -> relu -> maxpool 2x2] * len(hidden) -> flatten
      -> optional dense(head_width) -> relu -> logits

Parameters are float32 arrays named ``conv{i}.weight`` (F, C, k, k), ``conv{i}.bias``,
``dense{i}.weight`` (in, out), ``dense{i}.bias``, ``logits.weight`` and ``logits.bias``.
Weights are drawn uniformly from ``[-sqrt(3 / fan_in), sqrt(3 / fan_in)]`` (variance
``1 / fan_in``); biases start at zero.

Training is minibatch SGD with momentum on the mean softmax cross-entropy.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Any

import numpy as np

from transfergrad import autodiff as ad
from transfergrad.errors import ConfigError, DomainError, NumericalError, ShapeError
from transfergrad.utils.checksums import sha256_array
from transfergrad.utils.rng import stream

if TYPE_CHECKING:
    from transfergrad.datasets import Dataset

logger = logging.getLogger(__name__)

PREDICT_BATCH = 256


class ModelKind(str, Enum):
    MLP = "mlp"
    CNN = "cnn"


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer layout of one classifier."""

    kind: ModelKind
    hidden: tuple[int, ...]
    input_shape: tuple[int, int, int]
    num_classes: int
    kernel_size: int = 3
    head_width: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError as e:
            valid = ", ".join(k.value for k in ModelKind)
            raise ConfigError(f"unknown model kind {self.kind!r}; valid: {valid}") from e
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"layer widths must be positive, got {self.hidden}")
        if self.head_width < 0:
            raise ConfigError(f"head_width must be >= 0, got {self.head_width}")
        if self.kind is ModelKind.CNN:
            if not self.hidden:
                raise ConfigError("cnn needs at least one conv block")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
            div = 2 ** len(self.hidden)
            _, h, w = self.input_shape
            if h % div or w % div:
                raise ConfigError(
                    f"cnn with {len(self.hidden)} pooling stages needs H and W "
                    f"divisible by {div}, got {h}x{w}"
                )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["hidden"] = list(self.hidden)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ArchitectureSpec:
        return cls(
            kind=d["kind"],
            hidden=tuple(d["hidden"]),
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
            kernel_size=int(d.get("kernel_size", 3)),
            head_width=int(d.get("head_width", 0)),
        )

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Ordered ``{name: shape}`` of every parameter."""
        c, h, w = self.input_shape
        shapes: dict[str, tuple[int, ...]] = {}
        if self.kind is ModelKind.MLP:
            width = c * h * w
            for i, out in enumerate(self.hidden):
                shapes[f"dense{i}.weight"] = (width, out)
                shapes[f"dense{i}.bias"] = (out,)
                width = out
        else:
            k = self.kernel_size
            for i, out in enumerate(self.hidden):
                shapes[f"conv{i}.weight"] = (out, c, k, k)
                shapes[f"conv{i}.bias"] = (out,)
                c, h, w = out, h // 2, w // 2
            width = c * h * w
            if self.head_width:
                shapes["dense0.weight"] = (width, self.head_width)
                shapes["dense0.bias"] = (self.head_width,)
                width = self.head_width
        shapes["logits.weight"] = (width, self.num_classes)
        shapes["logits.bias"] = (self.num_classes,)
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True, eq=False)
class Classifier:
    """Immutable trained (or freshly built) model; safe to share across threads."""

    spec: ArchitectureSpec
    params: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def _constants(self) -> dict[str, ad.Tensor]:
        return {name: ad.constant(p) for name, p in self.params.items()}

    def param_hash(self) -> str:
        parts = "".join(name + sha256_array(p) for name, p in sorted(self.params.items()))
        return sha256_array(np.frombuffer(parts.encode(), dtype=np.uint8))


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float | None = None


@dataclass(frozen=True)
class TrainingResult:
    model: Classifier
    history: list[EpochMetrics]


# -- Construction ----------------------------------------------------------


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("conv"):
        return int(np.prod(shape[1:]))
    return shape[0]


def build(spec: ArchitectureSpec, seed: int) -> Classifier:
    """Freshly initialized classifier; same (spec, seed) gives identical parameters."""
    rng = stream(seed, 0)
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            limit = math.sqrt(3.0 / _fan_in(name, shape))
            arr = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        arr.setflags(write=False)
        params[name] = arr
    return Classifier(spec=spec, params=params, metadata={"seed": seed, "epochs": 0})


# -- Forward pass ----------------------------------------------------------


def forward(spec: ArchitectureSpec, params: Mapping[str, ad.Tensor], x: ad.Tensor) -> ad.Tensor:
    """Logits (N, K) for a batch ``x`` of shape (N, C, H, W)."""
    n = x.shape[0]
    h = x
    if spec.kind is ModelKind.MLP:
        h = ad.reshape(h, (n, -1))
        for i in range(len(spec.hidden)):
            h = ad.matmul(h, params[f"dense{i}.weight"])
            h = ad.relu(ad.bias_add(h, params[f"dense{i}.bias"]))
    else:
        for i in range(len(spec.hidden)):
            h = ad.conv2d(h, params[f"conv{i}.weight"])
            h = ad.relu(ad.bias_add(h, params[f"conv{i}.bias"]))
            h = ad.maxpool2x2(h)
        h = ad.reshape(h, (n, -1))
        if spec.head_width:
            h = ad.matmul(h, params["dense0.weight"])
            h = ad.relu(ad.bias_add(h, params["dense0.bias"]))
    h = ad.matmul(h, params["logits.weight"])
    return ad.bias_add(h, params["logits.bias"])


def _check_batch(spec: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    if x.shape == spec.input_shape:
        return x[None]
    if x.ndim == 4 and x.shape[1:] == spec.input_shape:
        return x
    raise ShapeError(f"expected input of shape {spec.input_shape}, got {x.shape}")


def _check_labels(spec: ArchitectureSpec, labels: np.ndarray) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
        raise DomainError(
            f"labels must lie in [0, {spec.num_classes}), "
            f"got range [{labels.min()}, {labels.max()}]"
        )


def predict_logits(model: Classifier, x: np.ndarray) -> np.ndarray:
    """Logits (N, K) for a batch, or (K,) for a single image."""
    x = np.asarray(x)
    single = x.shape == model.spec.input_shape
    batch = _check_batch(model.spec, x)
    chunks = [
        forward(model.spec, model._constants, ad.constant(batch[i : i + PREDICT_BATCH])).data
        for i in range(0, batch.shape[0], PREDICT_BATCH)
    ]
    out = np.concatenate(chunks, axis=0)
    return out[0] if single else out


def predict(model: Classifier, x: np.ndarray) -> np.ndarray:
    return predict_logits(model, x).argmax(axis=-1)


def accuracy(model: Classifier, images: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(model, images) == labels))


def loss_and_input_grad(model: Classifier, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Cross-entropy loss at one image and its gradient with respect to that image."""
    x = np.asarray(x)
    if x.shape != model.spec.input_shape:
        raise ShapeError(
            f"loss_and_input_grad: expected {model.spec.input_shape}, got {x.shape}"
        )
    _check_labels(model.spec, np.asarray([y]))
    with ad.record() as rec:
        xt = rec.leaf(x[None], dtype=x.dtype if x.dtype.kind == "f" else None)
        logits = forward(model.spec, model._constants, xt)
        loss = ad.sum_all(ad.softmax_cross_entropy(logits, [y]))
    grads = ad.backward(rec, loss, [xt])
    return loss.item(), np.array(grads[xt][0])


# -- Training --------------------------------------------------------------


def train(
    model: Classifier,
    data: Dataset,
    cfg: TrainConfig,
    test: Dataset | None = None,
    *,
    quiet: bool = True,
) -> TrainingResult:
    """Minibatch SGD with momentum; returns the trained model and per-epoch metrics."""
    from tqdm import tqdm

    spec = model.spec
    images = _check_batch(spec, np.asarray(data.images, dtype=np.float32))
    labels = np.asarray(data.labels, dtype=np.int64)
    _check_labels(spec, labels)
    if test is not None:
        _check_labels(spec, np.asarray(test.labels))

    params = {k: np.array(v, dtype=np.float32) for k, v in model.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    lr = np.float32(cfg.learning_rate)
    mom = np.float32(cfg.momentum)
    history: list[EpochMetrics] = []
    n = len(labels)

    for epoch in tqdm(range(cfg.epochs), desc="epochs", disable=quiet):
        order = stream(cfg.seed, 1, epoch).permutation(n)
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                with ad.record() as rec:
                    leaves = {k: rec.leaf(v) for k, v in params.items()}
                    logits = forward(spec, leaves, ad.constant(images[idx]))
                    loss = ad.mean_batch(ad.softmax_cross_entropy(logits, labels[idx]))
                grads = ad.backward(rec, loss)
            except NumericalError as e:
                raise NumericalError(
                    f"training diverged at epoch {epoch}, batch {b} "
                    f"(learning_rate={cfg.learning_rate}): {e}"
                ) from e
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b} "
                    f"(learning_rate={cfg.learning_rate})"
                )
            for k, t in leaves.items():
                velocity[k] = mom * velocity[k] + grads[t]
                params[k] = params[k] - lr * velocity[k]
            total += value
            batches += 1

        snapshot = _frozen(spec, params, model.metadata)
        metrics = EpochMetrics(
            epoch=epoch,
            loss=total / max(batches, 1),
            train_accuracy=accuracy(snapshot, images, labels),
            test_accuracy=None if test is None else accuracy(snapshot, test.images, test.labels),
        )
        history.append(metrics)
        logger.info(
            "epoch %d: loss %.4f, train acc %.3f, test acc %s",
            epoch,
            metrics.loss,
            metrics.train_accuracy,
            "n/a" if metrics.test_accuracy is None else f"{metrics.test_accuracy:.3f}",
        )

    metadata = dict(model.metadata)
    metadata["train_seed"] = cfg.seed
    metadata["epochs"] = int(metadata.get("epochs", 0)) + cfg.epochs
    if history:
        metadata["train_accuracy"] = history[-1].train_accuracy
        if history[-1].test_accuracy is not None:
            metadata["test_accuracy"] = history[-1].test_accuracy
    if cfg.epochs == 0:
        return TrainingResult(model=replace(model, metadata=metadata), history=history)
    return TrainingResult(model=_frozen(spec, params, metadata), history=history)


def _frozen(
    spec: ArchitectureSpec, params: Mapping[str, np.ndarray], metadata: Mapping[str, Any]
) -> Classifier:
    out: dict[str, np.ndarray] = {}
    for k, v in params.items():
        arr = np.array(v, dtype=np.float32)
        arr.setflags(write=False)
        out[k] = arr
    return Classifier(spec=spec, params=out, metadata=dict(metadata))


# -- Default roster --------------------------------------------------------


def default_roster(
    input_shape: tuple[int, int, int], num_classes: int
) -> dict[str, ArchitectureSpec]:
    """Two MLP and two CNN variants sized for desk-scale images."""
    return {
        "mlp_a": ArchitectureSpec(ModelKind.MLP, (128,), input_shape, num_classes),
        "mlp_b": ArchitectureSpec(ModelKind.MLP, (256, 64), input_shape, num_classes),
        "cnn_a": ArchitectureSpec(ModelKind.CNN, (8, 16), input_shape, num_classes),
        "cnn_b": ArchitectureSpec(
            ModelKind.CNN, (16,), input_shape, num_classes, kernel_size=5, head_width=32
        ),
    }
