"""Differentiable classifier adapter, the DeskNet reference network and SGD state."""

import hashlib
import logging
from collections import OrderedDict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from app.src.core.exceptions.model_exceptions import NonFiniteError, ShapeMismatchError
from app.src.domain.value_objects import FloatArray

logger = logging.getLogger(__name__)

LABEL_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    weights: FloatArray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or np.any(weights < 0):
            raise ValueError("Label weights must be a non-negative vector")
        if abs(float(weights.sum()) - 1.0) > LABEL_SUM_TOLERANCE:
            raise ValueError(f"Label weights sum to {weights.sum()}, expected 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def one_hot(cls, y: int, num_classes: int) -> "LabelDistribution":
        weights = np.zeros(num_classes)
        weights[y] = 1.0
        return cls(weights)


def label_matrix(labels: Sequence[LabelDistribution]) -> np.ndarray:
    return np.stack([label.weights for label in labels])


def one_hot_matrix(classes: Sequence[int] | np.ndarray, num_classes: int) -> np.ndarray:
    matrix = np.zeros((len(classes), num_classes))
    matrix[np.arange(len(classes)), np.asarray(classes, dtype=np.int64)] = 1.0
    return matrix


class ModelAdapter:
    """Wraps an ``nn.Sequential``-style network as the classifier f_theta."""

    def __init__(
        self,
        network: nn.Module,
        architecture: Mapping[str, Any],
        input_shape: tuple[int, ...],
        num_classes: int,
    ):
        self.network = network
        self.architecture = dict(architecture)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.network.eval()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.network.parameters()).dtype

    def named_parameters(self) -> "OrderedDict[str, nn.Parameter]":
        return OrderedDict(self.network.named_parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    def to_double(self) -> "ModelAdapter":
        self.network.double()
        return self

    def as_input(self, images: np.ndarray | torch.Tensor) -> torch.Tensor:
        tensor = torch.as_tensor(images, dtype=self.dtype)
        if tensor.ndim != len(self.input_shape) + 1 or tuple(tensor.shape[1:]) != (
            self.input_shape
        ):
            raise ShapeMismatchError(
                expected=("N", *self.input_shape), actual=tuple(tensor.shape)
            )
        return tensor

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        out = images
        for name, layer in self.network.named_children():
            out = layer(out)
            if not torch.isfinite(out).all():
                raise NonFiniteError(layer=name)
        return out


def forward(model: ModelAdapter, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return model(model.as_input(batch))


def predict(
    model: ModelAdapter, images: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Arg-max predictions; ties resolve to the lowest class index."""
    preds = []
    for start in range(0, len(images), batch_size):
        logits = forward(model, images[start : start + batch_size]).cpu().numpy()
        preds.append(np.argmax(logits, axis=1))
    if not preds:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(preds).astype(np.int64)


def cross_entropy(
    logits: torch.Tensor,
    targets: np.ndarray | torch.Tensor,
    reduction: str = "mean",
) -> torch.Tensor:
    """Soft-label cross-entropy, -sum_i q_i log softmax(logits)_i."""
    if not torch.isfinite(logits).all():
        raise NonFiniteError(layer="logits")
    q = torch.as_tensor(targets, dtype=logits.dtype)
    if q.shape != logits.shape:
        raise ShapeMismatchError(expected=tuple(logits.shape), actual=tuple(q.shape))
    per_sample = -(q * F.log_softmax(logits, dim=1)).sum(dim=1)
    if reduction == "none":
        return per_sample
    if reduction == "sum":
        return per_sample.sum()
    return per_sample.mean()


def grad_input(
    model: ModelAdapter,
    batch: np.ndarray | torch.Tensor,
    targets: np.ndarray | torch.Tensor,
    reduction: str = "mean",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Loss and its exact gradient with respect to the input pixels."""
    x = model.as_input(batch).detach().clone().requires_grad_(True)
    loss = cross_entropy(model(x), targets, reduction="none")
    total = loss.sum() if reduction != "mean" else loss.mean()
    (grad,) = torch.autograd.grad(total, x)
    return loss.detach(), grad.detach()


class ParameterGradients(NamedTuple):
    loss: torch.Tensor
    grads: "OrderedDict[str, torch.Tensor]"
    logits: torch.Tensor


def grad_params(
    model: ModelAdapter,
    batch: np.ndarray | torch.Tensor,
    targets: np.ndarray | torch.Tensor,
) -> ParameterGradients:
    params = model.named_parameters()
    logits = model(model.as_input(batch))
    loss = cross_entropy(logits, targets)
    grads = torch.autograd.grad(loss, list(params.values()))
    return ParameterGradients(
        loss=loss.detach(),
        grads=OrderedDict(
            (name, g.detach()) for name, g in zip(params.keys(), grads, strict=True)
        ),
        logits=logits.detach(),
    )


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4


@dataclass
class TrainState:
    model: ModelAdapter
    optimizer_config: OptimizerConfig
    optimizer: torch.optim.SGD = field(init=False)
    epoch: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        self.optimizer = self._new_optimizer()

    def _new_optimizer(self) -> torch.optim.SGD:
        cfg = self.optimizer_config
        return torch.optim.SGD(
            self.model.network.parameters(),
            lr=cfg.lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
        )

    def reset_momentum(self) -> None:
        self.optimizer = self._new_optimizer()

    def momentum_buffers(self) -> "OrderedDict[str, torch.Tensor]":
        buffers: OrderedDict[str, torch.Tensor] = OrderedDict()
        for name, param in self.model.named_parameters().items():
            buf = self.optimizer.state.get(param, {}).get("momentum_buffer")
            if buf is not None:
                buffers[name] = buf
        return buffers

    def restore_momentum(self, buffers: Mapping[str, torch.Tensor]) -> None:
        self.reset_momentum()
        params = self.model.named_parameters()
        for name, value in buffers.items():
            self.optimizer.state[params[name]]["momentum_buffer"] = (
                value.detach().clone().to(params[name].dtype)
            )


def sgd_step(
    state: TrainState, grads: Mapping[str, torch.Tensor], lr: float | None = None
) -> TrainState:
    """Momentum SGD: buf <- mu*buf + g + wd*theta; theta <- theta - lr*buf."""
    params = state.model.named_parameters()
    for name, grad in grads.items():
        if not torch.isfinite(grad).all():
            raise NonFiniteError(
                message=f"Non-finite gradient for parameter '{name}'", layer=name
            )
        params[name].grad = grad.to(params[name].dtype).clone()

    for group in state.optimizer.param_groups:
        group["lr"] = state.optimizer_config.lr if lr is None else lr
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    return state


def parameter_checksum(model: ModelAdapter) -> str:
    digest = hashlib.sha256()
    for name, param in model.named_parameters().items():
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().astype("<f4").tobytes())
    return digest.hexdigest()


# Stored parameters are divided by this gain and multiplied back at run time.
# Gradient steps on the stored values move the effective weights at gain**2
# times the nominal learning rate, so the norm-free net is stable at lr 0.1.
PARAMETER_GAIN = 0.1**0.5


class ScaledConv2d(nn.Conv2d):
    def __init__(self, *args: Any, gain: float = PARAMETER_GAIN, **kwargs: Any):
        super().__init__(*args, **kwargs)
        self.gain = gain

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self.weight * self.gain, self.bias * self.gain)


class ScaledLinear(nn.Linear):
    def __init__(self, *args: Any, gain: float = PARAMETER_GAIN, **kwargs: Any):
        super().__init__(*args, **kwargs)
        self.gain = gain

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight * self.gain, self.bias * self.gain)


def _he_normal_(
    weight: torch.Tensor, fan_in: int, gain: float, generator: torch.Generator
) -> None:
    """He-normal effective weights: stored values are drawn at std / gain."""
    with torch.no_grad():
        weight.normal_(0.0, (2.0 / fan_in) ** 0.5 / gain, generator=generator)


def build_reference_net(
    num_classes: int, image_size: int = 32, seed: int = 0
) -> ModelAdapter:
    """DeskNet: a small norm-free convolutional classifier."""
    if num_classes < 2:
        raise ShapeMismatchError(
            message=f"DeskNet needs at least 2 classes, got {num_classes}"
        )
    if image_size % 4:
        raise ShapeMismatchError(
            message=f"DeskNet image size must be divisible by 4, got {image_size}"
        )

    flat = 64 * (image_size // 4) ** 2
    network = nn.Sequential(
        OrderedDict(
            [
                ("conv1", ScaledConv2d(3, 32, kernel_size=3, padding=1)),
                ("relu1", nn.ReLU()),
                ("conv2", ScaledConv2d(32, 32, kernel_size=3, padding=1)),
                ("relu2", nn.ReLU()),
                ("pool1", nn.MaxPool2d(2)),
                ("conv3", ScaledConv2d(32, 64, kernel_size=3, padding=1)),
                ("relu3", nn.ReLU()),
                ("conv4", ScaledConv2d(64, 64, kernel_size=3, padding=1)),
                ("relu4", nn.ReLU()),
                ("pool2", nn.MaxPool2d(2)),
                ("flatten", nn.Flatten()),
                ("fc1", ScaledLinear(flat, 256)),
                ("relu5", nn.ReLU()),
                ("fc2", ScaledLinear(256, num_classes)),
            ]
        )
    )

    generator = torch.Generator().manual_seed(seed)
    for module in network.modules():
        if isinstance(module, (ScaledConv2d, ScaledLinear)):
            fan_in = module.weight[0].numel()
            _he_normal_(module.weight, fan_in, module.gain, generator)
            nn.init.zeros_(module.bias)

    model = ModelAdapter(
        network=network,
        architecture={
            "name": "DeskNet",
            "num_classes": num_classes,
            "image_size": image_size,
            "init_seed": seed,
        },
        input_shape=(3, image_size, image_size),
        num_classes=num_classes,
    )
    logger.info(
        "Built reference network",
        extra={"classes": num_classes, "parameters": model.parameter_count()},
    )
    return model


def model_from_architecture(architecture: Mapping[str, Any]) -> ModelAdapter:
    if architecture.get("name") != "DeskNet":
        raise ShapeMismatchError(
            message=f"Unsupported architecture: {architecture.get('name')!r}"
        )
    return build_reference_net(
        num_classes=int(architecture["num_classes"]),
        image_size=int(architecture["image_size"]),
        seed=int(architecture.get("init_seed", 0)),
    )
