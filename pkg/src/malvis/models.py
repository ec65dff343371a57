"""Desk-scale analogues of the six classifiers, built from :mod:`malvis.nn.layers`.

Architectures (``w`` = width multiplier, every hidden width is scaled by it
and rounded, minimum 1; all convolutions use "same" padding):

``tiny_vgg``
    [conv3x3, relu, conv3x3, relu, maxpool2] x 3 at 16/32/64 channels,
    dense 128, relu, dense F.
``tiny_inception``
    conv3x3/16 stem, two inception blocks (1x1 | 1x1->3x3 | 1x1->3x3->3x3 |
    maxpool3x3->1x1, 8 then 16 channels per branch) each followed by
    maxpool2, global average pool, dense F. An auxiliary classifier
    (global average pool, dense F) reads the output of the first block
    during training only.
``tiny_resnet``
    conv3x3/16 stem, three residual blocks (conv3x3-relu-conv3x3 plus
    shortcut, relu after the sum) at 16/32/64 channels; blocks 2 and 3
    stride 2 with a 1x1 projection shortcut. Global average pool, dense F.
``cnn_svm``
    conv5x5/32, relu, maxpool2, conv5x5/64, relu, maxpool2, dense 1024,
    relu, linear F; hinge head.
``gru_svm``
    each image row (all channels) is one timestep into a GRU with 128
    hidden units; the final hidden state feeds a linear F; hinge head.
``mlp_svm``
    flatten, dense 512, relu, dense 256, relu, linear F; hinge head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import IncompatibleShape, ShapeMismatch, UnknownArchitecture
from .nn import ops
from .nn.gradcheck import grad_check_detail
from .nn.layers import GRU, Concat, Conv2D, Dense, Flatten, GlobalAvgPool, MaxPool, ReLU, Residual, Sequential
from .rng import SplitMix64

ARCHITECTURES = ("tiny_vgg", "tiny_inception", "tiny_resnet", "cnn_svm", "gru_svm", "mlp_svm")
SVM_ARCHITECTURES = frozenset({"cnn_svm", "gru_svm", "mlp_svm"})
HEADS = ("softmax", "hinge_l1", "hinge_l2")
AUX_WEIGHT = 0.3

# smallest spatial extent each pooling pyramid can take
_MIN_SIDE = {"tiny_vgg": 8, "tiny_inception": 4, "tiny_resnet": 4, "cnn_svm": 4, "gru_svm": 1, "mlp_svm": 1}


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    input_shape: tuple = (1, 64, 64)
    num_classes: int = 25
    width_multiplier: float = 1.0
    head: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise UnknownArchitecture(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        shape = tuple(int(v) for v in self.input_shape)
        object.__setattr__(self, "input_shape", shape)
        if len(shape) != 3 or shape[0] not in (1, 3) or min(shape) < 1:
            raise ValueError(f"input_shape must be (channels in {{1,3}}, H, W), got {shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.width_multiplier > 0:
            raise ValueError("width_multiplier must be positive")
        head = self.head
        if head is None:
            head = "hinge_l2" if self.architecture in SVM_ARCHITECTURES else "softmax"
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}; choose from {HEADS}")
        if self.architecture in SVM_ARCHITECTURES and head == "softmax":
            raise ValueError(f"{self.architecture} requires a hinge head")
        object.__setattr__(self, "head", head)

    def to_config(self, prefix: str = "model.") -> str:
        d = asdict(self)
        d["input_shape"] = ",".join(str(v) for v in self.input_shape)
        return "".join(f"{prefix}{k} = {v}\n" for k, v in d.items())

    @classmethod
    def from_mapping(cls, m) -> "ModelSpec":
        shape = m.get("input_shape", "1,64,64")
        if isinstance(shape, str):
            shape = tuple(int(v) for v in shape.split(","))
        return cls(
            architecture=m["architecture"],
            input_shape=shape,
            num_classes=int(m.get("num_classes", 25)),
            width_multiplier=float(m.get("width_multiplier", 1.0)),
            head=m.get("head") or None,
            seed=int(m.get("seed", 0)),
        )


def scaled(base: int, mult: float) -> int:
    return max(1, int(round(base * mult)))


def _conv_relu(cin, cout, k, rng, stride=1):
    return [Conv2D(cin, cout, k, rng, stride=stride), ReLU()]


def inception_block(in_ch, widths, rng) -> Concat:
    """Four parallel branches concatenated on channels; output has sum(widths) channels."""
    b1, b2, b3, b4 = widths
    return Concat(
        Sequential(*_conv_relu(in_ch, b1, 1, rng)),
        Sequential(*_conv_relu(in_ch, b2, 1, rng), *_conv_relu(b2, b2, 3, rng)),
        Sequential(*_conv_relu(in_ch, b3, 1, rng), *_conv_relu(b3, b3, 3, rng), *_conv_relu(b3, b3, 3, rng)),
        Sequential(MaxPool(3, 1, padding=1), *_conv_relu(in_ch, b4, 1, rng)),
        names=["b1x1", "b3x3", "b5x5", "bpool"],
    )


def residual_block(cin, cout, rng, stride=1) -> Residual:
    body = Sequential(Conv2D(cin, cout, 3, rng, stride=stride), ReLU(), Conv2D(cout, cout, 3, rng), names=["conv1", "relu", "conv2"])
    shortcut = None
    if stride != 1 or cin != cout:
        shortcut = Sequential(Conv2D(cin, cout, 1, rng, stride=stride, padding=0), names=["proj"])
    return Residual(body, shortcut)


class Model:
    """A stack of stages; an optional auxiliary head reads the output of stage ``aux_after``."""

    def __init__(self, spec: ModelSpec, stages: list, aux=None, aux_after=None):
        self.spec = spec
        self.stages = stages
        self.aux = aux
        self.aux_after = aux_after
        self._aux_out = None
        self.train_mode = False

    # parameters ------------------------------------------------------------
    def named_params(self):
        for i, stage in enumerate(self.stages):
            yield from stage.named_params(f"stage{i}.")
        if self.aux is not None:
            yield from self.aux.named_params("aux.")

    def params(self) -> dict:
        return {name: p for name, p, _ in self.named_params()}

    def grads(self) -> dict:
        return {name: g for name, _, g in self.named_params()}

    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.named_params())

    def zero_grad(self):
        for _, _, g in self.named_params():
            g.fill(0.0)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for _, p, _ in self.named_params()])

    def set_flat(self, flat):
        pos = 0
        for _, p, _ in self.named_params():
            p[...] = np.asarray(flat[pos : pos + p.size]).reshape(p.shape)
            pos += p.size

    def grad_flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for _, _, g in self.named_params()])

    def state_dict(self) -> dict:
        return {name: p.copy() for name, p, _ in self.named_params()}

    def load_state_dict(self, state):
        own = self.params()
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise ShapeMismatch(f"parameter names differ: {missing[:5]}")
        for name, p in own.items():
            if p.shape != state[name].shape:
                raise ShapeMismatch(f"{name}: {p.shape} vs {state[name].shape}")
            p[...] = state[name]

    # computation -----------------------------------------------------------
    def forward(self, x, train: bool = False):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.spec.input_shape:
            raise ShapeMismatch(f"model expects batches of {self.spec.input_shape}, got {x.shape}")
        self._aux_out = None
        h = x
        for i, stage in enumerate(self.stages):
            h = stage.forward(h, train)
            if train and self.aux is not None and i == self.aux_after:
                self._aux_out = self.aux.forward(h, train)
        return h[0] if squeeze else h

    @property
    def aux_scores(self):
        return self._aux_out

    def backward(self, grad_scores, grad_aux=None):
        """Accumulate parameter gradients; returns the gradient w.r.t. the input batch."""
        g = np.asarray(grad_scores, dtype=np.float64)
        for i in range(len(self.stages) - 1, -1, -1):
            if i == self.aux_after and grad_aux is not None and self.aux is not None:
                g = g + self.aux.backward(grad_aux)
            g = self.stages[i].backward(g)
        return g

    def loss_and_backward(self, x, labels, aux_weight: float = AUX_WEIGHT):
        """Forward in training mode, head loss (+ weighted aux loss), backward. Returns (loss, scores)."""
        scores = self.forward(x, train=True)
        loss, g = ops.head_loss(scores, labels, self.spec.head)
        g_aux = None
        if self._aux_out is not None and aux_weight:
            aux_loss, g_aux = ops.head_loss(self._aux_out, labels, self.spec.head)
            loss += aux_weight * aux_loss
            g_aux = aux_weight * g_aux
        if np.isfinite(loss):  # a diverged loss is reported by the caller; skip the useless backward
            self.backward(g, g_aux)
        return loss, scores

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. ties go to the lowest class id
        return self.forward(x).argmax(axis=-1)


def _check_side(spec):
    _, h, w = spec.input_shape
    need = _MIN_SIDE[spec.architecture]
    if min(h, w) < need:
        raise IncompatibleShape(f"{spec.architecture} needs inputs of at least {need}x{need}, got {h}x{w}")


def build_model(spec: ModelSpec) -> Model:
    _check_side(spec)
    rng = SplitMix64(spec.seed)
    c, h, w = spec.input_shape
    m = spec.width_multiplier
    f = spec.num_classes
    arch = spec.architecture
    aux = aux_after = None

    if arch == "tiny_vgg":
        layers, cin = [], c
        for width in (16, 32, 64):
            cw = scaled(width, m)
            layers += _conv_relu(cin, cw, 3, rng) + _conv_relu(cw, cw, 3, rng) + [MaxPool(2)]
            cin = cw
        flat = cin * (h // 8) * (w // 8)
        hidden = scaled(128, m)
        layers += [Flatten(), Dense(flat, hidden, rng), ReLU(), Dense(hidden, f, rng)]
        stages = [Sequential(*layers)]
    elif arch == "tiny_inception":
        stem = scaled(16, m)
        w1, w2 = scaled(8, m), scaled(16, m)
        stage0 = Sequential(*_conv_relu(c, stem, 3, rng), inception_block(stem, (w1,) * 4, rng), MaxPool(2),
                            names=["stem", "relu", "inception1", "pool1"])
        stage1 = Sequential(inception_block(4 * w1, (w2,) * 4, rng), MaxPool(2), GlobalAvgPool(), Dense(4 * w2, f, rng),
                            names=["inception2", "pool2", "gap", "fc"])
        aux = Sequential(GlobalAvgPool(), Dense(4 * w1, f, rng), names=["gap", "fc"])
        stages, aux_after = [stage0, stage1], 0
    elif arch == "tiny_resnet":
        w1, w2, w3 = scaled(16, m), scaled(32, m), scaled(64, m)
        stages = [Sequential(
            *_conv_relu(c, w1, 3, rng),
            residual_block(w1, w1, rng), ReLU(),
            residual_block(w1, w2, rng, stride=2), ReLU(),
            residual_block(w2, w3, rng, stride=2), ReLU(),
            GlobalAvgPool(), Dense(w3, f, rng),
            names=["stem", "relu0", "block1", "relu1", "block2", "relu2", "block3", "relu3", "gap", "fc"],
        )]
    elif arch == "cnn_svm":
        c1, c2, hidden = scaled(32, m), scaled(64, m), scaled(1024, m)
        flat = c2 * ((h // 2) // 2) * ((w // 2) // 2)
        stages = [Sequential(
            *_conv_relu(c, c1, 5, rng), MaxPool(2),
            *_conv_relu(c1, c2, 5, rng), MaxPool(2),
            Flatten(), Dense(flat, hidden, rng), ReLU(), Dense(hidden, f, rng),
        )]
    elif arch == "gru_svm":
        hidden = scaled(128, m)
        stages = [Sequential(GRU(c * w, hidden, rng), Dense(hidden, f, rng), names=["gru", "svm"])]
    elif arch == "mlp_svm":
        h1, h2 = scaled(512, m), scaled(256, m)
        stages = [Sequential(Flatten(), Dense(c * h * w, h1, rng), ReLU(), Dense(h1, h2, rng), ReLU(), Dense(h2, f, rng))]
    else:  # pragma: no cover - ModelSpec already validated
        raise UnknownArchitecture(arch)

    model = Model(spec, stages, aux, aux_after)
    shape = spec.input_shape
    for stage in stages:
        shape = stage.output_shape(shape)
    if shape != (f,):
        raise IncompatibleShape(f"{arch} produced output shape {shape} for input {spec.input_shape}")
    return model


def forward(model: Model, batch) -> np.ndarray:
    return model.forward(batch)


def backward(model: Model, grad_scores, grad_aux=None):
    return model.backward(grad_scores, grad_aux)


def param_count(model) -> int:
    if isinstance(model, Model):
        return model.param_count()
    return sum(p.size for _, p, _ in model.named_params())


def check_indices(model: Model, per_tensor: int | None, seed: int = 0):
    """Coordinates to probe: all of them, or up to ``per_tensor`` seeded picks from every tensor."""
    if per_tensor is None:
        return None
    rng = SplitMix64(seed)
    picks, offset = [], 0
    for _, p, _ in model.named_params():
        if p.size <= per_tensor:
            picks.extend(range(offset, offset + p.size))
        else:
            picks.extend(offset + i for i in sorted(rng.permutation(p.size)[:per_tensor]))
        offset += p.size
    return picks


def nudge_biases(model: Model, seed: int = 0, scale: float = 0.1):
    """Give every bias a small seeded random value so no pre-activation sits exactly on a ReLU kink."""
    rng = SplitMix64(seed)
    for name, p, _ in model.named_params():
        if name.endswith("bias") or name.split(".")[-1].startswith("b_"):
            p[...] = rng.uniform(-scale, scale, p.shape)


def model_grad_check(model: Model, x, labels, eps=1e-5, indices=None, aux_weight=AUX_WEIGHT) -> float:
    """End-to-end finite-difference check of the training loss w.r.t. model parameters."""
    return model_grad_check_detail(model, x, labels, eps, indices, aux_weight)[0]


def model_grad_check_detail(model: Model, x, labels, eps=1e-5, indices=None, aux_weight=AUX_WEIGHT):
    """``(max_rel_err, refined)``; ``refined`` lists coordinates that needed a shorter step.

    A central difference whose step crosses a ReLU hinge is re-measured with
    smaller steps (see :func:`grad_check_detail`).
    """
    original = model.get_flat()

    def value(flat):
        model.set_flat(flat)
        scores = model.forward(x, train=True)
        loss, _ = ops.head_loss(scores, labels, model.spec.head)
        if model.aux_scores is not None and aux_weight:
            loss += aux_weight * ops.head_loss(model.aux_scores, labels, model.spec.head)[0]
        return loss

    def f(flat):
        model.set_flat(flat)
        model.zero_grad()
        loss, _ = model.loss_and_backward(x, labels, aux_weight)
        return loss, model.grad_flat()

    try:
        return grad_check_detail(f, original, eps, indices, value_fn=value, refine=True)
    finally:
        model.set_flat(original)
        model.zero_grad()
