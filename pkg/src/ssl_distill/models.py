"""Size-ordered convolutional encoders plus projection and classifier heads.

The encoders are small residual networks: a 3x3 stem, one or more stages of
two-conv residual blocks (the first block of every stage after the first
downsamples by stride 2 with a projected skip), global average pooling and
a dense layer to the feature dimension.  The shipped specs keep the one
property the pipeline needs: the student has strictly more parameters than
the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .nnops import channel_norm, conv2d, global_avg_pool, maxpool2d
from .rng import RngState
from .tensor import Parameter, ShapeMismatchError, Tensor, add, matmul, relu, sigmoid
from .losses import EmbeddingBatch

NORM_MOMENTUM = 0.9
NORM_EPS = 1e-5


class InvalidSpecError(ValueError):
    """Encoder spec has nonpositive or inconsistent dimensions."""


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    stages: Tuple[Tuple[int, int], ...]  # (channels, blocks) per stage
    input_size: int = 32
    feature_dim: int = 128

    def validate(self) -> None:
        if not self.stages:
            raise InvalidSpecError(f"spec {self.name!r}: needs at least one stage")
        for ch, blocks in self.stages:
            if ch <= 0 or blocks <= 0:
                raise InvalidSpecError(
                    f"spec {self.name!r}: stage ({ch}, {blocks}) must be positive"
                )
        if self.input_size <= 0 or self.feature_dim <= 0:
            raise InvalidSpecError(
                f"spec {self.name!r}: input_size and feature_dim must be positive"
            )


TEACHER_SPEC = EncoderSpec("tiny-t", ((14, 1), (28, 1), (56, 1)))
STUDENT_SPEC = EncoderSpec("tiny-s", ((16, 1), (32, 1), (64, 1), (80, 1)))

BUILTIN_SPECS: Dict[str, EncoderSpec] = {
    TEACHER_SPEC.name: TEACHER_SPEC,
    STUDENT_SPEC.name: STUDENT_SPEC,
}


class Module:
    """Minimal container tracking parameters, buffers and submodules."""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, "Module"] = {}
        self.training = True

    def register_param(self, name: str, shape) -> Parameter:
        p = Parameter(name, np.zeros(shape, dtype=np.float32))
        self._params[name] = p
        return p

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value.astype(np.float32)
        return self._buffers[name]

    def register_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters plus buffers, keyed by dotted name."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing tensor {name!r} in state")
            p.data = state[name]
        for name, buf in self.named_buffers():
            if name not in state:
                raise KeyError(f"missing tensor {name!r} in state")
            if state[name].shape != buf.shape:
                raise ShapeMismatchError(
                    f"buffer {name}: shape {state[name].shape} != {buf.shape}"
                )
            buf[...] = state[name]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Conv(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 1):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = self.register_param("weight", (out_ch, in_ch, kernel, kernel))
        self.bias = self.register_param("bias", (out_ch,))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.padding)


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.weight = self.register_param("weight", (in_dim, out_dim))
        self.bias = self.register_param("bias", (out_dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight.tensor), self.bias.tensor)


class ChannelNorm(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.scale = self.register_param("scale", (channels,))
        self.shift = self.register_param("shift", (channels,))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels))
        self.running_var = self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return channel_norm(
            x,
            self.scale.tensor,
            self.shift.tensor,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=NORM_MOMENTUM,
            eps=NORM_EPS,
        )


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm plus (projected) skip, relu on the sum."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = self.register_child("conv1", Conv(in_ch, out_ch, 3, stride=stride))
        self.norm1 = self.register_child("norm1", ChannelNorm(out_ch))
        self.conv2 = self.register_child("conv2", Conv(out_ch, out_ch, 3))
        self.norm2 = self.register_child("norm2", ChannelNorm(out_ch))
        self.project = in_ch != out_ch or stride != 1
        if self.project:
            self.skip_conv = self.register_child(
                "skip_conv", Conv(in_ch, out_ch, 1, stride=stride, padding=0)
            )
            self.skip_norm = self.register_child("skip_norm", ChannelNorm(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        s = self.skip_norm(self.skip_conv(x)) if self.project else x
        return relu(add(h, s))


class Encoder(Module):
    """Maps (B, 3, H, W) images to (B, feature_dim) feature vectors.

    The stem convolution runs at full resolution, then a 2x2 max pool
    halves the spatial size before the residual stages.
    """

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        c0 = spec.stages[0][0]
        self.stem_conv = self.register_child("stem_conv", Conv(3, c0, 3))
        self.stem_norm = self.register_child("stem_norm", ChannelNorm(c0))
        self.blocks: List[ResidualBlock] = []
        in_ch = c0
        for si, (ch, blocks) in enumerate(spec.stages):
            for bi in range(blocks):
                stride = 2 if si > 0 and bi == 0 else 1
                block = ResidualBlock(in_ch, ch, stride=stride)
                self.register_child(f"stage{si + 1}.block{bi + 1}", block)
                self.blocks.append(block)
                in_ch = ch
        self.fc = self.register_child("fc", Dense(in_ch, spec.feature_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise ShapeMismatchError(
                f"encoder {self.spec.name!r} expects (B, 3, H, W), got {x.data.shape}"
            )
        h = maxpool2d(relu(self.stem_norm(self.stem_conv(x))), 2)
        for block in self.blocks:
            h = block(h)
        return self.fc(global_avg_pool(h))


class ProjectionHead(Module):
    """Two dense layers with relu; produces the contrastive z-vectors."""

    def __init__(self, feature_dim: int = 128, hidden_dim: int = 128, output_dim: int = 64):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.fc1 = self.register_child("fc1", Dense(feature_dim, hidden_dim))
        self.fc2 = self.register_child("fc2", Dense(hidden_dim, output_dim))

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(h)))


class ClassifierHead(Module):
    """Single dense layer to one logit, squashed through a sigmoid."""

    def __init__(self, feature_dim: int = 128):
        super().__init__()
        self.fc = self.register_child("fc", Dense(feature_dim, 1))

    def __call__(self, h: Tensor) -> Tensor:
        from .tensor import reshape

        logits = self.fc(h)
        return sigmoid(reshape(logits, (logits.data.shape[0],)))


def init_parameters(module: Module, rng: RngState) -> None:
    """Deterministic init: fan-in-scaled uniform weights, zero biases,
    unit scale / zero shift for normalization.  Each parameter draws from
    its own name-keyed substream, so init order never matters."""
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            shape = p.data.shape
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
            bound = float(np.sqrt(6.0 / fan_in))
            gen = rng.substream("param", name).generator()
            p.data = gen.uniform(-bound, bound, size=shape).astype(np.float32)
        elif leaf in ("bias", "shift"):
            p.data = np.zeros_like(p.data)
        elif leaf == "scale":
            p.data = np.ones_like(p.data)
        else:
            raise InvalidSpecError(f"no init rule for parameter {name!r}")


def build_encoder(spec: EncoderSpec, rng: RngState) -> Encoder:
    """Construct and deterministically initialize an encoder."""
    enc = Encoder(spec)
    init_parameters(enc, rng.substream("encoder"))
    return enc


def build_projection_head(
    spec: EncoderSpec, rng: RngState, hidden_dim: int = 128, output_dim: int = 64
) -> ProjectionHead:
    head = ProjectionHead(spec.feature_dim, hidden_dim, output_dim)
    init_parameters(head, rng.substream("proj_head"))
    return head


def build_classifier_head(spec: EncoderSpec, rng: RngState) -> ClassifierHead:
    head = ClassifierHead(spec.feature_dim)
    init_parameters(head, rng.substream("cls_head"))
    return head


def forward_pretrain(encoder: Encoder, head: ProjectionHead, batch: Tensor) -> EmbeddingBatch:
    """Project a batch of 2N paired views into the contrastive space."""
    n = batch.data.shape[0]
    if n % 2 != 0:
        raise ValueError(f"forward_pretrain needs an even view count, got {n}")
    return EmbeddingBatch(z=head(encoder(batch)))


def forward_classify(encoder: Encoder, head: ClassifierHead, batch: Tensor) -> Tensor:
    """Per-image probability of the positive (referable) class."""
    s = encoder.spec.input_size
    if batch.data.ndim != 4 or batch.data.shape[2] != s or batch.data.shape[3] != s:
        raise ShapeMismatchError(
            f"forward_classify: expected (B, 3, {s}, {s}), got {batch.data.shape}"
        )
    return head(encoder(batch))
