"""Semi-supervised binary image classification on a from-scratch autodiff core.

The package trains a small convolutional teacher with contrastive
pretraining plus a labeled fraction, pseudo-labels the rest of the pool,
and distills into a larger student.  Everything runs on numpy.
"""

from .tensor import Tensor, Parameter, backward, NonScalarLossError, ShapeMismatchError
from .rng import RngState
from .losses import NtXentConfig, EmbeddingBatch, nt_xent, bce
from .models import (
    EncoderSpec,
    TEACHER_SPEC,
    STUDENT_SPEC,
    BUILTIN_SPECS,
    build_encoder,
    build_projection_head,
    build_classifier_head,
    forward_pretrain,
    forward_classify,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "NonScalarLossError",
    "ShapeMismatchError",
    "RngState",
    "NtXentConfig",
    "EmbeddingBatch",
    "nt_xent",
    "bce",
    "EncoderSpec",
    "TEACHER_SPEC",
    "STUDENT_SPEC",
    "BUILTIN_SPECS",
    "build_encoder",
    "build_projection_head",
    "build_classifier_head",
    "forward_pretrain",
    "forward_classify",
    "__version__",
]
