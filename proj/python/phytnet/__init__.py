"""Python bindings for the phytnet native core.

The heavy lifting (convolution, normalization, losses, cost counters, and the
sweep math) lives in the compiled ``_core`` extension; this package re-exports
it under stable names.
"""

from ._core import (
    __version__,
    conv2d,
    derive_seed,
    expected_improvement,
    gate,
    gelu,
    group_norm,
    phytnet_cost,
    predict_class,
    relu,
    resnet18_cost,
    sigmoid,
    softmax_cross_entropy,
    softmax_cross_entropy_grad,
)

__all__ = [
    "__version__",
    "conv2d",
    "derive_seed",
    "expected_improvement",
    "gate",
    "gelu",
    "group_norm",
    "phytnet_cost",
    "predict_class",
    "relu",
    "resnet18_cost",
    "sigmoid",
    "softmax_cross_entropy",
    "softmax_cross_entropy_grad",
]
