"""Kernel-smoother attention: Python bindings over the C++ core."""

from ._kernatt import (
    AttentionConfig,
    AttentionParams,
    FilterKind,
    FilterSpec,
    KernelForm,
    PEMode,
    PETable,
    ValueMode,
    attention_forward,
    attention_param_count,
    attention_weights,
    build_mask,
    load_config_text,
    param_count,
    reference_softmax_attention,
    sinusoidal_pe,
    train,
    verify,
)

__all__ = [
    "AttentionConfig",
    "AttentionParams",
    "FilterKind",
    "FilterSpec",
    "KernelForm",
    "PEMode",
    "PETable",
    "ValueMode",
    "attention_forward",
    "attention_param_count",
    "attention_weights",
    "build_mask",
    "load_config_text",
    "param_count",
    "reference_softmax_attention",
    "sinusoidal_pe",
    "train",
    "verify",
]
