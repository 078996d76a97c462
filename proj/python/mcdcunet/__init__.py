# Copyright 2026 The mcdcunet Authors
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""Multi-channel complex U-Net front-end toolkit."""

from mcdcunet._core import (
    SAMPLE_RATE,
    ShapeError,
    aec,
    complex_conv2d,
    delay_and_sum,
    gradcheck,
    istft,
    log_fbank,
    mtl_loss,
    steering_vector,
    stft,
    superdirective_weights,
    synthesize_scene,
)

__all__ = [
    "SAMPLE_RATE",
    "ShapeError",
    "aec",
    "complex_conv2d",
    "delay_and_sum",
    "gradcheck",
    "istft",
    "log_fbank",
    "mtl_loss",
    "steering_vector",
    "stft",
    "superdirective_weights",
    "synthesize_scene",
]
