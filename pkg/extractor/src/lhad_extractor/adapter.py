"""Runtime adapter contract: what a model must expose to be extractable.

A runtime is any object that, given one sample's image and text, returns
the full per-layer, per-head attention tensor for a single forward pass
together with the location of the image tokens in the sequence. The
extractor stays agnostic to how the forward pass happens (framework,
device, quantization); it only consumes the captured weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np


class ExtractorError(Exception):
    """Raised for unusable runtimes, bad captures, or invalid jobs."""


@dataclass(frozen=True)
class Capture:
    """One forward pass worth of attention weights.

    attentions: float array (num_layers, num_heads, seq_len, seq_len);
    every row attentions[l, h, q, :] is a softmax distribution over key
    positions (it sums to 1 up to rounding). image_token_start is the
    index of the first image token; the image tokens must be one
    contiguous span of num_image_tokens positions.
    """

    attentions: np.ndarray
    image_token_start: int
    num_image_tokens: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.attentions)
        if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
            raise ExtractorError(
                "attentions must have shape (layers, heads, seq, seq), "
                f"got {arr.shape}"
            )
        seq_len = arr.shape[2]
        if self.num_image_tokens <= 0:
            raise ExtractorError(
                f"num_image_tokens must be positive, got {self.num_image_tokens}"
            )
        if not 0 <= self.image_token_start <= seq_len - self.num_image_tokens:
            raise ExtractorError(
                f"image token span [{self.image_token_start}, "
                f"{self.image_token_start + self.num_image_tokens}) does not "
                f"fit in a sequence of {seq_len} tokens"
            )

    @property
    def seq_len(self) -> int:
        return int(np.asarray(self.attentions).shape[2])


@runtime_checkable
class ModelRuntime(Protocol):
    """Black-box model: one capture per (image, text) pair."""

    name: str

    def capture(self, image, text: str) -> Capture: ...


def resolve_grid_size(num_image_tokens: int) -> int:
    """Side length P of the image-token grid.

    The attention-over-image-cells interpretation requires the image
    tokens to form a P x P spatial layout. Models that pool or resample
    their image tokens into a non-square count carry no per-cell
    spatial information, so they are refused rather than approximated.
    """
    root = math.isqrt(num_image_tokens)
    if root * root != num_image_tokens:
        raise ExtractorError(
            f"{num_image_tokens} image tokens do not form a square P x P "
            "grid; this model pools or resamples image tokens and its "
            "attention cannot be mapped back to image cells"
        )
    return root
