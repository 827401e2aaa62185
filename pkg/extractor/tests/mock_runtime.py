"""A deterministic stand-in for a vision-language model runtime.

Every attention row is a genuine softmax over prefix + image + text
token positions, so extracted maps inherit the real invariants
(non-negative, image-span mass <= 1). An optional focus head attends
almost exclusively to a rectangle of image cells carried in the image
payload, giving corpora a known localization head.
"""
from __future__ import annotations

import zlib

import numpy as np

from lhad_extractor.adapter import Capture


class MockVLMRuntime:
    def __init__(
        self,
        num_layers: int = 6,
        num_heads: int = 4,
        grid_size: int = 8,
        prefix_tokens: int = 3,
        text_tokens: int = 7,
        seed: int = 0,
        focus_head: tuple[int, int] | None = None,
        row_scale: float = 1.0,
    ):
        self.name = "mock-vlm"
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.grid_size = grid_size
        self.prefix_tokens = prefix_tokens
        self.text_tokens = text_tokens
        self.seed = seed
        self.focus_head = focus_head
        self.row_scale = row_scale  # != 1 breaks normalization on purpose

    @property
    def seq_len(self) -> int:
        return self.prefix_tokens + self.grid_size**2 + self.text_tokens

    def capture(self, image, text: str) -> Capture:
        rng = np.random.default_rng(
            zlib.crc32(f"{self.seed}|{text}".encode("utf-8"))
        )
        grid = self.grid_size
        logits = rng.normal(
            0.0, 1.0, size=(self.num_layers, self.num_heads, self.seq_len, self.seq_len)
        )
        if (
            self.focus_head is not None
            and isinstance(image, dict)
            and "rect" in image
        ):
            layer, head = self.focus_head
            r0, c0, r1, c1 = image["rect"]
            cells = [
                self.prefix_tokens + r * grid + c
                for r in range(r0, r1)
                for c in range(c0, c1)
            ]
            logits[layer, head] -= 2.0
            logits[layer, head][:, cells] += 10.0
        attn = np.exp(logits - logits.max(axis=-1, keepdims=True))
        attn /= attn.sum(axis=-1, keepdims=True)
        if self.row_scale != 1.0:
            attn = attn * self.row_scale
        return Capture(
            attentions=attn,
            image_token_start=self.prefix_tokens,
            num_image_tokens=grid * grid,
        )


class ExplodingRuntime:
    """Delegates to a mock until sample `blow_after`, then raises."""

    def __init__(self, inner: MockVLMRuntime, blow_after: int):
        self.name = "exploding"
        self.inner = inner
        self.blow_after = blow_after
        self.calls = 0

    def capture(self, image, text: str) -> Capture:
        if self.calls >= self.blow_after:
            raise RuntimeError("synthetic runtime failure")
        self.calls += 1
        return self.inner.capture(image, text)
