"""LLaVA-style runtime backed by Hugging Face transformers.

Optional: requires the [hf] extra (torch, transformers, Pillow). The
runtime loads a processor+model pair, runs one forward pass per sample
with attention output enabled, and locates the image-token span by
looking for the model's image placeholder id in the processed input.
Models whose processors do not expand the image into one placeholder per
patch (or that shuffle image tokens out of a contiguous span) are
refused — their attention rows cannot be mapped back onto a grid.
"""
from __future__ import annotations

import numpy as np

from .adapter import Capture, ExtractorError


class HFLlavaRuntime:
    """One-sample-at-a-time attention capture from a LLaVA checkpoint."""

    def __init__(self, model_id: str, device: str = "cuda", dtype: str = "float16"):
        try:
            import torch
            from transformers import AutoProcessor, LlavaForConditionalGeneration
        except ImportError as exc:  # pragma: no cover - needs the hf extra
            raise ExtractorError(
                "the hf extra is required for HFLlavaRuntime "
                "(pip install 'lhad-extractor[hf]')"
            ) from exc
        self.name = model_id
        self._torch = torch
        self.processor = AutoProcessor.from_pretrained(model_id)
        self.model = LlavaForConditionalGeneration.from_pretrained(
            model_id,
            torch_dtype=getattr(torch, dtype),
            attn_implementation="eager",  # needed for output_attentions
        ).to(device)
        self.model.eval()
        self.device = device

    def capture(self, image, text: str) -> Capture:
        torch = self._torch
        if isinstance(image, str):
            from PIL import Image

            image = Image.open(image).convert("RGB")
        prompt = self.processor.apply_chat_template(
            [
                {
                    "role": "user",
                    "content": [
                        {"type": "image"},
                        {"type": "text", "text": text},
                    ],
                }
            ],
            add_generation_prompt=False,
            tokenize=False,
        )
        inputs = self.processor(images=image, text=prompt, return_tensors="pt")
        inputs = {k: v.to(self.device) for k, v in inputs.items()}
        with torch.no_grad():
            output = self.model(**inputs, output_attentions=True, use_cache=False)
        image_token_id = self.model.config.image_token_index
        ids = inputs["input_ids"][0].tolist()
        positions = [i for i, t in enumerate(ids) if t == image_token_id]
        if len(positions) < 4:
            raise ExtractorError(
                f"{self.name}: processor left {len(positions)} image "
                "placeholder tokens in the sequence; this transformers "
                "version does not expand image patches into tokens, so the "
                "attention rows cannot be sliced per image cell"
            )
        first, last = positions[0], positions[-1]
        if last - first + 1 != len(positions):
            raise ExtractorError(
                f"{self.name}: image tokens are not one contiguous span"
            )
        attentions = np.stack(
            [
                layer[0].to(torch.float32).cpu().numpy()
                for layer in output.attentions
            ]
        )
        return Capture(
            attentions=attentions,
            image_token_start=first,
            num_image_tokens=len(positions),
        )
