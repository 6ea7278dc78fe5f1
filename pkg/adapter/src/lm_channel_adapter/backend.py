"""Deterministic CPU inference around a pretrained autoregressive LM.

The backend is a pure function of the context token ids: identical contexts
yield identical float64 probability vectors. CPU float32 inference with a
single torch thread is the supported deterministic configuration; GPU
execution may break the bitwise-agreement requirement between encoder-side
and decoder-side queries and is not supported.
"""

from __future__ import annotations

import numpy as np


class TransformersBackend:
    """Wraps an AutoModelForCausalLM + AutoTokenizer pair.

    Args:
        model_path: Hub id or local directory for the model and tokenizer.
        device: Inference device; only "cpu" is supported deterministically.
    """

    def __init__(self, model_path: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        torch.set_num_threads(1)
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForCausalLM.from_pretrained(
            model_path, dtype=torch.float32
        )
        self.model.to(device)
        self.model.eval()
        self.device = device
        self._window = int(getattr(self.model.config,
                                   "max_position_embeddings", 1024))

    @property
    def vocab_size(self) -> int:
        return int(self.model.config.vocab_size)

    def encode_text(self, text: str) -> list[int]:
        if not text:
            return []
        return [int(t) for t in self.tokenizer.encode(text)]

    def decode_ids(self, ids) -> str:
        return self.tokenizer.decode([int(t) for t in ids])

    def next_probs(self, context_ids) -> np.ndarray:
        """Full-vocabulary next-token distribution, softmaxed in float64.

        An empty context falls back to the BOS token (or id 0); contexts
        longer than the model's position window are left-truncated.
        """
        torch = self._torch
        ids = [int(t) for t in context_ids]
        if not ids:
            bos = self.model.config.bos_token_id
            ids = [int(bos) if bos is not None and int(bos) < self.vocab_size
                   else 0]
        ids = ids[-(self._window - 1):]
        with torch.no_grad():
            logits = self.model(
                torch.tensor([ids], device=self.device)
            ).logits[0, -1]
        return torch.softmax(logits.double(), dim=-1).cpu().numpy()
