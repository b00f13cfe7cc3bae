"""Frozen GPT-2 inference: tokenize prompts, run the model, keep the hidden
state of the last real token per prompt.

Variable-length batches are right-padded with copies of the final token;
because attention is causal, padding cannot change the states at or before
the extraction index, which `assert_padding_invariant` verifies directly.
"""

from __future__ import annotations

import os

import numpy as np


class EmbedderError(RuntimeError):
    pass


class Gpt2Embedder:
    def __init__(self, checkpoint_dir: str, device: str = "cpu"):
        try:
            import torch
            from transformers import GPT2Model, GPT2Tokenizer
        except ImportError as err:  # pragma: no cover - hard dependency
            raise EmbedderError(f"torch/transformers unavailable: {err}") from err
        if not os.path.isdir(checkpoint_dir):
            raise EmbedderError(f"GPT-2 checkpoint directory not found: {checkpoint_dir}")
        self._torch = torch
        try:
            self.tokenizer = GPT2Tokenizer.from_pretrained(checkpoint_dir)
            # eager attention: causally masked weights are exactly zero, so
            # right-padding provably cannot perturb earlier positions (the
            # fused kernels reorder accumulation with shape and drift ~1e-6)
            self.model = GPT2Model.from_pretrained(checkpoint_dir,
                                                   attn_implementation="eager")
        except Exception as err:
            raise EmbedderError(f"failed to load GPT-2 from {checkpoint_dir}: {err}") from err
        self.model.eval()
        self.model.to(device)
        self.device = device
        self.dim = int(self.model.config.n_embd)
        self.max_tokens = int(self.model.config.n_positions)

    def tokenize(self, text: str) -> list[int]:
        ids = self.tokenizer.encode(text)
        if len(ids) > self.max_tokens:
            # keep the tail: the trend sentence and most recent values survive
            ids = ids[-self.max_tokens:]
        return ids

    def embed(self, prompts: list[str], batch_size: int = 8) -> tuple[np.ndarray, list[int]]:
        """Last-real-token hidden states, [len(prompts), dim] float32, plus
        per-prompt token counts."""
        if not prompts:
            return np.zeros((0, self.dim), dtype=np.float32), []
        torch = self._torch
        vectors = np.empty((len(prompts), self.dim), dtype=np.float32)
        token_counts: list[int] = []
        with torch.no_grad():
            for start in range(0, len(prompts), batch_size):
                chunk = [self.tokenize(p) for p in prompts[start: start + batch_size]]
                token_counts.extend(len(ids) for ids in chunk)
                longest = max(len(ids) for ids in chunk)
                # pad with copies of each prompt's final token
                padded = [ids + [ids[-1]] * (longest - len(ids)) for ids in chunk]
                batch = torch.tensor(padded, dtype=torch.long, device=self.device)
                hidden = self.model(input_ids=batch).last_hidden_state
                for row, ids in enumerate(chunk):
                    vectors[start + row] = hidden[row, len(ids) - 1].cpu().numpy()
        return vectors, token_counts

    def assert_padding_invariant(self, prompt: str, copies: int = 4) -> float:
        """Max abs change of the extracted vector when the input is extended
        with copies of its final token; returns the difference (must be 0)."""
        torch = self._torch
        ids = self.tokenize(prompt)
        base = torch.tensor([ids], dtype=torch.long, device=self.device)
        padded = torch.tensor([ids + [ids[-1]] * copies], dtype=torch.long,
                              device=self.device)
        with torch.no_grad():
            a = self.model(input_ids=base).last_hidden_state[0, len(ids) - 1]
            b = self.model(input_ids=padded).last_hidden_state[0, len(ids) - 1]
        return float((a - b).abs().max())
