"""Shared fixtures: a hermetic GPT-2-format checkpoint (random weights,
byte-level tokenizer with no merges) and a toy CSV."""

import numpy as np
import pytest


@pytest.fixture(scope="session")
def gpt2_dir(tmp_path_factory):
    import torch
    from tokenizers import pre_tokenizers
    from transformers import GPT2Config, GPT2Model, GPT2Tokenizer

    target = tmp_path_factory.mktemp("tiny_gpt2")
    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {ch: i for i, ch in enumerate(alphabet)}
    vocab["<|endoftext|>"] = len(vocab)
    GPT2Tokenizer(vocab=vocab, merges=[]).save_pretrained(str(target))

    config = GPT2Config(vocab_size=len(vocab), n_positions=512, n_embd=768,
                        n_layer=2, n_head=4, bos_token_id=vocab["<|endoftext|>"],
                        eos_token_id=vocab["<|endoftext|>"])
    torch.manual_seed(1234)
    GPT2Model(config).save_pretrained(str(target))
    return str(target)


@pytest.fixture(scope="session")
def toy_csv(tmp_path_factory):
    """30 hourly steps x 7 variables; the train split (70% = 21 steps) holds
    exactly 2 windows for seq-len 16, pred-len 4."""
    rng = np.random.default_rng(77)
    path = tmp_path_factory.mktemp("data") / "toy7.csv"
    with open(path, "w") as fh:
        fh.write("date," + ",".join(f"v{i}" for i in range(7)) + "\n")
        for i in range(30):
            row = ",".join(f"{x:.6f}" for x in rng.normal(size=7))
            fh.write(f"2016-07-{1 + i // 24:02d} {i % 24:02d}:00:00,{row}\n")
    return str(path)
