from __future__ import annotations

from pathlib import Path

import pytest

# 66 symbols so a top-40 cut is a real truncation
CHARSET = sorted(set(
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789 .,\n"
))


def build_tiny_checkpoint(target: Path) -> Path:
    """Randomly initialized 2-layer GPT-2 with a character-level tokenizer,
    built entirely offline."""
    import torch
    from tokenizers import Regex, Tokenizer, decoders, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    vocab = {c: i for i, c in enumerate(CHARSET)}
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token=CHARSET[0]))
    tok.pre_tokenizer = pre_tokenizers.Split(Regex("[\\s\\S]"), behavior="isolated")
    tok.decoder = decoders.Fuse()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token=CHARSET[0])
    fast.save_pretrained(target)

    torch.manual_seed(20240817)
    config = GPT2Config(vocab_size=len(CHARSET), n_positions=192, n_embd=32,
                        n_layer=2, n_head=2, bos_token_id=0, eos_token_id=0)
    GPT2LMHeadModel(config).save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    return build_tiny_checkpoint(tmp_path_factory.mktemp("tiny-lm"))
