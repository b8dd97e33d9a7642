"""Shared deterministic fixtures for trainer and evaluation tests."""

import numpy as np

from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint


def markov_token_stream(n_tokens=50_000, vocab=64, seed=1234):
    """Seeded order-1 Markov chain with sharp transitions.

    Each state prefers two successors (p=0.75/0.2) with a 0.05 uniform floor,
    so the bigram structure is learnable by a tiny model in a few hundred
    steps.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    succ_a = rng.integers(0, vocab, size=vocab)
    succ_b = rng.integers(0, vocab, size=vocab)
    out = np.empty(n_tokens, dtype=np.int64)
    state = 0
    for i in range(n_tokens):
        out[i] = state
        r = rng.random()
        if r < 0.75:
            state = int(succ_a[state])
        elif r < 0.95:
            state = int(succ_b[state])
        else:
            state = int(rng.integers(0, vocab))
    return out


def train_fixture_config_dims():
    return dict(vocab_size=64, hidden=32, layers=1, heads=4, kv_heads=2,
                head_dim=8, window=16, mlp_hidden=64)


def train_fixture_ckpt(seed=0, dtype="f32"):
    cfg = TinyLMConfig(**train_fixture_config_dims())
    return init_checkpoint(cfg, seed=seed, dtype=dtype)


def next_predictor_ckpt(cycle_ids, vocab, scale=20.0):
    """Checkpoint rigged to predict the successor of the current token along
    ``cycle_ids``.

    Each cycle token embeds as a scaled one-hot along its cycle position;
    attention and MLP outputs are zeroed so the residual stream carries the
    embedding through; head row for the successor fires on that position. On
    a document that walks the cycle, argmax accuracy is exactly 1.
    """
    cycle_ids = list(cycle_ids)
    hidden = max(len(cycle_ids), 4)
    if hidden % 2:
        hidden += 1
    cfg = TinyLMConfig(vocab_size=vocab, hidden=hidden, layers=1, heads=2,
                       kv_heads=1, head_dim=hidden // 2, window=4, mlp_hidden=8)
    ckpt = init_checkpoint(cfg, seed=0, dtype="f64")
    embed = np.zeros((vocab, hidden))
    head = np.zeros((vocab, hidden))
    for pos, tid in enumerate(cycle_ids):
        embed[tid, pos] = scale
        succ = cycle_ids[(pos + 1) % len(cycle_ids)]
        head[succ, pos] = scale
    ckpt.tensors["embed.weight"] = embed
    ckpt.tensors["lm_head.weight"] = head
    ckpt.tensors["layers.0.attn.wo.weight"] = np.zeros((hidden, hidden))
    ckpt.tensors["layers.0.mlp.w_down.weight"] = np.zeros((cfg.mlp_hidden, hidden))
    return ckpt


def uniform_logit_ckpt(vocab=23, hidden=8):
    """Checkpoint whose logits are identically zero (uniform distribution)."""
    cfg = TinyLMConfig(vocab_size=vocab, hidden=hidden, layers=1, heads=2,
                       kv_heads=1, head_dim=hidden // 2, window=4, mlp_hidden=8)
    ckpt = init_checkpoint(cfg, seed=0, dtype="f64")
    ckpt.tensors["lm_head.weight"] = np.zeros((vocab, hidden))
    return ckpt
