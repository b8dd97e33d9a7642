"""Expand a checkpoint's embedding and LM head for new vocabulary rows and
verify the two identities that make mean initialization safe: the new
token's logit equals the mean of the old logits, and every original
probability is rescaled by one common factor below one.
"""

import numpy as np

from langxpand.tensor_ckpt import (
    TinyLMConfig,
    expand_embeddings,
    init_checkpoint,
    verify_rescaling_identity,
)

cfg = TinyLMConfig(vocab_size=32000, hidden=8, layers=1, heads=2, kv_heads=1,
                   head_dim=4, window=8, mlp_hidden=16)
ckpt = init_checkpoint(cfg, seed=0, dtype="f64")
print(f"base model: vocab {cfg.vocab_size}, hidden {cfg.hidden}")

expanded = expand_embeddings(ckpt, 38659, jitter=0.0)
emb = expanded.tensors["embed.weight"]
print(f"expanded:   vocab {expanded.config.vocab_size}, "
      f"embedding shape {emb.shape}, head shape {expanded.tensors['lm_head.weight'].shape}")
print(f"original rows preserved bit-for-bit: "
      f"{emb[:32000].tobytes() == ckpt.tensors['embed.weight'].tobytes()}")

rng = np.random.Generator(np.random.PCG64(1))
h = rng.normal(size=8)
logits_old = ckpt.tensors["embed.weight"] @ h
print(f"\nmean-logit identity for a random hidden state:")
print(f"  new-row logit      {emb[32000] @ h:+.12f}")
print(f"  mean of old logits {logits_old.mean():+.12f}")

report = verify_rescaling_identity(
    ckpt.tensors["lm_head.weight"],
    expanded.tensors["lm_head.weight"],
    [rng.normal(size=8) for _ in range(200)],
)
print(f"\nrescaling identity over 200 hidden states:")
print(f"  max |p'(w) - p(w)*factor| = {report['max_deviation']:.3e}")
print(f"  factor range [{report['min_factor']:.6f}, {report['max_factor']:.6f}] "
      f"(always < 1: {report['factor_below_one']})")
