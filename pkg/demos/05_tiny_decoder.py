"""Poke at the decoder itself: grouped-query attention, the sliding window,
and the hand-written backward pass checked against finite differences.
"""

import numpy as np

from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint
from langxpand.tiny_transformer import backward, forward, loss_and_accuracy

cfg = TinyLMConfig(vocab_size=19, hidden=16, layers=2, heads=4, kv_heads=2,
                   head_dim=4, window=5, mlp_hidden=24)
ckpt = init_checkpoint(cfg, seed=12, dtype="f64")
rng = np.random.Generator(np.random.PCG64(3))
ids = rng.integers(0, 19, size=8)

logits, cache = forward(ckpt, ids)
nll, acc, tokens = loss_and_accuracy(logits, ids)
print(f"config: {cfg.heads} query heads sharing {cfg.kv_heads} KV heads, window {cfg.window}")
print(f"forward over T={len(ids)}: loss {nll:.4f}, ln(vocab) = {np.log(19):.4f}")

# attention is causal and windowed: row t attends to max(0, t-W+1)..t
attn = cache["layers"][0]["attn"][0, 0]
print("\nlayer-0 head-0 attention support (column = attended position):")
for t in range(8):
    row = "".join("x" if attn[t, s] > 0 else "." for s in range(8))
    print(f"  t={t}: {row}")

grads = backward(ckpt, cache, ids)
name = "layers.1.mlp.w_gate.weight"
flat = ckpt.tensors[name].reshape(-1)
idx = 37
eps = 1e-5
orig = flat[idx]
flat[idx] = orig + eps
lp = loss_and_accuracy(forward(ckpt, ids, return_cache=False), ids)[0]
flat[idx] = orig - eps
lm = loss_and_accuracy(forward(ckpt, ids, return_cache=False), ids)[0]
flat[idx] = orig
fd = (lp - lm) / (2 * eps)
print(f"\ngradient check on {name}[{idx}]:")
print(f"  hand-written backward: {grads[name].reshape(-1)[idx]:+.10f}")
print(f"  central difference:    {fd:+.10f}")
