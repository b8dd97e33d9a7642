"""Continual pre-training loop: AdamW with warmup+cosine over a structured
token stream, then an interrupted run resumed from its snapshot to show
the trajectory is reproduced bit-exactly.
"""

import tempfile

import numpy as np

from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint
from langxpand.trainer import TrainConfig, lr_at, train_clm


def markov_stream(n=50_000, vocab=64, seed=1234):
    rng = np.random.Generator(np.random.PCG64(seed))
    succ_a = rng.integers(0, vocab, size=vocab)
    succ_b = rng.integers(0, vocab, size=vocab)
    out = np.empty(n, dtype=np.int64)
    state = 0
    for i in range(n):
        out[i] = state
        r = rng.random()
        state = int(succ_a[state]) if r < 0.75 else (
            int(succ_b[state]) if r < 0.95 else int(rng.integers(0, vocab)))
    return out


tokens = markov_stream()
cfg = TrainConfig(peak_lr=3e-3, warmup_steps=20, total_steps=200, min_lr_ratio=0.1,
                  batch_size=8, seq_len=64, seed=7)
model_cfg = TinyLMConfig(vocab_size=64, hidden=32, layers=1, heads=4, kv_heads=2,
                         head_dim=8, window=16, mlp_hidden=64)

print("learning-rate schedule: linear warmup then cosine decay")
for step in (0, 10, 20, 110, 200):
    print(f"  step {step:>3}: lr {lr_at(cfg, step):.5f}")

ckpt, report = train_clm(init_checkpoint(model_cfg, seed=0), tokens, cfg)
losses = [l for _, _, l in report.steps]
print(f"\ntrained {len(losses)} steps over {report.tokens_consumed} tokens "
      f"in {report.wall_time:.1f}s")
print(f"loss: first-10 mean {np.mean(losses[:10]):.3f} -> last-10 mean {np.mean(losses[-10:]):.3f}")

with tempfile.TemporaryDirectory() as snap:
    train_clm(init_checkpoint(model_cfg, seed=0), tokens, cfg,
              snapshot_dir=snap, stop_after_step=100)
    print("\ninterrupted at step 100, snapshot written; resuming...")
    resumed, _ = train_clm(None, tokens, cfg, snapshot_dir=snap, resume=True)
same = all(ckpt.tensors[n].tobytes() == resumed.tensors[n].tobytes()
           for n in ckpt.tensors.names())
print(f"resumed final checkpoint bit-identical to uninterrupted run: {same}")
