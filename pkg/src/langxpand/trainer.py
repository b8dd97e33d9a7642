"""Full-parameter continual pre-training: AdamW, warmup+cosine schedule,
deterministic contiguous batching, interrupt/resume snapshots.

Every parameter is updated directly (no low-rank adapter path). Snapshots
capture params, optimizer moments, and the data cursor so a resumed run
reproduces the uninterrupted trajectory bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tiny_transformer
from .tensor_ckpt import ModelCheckpoint, TensorStore, read_config, read_store, save_checkpoint, write_store


class TrainerError(Exception):
    pass


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 10
    total_steps: int = 100
    min_lr_ratio: float = 0.1
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.1
    batch_size: int = 4
    seq_len: int = 64
    seed: int = 0
    grad_clip: float | None = 1.0  # global-norm clip; None disables
    snapshot_every: int = 0  # 0 = no periodic snapshots

    def validate(self) -> None:
        if self.peak_lr <= 0:
            raise TrainerError("peak_lr must be > 0")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise TrainerError("need 0 <= warmup_steps <= total_steps")
        if not (0 <= self.min_lr_ratio <= 1):
            raise TrainerError("min_lr_ratio must be in [0, 1]")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise TrainerError("betas must be in (0, 1)")
        if self.batch_size < 1 or self.seq_len < 2:
            raise TrainerError("need batch_size >= 1 and seq_len >= 2")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Linear 0 -> peak over warmup, then cosine down to peak*min_lr_ratio."""
    if step < 0 or step > cfg.total_steps:
        raise TrainerError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    floor = cfg.min_lr_ratio
    return cfg.peak_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


class OptimizerState:
    """Per-parameter first/second moments plus the step counter."""

    def __init__(self, params: TensorStore):
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}

    def to_store(self) -> TensorStore:
        store = TensorStore()
        for name, arr in self.m.items():
            store["m." + name] = arr
        for name, arr in self.v.items():
            store["v." + name] = arr
        store["t"] = np.array([float(self.t)], dtype=np.float64)
        return store

    @classmethod
    def from_store(cls, store: TensorStore, params: TensorStore) -> "OptimizerState":
        state = cls.__new__(cls)
        state.t = int(store["t"][0])
        state.m = {}
        state.v = {}
        for name in params:
            state.m[name] = store["m." + name].copy()
            state.v[name] = store["v." + name].copy()
        return state


def adamw_memory_footprint(params: TensorStore) -> dict:
    """Resident value counts for full-rank AdamW training: parameters,
    gradients, momentum, and variance each hold one value per parameter."""
    n = sum(arr.size for _, arr in params.items())
    return {"parameters": n, "gradients": n, "momentum": n, "variance": n, "total": 4 * n}


def adamw_step(params: TensorStore, grads: TensorStore, state: OptimizerState, cfg: TrainConfig, step: int) -> None:
    """One AdamW update with bias correction and decoupled weight decay.

    Mutates ``params`` and ``state`` in place; learning rate comes from the
    schedule at ``step``.
    """
    if step != state.t + 1:
        raise TrainerError(f"step {step} != state.t+1 ({state.t + 1})")
    for name in params:
        if name not in grads:
            raise TrainerError(f"missing gradient for tensor {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise TrainerError(f"non-finite gradient in tensor {name!r}")
    lr = lr_at(cfg, step)
    b1, b2 = cfg.betas
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for name in params:
        p = params[name]
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps))
        if cfg.weight_decay:
            p -= lr * cfg.weight_decay * p
    state.t = step


def clip_global_norm(grads: TensorStore, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    total = math.sqrt(
        sum(float(np.sum(np.square(arr, dtype=np.float64))) for _, arr in grads.items())
    )
    if total > max_norm and total > 0:
        factor = max_norm / total
        for _, arr in grads.items():
            arr *= factor
    return total


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)  # (step, lr, loss)
    wall_time: float = 0.0
    tokens_consumed: int = 0

    def append(self, step: int, lr: float, loss: float) -> None:
        if self.steps and step <= self.steps[-1][0]:
            raise TrainerError("report steps must be strictly increasing")
        self.steps.append((step, lr, loss))

    def to_csv(self, path) -> None:
        lines = ["step,lr,loss"]
        lines += [f"{s},{lr:.10g},{loss:.10g}" for s, lr, loss in self.steps]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _epoch_order(seed: int, epoch: int, n_chunks: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, epoch))))
    return rng.permutation(n_chunks)


def _batch_for_step(tokens: np.ndarray, cfg: TrainConfig, step: int, n_chunks: int) -> np.ndarray:
    # chunk slots are numbered globally across epochs; each epoch has its own
    # seeded permutation, so the cursor is fully determined by the step index
    out = np.empty((cfg.batch_size, cfg.seq_len), dtype=tokens.dtype)
    base = (step - 1) * cfg.batch_size
    for j in range(cfg.batch_size):
        slot = base + j
        epoch, pos = divmod(slot, n_chunks)
        chunk = int(_epoch_order(cfg.seed, epoch, n_chunks)[pos])
        out[j] = tokens[chunk * cfg.seq_len : (chunk + 1) * cfg.seq_len]
    return out


def write_snapshot(dirpath, ckpt: ModelCheckpoint, state: OptimizerState, cfg: TrainConfig, step: int) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, dirpath / "params.xckpt", dirpath / "params.config.json")
    write_store(state.to_store(), dirpath / "opt.xckpt")
    trainer_state = {
        "step": step,
        "data_cursor": step * cfg.batch_size,
        "rng": {"scheme": "pcg64-seedseq(seed,epoch)", "seed": cfg.seed},
        "train_config": cfg.to_dict(),
    }
    (dirpath / "trainer_state.json").write_text(
        json.dumps(trainer_state, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_snapshot(dirpath) -> tuple[ModelCheckpoint, OptimizerState, TrainConfig, int]:
    dirpath = Path(dirpath)
    params = read_store(dirpath / "params.xckpt")
    model_cfg = read_config(dirpath / "params.config.json")
    ckpt = ModelCheckpoint(config=model_cfg, tensors=params)
    state_doc = json.loads((dirpath / "trainer_state.json").read_text(encoding="utf-8"))
    cfg = TrainConfig.from_dict(state_doc["train_config"])
    state = OptimizerState.from_store(read_store(dirpath / "opt.xckpt"), params)
    step = int(state_doc["step"])
    if state.t != step:
        raise TrainerError(f"snapshot inconsistent: optimizer t={state.t} vs step={step}")
    return ckpt, state, cfg, step


def train_clm(
    ckpt: ModelCheckpoint,
    tokens,
    cfg: TrainConfig,
    snapshot_dir=None,
    resume: bool = False,
    stop_after_step: int | None = None,
):
    """Continual pre-training loop over a tokenized id stream.

    Batches are contiguous non-overlapping ``seq_len`` chunks consumed in a
    seeded per-epoch shuffle. With ``resume=True`` the loop restarts from the
    snapshot in ``snapshot_dir`` and continues to ``total_steps``.
    ``stop_after_step`` interrupts the run after that step (a snapshot is
    written so a later resume reproduces the uninterrupted trajectory).
    """
    cfg.validate()
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise TrainerError("token stream must be 1-D")
    need = cfg.batch_size * cfg.seq_len
    if tokens.size < need:
        raise TrainerError(
            f"corpus too small: need at least {need} tokens "
            f"(batch_size*seq_len), have {tokens.size}"
        )
    n_chunks = tokens.size // cfg.seq_len

    if resume:
        if snapshot_dir is None:
            raise TrainerError("resume requested but no snapshot_dir given")
        ckpt, state, snap_cfg, start_step = load_snapshot(snapshot_dir)
        if snap_cfg.to_dict() != cfg.to_dict():
            raise TrainerError("snapshot train config does not match requested config")
    else:
        start_step = 0
        state = OptimizerState(ckpt.tensors)

    report = TrainReport()
    t0 = time.monotonic()
    last_step = start_step
    for step in range(start_step + 1, cfg.total_steps + 1):
        batch = _batch_for_step(tokens, cfg, step, n_chunks)
        logits, cache = tiny_transformer.forward(ckpt, batch)
        loss, _, _ = tiny_transformer.loss_and_accuracy(logits, batch)
        grads = tiny_transformer.backward(ckpt, cache, batch)
        if cfg.grad_clip is not None:
            clip_global_norm(grads, cfg.grad_clip)
        adamw_step(ckpt.tensors, grads, state, cfg, step)
        report.append(step, lr_at(cfg, step), float(loss))
        report.tokens_consumed += cfg.batch_size * cfg.seq_len
        last_step = step
        if snapshot_dir is not None and cfg.snapshot_every and step % cfg.snapshot_every == 0:
            write_snapshot(snapshot_dir, ckpt, state, cfg, step)
        if stop_after_step is not None and step >= stop_after_step:
            break
    report.wall_time = time.monotonic() - t0
    if snapshot_dir is not None:
        write_snapshot(snapshot_dir, ckpt, state, cfg, last_step)
    return ckpt, report
