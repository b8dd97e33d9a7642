"""Tensor container I/O and vocabulary-expansion checkpoint surgery.

The container format is bit-exact and self-describing:

    magic ``XCKPT001`` (8 bytes)
    u64 little-endian header length
    UTF-8 JSON header  {name: {"dtype", "shape", "offset", "len"}}
    contiguous little-endian tensor data

``offset``/``len`` are byte positions relative to the start of the data
section. The model config travels in a separate JSON file.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"XCKPT001"

_DTYPE_TO_NP = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NP_TO_DTYPE = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class CheckpointFormatError(Exception):
    """A container or config file failed structural validation."""


class SurgeryError(Exception):
    """A checkpoint transformation was requested with ill-posed arguments."""


class TensorStore:
    """Mapping of unique names to finite dense f32/f64 arrays."""

    def __init__(self, tensors=None):
        self._tensors: dict[str, np.ndarray] = {}
        if tensors:
            for name, arr in tensors.items():
                self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _NP_TO_DTYPE:
            raise CheckpointFormatError(
                f"tensor {name!r}: unsupported dtype {arr.dtype}, want float32/float64"
            )
        if not np.all(np.isfinite(arr)):
            raise CheckpointFormatError(f"tensor {name!r}: non-finite values")
        self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        return self._tensors.items()

    def copy(self) -> "TensorStore":
        out = TensorStore()
        for name, arr in self._tensors.items():
            out._tensors[name] = arr.copy()
        return out


def write_store(store: TensorStore, path) -> None:
    """Serialize a TensorStore; layout is sorted by name for determinism."""
    header = {}
    blobs = []
    offset = 0
    for name in store.names():
        arr = store[name]
        dtype = _NP_TO_DTYPE[arr.dtype]
        raw = arr.astype(_DTYPE_TO_NP[dtype], copy=False).tobytes(order="C")
        header[name] = {
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "len": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def read_store(path) -> TensorStore:
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"bad magic in {path}")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    data_start = len(MAGIC) + 8 + header_len
    if data_start > len(blob):
        raise CheckpointFormatError(f"truncated header in {path}")
    try:
        header = json.loads(blob[len(MAGIC) + 8 : data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header in {path}: {exc}") from exc
    store = TensorStore()
    data = blob[data_start:]
    for name, meta in header.items():
        dtype = meta.get("dtype")
        if dtype not in _DTYPE_TO_NP:
            raise CheckpointFormatError(f"tensor {name!r}: unknown dtype {dtype!r}")
        shape = tuple(int(d) for d in meta["shape"])
        np_dtype = _DTYPE_TO_NP[dtype]
        expect = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
        if int(meta["len"]) != expect:
            raise CheckpointFormatError(
                f"tensor {name!r}: declared length {meta['len']} != shape product {expect}"
            )
        lo, hi = int(meta["offset"]), int(meta["offset"]) + expect
        if hi > len(data):
            raise CheckpointFormatError(f"truncated data for tensor {name!r} in {path}")
        arr = np.frombuffer(data[lo:hi], dtype=np_dtype).reshape(shape).copy()
        store[name] = arr
    return store


# ---------------------------------------------------------------------------
# Model config and checkpoint


@dataclass
class TinyLMConfig:
    """Decoder hyperparameters. Weights use the x @ W orientation except the
    LM head, which is stored row-per-token [vocab, hidden] and applied
    transposed."""

    vocab_size: int
    hidden: int
    layers: int
    heads: int
    kv_heads: int
    head_dim: int
    window: int
    mlp_hidden: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5

    def validate(self) -> None:
        for field in ("vocab_size", "hidden", "layers", "heads", "kv_heads", "head_dim", "window", "mlp_hidden"):
            if getattr(self, field) < 1:
                raise CheckpointFormatError(f"config field {field} must be positive")
        if self.heads % self.kv_heads != 0:
            raise CheckpointFormatError(
                f"heads ({self.heads}) not divisible by kv_heads ({self.kv_heads})"
            )
        if self.heads * self.head_dim != self.hidden:
            raise CheckpointFormatError(
                f"hidden ({self.hidden}) != heads*head_dim ({self.heads}*{self.head_dim})"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TinyLMConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CheckpointFormatError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def write_config(cfg: TinyLMConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_config(path) -> TinyLMConfig:
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"config file not found: {path}")
    return TinyLMConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))


def expected_tensor_names(cfg: TinyLMConfig) -> list[str]:
    names = ["embed.weight", "final_norm.weight", "lm_head.weight"]
    for i in range(cfg.layers):
        p = f"layers.{i}."
        names += [
            p + "ln_attn.weight",
            p + "attn.wq.weight",
            p + "attn.wk.weight",
            p + "attn.wv.weight",
            p + "attn.wo.weight",
            p + "ln_mlp.weight",
            p + "mlp.w_gate.weight",
            p + "mlp.w_up.weight",
            p + "mlp.w_down.weight",
        ]
    return names


@dataclass
class ModelCheckpoint:
    config: TinyLMConfig
    tensors: TensorStore

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def validate(self) -> None:
        self.config.validate()
        cfg = self.config
        missing = [n for n in expected_tensor_names(cfg) if n not in self.tensors]
        if missing:
            raise CheckpointFormatError(f"checkpoint missing tensors: {missing}")
        for name in ("embed.weight", "lm_head.weight"):
            shape = self.tensors[name].shape
            if shape != (cfg.vocab_size, cfg.hidden):
                raise CheckpointFormatError(
                    f"{name} shape {shape} != ({cfg.vocab_size}, {cfg.hidden})"
                )


def init_checkpoint(cfg: TinyLMConfig, seed: int = 0, dtype: str = "f32", init_std: float = 0.02) -> ModelCheckpoint:
    """Fresh Gaussian-initialized checkpoint (norm weights start at one)."""
    cfg.validate()
    np_dtype = _DTYPE_TO_NP[dtype]
    rng = np.random.Generator(np.random.PCG64(seed))
    store = TensorStore()

    def normal(shape):
        return rng.normal(0.0, init_std, size=shape).astype(np_dtype)

    kv_dim = cfg.kv_heads * cfg.head_dim
    store["embed.weight"] = normal((cfg.vocab_size, cfg.hidden))
    for i in range(cfg.layers):
        p = f"layers.{i}."
        store[p + "ln_attn.weight"] = np.ones(cfg.hidden, dtype=np_dtype)
        store[p + "attn.wq.weight"] = normal((cfg.hidden, cfg.hidden))
        store[p + "attn.wk.weight"] = normal((cfg.hidden, kv_dim))
        store[p + "attn.wv.weight"] = normal((cfg.hidden, kv_dim))
        store[p + "attn.wo.weight"] = normal((cfg.hidden, cfg.hidden))
        store[p + "ln_mlp.weight"] = np.ones(cfg.hidden, dtype=np_dtype)
        store[p + "mlp.w_gate.weight"] = normal((cfg.hidden, cfg.mlp_hidden))
        store[p + "mlp.w_up.weight"] = normal((cfg.hidden, cfg.mlp_hidden))
        store[p + "mlp.w_down.weight"] = normal((cfg.mlp_hidden, cfg.hidden))
    store["final_norm.weight"] = np.ones(cfg.hidden, dtype=np_dtype)
    store["lm_head.weight"] = normal((cfg.vocab_size, cfg.hidden))
    return ModelCheckpoint(config=cfg, tensors=store)


def save_checkpoint(ckpt: ModelCheckpoint, tensor_path, config_path) -> None:
    write_store(ckpt.tensors, tensor_path)
    write_config(ckpt.config, config_path)


def load_checkpoint(tensor_path, config_path) -> ModelCheckpoint:
    return ModelCheckpoint(config=read_config(config_path), tensors=read_store(tensor_path))


# ---------------------------------------------------------------------------
# Surgery


def _mean_rows(matrix: np.ndarray) -> np.ndarray:
    # Mean in double regardless of storage dtype: summation error over tens
    # of thousands of f32 rows is otherwise visible.
    return matrix.astype(np.float64).mean(axis=0)


def expand_embeddings(ckpt: ModelCheckpoint, new_vocab: int, jitter: float = 0.0, seed: int = 0) -> ModelCheckpoint:
    """Grow embedding and LM head to ``new_vocab`` rows.

    Every appended row is the column-wise mean of the *original* rows, so the
    new token's logit equals the mean of the original logits for any hidden
    state. Optional Gaussian jitter (stddev ``jitter``) breaks the symmetry
    between multiple new rows. Original rows are preserved bit-for-bit.
    """
    old_vocab = ckpt.config.vocab_size
    if new_vocab <= old_vocab:
        raise SurgeryError(
            f"new vocab size {new_vocab} must exceed current {old_vocab}; refusing to re-expand"
        )
    if jitter < 0:
        raise SurgeryError("jitter must be >= 0")
    extra = new_vocab - old_vocab
    rng = np.random.Generator(np.random.PCG64(seed))
    new_store = ckpt.tensors.copy()
    for name in ("embed.weight", "lm_head.weight"):
        if name not in ckpt.tensors:
            raise SurgeryError(f"checkpoint lacks tensor {name!r}")
        old = ckpt.tensors[name]
        if old.shape[0] != old_vocab:
            raise SurgeryError(
                f"{name} has {old.shape[0]} rows but config.vocab_size is {old_vocab}"
            )
        mean = _mean_rows(old)
        rows = np.tile(mean, (extra, 1))
        if jitter > 0:
            rows = rows + rng.normal(0.0, jitter, size=rows.shape)
        new_store[name] = np.concatenate([old, rows.astype(old.dtype)], axis=0)
    new_cfg = dataclasses.replace(ckpt.config, vocab_size=new_vocab)
    return ModelCheckpoint(config=new_cfg, tensors=new_store)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def verify_rescaling_identity(old_head: np.ndarray, new_head: np.ndarray, samples) -> dict:
    """Check that appending head rows rescales every original probability by
    a common factor 1 / (1 + sum(exp(z_new)) / sum(exp(z_old))) < 1.

    Returns a report with the max deviation over samples and the factor range.
    """
    old_head = np.asarray(old_head, dtype=np.float64)
    new_head = np.asarray(new_head, dtype=np.float64)
    if old_head.ndim != 2 or new_head.ndim != 2 or old_head.shape[1] != new_head.shape[1]:
        raise SurgeryError(
            f"head shape mismatch: old {old_head.shape} vs new {new_head.shape}"
        )
    m = old_head.shape[0]
    if new_head.shape[0] < m:
        raise SurgeryError("new head has fewer rows than old head")
    if not np.array_equal(new_head[:m], old_head):
        raise SurgeryError("new head does not extend old head (original rows differ)")

    n_new = new_head.shape[0] - m
    max_dev = 0.0
    factors = []
    for h in samples:
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (old_head.shape[1],):
            raise SurgeryError(f"hidden state shape {h.shape} != ({old_head.shape[1]},)")
        z_old = old_head @ h
        z_all = new_head @ h
        p_old = _softmax(z_old)
        p_all = _softmax(z_all)
        shift = z_all.max()
        sum_old = np.exp(z_old - shift).sum()
        sum_new = np.exp(z_all[m:] - shift).sum() if n_new else 0.0
        factor = sum_old / (sum_old + sum_new)
        factors.append(factor)
        dev = np.abs(p_all[:m] - p_old * factor).max()
        max_dev = max(max_dev, float(dev))
    factors = np.asarray(factors) if factors else np.asarray([1.0])
    return {
        "num_samples": len(factors) if samples else 0,
        "num_new_rows": int(n_new),
        "max_deviation": max_dev,
        "min_factor": float(factors.min()),
        "max_factor": float(factors.max()),
        "factor_below_one": bool(n_new > 0 and factors.max() < 1.0),
    }
