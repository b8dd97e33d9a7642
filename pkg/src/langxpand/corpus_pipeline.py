"""Four-stage corpus refinement over JSONL document streams:
random selection, MinHash-LSH near-duplicate removal, toxicity filtering
with a hashed character-n-gram logistic scorer, and n-gram perplexity
filtering, plus corpus statistics.

Every stage is deterministic for a fixed (input, config, seed), keeps
document ids intact, and accounts for each input document either in its
output or in its removal log.
"""

from __future__ import annotations

import hashlib
import json
import random
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ngram_lm import tokenize_words


class CorpusFormatError(Exception):
    pass


class PipelineError(Exception):
    pass


# Published scale of the corpus this pipeline models (CulturaX/vi -> refined
# selection); shipped as reference data for report context.
CULTURAX_VI_REFERENCE = {
    "source_num_docs": 54_988_654,
    "selected_num_docs": 7_331_840,
    "selected_num_tokens": 8_323_137_536,
}


@dataclass
class Document:
    id: str
    text: str
    source: str = ""

    @property
    def byte_len(self) -> int:
        return len(self.text.encode("utf-8"))


def _parse_line(line: str, lineno: int) -> Document:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line {lineno}: malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {lineno}: expected an object")
    for key in ("id", "text"):
        if key not in obj or not isinstance(obj[key], str):
            raise CorpusFormatError(f"line {lineno}: missing or non-string {key!r}")
    source = obj.get("source", "")
    if not isinstance(source, str):
        raise CorpusFormatError(f"line {lineno}: non-string 'source'")
    text = unicodedata.normalize("NFC", obj["text"])
    return Document(id=obj["id"], text=text, source=source)


def load_corpus(path, removal_log: list | None = None) -> list[Document]:
    """Read a JSONL corpus; NFC-normalizes text, enforces unique ids, and
    drops empty/whitespace-only documents (logged when a log is given)."""
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"corpus file not found: {path}")
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = _parse_line(line, lineno)
            if doc.id in seen:
                raise CorpusFormatError(f"line {lineno}: duplicate id {doc.id!r}")
            seen.add(doc.id)
            if not doc.text.strip():
                if removal_log is not None:
                    removal_log.append(
                        {"removed": doc.id, "kept": None, "reason": "empty_text", "score": 0.0}
                    )
                continue
            docs.append(doc)
    return docs


def write_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(
                {"id": doc.id, "text": doc.text, "source": doc.source},
                ensure_ascii=False, separators=(",", ":"),
            ))
            fh.write("\n")


def write_removal_log(entries, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Random selection


def sample_corpus(docs, keep, seed: int) -> list[Document]:
    """Uniform random subset; output preserves input order.

    ``keep`` is a fraction in (0, 1] or an absolute count.
    """
    docs = list(docs)
    n = len(docs)
    if isinstance(keep, float):
        if not (0.0 < keep <= 1.0):
            raise PipelineError(f"keep fraction {keep} outside (0, 1]")
        k = round(keep * n)
    else:
        k = int(keep)
        if k < 0:
            raise PipelineError(f"keep count {k} is negative")
        if k > n:
            raise PipelineError(f"requested {k} documents but population is {n}")
    idx = sorted(random.Random(seed).sample(range(n), k))
    return [docs[i] for i in idx]


# ---------------------------------------------------------------------------
# MinHash-LSH deduplication


@dataclass
class DedupConfig:
    ngram_n: int = 3
    num_hashes: int = 128
    bands: int = 16
    jaccard_threshold: float = 0.8

    def validate(self) -> None:
        if self.ngram_n < 1:
            raise PipelineError("ngram_n must be >= 1")
        if self.num_hashes < 1:
            raise PipelineError("num_hashes must be >= 1")
        if self.bands < 1 or self.num_hashes % self.bands != 0:
            raise PipelineError(
                f"bands ({self.bands}) must divide num_hashes ({self.num_hashes})"
            )
        if not (0.0 <= self.jaccard_threshold <= 1.0):
            raise PipelineError("jaccard_threshold must be in [0, 1]")


_DEDUP_SALT = 0x5F3C_78D1  # fixed: dedup is a pure function of (input, config)


def shingle_set(text: str, n: int) -> set[tuple]:
    toks = tokenize_words(text)
    if len(toks) < n:
        return {tuple(toks)}
    return {tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)}


def _hash_params(num_hashes: int):
    rng = np.random.Generator(np.random.PCG64(_DEDUP_SALT))
    # multiply-shift universal family over u64; odd multipliers
    a = rng.integers(1, 2**63, size=num_hashes, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = rng.integers(0, 2**63, size=num_hashes, dtype=np.uint64)
    return a, b


def minhash_signature(shingles: set, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    base = np.fromiter(
        (
            int.from_bytes(
                hashlib.blake2b("\x1f".join(s).encode("utf-8"), digest_size=8).digest(),
                "little",
            )
            for s in sorted(shingles)
        ),
        dtype=np.uint64,
        count=len(shingles),
    )
    with np.errstate(over="ignore"):
        table = a[:, None] * base[None, :] + b[:, None]
    return table.min(axis=1)


def estimated_jaccard(sig_a: np.ndarray, sig_b: np.ndarray) -> float:
    return float(np.mean(sig_a == sig_b))


def dedup_ngram(docs, cfg: DedupConfig) -> tuple[list[Document], list[dict]]:
    """Collapse exact and near duplicates; first occurrence wins.

    Byte-identical texts always collapse (exact-hash pre-pass). Near
    duplicates are LSH band-collision candidates confirmed by a signature
    Jaccard estimate >= the configured threshold.
    """
    cfg.validate()
    docs = list(docs)
    a, b = _hash_params(cfg.num_hashes)
    rows = cfg.num_hashes // cfg.bands

    kept: list[Document] = []
    log: list[dict] = []
    exact_seen: dict[bytes, str] = {}
    buckets: list[dict] = [dict() for _ in range(cfg.bands)]
    signatures: dict[str, np.ndarray] = {}

    for doc in docs:
        digest = hashlib.sha256(doc.text.encode("utf-8")).digest()
        prior = exact_seen.get(digest)
        if prior is not None:
            log.append({"removed": doc.id, "kept": prior, "reason": "exact_duplicate", "score": 1.0})
            continue

        sig = minhash_signature(shingle_set(doc.text, cfg.ngram_n), a, b)
        duplicate_of = None
        best_est = 0.0
        checked = set()
        for band in range(cfg.bands):
            key = sig[band * rows : (band + 1) * rows].tobytes()
            for cand_id in buckets[band].get(key, ()):
                if cand_id in checked:
                    continue
                checked.add(cand_id)
                est = estimated_jaccard(sig, signatures[cand_id])
                if est >= cfg.jaccard_threshold:
                    duplicate_of, best_est = cand_id, est
                    break
            if duplicate_of is not None:
                break
        if duplicate_of is not None:
            log.append({"removed": doc.id, "kept": duplicate_of,
                        "reason": "near_duplicate", "score": best_est})
            continue

        exact_seen[digest] = doc.id
        signatures[doc.id] = sig
        for band in range(cfg.bands):
            key = sig[band * rows : (band + 1) * rows].tobytes()
            buckets[band].setdefault(key, []).append(doc.id)
        kept.append(doc)
    return kept, log


# ---------------------------------------------------------------------------
# Toxicity filtering


@dataclass
class ToxicityModel:
    """Logistic model over hashed character n-gram counts (l2-normalized)."""

    weights: np.ndarray
    bias: float
    hash_dim: int
    ngram_range: tuple[int, int]
    hash_seed: int = 0
    train_accuracy: float | None = None

    def _feature_indices(self, text: str):
        lo, hi = self.ngram_range
        text = text.lower()
        salt = self.hash_seed.to_bytes(8, "little")
        counts: dict[int, float] = {}
        for n in range(lo, hi + 1):
            for i in range(len(text) - n + 1):
                gram = text[i : i + n]
                h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, salt=salt).digest()
                idx = int.from_bytes(h, "little") % self.hash_dim
                counts[idx] = counts.get(idx, 0.0) + 1.0
        if counts:
            norm = float(np.sqrt(sum(v * v for v in counts.values())))
            counts = {k: v / norm for k, v in counts.items()}
        return counts

    def score(self, text: str) -> float:
        feats = self._feature_indices(text)
        z = self.bias + sum(self.weights[i] * v for i, v in feats.items())
        return float(1.0 / (1.0 + np.exp(-z)))

    def save(self, path) -> None:
        doc = {
            "hash_dim": self.hash_dim,
            "ngram_range": list(self.ngram_range),
            "hash_seed": self.hash_seed,
            "bias": self.bias,
            "train_accuracy": self.train_accuracy,
            "weights": self.weights.tolist(),
        }
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ToxicityModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=float(doc["bias"]),
            hash_dim=int(doc["hash_dim"]),
            ngram_range=tuple(doc["ngram_range"]),
            hash_seed=int(doc["hash_seed"]),
            train_accuracy=doc.get("train_accuracy"),
        )


def read_labeled_tsv(path) -> list[tuple[int, str]]:
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"labeled TSV not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or parts[0] not in ("0", "1"):
                raise CorpusFormatError(
                    f"line {lineno}: expected 'label<TAB>text' with label 0/1"
                )
            rows.append((int(parts[0]), parts[1]))
    return rows


def train_toxicity(
    labeled,
    hash_dim: int = 1 << 16,
    ngram_range: tuple[int, int] = (2, 4),
    seed: int = 0,
    l2: float = 1e-4,
) -> ToxicityModel:
    """Fit the logistic scorer on (label, text) rows (or a TSV path).

    Training minimizes the l2-regularized log-loss with L-BFGS, which is
    deterministic for fixed inputs; the seed only salts the feature hash.
    """
    from scipy import optimize, sparse

    if isinstance(labeled, (str, Path)):
        labeled = read_labeled_tsv(labeled)
    labeled = list(labeled)
    if not labeled:
        raise PipelineError("no labeled examples")
    labels = np.asarray([y for y, _ in labeled], dtype=np.float64)
    if labels.min() == labels.max():
        raise PipelineError("labeled data contains a single class; need both 0 and 1")

    model = ToxicityModel(
        weights=np.zeros(hash_dim), bias=0.0, hash_dim=hash_dim,
        ngram_range=ngram_range, hash_seed=seed,
    )
    rows, cols, vals = [], [], []
    for r, (_, text) in enumerate(labeled):
        for idx, v in model._feature_indices(text).items():
            rows.append(r)
            cols.append(idx)
            vals.append(v)
    X = sparse.csr_matrix((vals, (rows, cols)), shape=(len(labeled), hash_dim))

    def objective(wb):
        w, bias = wb[:-1], wb[-1]
        z = X @ w + bias
        # log(1+exp(-m)) with the stable split
        m = z * (2 * labels - 1)
        loss = np.logaddexp(0.0, -m).mean() + 0.5 * l2 * (w @ w)
        p = 1.0 / (1.0 + np.exp(-z))
        g = X.T @ (p - labels) / len(labels) + l2 * w
        gb = float((p - labels).mean())
        return loss, np.concatenate([g, [gb]])

    x0 = np.zeros(hash_dim + 1)
    result = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                               options={"maxiter": 200})
    model.weights = result.x[:-1]
    model.bias = float(result.x[-1])
    preds = (X @ model.weights + model.bias) > 0
    model.train_accuracy = float((preds == (labels > 0.5)).mean())
    return model


def filter_toxic(docs, scorer, threshold: float) -> tuple[list[Document], list[dict]]:
    """Keep documents scoring strictly below the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise PipelineError("threshold must be in [0, 1]")
    score_fn = scorer.score if hasattr(scorer, "score") else scorer
    kept, log = [], []
    for doc in docs:
        s = float(score_fn(doc.text))
        if s < threshold:
            kept.append(doc)
        else:
            log.append({"removed": doc.id, "kept": None, "reason": "toxic", "score": s})
    return kept, log


def filter_by_score_file(docs, path, threshold: float) -> tuple[list[Document], list[dict]]:
    """Pluggable-scorer path: JSONL of {"id", "score"} from any external model."""
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                scores[obj["id"]] = float(obj["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"score file line {lineno}: {exc}") from exc
    missing = [d.id for d in docs if d.id not in scores]
    if missing:
        raise PipelineError(f"score file lacks entries for ids: {missing[:5]}")
    kept, log = [], []
    for doc in docs:
        s = scores[doc.id]
        if s < threshold:
            kept.append(doc)
        else:
            log.append({"removed": doc.id, "kept": None, "reason": "toxic", "score": s})
    return kept, log


# ---------------------------------------------------------------------------
# Perplexity filtering


def filter_perplexity(docs, lm, max_ppl: float) -> tuple[list[Document], list[dict]]:
    """Keep documents whose per-token perplexity under ``lm`` is <= max_ppl.

    Documents with no word tokens are always dropped and logged (score -1,
    JSON has no infinity).
    """
    if max_ppl <= 0:
        raise PipelineError("max_ppl must be > 0")
    kept, log = [], []
    for doc in docs:
        if not tokenize_words(doc.text):
            log.append({"removed": doc.id, "kept": None, "reason": "no_tokens", "score": -1.0})
            continue
        ppl = lm.perplexity(doc.text)
        if ppl <= max_ppl:
            kept.append(doc)
        else:
            log.append({"removed": doc.id, "kept": None,
                        "reason": "high_perplexity", "score": ppl})
    return kept, log


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class CorpusStats:
    num_docs: int
    total_bytes: int
    num_tokens: int | None = None

    def to_json(self) -> dict:
        return {"num_docs": self.num_docs, "total_bytes": self.total_bytes,
                "num_tokens": self.num_tokens}


def corpus_stats(docs, tokenizer=None) -> CorpusStats:
    docs = list(docs)
    total_bytes = sum(d.byte_len for d in docs)
    num_tokens = None
    if tokenizer is not None:
        from .tokenizer import encode

        num_tokens = sum(len(encode(tokenizer, d.text)) for d in docs)
    return CorpusStats(num_docs=len(docs), total_bytes=total_bytes, num_tokens=num_tokens)
