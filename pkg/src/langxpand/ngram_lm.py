"""Backoff n-gram language model for perplexity-based corpus filtering.

Smoothing is interpolated absolute discounting: each seen event is
discounted by a constant and the released mass recursively interpolates
with the next-lower order, bottoming out at the uniform distribution over
the vocabulary (which includes UNK). Every probability is therefore
strictly positive and each conditional distribution sums to one.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

UNK = "<unk>"
_MAGIC = b"LXNGRAM1"


class NGramError(Exception):
    pass


def tokenize_words(text: str) -> list[str]:
    """Lowercased Unicode-whitespace word tokens, punctuation kept attached."""
    return text.lower().split()


class NGramModel:
    def __init__(self, order: int, discount: float = 0.75):
        if order < 1:
            raise NGramError(f"order must be >= 1, got {order}")
        if not (0.0 <= discount < 1.0):
            raise NGramError("discount must be in [0, 1)")
        self.order = order
        self.discount = discount
        self.vocab: dict[str, int] = {UNK: 0}
        # counts[k-1]: context tuple (k-1 ids) -> {next_id: count}
        self.counts: list[dict[tuple, dict[int, int]]] = [dict() for _ in range(order)]
        self._totals: list[dict[tuple, int]] = [dict() for _ in range(order)]
        self._uniform: float | None = None  # set only by the uniform constructor

    # -- construction ------------------------------------------------------

    @property
    def vocab_size(self) -> int:
        """Number of word types including UNK."""
        return len(self.vocab)

    def _id(self, token: str) -> int:
        return self.vocab.get(token, 0)

    def add_document(self, text: str) -> int:
        toks = tokenize_words(text)
        ids = []
        for tok in toks:
            if tok not in self.vocab:
                self.vocab[tok] = len(self.vocab)
            ids.append(self.vocab[tok])
        for k in range(1, self.order + 1):
            table = self.counts[k - 1]
            totals = self._totals[k - 1]
            for t in range(k - 1, len(ids)):
                ctx = tuple(ids[t - k + 1 : t])
                nxt = ids[t]
                followers = table.setdefault(ctx, {})
                followers[nxt] = followers.get(nxt, 0) + 1
                totals[ctx] = totals.get(ctx, 0) + 1
        return len(ids)

    @classmethod
    def uniform(cls, types) -> "NGramModel":
        """Unigram model assigning 1/|vocab| to every token (vocab includes
        UNK, so perplexity of any text equals vocab_size exactly)."""
        model = cls(order=1)
        for t in sorted(set(types)):
            if t not in model.vocab:
                model.vocab[t] = len(model.vocab)
        model._uniform = 1.0 / model.vocab_size
        return model

    # -- scoring -----------------------------------------------------------

    def _prob_ids(self, word: int, ctx: tuple) -> float:
        if self._uniform is not None:
            return self._uniform
        base = 1.0 / self.vocab_size
        # order-1 (empty context)
        totals = self._totals[0].get((), 0)
        if totals == 0:
            p = base
        else:
            followers = self.counts[0][()]
            c = followers.get(word, 0)
            t_distinct = len(followers)
            p = max(c - self.discount, 0.0) / totals + (
                self.discount * t_distinct / totals
            ) * base
        for k in range(2, len(ctx) + 2):
            sub = ctx[len(ctx) - (k - 1) :]
            total = self._totals[k - 1].get(sub, 0)
            if total == 0:
                continue  # unseen context: keep the lower-order estimate
            followers = self.counts[k - 1][sub]
            c = followers.get(word, 0)
            lam = self.discount * len(followers) / total
            p = max(c - self.discount, 0.0) / total + lam * p
        return p

    def prob(self, word: str, context=()) -> float:
        """P(word | context); context is a sequence of word strings."""
        ctx_ids = tuple(self._id(t) for t in tokenize_words(" ".join(context)))
        ctx_ids = ctx_ids[max(0, len(ctx_ids) - (self.order - 1)) :]
        return self._prob_ids(self._id(word.lower()), ctx_ids)

    def logprobs(self, text: str) -> list[float]:
        toks = tokenize_words(text)
        if not toks:
            raise NGramError("empty token sequence")
        ids = [self._id(t) for t in toks]
        out = []
        for t, word in enumerate(ids):
            ctx = tuple(ids[max(0, t - (self.order - 1)) : t])
            out.append(math.log(self._prob_ids(word, ctx)))
        return out

    def perplexity(self, text: str) -> float:
        lps = self.logprobs(text)
        return math.exp(-math.fsum(lps) / len(lps))

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        if self._uniform is not None:
            raise NGramError("uniform models are synthetic and not serializable")
        inv = sorted(self.vocab.items(), key=lambda kv: kv[1])
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IdQ", self.order, self.discount, len(inv)))
            for token, _ in inv:
                raw = token.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            for k in range(1, self.order + 1):
                table = self.counts[k - 1]
                fh.write(struct.pack("<Q", len(table)))
                for ctx in sorted(table):
                    followers = table[ctx]
                    fh.write(struct.pack(f"<{k - 1}I" if k > 1 else "<", *ctx))
                    fh.write(struct.pack("<I", len(followers)))
                    for nxt in sorted(followers):
                        fh.write(struct.pack("<IQ", nxt, followers[nxt]))

    @classmethod
    def load(cls, path) -> "NGramModel":
        path = Path(path)
        if not path.exists():
            raise NGramError(f"model file not found: {path}")
        blob = path.read_bytes()
        if blob[:8] != _MAGIC:
            raise NGramError(f"bad magic in {path}")
        off = 8
        try:
            order, discount, vsize = struct.unpack_from("<IdQ", blob, off)
            off += struct.calcsize("<IdQ")
            model = cls(order=order, discount=discount)
            model.vocab = {}
            for i in range(vsize):
                (tlen,) = struct.unpack_from("<I", blob, off)
                off += 4
                token = blob[off : off + tlen].decode("utf-8")
                off += tlen
                model.vocab[token] = i
            for k in range(1, order + 1):
                (n_ctx,) = struct.unpack_from("<Q", blob, off)
                off += 8
                table = {}
                totals = {}
                for _ in range(n_ctx):
                    ctx = struct.unpack_from(f"<{k - 1}I", blob, off) if k > 1 else ()
                    off += 4 * (k - 1)
                    (n_fol,) = struct.unpack_from("<I", blob, off)
                    off += 4
                    followers = {}
                    for _ in range(n_fol):
                        nxt, cnt = struct.unpack_from("<IQ", blob, off)
                        off += 12
                        followers[nxt] = cnt
                    table[ctx] = followers
                    totals[ctx] = sum(followers.values())
                model.counts[k - 1] = table
                model._totals[k - 1] = totals
        except struct.error as exc:
            raise NGramError(f"truncated model file {path}: {exc}") from exc
        if model.vocab.get(UNK) != 0:
            raise NGramError(f"model file {path} lacks the UNK entry")
        return model


def train_ngram(docs, order: int = 3, discount: float = 0.75) -> NGramModel:
    """Count-based training over an iterable of texts or Document objects."""
    model = NGramModel(order=order, discount=discount)
    total_tokens = 0
    for doc in docs:
        text = getattr(doc, "text", doc)
        total_tokens += model.add_document(text)
    if total_tokens == 0:
        raise NGramError("empty corpus: no word tokens found")
    return model


def perplexity(model: NGramModel, text: str) -> float:
    return model.perplexity(text)
