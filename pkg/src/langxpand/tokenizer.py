"""Unigram subword tokenizer: EM training with likelihood-loss pruning,
Viterbi encoding with byte fallback, rule-based piece filtering, and
vocabulary merging onto a base model.

Layout convention: ids 0..2 are the specials (<unk>, <s>, </s>), ids
3..258 the byte pieces <0x00>..<0xFF>, normal pieces follow. Word
boundaries are marked with a visible U+2581 prefix; a literal U+2581 in
input text is forced through byte fallback so decode(encode(s)) == s for
every string.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

MARKER = "▁"
NEG_INF = float("-inf")

KIND_NORMAL = "normal"
KIND_BYTE = "byte"
KIND_SPECIAL = "special"
KIND_UNK = "unk"

_SPECIAL_TEXTS = ("<unk>", "<s>", "</s>")


class TokenizerError(Exception):
    pass


@dataclass(frozen=True)
class Piece:
    text: str
    score: float
    kind: str = KIND_NORMAL


def byte_piece_text(value: int) -> str:
    return f"<0x{value:02X}>"


class TokenizerModel:
    """Ordered pieces; the token id is the list index."""

    def __init__(self, pieces: list[Piece], byte_fallback: bool = True, base_size: int | None = None):
        self.pieces = list(pieces)
        self.byte_fallback = byte_fallback
        self.base_size = len(self.pieces) if base_size is None else base_size
        self._validate()
        self._build_index()

    def _validate(self) -> None:
        texts = set()
        byte_values = set()
        self.specials = {}
        for i, piece in enumerate(self.pieces):
            if piece.text in texts:
                raise TokenizerError(f"duplicate piece text {piece.text!r} at id {i}")
            texts.add(piece.text)
            if piece.kind == KIND_NORMAL:
                if not piece.text:
                    raise TokenizerError(f"empty normal piece at id {i}")
                if unicodedata.normalize("NFC", piece.text) != piece.text:
                    raise TokenizerError(f"piece {piece.text!r} is not NFC-normalized")
                if not math.isfinite(piece.score):
                    raise TokenizerError(f"non-finite score for piece {piece.text!r}")
            elif piece.kind == KIND_BYTE:
                try:
                    value = int(piece.text[3:-1], 16)
                except (ValueError, IndexError):
                    raise TokenizerError(f"malformed byte piece {piece.text!r}")
                byte_values.add(value)
            elif piece.kind == KIND_UNK:
                self.specials["unk"] = i
            elif piece.kind == KIND_SPECIAL:
                if piece.text == "<s>":
                    self.specials["bos"] = i
                elif piece.text == "</s>":
                    self.specials["eos"] = i
            else:
                raise TokenizerError(f"unknown piece kind {piece.kind!r}")
        if self.byte_fallback and byte_values != set(range(256)):
            raise TokenizerError(
                f"byte fallback requires all 256 byte pieces exactly once, got {len(byte_values)}"
            )

    def _build_index(self) -> None:
        self._text_to_id = {}
        self._byte_ids = [None] * 256
        max_len = 1
        interior_marker = False
        for i, piece in enumerate(self.pieces):
            if piece.kind == KIND_NORMAL:
                self._text_to_id[piece.text] = i
                max_len = max(max_len, len(piece.text))
                if MARKER in piece.text[1:]:
                    interior_marker = True
            elif piece.kind == KIND_BYTE:
                self._byte_ids[int(piece.text[3:-1], 16)] = i
        self._max_piece_len = max_len
        self._word_split_ok = not interior_marker
        self._encode_cache: dict[str, tuple] = {}

    # -- convenience -------------------------------------------------------

    def __len__(self) -> int:
        return len(self.pieces)

    def normal_pieces(self) -> list[Piece]:
        return [p for p in self.pieces if p.kind == KIND_NORMAL]

    def piece_id(self, text: str):
        return self._text_to_id.get(text)

    def min_normal_score(self) -> float:
        scores = [p.score for p in self.pieces if p.kind == KIND_NORMAL]
        return min(scores) if scores else 0.0


def assemble_model(scored_pieces, byte_fallback: bool = True, byte_score: float | None = None) -> TokenizerModel:
    """Standard layout from {text: score}: specials, byte pieces, then normal
    pieces in descending score order. Byte pieces score below every normal
    piece so Viterbi prefers any in-vocabulary path."""
    if byte_score is None:
        floor = min(scored_pieces.values()) if scored_pieces else 0.0
        byte_score = floor - 10.0
    pieces = [
        Piece("<unk>", 0.0, KIND_UNK),
        Piece("<s>", 0.0, KIND_SPECIAL),
        Piece("</s>", 0.0, KIND_SPECIAL),
    ]
    pieces += [Piece(byte_piece_text(v), byte_score, KIND_BYTE) for v in range(256)]
    ordered = sorted(scored_pieces.items(), key=lambda kv: (-kv[1], kv[0]))
    pieces += [Piece(text, score, KIND_NORMAL) for text, score in ordered]
    return TokenizerModel(pieces, byte_fallback=byte_fallback)


# ---------------------------------------------------------------------------
# Encode / decode


def _transform(text: str):
    """Per-character form fed to the lattice: space becomes the marker, a
    literal marker is forced through byte fallback."""
    chars = []
    forced = []
    for ch in text:
        if ch == " ":
            chars.append(MARKER)
            forced.append(False)
        elif ch == MARKER:
            chars.append(ch)
            forced.append(True)
        else:
            chars.append(ch)
            forced.append(False)
    return chars, forced


def _byte_edge(model: TokenizerModel, ch: str, is_forced: bool):
    # unforced markers came from spaces: fall back on the space's own bytes,
    # so decode keeps the space/marker distinction
    raw = ch if (is_forced or ch != MARKER) else " "
    ids = tuple(model._byte_ids[b] for b in raw.encode("utf-8"))
    score = sum(model.pieces[i].score for i in ids)
    return ids, score


class _Cand:
    __slots__ = ("score", "count", "prev", "ids", "start")

    def __init__(self, score, count, prev, ids, start):
        self.score = score
        self.count = count
        self.prev = prev
        self.ids = ids
        self.start = start


def _bounds(cand) -> tuple:
    out = []
    node = cand
    while node is not None and node.prev is not None:
        out.append(node.start)
        node = node.prev
    return tuple(reversed(out))


def _better(a: _Cand, b: _Cand) -> bool:
    """True if a beats b: higher score, then fewer tokens, then
    leftmost-longest (lexicographically greater boundary sequence)."""
    if a.score != b.score:
        return a.score > b.score
    if a.count != b.count:
        return a.count < b.count
    return _bounds(a) > _bounds(b)


def _viterbi_chunk(model: TokenizerModel, chars: list[str], forced: list[bool]) -> list[int]:
    n = len(chars)
    best: list[_Cand | None] = [None] * (n + 1)
    best[0] = _Cand(0.0, 0, None, (), 0)
    text = "".join(chars)
    for end in range(1, n + 1):
        incoming = []
        lo = max(0, end - model._max_piece_len)
        for start in range(lo, end):
            if best[start] is None:
                continue
            if any(forced[start:end]):
                continue
            pid = model._text_to_id.get(text[start:end])
            if pid is not None:
                prev = best[start]
                incoming.append(_Cand(prev.score + model.pieces[pid].score,
                                      prev.count + 1, prev, (pid,), start))
        if model.byte_fallback and best[end - 1] is not None:
            prev = best[end - 1]
            ids, score = _byte_edge(model, chars[end - 1], forced[end - 1])
            incoming.append(_Cand(prev.score + score, prev.count + len(ids),
                                  prev, ids, end - 1))
        for cand in incoming:
            if best[end] is None or _better(cand, best[end]):
                best[end] = cand
    final = best[n]
    if final is None:
        raise TokenizerError(
            "text cannot be segmented (byte fallback disabled and characters "
            "missing from the vocabulary)"
        )
    ids: list[int] = []
    node = final
    while node is not None and node.prev is not None:
        ids[:0] = node.ids
        node = node.prev
    return ids


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Maximum-score segmentation (ties: fewer tokens, then leftmost-longest)."""
    chars, forced = _transform(text)
    if not chars:
        return []
    if not model._word_split_ok:
        return _viterbi_chunk(model, chars, forced)
    # no piece contains an interior marker, so Viterbi cannot cross a chunk
    # boundary and chunks are cacheable
    out: list[int] = []
    start = 0
    for pos in range(1, len(chars) + 1):
        if pos == len(chars) or (chars[pos] == MARKER and not forced[pos]):
            chunk = "".join(chars[start:pos])
            key = chunk if not any(forced[start:pos]) else None
            if key is not None and key in model._encode_cache:
                out.extend(model._encode_cache[key])
            else:
                ids = _viterbi_chunk(model, chars[start:pos], forced[start:pos])
                if key is not None:
                    model._encode_cache[key] = tuple(ids)
                out.extend(ids)
            start = pos
    return out


def decode(model: TokenizerModel, ids) -> str:
    out: list[str] = []
    byte_buf = bytearray()

    def flush():
        if byte_buf:
            out.append(byte_buf.decode("utf-8", errors="replace"))
            byte_buf.clear()

    for raw in ids:
        i = int(raw)
        if i < 0 or i >= len(model.pieces):
            raise TokenizerError(f"id {i} out of range [0, {len(model.pieces)})")
        piece = model.pieces[i]
        if piece.kind == KIND_BYTE:
            byte_buf.append(int(piece.text[3:-1], 16))
            continue
        flush()
        if piece.kind == KIND_NORMAL:
            out.append(piece.text.replace(MARKER, " "))
        # specials and unk decode to nothing
    flush()
    return "".join(out)


# ---------------------------------------------------------------------------
# Unigram training


def corpus_word_counts(texts) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        text = unicodedata.normalize("NFC", getattr(text, "text", text))
        for word in text.split():
            counts[MARKER + word.replace(MARKER, "")] += 1
    return counts


def _matches(word: str, pieces: dict, max_len: int):
    out = []
    n = len(word)
    for start in range(n):
        for end in range(start + 1, min(n, start + max_len) + 1):
            sub = word[start:end]
            score = pieces.get(sub)
            if score is not None:
                out.append((start, end, sub))
    return out


def _forward_backward(word: str, pieces: dict, match_list, expected: dict):
    n = len(word)
    alpha = [NEG_INF] * (n + 1)
    beta = [NEG_INF] * (n + 1)
    alpha[0] = 0.0
    beta[n] = 0.0
    by_end: list[list] = [[] for _ in range(n + 1)]
    by_start: list[list] = [[] for _ in range(n + 1)]
    for start, end, sub in match_list:
        by_end[end].append((start, sub))
        by_start[start].append((end, sub))
    for end in range(1, n + 1):
        acc = NEG_INF
        for start, sub in by_end[end]:
            if alpha[start] == NEG_INF:
                continue
            term = alpha[start] + pieces[sub]
            acc = term if acc == NEG_INF else (
                max(acc, term) + math.log1p(math.exp(-abs(acc - term)))
            )
        alpha[end] = acc
    for start in range(n - 1, -1, -1):
        acc = NEG_INF
        for end, sub in by_start[start]:
            if beta[end] == NEG_INF:
                continue
            term = beta[end] + pieces[sub]
            acc = term if acc == NEG_INF else (
                max(acc, term) + math.log1p(math.exp(-abs(acc - term)))
            )
        beta[start] = acc
    z = alpha[n]
    if z == NEG_INF:
        raise TokenizerError(f"unsegmentable training word {word!r}")
    if expected is not None:
        for start, end, sub in match_list:
            if alpha[start] == NEG_INF or beta[end] == NEG_INF:
                continue
            post = math.exp(alpha[start] + pieces[sub] + beta[end] - z)
            expected[sub] = expected.get(sub, 0.0) + post
    return z


def em_train(pieces: dict, word_counts: Counter, iters: int, max_len: int):
    """EM over unique words; returns (new piece scores, usage, ll_history).

    The history records the corpus marginal log-likelihood at the *start* of
    each iteration (under the scores that iteration's E-step uses), so it is
    non-decreasing by the EM guarantee.
    """
    pieces = dict(pieces)
    match_lists = {
        w: _matches(w, pieces, max_len) for w in word_counts
    }
    history = []
    usage: dict[str, float] = {}
    for _ in range(iters):
        expected: dict[str, float] = {}
        ll_terms = []
        for word, freq in word_counts.items():
            scoped = {}
            # refilter: the previous M-step may have dropped zero-count pieces
            live = [m for m in match_lists[word] if m[2] in pieces]
            z = _forward_backward(word, pieces, live, scoped)
            ll_terms.append(freq * z)
            for sub, cnt in scoped.items():
                expected[sub] = expected.get(sub, 0.0) + freq * cnt
        history.append(math.fsum(ll_terms))
        total = math.fsum(expected.values())
        new_scores = {}
        for text in pieces:
            cnt = expected.get(text, 0.0)
            if cnt > 0.0:
                new_scores[text] = math.log(cnt) - math.log(total)
            elif len(text) == 1:
                new_scores[text] = -1e9  # mandatory singles stay representable
        pieces = new_scores
        usage = expected
    return pieces, usage, history


def corpus_log_likelihood(pieces: dict, word_counts: Counter, max_len: int) -> float:
    terms = []
    for word, freq in word_counts.items():
        z = _forward_backward(word, pieces, _matches(word, pieces, max_len), None)
        terms.append(freq * z)
    return math.fsum(terms)


def _viterbi_score_excluding(word: str, pieces: dict, exclude: str, max_len: int) -> float:
    n = len(word)
    best = [NEG_INF] * (n + 1)
    best[0] = 0.0
    for end in range(1, n + 1):
        for start in range(max(0, end - max_len), end):
            if best[start] == NEG_INF:
                continue
            sub = word[start:end]
            if sub == word and sub == exclude:
                continue
            score = pieces.get(sub)
            if score is None:
                continue
            if best[start] + score > best[end]:
                best[end] = best[start] + score
    return best[n]


def seed_pieces(word_counts: Counter, seed_size: int, max_len: int) -> dict:
    """Initial inventory: every corpus character plus the most salient
    substrings (frequency * length), scored by normalized log-frequency."""
    substr_freq: Counter = Counter()
    char_freq: Counter = Counter()
    for word, freq in word_counts.items():
        n = len(word)
        for i in range(n):
            char_freq[word[i]] += freq
            for j in range(i + 2, min(n, i + max_len) + 1):
                substr_freq[word[i:j]] += freq
    chosen = dict(char_freq)
    budget = max(seed_size - len(chosen), 0)
    ranked = sorted(substr_freq.items(), key=lambda kv: (-kv[1] * len(kv[0]), kv[0]))
    for text, freq in ranked[:budget]:
        chosen[text] = freq
    total = math.fsum(chosen.values())
    return {t: math.log(f) - math.log(total) for t, f in chosen.items()}


def train_unigram(
    texts,
    target_vocab: int = 8096,
    seed_factor: int = 4,
    prune_keep: float = 0.75,
    em_iters: int = 2,
    max_piece_len: int = 16,
) -> TokenizerModel:
    """Train a unigram piece inventory of at most ``target_vocab`` normal
    pieces: seed from frequent substrings at seed_factor x target, alternate
    EM with likelihood-loss pruning, finish with a final EM pass.

    The returned model carries ``train_history`` (per-round LL sequences,
    each non-decreasing) and ``final_ll``.
    """
    word_counts = corpus_word_counts(texts)
    if not word_counts:
        raise TokenizerError("empty corpus: no words to train on")
    mandatory = set()
    for word in word_counts:
        mandatory.update(word)
    if target_vocab < len(mandatory):
        raise TokenizerError(
            f"target_vocab {target_vocab} is below the mandatory character "
            f"count {len(mandatory)} (deficit {len(mandatory) - target_vocab})"
        )

    pieces = seed_pieces(word_counts, seed_factor * target_vocab, max_piece_len)
    history: list[list[float]] = []
    while True:
        pieces, usage, ll = em_train(pieces, word_counts, em_iters, max_piece_len)
        history.append(ll)
        n_normal = len(pieces)
        if n_normal <= target_vocab:
            break
        multi = [t for t in pieces if len(t) > 1]
        if not multi:
            break  # only mandatory singles left; nothing prunable
        keep_n = max(target_vocab - (n_normal - len(multi)), int(len(multi) * prune_keep))
        keep_n = max(min(keep_n, len(multi) - 1), 0)  # guarantee progress
        losses = {}
        for text in multi:
            alt = _viterbi_score_excluding(text, pieces, text, max_piece_len)
            gain = pieces[text] - alt if alt != NEG_INF else math.inf
            losses[text] = usage.get(text, 0.0) * gain
        ranked = sorted(multi, key=lambda t: (-losses[t], t))
        kept_multi = set(ranked[:keep_n])
        pieces = {t: s for t, s in pieces.items() if len(t) == 1 or t in kept_multi}

    pieces, _, ll = em_train(pieces, word_counts, em_iters, max_piece_len)
    history.append(ll)
    model = assemble_model(pieces)
    model.train_history = history
    model.final_ll = corpus_log_likelihood(pieces, word_counts, max_piece_len)
    return model


# ---------------------------------------------------------------------------
# Piece frequency, filtering, merging


def piece_frequencies(model: TokenizerModel, texts) -> dict[str, int]:
    """Occurrence counts of each piece when encoding the corpus with
    ``model`` (byte/special pieces counted too, keyed by piece text)."""
    counts: Counter = Counter()
    for text in texts:
        text = getattr(text, "text", text)
        for pid in encode(model, text):
            counts[model.pieces[pid].text] += 1
    return dict(counts)


def write_frequency_table(freqs: dict, path) -> None:
    rows = sorted(freqs.items(), key=lambda kv: (-kv[1], kv[0]))
    with open(path, "w", encoding="utf-8") as fh:
        for text, count in rows:
            fh.write(f"{text}\t{count}\n")


def read_frequency_table(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TokenizerError(f"frequency table line {lineno}: expected piece<TAB>count")
            out[parts[0]] = int(parts[1])
    return out


_VIETNAMESE_EXTRA = (
    "àáảãạăằắẳẵặâầấẩẫậđèéẻẽẹêềếểễệìíỉĩịòóỏõọôồốổỗộơờớởỡợ"
    "ùúủũụưừứửữựỳýỷỹỵ"
)


@dataclass
class CharPolicy:
    """Decidable predicate over code points plus a piece-length cap."""

    allowed_chars: frozenset
    max_piece_len: int = 16

    @classmethod
    def vietnamese_default(cls, max_piece_len: int = 16) -> "CharPolicy":
        chars = set(MARKER)
        chars.update(chr(c) for c in range(ord("a"), ord("z") + 1))
        chars.update(chr(c) for c in range(ord("A"), ord("Z") + 1))
        chars.update(chr(c) for c in range(ord("0"), ord("9") + 1))
        chars.update(".,:;!?-'\"()/%")
        chars.update(_VIETNAMESE_EXTRA)
        chars.update(_VIETNAMESE_EXTRA.upper())
        return cls(allowed_chars=frozenset(chars), max_piece_len=max_piece_len)

    def allows_char(self, ch: str) -> bool:
        return ch in self.allowed_chars

    def allows_piece(self, text: str) -> bool:
        if len(text) > self.max_piece_len:
            return False
        return all(self.allows_char(c) for c in text)


def filter_pieces(model: TokenizerModel, policy: CharPolicy, freq: dict, cap: int | None = None) -> TokenizerModel:
    """Drop normal pieces with disallowed characters or excess length; under
    a cap, keep the highest-frequency survivors. Allowed single-character
    pieces are never removed."""
    singles = []
    survivors = []
    for piece in model.normal_pieces():
        if len(piece.text) == 1:
            if policy.allows_piece(piece.text):
                singles.append(piece)
            continue
        if policy.allows_piece(piece.text):
            survivors.append(piece)
    if cap is not None:
        budget = max(cap - len(singles), 0)
        survivors.sort(key=lambda p: (-freq.get(p.text, 0), -p.score, p.text))
        survivors = survivors[:budget]
    kept = {p.text: p.score for p in singles + survivors}
    out = assemble_model(kept, byte_fallback=model.byte_fallback)
    return out


def merge_vocab(base: TokenizerModel, addon: TokenizerModel) -> TokenizerModel:
    """Append addon pieces absent from base, in descending score order,
    starting at id len(base). Base ids and scores never change."""
    if not base.byte_fallback:
        raise TokenizerError("base tokenizer must have byte fallback")
    base_texts = {p.text for p in base.pieces}
    novel = [p for p in addon.normal_pieces() if p.text not in base_texts]
    novel.sort(key=lambda p: (-p.score, p.text))
    pieces = list(base.pieces) + [Piece(p.text, p.score, KIND_NORMAL) for p in novel]
    return TokenizerModel(pieces, byte_fallback=base.byte_fallback, base_size=len(base.pieces))


# ---------------------------------------------------------------------------
# Serialization


def save_tokenizer(model: TokenizerModel, path) -> None:
    doc = {
        "version": 1,
        "byte_fallback": model.byte_fallback,
        "specials": model.specials,
        "base_size": model.base_size,
        "pieces": [
            {"text": p.text, "score": p.score, "kind": p.kind} for p in model.pieces
        ],
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_tokenizer(path) -> TokenizerModel:
    path = Path(path)
    if not path.exists():
        raise TokenizerError(f"tokenizer file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise TokenizerError(f"unsupported tokenizer version {doc.get('version')!r}")
    pieces = [Piece(p["text"], float(p["score"]), p.get("kind", KIND_NORMAL)) for p in doc["pieces"]]
    return TokenizerModel(
        pieces,
        byte_fallback=bool(doc.get("byte_fallback", True)),
        base_size=int(doc.get("base_size", len(pieces))),
    )
