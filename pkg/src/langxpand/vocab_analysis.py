"""Vocabulary-size tradeoff analysis: how appending top-scoring addon
pieces changes corpus token counts (relative input complexity) versus
embedding/LM-head row growth (relative embedding complexity).

A published 24-point reference curve ships with the package for
side-by-side plotting; it is context, not an acceptance target.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .tokenizer import TokenizerModel, assemble_model, encode, merge_vocab


class AnalysisError(Exception):
    pass


@dataclass
class ComplexityPoint:
    vocab_add: int  # appended piece count
    ric: float  # merged-corpus tokens / base-corpus tokens
    rec: float  # (n0 + V) / n0


@dataclass
class ComplexityCurve:
    points: list
    baseline: dict = field(default_factory=dict)

    def validate(self) -> None:
        adds = [p.vocab_add for p in self.points]
        if adds != sorted(adds) or len(set(adds)) != len(adds):
            raise AnalysisError("points must be strictly increasing in vocab_add")
        for p in self.points:
            if p.ric <= 0 or p.rec < 1.0:
                raise AnalysisError(f"invalid point {p}")


def relative_embedding_complexity(n0: int, v: int) -> float:
    """Multiplicative growth of embedding + head parameter count: both scale
    linearly in vocabulary rows at fixed hidden size, so (n0 + V) / n0."""
    if n0 <= 0:
        raise AnalysisError("base vocab n0 must be > 0")
    if v < 0:
        raise AnalysisError("appended count V must be >= 0")
    return (n0 + v) / n0


def top_addon_subset(addon: TokenizerModel, size: int) -> TokenizerModel:
    """Addon restricted to its ``size`` best-scoring normal pieces."""
    normals = sorted(addon.normal_pieces(), key=lambda p: (-p.score, p.text))
    if size > len(normals):
        raise AnalysisError(
            f"requested top {size} pieces but addon has {len(normals)}"
        )
    return assemble_model({p.text: p.score for p in normals[:size]},
                          byte_fallback=addon.byte_fallback)


def count_corpus_tokens(model: TokenizerModel, docs) -> int:
    total = 0
    for doc in docs:
        total += len(encode(model, getattr(doc, "text", doc)))
    return total


def relative_input_complexity(base: TokenizerModel, addon: TokenizerModel, sizes, docs) -> ComplexityCurve:
    """Token-count ratio curve over nested top-V addon prefixes (V=0 included)."""
    docs = list(docs)
    if not docs:
        raise AnalysisError("empty corpus")
    base_tokens = count_corpus_tokens(base, docs)
    if base_tokens == 0:
        raise AnalysisError("base tokenizer produced zero tokens")
    n0 = len(base.pieces)
    points = [ComplexityPoint(vocab_add=0, ric=1.0, rec=1.0)]
    for size in sorted(set(int(s) for s in sizes)):
        if size == 0:
            continue
        merged = merge_vocab(base, top_addon_subset(addon, size))
        appended = len(merged.pieces) - n0
        if appended == 0:
            continue  # fully duplicated prefix adds no point
        tokens = count_corpus_tokens(merged, docs)
        points.append(ComplexityPoint(
            vocab_add=appended,
            ric=tokens / base_tokens,
            rec=relative_embedding_complexity(n0, appended),
        ))
    curve = ComplexityCurve(points=points, baseline={
        "base_vocab": n0,
        "corpus_docs": len(docs),
        "base_tokens": base_tokens,
    })
    curve.validate()
    return curve


def vocabulary_overlap(base: TokenizerModel, addon: TokenizerModel) -> dict:
    """Shared/novel normal-piece counts between two models."""
    base_texts = {p.text for p in base.normal_pieces()}
    addon_texts = {p.text for p in addon.normal_pieces()}
    return {
        "shared": len(base_texts & addon_texts),
        "base_only": len(base_texts - addon_texts),
        "addon_only": len(addon_texts - base_texts),
    }


# ---------------------------------------------------------------------------
# Reference curve


def load_reference_curve(path=None) -> list[ComplexityPoint]:
    """Published 24-point complexity table; rows become reference points.

    Any CSV with header vocab_add,paper_ric,paper_rec (or vocab_add,ric,rec)
    is accepted; non-numeric cells fail with the row number.
    """
    if path is None:
        text = resources.files("langxpand.data").joinpath("complexity_reference.csv").read_text("utf-8")
    else:
        path = Path(path)
        if not path.exists():
            raise AnalysisError(f"reference CSV not found: {path}")
        text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(text.strip().splitlines()))
    if not rows or len(rows[0]) < 3:
        raise AnalysisError("reference CSV needs header vocab_add,<ric>,<rec>")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        try:
            out.append(ComplexityPoint(vocab_add=int(row[0]), ric=float(row[1]), rec=float(row[2])))
        except (ValueError, IndexError) as exc:
            raise AnalysisError(f"reference CSV row {i}: non-numeric cell ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# Reports


def _curve_rows(curve: ComplexityCurve, reference):
    computed = {p.vocab_add: p for p in curve.points}
    ref = {p.vocab_add: p for p in (reference or [])}
    rows = []
    for v in sorted(set(computed) | set(ref)):
        c, r = computed.get(v), ref.get(v)
        rows.append([
            v,
            f"{c.ric:.9f}" if c else "",
            f"{c.rec:.9f}" if c else "",
            f"{r.ric:.9f}" if r else "",
            f"{r.rec:.9f}" if r else "",
        ])
    return rows


def write_curve_csv(curve: ComplexityCurve, path, reference=None) -> None:
    with_ref = reference is not None
    header = ["vocab_add", "ric", "rec"] + (["paper_ric", "paper_rec"] if with_ref else [])
    lines = [",".join(header)]
    for row in _curve_rows(curve, reference):
        lines.append(",".join(str(c) for c in (row if with_ref else row[:3])))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_SVG_COLORS = {"ric": "#1f77b4", "rec": "#d62728", "paper_ric": "#17becf", "paper_rec": "#ff7f0e"}


def write_curve_svg(curve: ComplexityCurve, path, reference=None) -> None:
    """Deterministic hand-rolled line plot (no plotting dependency)."""
    series = {
        "ric": [(p.vocab_add, p.ric) for p in curve.points],
        "rec": [(p.vocab_add, p.rec) for p in curve.points],
    }
    if reference:
        series["paper_ric"] = [(p.vocab_add, p.ric) for p in reference]
        series["paper_rec"] = [(p.vocab_add, p.rec) for p in reference]
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    width, height, pad = 860, 520, 60

    def sx(x):
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / y_span * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 16}" font-size="14" text-anchor="middle">appended vocabulary size</text>',
        f'<text x="18" y="{height // 2}" font-size="14" transform="rotate(-90 18 {height // 2})" text-anchor="middle">relative complexity</text>',
    ]
    for label, (lo, hi) in (("x", (x_lo, x_hi)), ("y", (y_lo, y_hi))):
        for frac in (0.0, 0.5, 1.0):
            val = lo + frac * (hi - lo)
            if label == "x":
                parts.append(
                    f'<text x="{sx(val):.1f}" y="{height - pad + 18}" font-size="11" '
                    f'text-anchor="middle">{val:.0f}</text>'
                )
            else:
                parts.append(
                    f'<text x="{pad - 6}" y="{sy(val):.1f}" font-size="11" '
                    f'text-anchor="end">{val:.3f}</text>'
                )
    legend_y = pad
    for name, pts in series.items():
        color = _SVG_COLORS[name]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<rect x="{width - pad - 140}" y="{legend_y}" width="12" height="12" fill="{color}"/>')
        parts.append(
            f'<text x="{width - pad - 122}" y="{legend_y + 11}" font-size="12">{name}</text>'
        )
        legend_y += 18
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def emit_curve_report(curve: ComplexityCurve, out_dir, reference=None, overlap_models=None) -> dict:
    """Write curve.csv, curve.svg, and (given (base, addon)) overlap.json."""
    if not curve.points:
        raise AnalysisError("empty curve")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    csv_path = out_dir / "curve.csv"
    write_curve_csv(curve, csv_path, reference=reference)
    paths["csv"] = str(csv_path)
    svg_path = out_dir / "curve.svg"
    write_curve_svg(curve, svg_path, reference=reference)
    paths["svg"] = str(svg_path)
    if overlap_models is not None:
        base, addon = overlap_models
        overlap = vocabulary_overlap(base, addon)
        overlap_path = out_dir / "overlap.json"
        overlap_path.write_text(json.dumps(overlap, sort_keys=True) + "\n", encoding="utf-8")
        paths["overlap"] = str(overlap_path)
    return paths
