"""Merge a Vietnamese addon vocabulary onto an English base tokenizer and
measure the input-complexity / embedding-complexity tradeoff as the addon
grows, alongside the published 24-point reference curve.
"""

from pathlib import Path

from langxpand.corpus_pipeline import load_corpus
from langxpand.tokenizer import encode, load_tokenizer, merge_vocab, train_unigram
from langxpand.vocab_analysis import (
    emit_curve_report,
    load_reference_curve,
    relative_input_complexity,
    vocabulary_overlap,
)

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
OUT = Path(__file__).resolve().parent / "out" / "vocab_analysis"

base = load_tokenizer(FIXTURES / "base_tokenizer.json")
docs = load_corpus(FIXTURES / "bilingual_corpus.jsonl")
vi_docs = [d for d in docs if d.source == "vi" and not d.id.startswith("junk")][:800]

addon = train_unigram(vi_docs, target_vocab=2048, seed_factor=3, max_piece_len=10)
merged = merge_vocab(base, addon)
print(f"base {len(base.pieces)} pieces + addon {len(addon.normal_pieces())} normals "
      f"-> merged {len(merged.pieces)} (appended ids start at {merged.base_size})")
print(f"overlap: {vocabulary_overlap(base, addon)}")

text = vi_docs[0].text[:80]
print(f"\nsample: {text!r}")
print(f"  base tokenizer:   {len(encode(base, text))} tokens (byte fallback on diacritics)")
print(f"  merged tokenizer: {len(encode(merged, text))} tokens")

curve = relative_input_complexity(base, addon, [256, 512, 1024, 2048], vi_docs)
print("\nvocab_add  relative-input  relative-embedding")
for p in curve.points:
    print(f"{p.vocab_add:>9}  {p.ric:>14.4f}  {p.rec:>18.4f}")

paths = emit_curve_report(curve, OUT, reference=load_reference_curve(),
                          overlap_models=(base, addon))
print(f"\nreports written: {paths}")
