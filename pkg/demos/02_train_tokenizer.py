"""Train a unigram subword tokenizer on the Vietnamese fixture docs, watch
the EM log-likelihood climb, and inspect how it segments text.
"""

from pathlib import Path

from langxpand.corpus_pipeline import load_corpus
from langxpand.tokenizer import decode, encode, train_unigram

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

docs = load_corpus(FIXTURES / "bilingual_corpus.jsonl")
vi_texts = [d.text for d in docs if d.source == "vi" and not d.id.startswith("junk")][:600]

model = train_unigram(vi_texts, target_vocab=1024, seed_factor=3, max_piece_len=10)
print(f"trained {len(model.normal_pieces())} normal pieces "
      f"(+256 byte pieces, +3 specials)")

print("\nEM log-likelihood per round (each round is non-decreasing):")
for i, round_ll in enumerate(model.train_history):
    arrow = " -> ".join(f"{ll:.1f}" for ll in round_ll)
    print(f"  round {i}: {arrow}")
print(f"final corpus log-likelihood: {model.final_ll:.1f}")

print("\nhighest-scoring multi-character pieces:")
multi = [p for p in model.normal_pieces() if len(p.text) > 2]
for piece in sorted(multi, key=lambda p: -p.score)[:12]:
    print(f"  {piece.text!r:16} score {piece.score:.3f}")

sample = vi_texts[0][:120]
ids = encode(model, sample)
pieces = [model.pieces[i].text for i in ids]
print(f"\nsegmentation of {sample!r}:")
print("  " + " | ".join(pieces))
assert decode(model, ids) == sample
print("decode(encode(text)) == text holds (byte fallback keeps it total)")
