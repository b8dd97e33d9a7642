"""Walk the four corpus-refinement stages on the bundled bilingual fixture:
random selection, near-duplicate removal, toxicity filtering, and
perplexity filtering, printing what each stage removes and why.
"""

from pathlib import Path

from langxpand.corpus_pipeline import (
    DedupConfig,
    corpus_stats,
    dedup_ngram,
    filter_perplexity,
    filter_toxic,
    load_corpus,
    sample_corpus,
    train_toxicity,
)
from langxpand.ngram_lm import train_ngram

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

docs = load_corpus(FIXTURES / "bilingual_corpus.jsonl")
print(f"loaded {len(docs)} documents "
      f"({corpus_stats(docs).total_bytes / 1e6:.2f} MB of text)")

# 1. random selection: keep 90% (document-level, seeded)
sampled = sample_corpus(docs, 0.9, seed=1234)
print(f"\n[selection]  kept {len(sampled)} of {len(docs)}")

# 2. MinHash-LSH dedup over word trigram shingles
kept, removals = dedup_ngram(sampled, DedupConfig())
reasons = {}
for entry in removals:
    reasons[entry["reason"]] = reasons.get(entry["reason"], 0) + 1
print(f"[dedup]      kept {len(kept)}, removed {len(removals)} {reasons}")
example = next(e for e in removals if e["reason"] == "near_duplicate")
print(f"             e.g. {example['removed']} ~ {example['kept']} "
      f"(estimated jaccard {example['score']:.3f})")

# 3. toxicity filter: hashed char-n-gram logistic scorer
tox = train_toxicity(FIXTURES / "toxicity_train.tsv", hash_dim=4096, seed=1234)
print(f"[toxicity]   classifier train accuracy {tox.train_accuracy:.3f}")
kept, removals = filter_toxic(kept, tox, threshold=0.5)
print(f"             kept {len(kept)}, removed {len(removals)}")

# 4. perplexity filter: trigram LM trained on a clean reference corpus
lm = train_ngram(load_corpus(FIXTURES / "lm_reference.jsonl"), order=3)
kept, removals = filter_perplexity(kept, lm, max_ppl=8000.0)
print(f"[perplexity] kept {len(kept)}, removed {len(removals)}")
if removals:
    worst = max(removals, key=lambda e: e["score"])
    print(f"             least predictable: {worst['removed']} (ppl {worst['score']:.0f})")

stats = corpus_stats(kept)
print(f"\nrefined corpus: {stats.to_json()}")
