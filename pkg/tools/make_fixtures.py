"""Regenerate the bundled fixtures deterministically.

Usage: python tools/make_fixtures.py [--out fixtures]

Produces a ~1 MB bilingual corpus (Vietnamese-style and English docs with
injected exact/near duplicates, rigged-toxic docs, and high-perplexity
gibberish), a labeled toxicity TSV, CLM eval docs, MCQ items, a small base
tokenizer trained on English text, and the project config that drives
`langxpand pipeline run`.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from langxpand.corpus_pipeline import Document, write_corpus  # noqa: E402
from langxpand.tokenizer import save_tokenizer, train_unigram  # noqa: E402

TONES = {
    "a": "aáàảãạ", "ă": "ăắằẳẵặ", "â": "âấầẩẫậ", "e": "eéèẻẽẹ", "ê": "êếềểễệ",
    "i": "iíìỉĩị", "o": "oóòỏõọ", "ô": "ôốồổỗộ", "ơ": "ơớờởỡợ", "u": "uúùủũụ",
    "ư": "ưứừửữự", "y": "yýỳỷỹỵ",
}
ONSETS = ["", "b", "c", "ch", "d", "đ", "g", "h", "k", "kh", "l", "m", "n",
          "ng", "nh", "ph", "qu", "r", "s", "t", "th", "tr", "v", "x", "gi"]
NUCLEI = ["a", "ă", "â", "e", "ê", "i", "o", "ô", "ơ", "u", "ư", "y",
          "ai", "ao", "au", "ây", "eo", "êu", "ia", "iê", "oa", "oi", "ôi",
          "ơi", "ua", "uô", "ui", "ưa", "ươ", "uy"]
CODAS = ["", "c", "ch", "m", "n", "ng", "nh", "p", "t", "u", "i", "o"]

ENGLISH_WORDS = (
    "the of and to in is was for on that with as his they at be this from "
    "have or by one had not but what all were when we there can an your "
    "which their said if do will each about how up out them then she many "
    "some so these would other into has more her two like him see time "
    "could no make than first been its who now people my made over did "
    "down only way find use may water long little very after words called "
    "just where most know get through back much before go good new write "
    "our used me man too any day same right look think also around another "
    "came come work three word must because does part even place well such "
    "here take why things help put years different away again off went old "
    "number great tell men say small every found still between name should "
    "home big give air line set own under read last never us left end along "
    "while might next sound below saw something thought both few those "
    "always looked show large often together asked house world going school "
    "important until form food keep children feet land side without boy "
    "once animal life enough took four head above kind began almost live "
    "page got earth need far hand high year mother light country father "
    "let night picture being study second book carry science eat room "
    "friend began idea fish mountain stop once base hear horse cut sure "
    "watch color face wood main open seem"
).split()

# rare letter adjacencies: no character n-gram collisions with the English
# or Vietnamese generators
TOXIC_WORDS = ["zqzap", "zqgrime", "zqvile", "zqsludge", "zqblight",
               "zqvenom", "zqrot", "zqfilth"]


def build_syllables(rng, count=3200):
    combos = []
    for onset in ONSETS:
        for nuc in NUCLEI:
            for coda in CODAS:
                combos.append((onset, nuc, coda))
    order = rng.permutation(len(combos))
    syllables = []
    seen = set()
    for idx in order:
        onset, nuc, coda = combos[idx]
        tone = int(rng.integers(0, 6))
        first = nuc[0]
        toned = TONES[first][tone] + nuc[1:]
        syl = onset + toned + coda
        if syl and syl not in seen:
            seen.add(syl)
            syllables.append(syl)
        if len(syllables) >= count:
            break
    return syllables


def zipf_sampler(rng, items):
    ranks = np.arange(1, len(items) + 1, dtype=np.float64)
    probs = 1.0 / (ranks + 4.0)
    probs /= probs.sum()

    def draw(n):
        picks = rng.choice(len(items), size=n, p=probs)
        return [items[i] for i in picks]

    return draw


def make_sentences(rng, draw, n, lo=6, hi=14):
    out = []
    for _ in range(n):
        words = draw(int(rng.integers(lo, hi + 1)))
        sent = " ".join(words)
        out.append(sent[0].upper() + sent[1:] + ".")
    return out


def make_doc_text(rng, draw, min_sents=4, max_sents=12):
    return " ".join(make_sentences(rng, draw, int(rng.integers(min_sents, max_sents + 1))))


def build_corpus(rng, syllables, out_path):
    draw_vi = zipf_sampler(rng, syllables)
    draw_en = zipf_sampler(rng, ENGLISH_WORDS)
    docs = []
    for i in range(1500):
        docs.append(Document(id=f"vi-{i:05d}", text=make_doc_text(rng, draw_vi), source="vi"))
    for i in range(650):
        docs.append(Document(id=f"en-{i:05d}", text=make_doc_text(rng, draw_en), source="en"))
    # gibberish: long unique pseudo-words the n-gram LM cannot predict
    for i in range(60):
        junk = " ".join(
            "".join(chr(rng.integers(ord("a"), ord("z") + 1)) for _ in range(int(rng.integers(7, 15))))
            for _ in range(40)
        )
        docs.append(Document(id=f"junk-{i:04d}", text=junk, source="vi"))
    # rigged-toxic docs: toxic lexicon mixed into normal sentences
    for i in range(50):
        base = make_sentences(rng, draw_vi, 3)
        spiked = []
        for sent in base:
            words = sent.split()
            pos = int(rng.integers(0, len(words)))
            words.insert(pos, TOXIC_WORDS[int(rng.integers(0, len(TOXIC_WORDS)))])
            spiked.append(" ".join(words))
        docs.append(Document(id=f"tox-{i:04d}", text=" ".join(spiked), source="vi"))

    order = rng.permutation(len(docs))
    docs = [docs[i] for i in order]

    # inject exact duplicates (4%) and near duplicates (2%)
    n = len(docs)
    dupes = []
    for j, idx in enumerate(rng.choice(n, size=n // 25, replace=False)):
        dupes.append(Document(id=f"dupx-{j:04d}", text=docs[idx].text, source=docs[idx].source))
    for j, idx in enumerate(rng.choice(n, size=n // 50, replace=False)):
        extra = make_sentences(rng, draw_vi, 1)[0]
        dupes.append(Document(id=f"dupn-{j:04d}", text=docs[idx].text + " " + extra,
                              source=docs[idx].source))
    insert_at = rng.integers(0, len(docs), size=len(dupes))
    for doc, pos in sorted(zip(dupes, insert_at), key=lambda t: -int(t[1])):
        docs.insert(int(pos), doc)
    write_corpus(docs, out_path)
    return docs


def build_toxicity_tsv(rng, syllables, path, n_each=300):
    # clean class must cover both languages or the scorer flags whichever
    # language it has never seen
    draw_vi = zipf_sampler(rng, syllables)
    draw_en = zipf_sampler(rng, ENGLISH_WORDS)
    rows = []
    for i in range(n_each):
        clean_draw = draw_vi if i % 3 else draw_en
        sent = make_sentences(rng, clean_draw, 1)[0]
        words = sent.split()
        for _ in range(int(rng.integers(1, 3))):
            pos = int(rng.integers(0, len(words)))
            words.insert(pos, TOXIC_WORDS[int(rng.integers(0, len(TOXIC_WORDS)))])
        rows.append((1, " ".join(words)))
        rows.append((0, make_sentences(rng, clean_draw, 1)[0]))
    with open(path, "w", encoding="utf-8") as fh:
        for label, text in rows:
            fh.write(f"{label}\t{text}\n")


def build_mcq(rng, syllables, path):
    draw_vi = zipf_sampler(rng, syllables)
    subjects = [
        "stem_elementary_mathematics", "stem_computer_architecture",
        "social_science_sociology", "social_science_microeconomics",
        "humanity_logic", "humanity_economic_law",
        "other_driving_license_certificate", "other_clinical_pharmacology",
    ]
    items = []
    for i in range(40):
        question = make_sentences(rng, draw_vi, 1)[0][:-1] + "?"
        choices = [{"label": lab, "text": " ".join(draw_vi(3))} for lab in "ABCD"]
        items.append({
            "id": f"vmlu-fx-{i:04d}",
            "category": subjects[i % len(subjects)],
            "question": question,
            "choices": choices,
            "answer": "ABCD"[int(rng.integers(0, 4))],
        })
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False) + "\n")


def build_eval_docs(rng, syllables, path, n=40):
    draw_vi = zipf_sampler(rng, syllables)
    docs = [Document(id=f"eval-{i:04d}", text=make_doc_text(rng, draw_vi, 3, 8), source="vi")
            for i in range(n)]
    write_corpus(docs, path)


def build_lm_reference(rng, syllables, path):
    # disjoint clean corpus for the perplexity-filter LM: an LM trained on
    # the corpus being filtered memorizes singleton junk n-grams instead of
    # flagging them
    draw_vi = zipf_sampler(rng, syllables)
    draw_en = zipf_sampler(rng, ENGLISH_WORDS)
    docs = [Document(id=f"ref-vi-{i:04d}", text=make_doc_text(rng, draw_vi), source="vi")
            for i in range(400)]
    docs += [Document(id=f"ref-en-{i:04d}", text=make_doc_text(rng, draw_en), source="en")
             for i in range(150)]
    write_corpus(docs, path)


def build_base_tokenizer(rng, path, target=512):
    draw_en = zipf_sampler(rng, ENGLISH_WORDS)
    texts = [make_doc_text(rng, draw_en) for _ in range(400)]
    model = train_unigram(texts, target_vocab=target, seed_factor=3, max_piece_len=12)
    save_tokenizer(model, path)
    return model


def project_config():
    return {
        "seed": 1234,
        "paths": {
            "corpus": "bilingual_corpus.jsonl",
            "toxicity_train": "toxicity_train.tsv",
            "lm_reference": "lm_reference.jsonl",
            "base_tokenizer": "base_tokenizer.json",
            "eval_docs": "eval_docs.jsonl",
            "mcq_items": "mcq_items.jsonl",
        },
        "sample": {"keep": 0.9},
        "dedup": {"ngram_n": 3, "num_hashes": 128, "bands": 16, "jaccard_threshold": 0.8},
        "toxicity": {"threshold": 0.5, "hash_dim": 4096, "ngram_range": [2, 4]},
        "perplexity": {"order": 3, "discount": 0.75, "max_ppl": 8000.0},
        "tokenizer": {
            "source": "vi",
            "target_vocab": 2048,
            "seed_factor": 3,
            "prune_keep": 0.75,
            "em_iters": 2,
            "max_piece_len": 12,
            "filter": {"policy": "vietnamese_default", "max_piece_len": 12, "cap": None},
        },
        "vocab": {"sizes": [256, 512, 1024, 2000], "reference": "bundled"},
        "ckpt": {
            "hidden": 32, "layers": 1, "heads": 4, "kv_heads": 2, "window": 16,
            "mlp_hidden": 64, "rope_theta": 10000.0, "norm_eps": 1e-5,
            "init_seed": 1, "init_std": 0.02, "jitter": 0.0,
        },
        "train": {
            "peak_lr": 0.003, "warmup_steps": 10, "total_steps": 60,
            "min_lr_ratio": 0.1, "betas": [0.9, 0.95], "eps": 1e-8,
            "weight_decay": 0.1, "batch_size": 4, "seq_len": 64,
            "grad_clip": 1.0, "snapshot_every": 30,
        },
        "eval": {
            "clm": {"seq_len": 64, "max_docs": 25},
            "mcq": {"template": "{question}\n{choices}\nĐáp án:"},
        },
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures")
    parser.add_argument("--seed", type=int, default=20240301)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(args.seed))

    syllables = build_syllables(rng)
    docs = build_corpus(rng, syllables, out / "bilingual_corpus.jsonl")
    build_toxicity_tsv(rng, syllables, out / "toxicity_train.tsv")
    build_mcq(rng, syllables, out / "mcq_items.jsonl")
    build_eval_docs(rng, syllables, out / "eval_docs.jsonl")
    build_lm_reference(rng, syllables, out / "lm_reference.jsonl")
    build_base_tokenizer(rng, out / "base_tokenizer.json")
    write_corpus(docs[:10], out / "mini.jsonl")
    (out / "project.json").write_text(
        json.dumps(project_config(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    size = (out / "bilingual_corpus.jsonl").stat().st_size
    print(f"corpus: {len(docs)} docs, {size / 1e6:.2f} MB")


if __name__ == "__main__":
    main()
