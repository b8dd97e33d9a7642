"""Evaluation harnesses: next-token loss/accuracy over a document set, and
multiple-choice scoring with per-subject and per-supercategory rollups.

MCQ scoring renders a prompt per item, computes the length-normalized
log-likelihood of each rendered label continuation, and predicts the
argmax (ties go to the lexicographically smallest label). Absolute scores
from published 7B model comparisons are not targets here; only schemas,
metric definitions, and fixture-level correctness are.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tiny_transformer
from .tokenizer import encode

SUPERCATEGORIES = ("stem", "social_science", "humanity", "other")

DEFAULT_MCQ_TEMPLATE = "{question}\n{choices}\nĐáp án:"


class EvalError(Exception):
    pass


# ---------------------------------------------------------------------------
# Causal-LM evaluation


@dataclass
class ClmEvalConfig:
    seq_len: int = 128
    max_docs: int = 10000
    seed: int = 0

    def validate(self) -> None:
        if self.seq_len < 2:
            raise EvalError("seq_len must be >= 2")
        if self.max_docs < 1:
            raise EvalError("max_docs must be >= 1")


@dataclass
class ClmReport:
    model_id: str
    length: int
    tokens: int
    loss: float
    accuracy: float
    skipped_docs: list = field(default_factory=list)
    per_doc_nll: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "Model": self.model_id,
            "Length": self.length,
            "Tokens": self.tokens,
            "Loss": round(self.loss, 6),
            "Accuracy": round(self.accuracy, 6),
        }

    def format_table(self) -> str:
        head = f"{'Model':<24} {'Length':>8} {'Tokens':>10} {'Loss':>10} {'Accuracy':>10}"
        row = (
            f"{self.model_id:<24} {self.length:>8} {self.tokens:>10} "
            f"{self.loss:>10.4f} {self.accuracy:>10.4f}"
        )
        return head + "\n" + row


def eval_clm(ckpt, docs, tokenizer, cfg: ClmEvalConfig, model_id: str = "model") -> ClmReport:
    """Token-weighted next-token loss/accuracy over seq_len windows.

    Documents are shuffled with the config seed and the first max_docs are
    scored; docs tokenizing to fewer than 2 ids are skipped and recorded.
    """
    cfg.validate()
    docs = list(docs)
    if not docs:
        raise EvalError("no documents to evaluate")
    order = np.random.Generator(np.random.PCG64(cfg.seed)).permutation(len(docs))
    selected = [docs[i] for i in order[: cfg.max_docs]]

    nll_sum = 0.0
    correct = 0
    positions = 0
    skipped = []
    per_doc = {}
    for doc in selected:
        ids = encode(tokenizer, doc.text)
        if len(ids) < 2:
            skipped.append(doc.id)
            continue
        doc_nll = 0.0
        doc_pos = 0
        for lo in range(0, len(ids), cfg.seq_len):
            window = np.asarray(ids[lo : lo + cfg.seq_len])
            if window.size < 2:
                break  # a length-1 remainder has no next-token pair
            logits = tiny_transformer.forward(ckpt, window, return_cache=False)
            s, c, n = tiny_transformer.next_token_stats(logits, window)
            nll_sum += s
            correct += c
            positions += n
            doc_nll += s
            doc_pos += n
        per_doc[doc.id] = doc_nll / doc_pos if doc_pos else None
    if positions == 0:
        raise EvalError("every document was skipped (all tokenize below 2 tokens)")
    return ClmReport(
        model_id=model_id,
        length=cfg.seq_len,
        tokens=positions,
        loss=nll_sum / positions,
        accuracy=correct / positions,
        skipped_docs=skipped,
        per_doc_nll=per_doc,
    )


# ---------------------------------------------------------------------------
# Multiple-choice evaluation


@dataclass
class McqItem:
    id: str
    category: str
    question: str
    choices: list  # [(label, text)] in presentation order
    answer: str

    def validate(self) -> None:
        if len(self.choices) < 2:
            raise EvalError(f"item {self.id}: needs at least 2 choices")
        labels = [label for label, _ in self.choices]
        if len(set(labels)) != len(labels):
            raise EvalError(f"item {self.id}: duplicate choice labels")
        if not self.answer or self.answer not in labels:
            raise EvalError(f"item {self.id}: gold label {self.answer!r} missing from choices")


def read_mcq_jsonl(path) -> list[McqItem]:
    path = Path(path)
    if not path.exists():
        raise EvalError(f"MCQ file not found: {path}")
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item = McqItem(
                    id=str(obj["id"]),
                    category=obj["category"],
                    question=obj["question"],
                    choices=[(c["label"], c["text"]) for c in obj["choices"]],
                    answer=obj.get("answer", ""),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"MCQ line {lineno}: {exc}") from exc
            item.validate()
            items.append(item)
    return items


def supercategory(category: str) -> str:
    for prefix in SUPERCATEGORIES:
        if category.startswith(prefix + "_"):
            return prefix
    return "other"


def render_prompt(template: str, item: McqItem) -> str:
    if "{question}" not in template or "{choices}" not in template:
        raise EvalError("template must contain {question} and {choices} placeholders")
    choices = "\n".join(f"{label}. {text}" for label, text in item.choices)
    return template.replace("{question}", item.question).replace("{choices}", choices)


def make_model_scorer(ckpt, tokenizer, template: str):
    """Choice scorer backed by the decoder: mean log-likelihood of the
    rendered label continuation (" <label>") after the prompt."""

    def scorer(item: McqItem, label: str) -> float:
        prompt_ids = encode(tokenizer, render_prompt(template, item))
        cont_ids = encode(tokenizer, " " + label)
        if not cont_ids:
            raise EvalError(f"label {label!r} tokenizes to nothing")
        seq = np.asarray(prompt_ids + cont_ids)
        logits = tiny_transformer.forward(ckpt, seq, return_cache=False).astype(np.float64)
        total = 0.0
        for k, tok in enumerate(cont_ids):
            row = logits[len(prompt_ids) + k - 1]
            row = row - row.max()
            total += row[tok] - np.log(np.exp(row).sum())
        return total / len(cont_ids)

    return scorer


def predict_choice(item: McqItem, scorer) -> str:
    """Argmax label; exact ties go to the lexicographically smallest label."""
    best_label = None
    best_score = None
    for label, _ in sorted(item.choices, key=lambda c: c[0]):
        score = scorer(item, label)
        if best_score is None or score > best_score:
            best_label, best_score = label, score
    return best_label


@dataclass
class McqReport:
    per_subject: dict  # name -> {"correct", "answered", "score"}
    per_supercategory: dict
    correct: int
    answered: int
    total: float  # percent

    def to_json(self) -> dict:
        rows = {"total": self.total}
        for name in sorted(self.per_subject):
            rows[name] = self.per_subject[name]["score"]
        for name in sorted(self.per_supercategory):
            rows[f"{name}_total"] = self.per_supercategory[name]["score"]
        return rows

    def format_table(self) -> str:
        lines = [f"{'Category_Subcategory':<56} Score", f"{'total':<56} {self.total:.2f}"]
        for sup in SUPERCATEGORIES:
            subjects = sorted(n for n in self.per_subject if supercategory(n) == sup)
            for name in subjects:
                lines.append(f"{name:<56} {self.per_subject[name]['score']:.2f}")
            if sup in self.per_supercategory:
                lines.append(f"{sup + '_total':<56} {self.per_supercategory[sup]['score']:.2f}")
        return "\n".join(lines)


def mcq_eval(items, scorer) -> McqReport:
    """Aggregate exact integer counts per subject, supercategory, and total."""
    items = list(items)
    if not items:
        raise EvalError("no MCQ items")
    seen = set()
    subj: dict[str, list[int]] = {}
    sup: dict[str, list[int]] = {}
    correct_total = 0
    for item in items:
        item.validate()
        if item.id in seen:
            raise EvalError(f"duplicate item id {item.id}")
        seen.add(item.id)
        predicted = predict_choice(item, scorer)
        hit = int(predicted == item.answer)
        correct_total += hit
        subj.setdefault(item.category, [0, 0])
        subj[item.category][0] += hit
        subj[item.category][1] += 1
        s = supercategory(item.category)
        sup.setdefault(s, [0, 0])
        sup[s][0] += hit
        sup[s][1] += 1

    def pack(counts):
        return {
            name: {"correct": c, "answered": n, "score": 100.0 * c / n}
            for name, (c, n) in counts.items()
        }

    return McqReport(
        per_subject=pack(subj),
        per_supercategory=pack(sup),
        correct=correct_total,
        answered=len(items),
        total=100.0 * correct_total / len(items),
    )


def eval_mcq(ckpt, items, tokenizer, template: str = DEFAULT_MCQ_TEMPLATE) -> McqReport:
    return mcq_eval(items, make_model_scorer(ckpt, tokenizer, template))
