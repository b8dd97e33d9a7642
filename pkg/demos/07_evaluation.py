"""The two evaluation harnesses: next-token loss/accuracy over documents,
and multiple-choice scoring with per-subject and supercategory rollups.
"""

import math
from pathlib import Path

import numpy as np

from langxpand.corpus_pipeline import load_corpus
from langxpand.eval_harness import ClmEvalConfig, eval_clm, eval_mcq, read_mcq_jsonl
from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint
from langxpand.tokenizer import load_tokenizer

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

tok = load_tokenizer(FIXTURES / "base_tokenizer.json")
cfg = TinyLMConfig(vocab_size=len(tok.pieces), hidden=32, layers=1, heads=4,
                   kv_heads=2, head_dim=8, window=16, mlp_hidden=64)
ckpt = init_checkpoint(cfg, seed=5, dtype="f64")
# zero head -> uniform predictions, so the loss has a closed form
ckpt.tensors["lm_head.weight"] = np.zeros_like(ckpt.tensors["lm_head.weight"])

docs = load_corpus(FIXTURES / "eval_docs.jsonl")
report = eval_clm(ckpt, docs, tok, ClmEvalConfig(seq_len=64, max_docs=10),
                  model_id="uniform-baseline")
print(report.format_table())
print(f"\nuniform model sanity: loss {report.loss:.6f} == ln({cfg.vocab_size}) "
      f"= {math.log(cfg.vocab_size):.6f}")

items = read_mcq_jsonl(FIXTURES / "mcq_items.jsonl")
mcq = eval_mcq(ckpt, items, tok, template="{question}\n{choices}\nĐáp án:")
print(f"\nmultiple choice over {mcq.answered} items "
      f"(uniform model, ties go to label 'A'):")
print(mcq.format_table())
