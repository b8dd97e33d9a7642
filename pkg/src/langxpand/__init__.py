"""langxpand: adapt a causal LM to a new language at desk scale.

Subpackages cover the full pipeline: corpus curation (sampling, MinHash
dedup, toxicity and perplexity filtering), unigram subword tokenizer
training and vocabulary merging, checkpoint surgery (embedding/head
expansion with mean initialization), a tiny Mistral-style decoder with a
hand-written backward pass, an AdamW continual pre-training loop, and
CLM / multiple-choice evaluation harnesses.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "corpus_pipeline",
    "ngram_lm",
    "tokenizer",
    "vocab_analysis",
    "tensor_ckpt",
    "tiny_transformer",
    "trainer",
    "eval_harness",
    "pipeline",
    "cli",
)


def __getattr__(name):
    # Lazy imports keep `import langxpand` cheap and let the CLI cap BLAS
    # threads before numpy loads.
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
