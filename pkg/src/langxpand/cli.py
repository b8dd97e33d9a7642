"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. ``--json`` prints a
machine-readable summary to stdout. ``LANGXPAND_THREADS`` caps BLAS worker
counts (must be read before numpy loads); ``--deterministic`` forces
single-threaded numerics.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _cap_threads(n: str) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


if "LANGXPAND_THREADS" in os.environ:
    _cap_threads(os.environ["LANGXPAND_THREADS"])
if "--deterministic" in sys.argv:
    _cap_threads("1")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="langxpand", description="language-adaptation pipeline toolkit")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded deterministic numerics")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus curation stages").add_subparsers(
        dest="subcommand", required=True)
    p = corpus.add_parser("sample")
    p.add_argument("input"); p.add_argument("output")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--keep-frac", type=float)
    g.add_argument("--keep-count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p = corpus.add_parser("dedup")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--removed", help="removal log path")
    p.add_argument("--ngram-n", type=int, default=3)
    p.add_argument("--num-hashes", type=int, default=128)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--threshold", type=float, default=0.8)
    p = corpus.add_parser("filter-toxic")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--model", help="trained toxicity model JSON")
    p.add_argument("--scores", help="external score file (JSONL id/score)")
    p.add_argument("--train-tsv", help="train a model from label<TAB>text rows")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--hash-dim", type=int, default=1 << 16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--removed")
    p.add_argument("--save-model")
    p = corpus.add_parser("filter-ppl")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--lm", required=True)
    p.add_argument("--max-ppl", type=float, required=True)
    p.add_argument("--removed")
    p = corpus.add_parser("stats")
    p.add_argument("input")
    p.add_argument("--tokenizer")
    p.add_argument("--output")

    lm = sub.add_parser("lm", help="n-gram language model").add_subparsers(
        dest="subcommand", required=True)
    p = lm.add_parser("train")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--discount", type=float, default=0.75)

    tok = sub.add_parser("tok", help="subword tokenizer").add_subparsers(
        dest="subcommand", required=True)
    p = tok.add_parser("train")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--target-vocab", type=int, default=8096)
    p.add_argument("--seed-factor", type=int, default=4)
    p.add_argument("--prune-keep", type=float, default=0.75)
    p.add_argument("--em-iters", type=int, default=2)
    p.add_argument("--max-piece-len", type=int, default=16)
    p.add_argument("--source", help="train only on docs with this source tag")
    p.add_argument("--freq-output", help="piece frequency sidecar TSV")
    p = tok.add_parser("filter")
    p.add_argument("input"); p.add_argument("output")
    p.add_argument("--freq", required=True, help="frequency sidecar TSV")
    p.add_argument("--max-piece-len", type=int, default=16)
    p.add_argument("--cap", type=int)
    p = tok.add_parser("merge")
    p.add_argument("base"); p.add_argument("addon"); p.add_argument("output")
    p = tok.add_parser("encode")
    p.add_argument("model")
    p.add_argument("--text")
    p.add_argument("--file")
    p.add_argument("--decode", action="store_true", help="round-trip check")

    vocab = sub.add_parser("vocab", help="vocab-size tradeoff analysis").add_subparsers(
        dest="subcommand", required=True)
    p = vocab.add_parser("analyze")
    p.add_argument("base"); p.add_argument("addon"); p.add_argument("corpus")
    p.add_argument("output", help="curve JSON")
    p.add_argument("--sizes", required=True, help="comma-separated addon sizes")
    p = vocab.add_parser("report")
    p.add_argument("curve", help="curve JSON from `vocab analyze`")
    p.add_argument("outdir")
    p.add_argument("--reference", help="'bundled' or a CSV path")
    p.add_argument("--base"); p.add_argument("--addon")

    ckpt = sub.add_parser("ckpt", help="checkpoint surgery").add_subparsers(
        dest="subcommand", required=True)
    p = ckpt.add_parser("expand")
    p.add_argument("tensors"); p.add_argument("config")
    p.add_argument("out_tensors"); p.add_argument("out_config")
    p.add_argument("--new-vocab", type=int, required=True)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p = ckpt.add_parser("verify")
    p.add_argument("old_tensors"); p.add_argument("new_tensors")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--hidden-seed", type=int, default=0)
    p.add_argument("--output")

    train = sub.add_parser("train", help="continual pre-training").add_subparsers(
        dest="subcommand", required=True)
    for name in ("run", "resume"):
        p = train.add_parser(name)
        p.add_argument("--config", required=True, help="project config JSON")
        p.add_argument("--out", required=True, help="pipeline output directory")
        p.add_argument("--seed", type=int, help="override the project seed")
        if name == "run":
            p.add_argument("--stop-after", type=int)

    ev = sub.add_parser("eval", help="evaluation harnesses").add_subparsers(
        dest="subcommand", required=True)
    p = ev.add_parser("clm")
    p.add_argument("tensors"); p.add_argument("config"); p.add_argument("tokenizer")
    p.add_argument("docs")
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--max-docs", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p = ev.add_parser("mcq")
    p.add_argument("tensors"); p.add_argument("config"); p.add_argument("tokenizer")
    p.add_argument("items")
    p.add_argument("--template")
    p.add_argument("--output")

    pipe = sub.add_parser("pipeline", help="full pipeline from a project config").add_subparsers(
        dest="subcommand", required=True)
    p = pipe.add_parser("run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the project seed")
    p = pipe.add_parser("stage")
    p.add_argument("name")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the project seed")

    return parser


def _emit(args, summary: dict, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
    elif human is not None:
        print(human)
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")


def _require_file(path) -> None:
    from pathlib import Path

    if not Path(path).exists():
        raise FileNotFoundError(f"input file not found: {path}")


# --- command implementations -------------------------------------------------


def _cmd_corpus(args) -> dict:
    from . import corpus_pipeline as cp

    if args.subcommand == "sample":
        docs = cp.load_corpus(args.input)
        keep = args.keep_frac if args.keep_frac is not None else args.keep_count
        kept = cp.sample_corpus(docs, keep, seed=args.seed)
        cp.write_corpus(kept, args.output)
        return {"input_docs": len(docs), "kept_docs": len(kept),
                "reference": cp.CULTURAX_VI_REFERENCE}
    if args.subcommand == "dedup":
        docs = cp.load_corpus(args.input)
        cfg = cp.DedupConfig(ngram_n=args.ngram_n, num_hashes=args.num_hashes,
                             bands=args.bands, jaccard_threshold=args.threshold)
        kept, log = cp.dedup_ngram(docs, cfg)
        cp.write_corpus(kept, args.output)
        if args.removed:
            cp.write_removal_log(log, args.removed)
        return {"kept": len(kept), "removed": len(log)}
    if args.subcommand == "filter-toxic":
        docs = cp.load_corpus(args.input)
        if args.scores:
            kept, log = cp.filter_by_score_file(docs, args.scores, args.threshold)
        else:
            if args.train_tsv:
                model = cp.train_toxicity(args.train_tsv, hash_dim=args.hash_dim, seed=args.seed)
                if args.save_model:
                    model.save(args.save_model)
            elif args.model:
                model = cp.ToxicityModel.load(args.model)
            else:
                raise UsageError("filter-toxic needs --model, --train-tsv, or --scores")
            kept, log = cp.filter_toxic(docs, model, args.threshold)
        cp.write_corpus(kept, args.output)
        if args.removed:
            cp.write_removal_log(log, args.removed)
        return {"kept": len(kept), "removed": len(log)}
    if args.subcommand == "filter-ppl":
        from .ngram_lm import NGramModel

        docs = cp.load_corpus(args.input)
        lm = NGramModel.load(args.lm)
        kept, log = cp.filter_perplexity(docs, lm, args.max_ppl)
        cp.write_corpus(kept, args.output)
        if args.removed:
            cp.write_removal_log(log, args.removed)
        return {"kept": len(kept), "removed": len(log)}
    if args.subcommand == "stats":
        from .tokenizer import load_tokenizer

        docs = cp.load_corpus(args.input)
        tok = load_tokenizer(args.tokenizer) if args.tokenizer else None
        stats = cp.corpus_stats(docs, tokenizer=tok).to_json()
        if args.output:
            from pathlib import Path

            Path(args.output).write_text(json.dumps(stats, sort_keys=True) + "\n")
        return stats
    raise UsageError(f"unknown corpus subcommand {args.subcommand!r}")


def _cmd_lm(args) -> dict:
    from .corpus_pipeline import load_corpus
    from .ngram_lm import train_ngram

    docs = load_corpus(args.input)
    model = train_ngram(docs, order=args.order, discount=args.discount)
    model.save(args.output)
    return {"order": args.order, "vocab_size": model.vocab_size, "output": args.output}


def _cmd_tok(args) -> dict:
    from . import tokenizer as tk
    from .corpus_pipeline import load_corpus

    if args.subcommand == "train":
        docs = load_corpus(args.input)
        if args.source:
            docs = [d for d in docs if d.source == args.source]
        model = tk.train_unigram(
            docs, target_vocab=args.target_vocab, seed_factor=args.seed_factor,
            prune_keep=args.prune_keep, em_iters=args.em_iters,
            max_piece_len=args.max_piece_len,
        )
        tk.save_tokenizer(model, args.output)
        if args.freq_output:
            tk.write_frequency_table(tk.piece_frequencies(model, docs), args.freq_output)
        return {"normal_pieces": len(model.normal_pieces()), "final_ll": model.final_ll}
    if args.subcommand == "filter":
        model = tk.load_tokenizer(args.input)
        freq = tk.read_frequency_table(args.freq)
        policy = tk.CharPolicy.vietnamese_default(max_piece_len=args.max_piece_len)
        out = tk.filter_pieces(model, policy, freq, cap=args.cap)
        tk.save_tokenizer(out, args.output)
        return {"before": len(model.normal_pieces()), "after": len(out.normal_pieces())}
    if args.subcommand == "merge":
        base = tk.load_tokenizer(args.base)
        addon = tk.load_tokenizer(args.addon)
        merged = tk.merge_vocab(base, addon)
        tk.save_tokenizer(merged, args.output)
        return {"base_size": merged.base_size, "merged_size": len(merged.pieces),
                "appended": len(merged.pieces) - merged.base_size}
    if args.subcommand == "encode":
        model = tk.load_tokenizer(args.model)
        if args.text is not None:
            text = args.text
        elif args.file:
            from pathlib import Path

            _require_file(args.file)
            text = Path(args.file).read_text(encoding="utf-8")
        else:
            raise UsageError("tok encode needs --text or --file")
        ids = tk.encode(model, text)
        result = {"ids": ids, "num_tokens": len(ids)}
        if args.decode:
            result["roundtrip_ok"] = tk.decode(model, ids) == text
        return result
    raise UsageError(f"unknown tok subcommand {args.subcommand!r}")


def _cmd_vocab(args) -> dict:
    from pathlib import Path

    from . import vocab_analysis as va
    from .corpus_pipeline import load_corpus
    from .tokenizer import load_tokenizer

    if args.subcommand == "analyze":
        base = load_tokenizer(args.base)
        addon = load_tokenizer(args.addon)
        docs = load_corpus(args.corpus)
        sizes = [int(s) for s in args.sizes.split(",") if s]
        curve = va.relative_input_complexity(base, addon, sizes, docs)
        doc = {
            "baseline": curve.baseline,
            "points": [{"vocab_add": p.vocab_add, "ric": p.ric, "rec": p.rec}
                       for p in curve.points],
        }
        Path(args.output).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return {"points": len(curve.points), "output": args.output}
    if args.subcommand == "report":
        _require_file(args.curve)
        doc = json.loads(Path(args.curve).read_text(encoding="utf-8"))
        curve = va.ComplexityCurve(
            points=[va.ComplexityPoint(**p) for p in doc["points"]],
            baseline=doc.get("baseline", {}),
        )
        reference = None
        if args.reference == "bundled":
            reference = va.load_reference_curve()
        elif args.reference:
            reference = va.load_reference_curve(args.reference)
        overlap_models = None
        if args.base and args.addon:
            overlap_models = (load_tokenizer(args.base), load_tokenizer(args.addon))
        paths = va.emit_curve_report(curve, args.outdir, reference=reference,
                                     overlap_models=overlap_models)
        return paths
    raise UsageError(f"unknown vocab subcommand {args.subcommand!r}")


def _cmd_ckpt(args) -> dict:
    import numpy as np

    from . import tensor_ckpt as tc

    if args.subcommand == "expand":
        ckpt = tc.load_checkpoint(args.tensors, args.config)
        out = tc.expand_embeddings(ckpt, args.new_vocab, jitter=args.jitter, seed=args.seed)
        tc.save_checkpoint(out, args.out_tensors, args.out_config)
        return {"old_vocab": ckpt.config.vocab_size, "new_vocab": out.config.vocab_size}
    if args.subcommand == "verify":
        old = tc.read_store(args.old_tensors)
        new = tc.read_store(args.new_tensors)
        hidden = old["lm_head.weight"].shape[1]
        rng = np.random.Generator(np.random.PCG64(args.hidden_seed))
        samples = [rng.normal(size=hidden) for _ in range(args.samples)]
        report = tc.verify_rescaling_identity(
            old["lm_head.weight"].astype(np.float64),
            new["lm_head.weight"].astype(np.float64),
            samples,
        )
        if args.output:
            from pathlib import Path

            Path(args.output).write_text(json.dumps(report, sort_keys=True) + "\n")
        return report
    raise UsageError(f"unknown ckpt subcommand {args.subcommand!r}")


def _cmd_train(args) -> dict:
    from .pipeline import ProjectConfig, stage_train

    project = ProjectConfig.load(args.config)
    if args.seed is not None:
        project.seed = args.seed
    if args.subcommand == "resume":
        return stage_train(project, args.out, resume=True)
    return stage_train(project, args.out, stop_after=args.stop_after)


def _cmd_eval(args) -> dict:
    from . import eval_harness as ev
    from . import tensor_ckpt as tc
    from .corpus_pipeline import load_corpus
    from .tokenizer import load_tokenizer

    ckpt = tc.load_checkpoint(args.tensors, args.config)
    tok = load_tokenizer(args.tokenizer)
    if args.subcommand == "clm":
        cfg = ev.ClmEvalConfig(seq_len=args.seq_len, max_docs=args.max_docs, seed=args.seed)
        report = ev.eval_clm(ckpt, load_corpus(args.docs), tok, cfg)
        doc = report.to_json()
        if args.output:
            from pathlib import Path

            Path(args.output).write_text(json.dumps(doc, sort_keys=True) + "\n")
        return doc
    if args.subcommand == "mcq":
        items = ev.read_mcq_jsonl(args.items)
        template = args.template or ev.DEFAULT_MCQ_TEMPLATE
        report = ev.eval_mcq(ckpt, items, tok, template=template)
        doc = report.to_json()
        if args.output:
            from pathlib import Path

            Path(args.output).write_text(json.dumps(doc, sort_keys=True) + "\n")
        return doc
    raise UsageError(f"unknown eval subcommand {args.subcommand!r}")


def _cmd_pipeline(args) -> dict:
    from .pipeline import ProjectConfig, run_pipeline, run_stage

    project = ProjectConfig.load(args.config)
    if args.seed is not None:
        project.seed = args.seed
    if args.subcommand == "run":
        return run_pipeline(project, args.out)
    return {args.name: run_stage(project, args.out, args.name)}


_COMMANDS = {
    "corpus": _cmd_corpus,
    "lm": _cmd_lm,
    "tok": _cmd_tok,
    "vocab": _cmd_vocab,
    "ckpt": _cmd_ckpt,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        summary = _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # data/processing errors -> exit 2
        from .corpus_pipeline import CorpusFormatError, PipelineError  # noqa: F401

        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(args, summary)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
