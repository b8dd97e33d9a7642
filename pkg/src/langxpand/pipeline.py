"""Project-level orchestration: a JSON config drives the stage sequence
corpus sampling -> dedup -> toxicity -> perplexity -> tokenizer ->
stats -> vocab analysis -> checkpoint surgery -> training -> evaluation.

Each stage writes its artifacts plus a manifest.json recording input
hashes, the stage config hash, and output hashes. Stages run one at a
time; running them individually produces byte-identical artifacts to a
full `pipeline run` because both paths share these functions and every
stage is deterministic under the project seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eval_harness, ngram_lm, tensor_ckpt, tokenizer, trainer, vocab_analysis
from .corpus_pipeline import (
    CULTURAX_VI_REFERENCE,
    DedupConfig,
    PipelineError,
    corpus_stats,
    dedup_ngram,
    filter_perplexity,
    filter_toxic,
    load_corpus,
    sample_corpus,
    train_toxicity,
    write_corpus,
    write_removal_log,
)

STAGES = (
    "sample",
    "dedup",
    "toxicity",
    "perplexity",
    "tokenizer",
    "stats",
    "vocab",
    "ckpt",
    "train",
    "eval",
)


@dataclass
class ProjectConfig:
    seed: int
    paths: dict
    sample: dict
    dedup: dict
    toxicity: dict
    perplexity: dict
    tokenizer: dict
    vocab: dict
    ckpt: dict
    train: dict
    eval: dict
    root: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path) -> "ProjectConfig":
        path = Path(path)
        if not path.exists():
            raise PipelineError(f"project config not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        missing = [k for k in ("seed", "paths") if k not in doc]
        if missing:
            raise PipelineError(f"project config missing keys: {missing}")
        return cls(
            seed=int(doc["seed"]),
            paths=doc["paths"],
            sample=doc.get("sample", {}),
            dedup=doc.get("dedup", {}),
            toxicity=doc.get("toxicity", {}),
            perplexity=doc.get("perplexity", {}),
            tokenizer=doc.get("tokenizer", {}),
            vocab=doc.get("vocab", {}),
            ckpt=doc.get("ckpt", {}),
            train=doc.get("train", {}),
            eval=doc.get("eval", {}),
            root=path.parent,
        )

    def input_path(self, key: str) -> Path:
        if key not in self.paths:
            raise PipelineError(f"project config paths lacks {key!r}")
        p = Path(self.paths[key])
        return p if p.is_absolute() else self.root / p

    def stage_config(self, stage: str) -> dict:
        return {"seed": self.seed, stage: getattr(self, stage, {})}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage_dir(out_dir, stage: str) -> Path:
    return Path(out_dir) / f"{STAGES.index(stage) + 1:02d}_{stage}"


def _write_manifest(stage: str, out_dir, dirpath: Path, inputs: list, cfg: dict) -> None:
    out_dir = Path(out_dir).resolve()

    def label(p) -> str:
        # inputs under the run directory are recorded relative to it, so two
        # runs of the same config compare bytewise wherever they live
        p = Path(p).resolve()
        try:
            return str(p.relative_to(out_dir))
        except ValueError:
            return str(p)

    doc = {
        "stage": stage,
        "inputs": {label(p): _sha256(Path(p)) for p in inputs},
        "config": cfg,
        "config_hash": hashlib.sha256(
            json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest(),
        "outputs": {
            p.name: _sha256(p)
            for p in sorted(dirpath.iterdir())
            if p.is_file() and p.name != "manifest.json"
        },
    }
    (dirpath / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# --- stages -----------------------------------------------------------------


def stage_sample(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "sample")
    d.mkdir(parents=True, exist_ok=True)
    src = project.input_path("corpus")
    ingest_log: list = []
    docs = load_corpus(src, removal_log=ingest_log)
    keep = project.sample.get("keep", 1.0)
    kept = sample_corpus(docs, keep, seed=project.seed)
    write_corpus(kept, d / "sampled.jsonl")
    write_removal_log(ingest_log, d / "ingest_removed.jsonl")
    _write_json(d / "report.json", {
        "input_docs": len(docs),
        "kept_docs": len(kept),
        "reference": dict(CULTURAX_VI_REFERENCE),
    })
    _write_manifest("sample", out_dir, d, [src], project.stage_config("sample"))
    return {"kept": len(kept)}


def stage_dedup(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "dedup")
    d.mkdir(parents=True, exist_ok=True)
    src = _stage_dir(out_dir, "sample") / "sampled.jsonl"
    docs = load_corpus(src)
    cfg = DedupConfig(**project.dedup) if project.dedup else DedupConfig()
    kept, log = dedup_ngram(docs, cfg)
    write_corpus(kept, d / "kept.jsonl")
    write_removal_log(log, d / "removed.jsonl")
    _write_manifest("dedup", out_dir, d, [src], project.stage_config("dedup"))
    return {"kept": len(kept), "removed": len(log)}


def stage_toxicity(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "toxicity")
    d.mkdir(parents=True, exist_ok=True)
    src = _stage_dir(out_dir, "dedup") / "kept.jsonl"
    tsv = project.input_path("toxicity_train")
    cfg = dict(project.toxicity)
    threshold = cfg.pop("threshold", 0.5)
    model = train_toxicity(
        tsv,
        hash_dim=cfg.get("hash_dim", 1 << 16),
        ngram_range=tuple(cfg.get("ngram_range", (2, 4))),
        seed=project.seed,
    )
    model.save(d / "toxicity_model.json")
    docs = load_corpus(src)
    kept, log = filter_toxic(docs, model, threshold)
    write_corpus(kept, d / "kept.jsonl")
    write_removal_log(log, d / "removed.jsonl")
    _write_json(d / "report.json", {
        "train_accuracy": model.train_accuracy,
        "threshold": threshold,
        "kept": len(kept),
        "removed": len(log),
    })
    _write_manifest("toxicity", out_dir, d, [src, tsv], project.stage_config("toxicity"))
    return {"kept": len(kept), "removed": len(log)}


def stage_perplexity(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "perplexity")
    d.mkdir(parents=True, exist_ok=True)
    src = _stage_dir(out_dir, "toxicity") / "kept.jsonl"
    ref = project.input_path("lm_reference")
    cfg = dict(project.perplexity)
    lm = ngram_lm.train_ngram(
        load_corpus(ref), order=cfg.get("order", 3), discount=cfg.get("discount", 0.75)
    )
    lm.save(d / "lm.lxlm")
    docs = load_corpus(src)
    kept, log = filter_perplexity(docs, lm, cfg.get("max_ppl", 1e4))
    write_corpus(kept, d / "refined.jsonl")
    write_removal_log(log, d / "removed.jsonl")
    _write_manifest("perplexity", out_dir, d, [src, ref], project.stage_config("perplexity"))
    return {"kept": len(kept), "removed": len(log)}


def _refined_corpus(out_dir):
    return _stage_dir(out_dir, "perplexity") / "refined.jsonl"


def stage_tokenizer(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "tokenizer")
    d.mkdir(parents=True, exist_ok=True)
    src = _refined_corpus(out_dir)
    base_path = project.input_path("base_tokenizer")
    cfg = dict(project.tokenizer)
    docs = load_corpus(src)
    source_tag = cfg.get("source")
    train_docs = [x for x in docs if not source_tag or x.source == source_tag]
    if not train_docs:
        raise PipelineError(f"no documents with source tag {source_tag!r}")
    addon = tokenizer.train_unigram(
        train_docs,
        target_vocab=cfg.get("target_vocab", 8096),
        seed_factor=cfg.get("seed_factor", 4),
        prune_keep=cfg.get("prune_keep", 0.75),
        em_iters=cfg.get("em_iters", 2),
        max_piece_len=cfg.get("max_piece_len", 16),
    )
    tokenizer.save_tokenizer(addon, d / "addon.json")
    _write_json(d / "train_history.json", {
        "rounds": addon.train_history, "final_ll": addon.final_ll,
    })
    freqs = tokenizer.piece_frequencies(addon, train_docs)
    tokenizer.write_frequency_table(freqs, d / "piece_freq.tsv")

    fcfg = cfg.get("filter", {})
    policy = tokenizer.CharPolicy.vietnamese_default(
        max_piece_len=fcfg.get("max_piece_len", cfg.get("max_piece_len", 16))
    )
    filtered = tokenizer.filter_pieces(addon, policy, freqs, cap=fcfg.get("cap"))
    tokenizer.save_tokenizer(filtered, d / "filtered.json")

    base = tokenizer.load_tokenizer(base_path)
    merged = tokenizer.merge_vocab(base, filtered)
    tokenizer.save_tokenizer(merged, d / "merged.json")
    _write_json(d / "report.json", {
        "addon_pieces": len(addon.normal_pieces()),
        "filtered_pieces": len(filtered.normal_pieces()),
        "base_size": merged.base_size,
        "merged_size": len(merged.pieces),
        "appended": len(merged.pieces) - merged.base_size,
    })
    _write_manifest("tokenizer", out_dir, d, [src, base_path], project.stage_config("tokenizer"))
    return {"merged_size": len(merged.pieces)}


def stage_stats(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "stats")
    d.mkdir(parents=True, exist_ok=True)
    src = _refined_corpus(out_dir)
    merged_path = _stage_dir(out_dir, "tokenizer") / "merged.json"
    merged = tokenizer.load_tokenizer(merged_path)
    stats = corpus_stats(load_corpus(src), tokenizer=merged)
    _write_json(d / "stats.json", stats.to_json())
    _write_manifest("stats", out_dir, d, [src, merged_path], project.stage_config("stats"))
    return stats.to_json()


def stage_vocab(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "vocab")
    d.mkdir(parents=True, exist_ok=True)
    src = _refined_corpus(out_dir)
    tok_dir = _stage_dir(out_dir, "tokenizer")
    base = tokenizer.load_tokenizer(project.input_path("base_tokenizer"))
    addon = tokenizer.load_tokenizer(tok_dir / "filtered.json")
    cfg = dict(project.vocab)
    sizes = [s for s in cfg.get("sizes", []) if s <= len(addon.normal_pieces())]
    docs = load_corpus(src)
    curve = vocab_analysis.relative_input_complexity(base, addon, sizes, docs)
    reference = None
    ref_setting = cfg.get("reference")
    if ref_setting == "bundled":
        reference = vocab_analysis.load_reference_curve()
    elif ref_setting:
        reference = vocab_analysis.load_reference_curve(project.root / ref_setting)
    vocab_analysis.emit_curve_report(curve, d, reference=reference, overlap_models=(base, addon))
    _write_manifest("vocab", out_dir, d, [src, tok_dir / "filtered.json"], project.stage_config("vocab"))
    return {"points": len(curve.points)}


def stage_ckpt(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "ckpt")
    d.mkdir(parents=True, exist_ok=True)
    tok_dir = _stage_dir(out_dir, "tokenizer")
    base_tok = tokenizer.load_tokenizer(project.input_path("base_tokenizer"))
    merged = tokenizer.load_tokenizer(tok_dir / "merged.json")
    cfg = dict(project.ckpt)
    model_cfg = tensor_ckpt.TinyLMConfig(
        vocab_size=len(base_tok.pieces),
        hidden=cfg["hidden"],
        layers=cfg["layers"],
        heads=cfg["heads"],
        kv_heads=cfg["kv_heads"],
        head_dim=cfg["hidden"] // cfg["heads"],
        window=cfg["window"],
        mlp_hidden=cfg["mlp_hidden"],
        rope_theta=cfg.get("rope_theta", 10000.0),
        norm_eps=cfg.get("norm_eps", 1e-5),
    )
    base_ckpt = tensor_ckpt.init_checkpoint(
        model_cfg, seed=cfg.get("init_seed", project.seed),
        init_std=cfg.get("init_std", 0.02),
    )
    tensor_ckpt.save_checkpoint(base_ckpt, d / "base.xckpt", d / "base.config.json")
    expanded = tensor_ckpt.expand_embeddings(
        base_ckpt, len(merged.pieces), jitter=cfg.get("jitter", 0.0), seed=project.seed
    )
    tensor_ckpt.save_checkpoint(expanded, d / "expanded.xckpt", d / "expanded.config.json")

    rng = np.random.Generator(np.random.PCG64(project.seed))
    samples = [rng.normal(size=model_cfg.hidden) for _ in range(64)]
    report = tensor_ckpt.verify_rescaling_identity(
        base_ckpt.tensors["lm_head.weight"].astype(np.float64),
        expanded.tensors["lm_head.weight"].astype(np.float64),
        samples,
    )
    _write_json(d / "rescaling_report.json", report)
    _write_manifest("ckpt", out_dir, d, [tok_dir / "merged.json"], project.stage_config("ckpt"))
    return {"old_vocab": len(base_tok.pieces), "new_vocab": len(merged.pieces),
            "max_deviation": report["max_deviation"]}


def stage_train(project: ProjectConfig, out_dir, resume: bool = False,
                stop_after: int | None = None) -> dict:
    d = _stage_dir(out_dir, "train")
    d.mkdir(parents=True, exist_ok=True)
    src = _refined_corpus(out_dir)
    tok_dir = _stage_dir(out_dir, "tokenizer")
    ckpt_dir = _stage_dir(out_dir, "ckpt")
    merged = tokenizer.load_tokenizer(tok_dir / "merged.json")
    docs = load_corpus(src)
    ids: list[int] = []
    for doc in docs:
        ids.extend(tokenizer.encode(merged, doc.text))
    tokens = np.asarray(ids, dtype=np.int64)
    np.save(d / "tokens.npy", tokens)

    cfg = trainer.TrainConfig.from_dict({**project.train, "seed": project.seed})
    ckpt = tensor_ckpt.load_checkpoint(ckpt_dir / "expanded.xckpt", ckpt_dir / "expanded.config.json")
    trained, report = trainer.train_clm(
        ckpt, tokens, cfg, snapshot_dir=d / "snapshot", resume=resume,
        stop_after_step=stop_after,
    )
    tensor_ckpt.save_checkpoint(trained, d / "trained.xckpt", d / "trained.config.json")
    report.to_csv(d / "train_report.csv")
    _write_manifest("train", out_dir, d, [src, ckpt_dir / "expanded.xckpt"], project.stage_config("train"))
    losses = [l for _, _, l in report.steps]
    return {"steps": len(losses), "first_loss": losses[0] if losses else None,
            "last_loss": losses[-1] if losses else None}


def stage_eval(project: ProjectConfig, out_dir) -> dict:
    d = _stage_dir(out_dir, "eval")
    d.mkdir(parents=True, exist_ok=True)
    tok_dir = _stage_dir(out_dir, "tokenizer")
    train_dir = _stage_dir(out_dir, "train")
    merged = tokenizer.load_tokenizer(tok_dir / "merged.json")
    ckpt = tensor_ckpt.load_checkpoint(train_dir / "trained.xckpt", train_dir / "trained.config.json")

    eval_cfg = dict(project.eval)
    clm_cfg = eval_harness.ClmEvalConfig(
        seq_len=eval_cfg.get("clm", {}).get("seq_len", 128),
        max_docs=eval_cfg.get("clm", {}).get("max_docs", 10000),
        seed=project.seed,
    )
    eval_docs_path = project.input_path("eval_docs")
    docs = load_corpus(eval_docs_path)
    clm_report = eval_harness.eval_clm(ckpt, docs, merged, clm_cfg, model_id="langxpand-tiny")
    _write_json(d / "clm_report.json", clm_report.to_json())
    (d / "clm_table.txt").write_text(clm_report.format_table() + "\n", encoding="utf-8")
    _write_json(d / "clm_per_doc_nll.json", clm_report.per_doc_nll)

    mcq_path = project.input_path("mcq_items")
    items = eval_harness.read_mcq_jsonl(mcq_path)
    template = eval_cfg.get("mcq", {}).get("template", eval_harness.DEFAULT_MCQ_TEMPLATE)
    mcq_report = eval_harness.eval_mcq(ckpt, items, merged, template=template)
    _write_json(d / "mcq_report.json", mcq_report.to_json())
    (d / "mcq_table.txt").write_text(mcq_report.format_table() + "\n", encoding="utf-8")
    _write_manifest("eval", out_dir, d, [eval_docs_path, mcq_path, train_dir / "trained.xckpt"],
                    project.stage_config("eval"))
    return {"clm_loss": clm_report.loss, "mcq_total": mcq_report.total}


_STAGE_FN = {
    "sample": stage_sample,
    "dedup": stage_dedup,
    "toxicity": stage_toxicity,
    "perplexity": stage_perplexity,
    "tokenizer": stage_tokenizer,
    "stats": stage_stats,
    "vocab": stage_vocab,
    "ckpt": stage_ckpt,
    "train": stage_train,
    "eval": stage_eval,
}


def run_stage(project: ProjectConfig, out_dir, stage: str) -> dict:
    if stage not in _STAGE_FN:
        raise PipelineError(f"unknown stage {stage!r}; stages are {', '.join(STAGES)}")
    return _STAGE_FN[stage](project, out_dir)


def run_pipeline(project: ProjectConfig, out_dir, stages=None) -> dict:
    results = {}
    for stage in stages or STAGES:
        results[stage] = run_stage(project, out_dir, stage)
    return results
