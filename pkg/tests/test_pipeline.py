import json
from pathlib import Path

import numpy as np
import pytest

from langxpand.corpus_pipeline import Document, write_corpus
from langxpand.pipeline import STAGES, ProjectConfig, run_pipeline, run_stage
from langxpand.tokenizer import save_tokenizer, train_unigram

VI_WORDS = ["xin", "chào", "bạn", "học", "tiếng", "việt", "nam", "ngày", "mới",
            "đẹp", "trời", "nước", "người", "thương", "nhớ", "đường", "trường"]
EN_WORDS = ["the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
            "and", "runs", "far", "away", "home", "again"]


def make_project(tmp_path, seed=77) -> Path:
    rng = np.random.Generator(np.random.PCG64(seed))

    def sentence(words, n):
        return " ".join(words[int(i)] for i in rng.integers(0, len(words), n))

    docs = []
    for i in range(70):
        docs.append(Document(id=f"vi{i}", text=sentence(VI_WORDS, 30), source="vi"))
    for i in range(25):
        docs.append(Document(id=f"en{i}", text=sentence(EN_WORDS, 30), source="en"))
    docs.append(Document(id="dup0", text=docs[0].text, source="vi"))
    docs.append(Document(id="tox0", text="zqvile zqrot " + sentence(VI_WORDS, 8), source="vi"))
    junk = " ".join("".join(chr(int(c)) for c in rng.integers(97, 123, 10)) for _ in range(30))
    docs.append(Document(id="junk0", text=junk, source="vi"))
    write_corpus(docs, tmp_path / "corpus.jsonl")

    ref_docs = [Document(id=f"ref{i}", text=sentence(VI_WORDS + EN_WORDS, 40), source="vi")
                for i in range(40)]
    write_corpus(ref_docs, tmp_path / "ref.jsonl")
    write_corpus(ref_docs[:12], tmp_path / "eval.jsonl")

    tsv_rows = []
    for i in range(60):
        tsv_rows.append(f"1\tzqvile zqgrime {sentence(VI_WORDS, 5)}")
        tsv_rows.append(f"0\t{sentence(VI_WORDS + EN_WORDS, 6)}")
    (tmp_path / "tox.tsv").write_text("\n".join(tsv_rows) + "\n", encoding="utf-8")

    base_tok = train_unigram([d.text for d in ref_docs], target_vocab=64,
                             seed_factor=3, max_piece_len=8)
    save_tokenizer(base_tok, tmp_path / "base_tok.json")

    items = [{
        "id": f"q{i}", "category": ["stem_math", "humanity_logic"][i % 2],
        "question": sentence(VI_WORDS, 4) + "?",
        "choices": [{"label": l, "text": sentence(VI_WORDS, 2)} for l in "AB"],
        "answer": "AB"[i % 2],
    } for i in range(6)]
    (tmp_path / "items.jsonl").write_text(
        "\n".join(json.dumps(x, ensure_ascii=False) for x in items) + "\n", encoding="utf-8")

    config = {
        "seed": 9,
        "paths": {
            "corpus": "corpus.jsonl",
            "toxicity_train": "tox.tsv",
            "lm_reference": "ref.jsonl",
            "base_tokenizer": "base_tok.json",
            "eval_docs": "eval.jsonl",
            "mcq_items": "items.jsonl",
        },
        "sample": {"keep": 0.95},
        "dedup": {},
        "toxicity": {"threshold": 0.5, "hash_dim": 1024},
        "perplexity": {"order": 2, "max_ppl": 2000.0},
        "tokenizer": {"source": "vi", "target_vocab": 64, "seed_factor": 3,
                      "max_piece_len": 8, "filter": {"max_piece_len": 8}},
        "vocab": {"sizes": [4, 16], "reference": "bundled"},
        "ckpt": {"hidden": 16, "layers": 1, "heads": 2, "kv_heads": 1, "window": 8,
                 "mlp_hidden": 16, "init_seed": 2},
        "train": {"peak_lr": 0.002, "warmup_steps": 2, "total_steps": 6,
                  "batch_size": 2, "seq_len": 32, "snapshot_every": 3},
        "eval": {"clm": {"seq_len": 32, "max_docs": 6},
                 "mcq": {"template": "{question}\n{choices}\nĐáp án:"}},
    }
    cfg_path = tmp_path / "project.json"
    cfg_path.write_text(json.dumps(config, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return cfg_path


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("proj")
    cfg_path = make_project(tmp_path)
    project = ProjectConfig.load(cfg_path)
    out = tmp_path / "run"
    results = run_pipeline(project, out)
    return cfg_path, project, out, results


class TestPipeline:
    def test_all_stage_dirs_and_manifests_exist(self, pipeline_run):
        _, _, out, _ = pipeline_run
        for i, stage in enumerate(STAGES, start=1):
            d = out / f"{i:02d}_{stage}"
            assert d.is_dir(), stage
            assert (d / "manifest.json").exists(), stage

    def test_manifest_hashes_match_artifacts(self, pipeline_run):
        import hashlib

        _, _, out, _ = pipeline_run
        for stage_dir in sorted(out.iterdir()):
            manifest = json.loads((stage_dir / "manifest.json").read_text())
            for name, digest in manifest["outputs"].items():
                blob = (stage_dir / name).read_bytes()
                assert hashlib.sha256(blob).hexdigest() == digest, f"{stage_dir}/{name}"

    def test_filters_conserve_documents(self, pipeline_run):
        _, _, out, _ = pipeline_run

        def count_lines(p):
            text = p.read_text(encoding="utf-8").strip()
            return len(text.split("\n")) if text else 0

        sampled = count_lines(out / "01_sample/sampled.jsonl")
        for stage, in_name, kept_name in (
            ("02_dedup", "sampled.jsonl", "kept.jsonl"),
            ("03_toxicity", "kept.jsonl", "kept.jsonl"),
            ("04_perplexity", "kept.jsonl", "refined.jsonl"),
        ):
            kept = count_lines(out / stage / kept_name)
            removed = count_lines(out / stage / "removed.jsonl")
            prev_dir = {"02_dedup": "01_sample", "03_toxicity": "02_dedup",
                        "04_perplexity": "03_toxicity"}[stage]
            prev_kept = {"01_sample": "sampled.jsonl", "02_dedup": "kept.jsonl",
                         "03_toxicity": "kept.jsonl"}[prev_dir]
            upstream = count_lines(out / prev_dir / prev_kept)
            assert kept + removed == upstream, stage

    def test_rigged_docs_are_removed(self, pipeline_run):
        _, _, out, _ = pipeline_run
        refined = (out / "04_perplexity/refined.jsonl").read_text(encoding="utf-8")
        assert "tox0" not in refined
        assert "junk0" not in refined
        assert "dup0" not in refined

    def test_stats_schema(self, pipeline_run):
        _, _, out, _ = pipeline_run
        stats = json.loads((out / "06_stats/stats.json").read_text())
        assert set(stats) == {"num_docs", "total_bytes", "num_tokens"}
        assert stats["num_tokens"] > 0

    def test_vocab_reports_exist(self, pipeline_run):
        _, _, out, _ = pipeline_run
        d = out / "07_vocab"
        assert (d / "curve.csv").exists()
        assert (d / "curve.svg").exists()
        overlap = json.loads((d / "overlap.json").read_text())
        assert set(overlap) == {"shared", "base_only", "addon_only"}

    def test_rescaling_report(self, pipeline_run):
        _, _, out, results = pipeline_run
        report = json.loads((out / "08_ckpt/rescaling_report.json").read_text())
        assert report["max_deviation"] < 1e-12
        assert report["factor_below_one"] is True

    def test_eval_reports(self, pipeline_run):
        _, _, out, _ = pipeline_run
        clm = json.loads((out / "10_eval/clm_report.json").read_text())
        assert {"Model", "Length", "Tokens", "Loss", "Accuracy"} <= set(clm)
        mcq = json.loads((out / "10_eval/mcq_report.json").read_text())
        assert "total" in mcq

    def test_individual_stage_rerun_is_bytewise_identical(self, pipeline_run):
        cfg_path, project, out, _ = pipeline_run
        out2 = out.parent / "run2"
        for stage in STAGES:
            run_stage(project, out2, stage)
        for stage_dir in sorted(out.iterdir()):
            other = out2 / stage_dir.name
            for f in sorted(stage_dir.iterdir()):
                if f.is_file():
                    assert f.read_bytes() == (other / f.name).read_bytes(), f"{stage_dir.name}/{f.name}"

    def test_unknown_stage_errors(self, pipeline_run):
        from langxpand.corpus_pipeline import PipelineError

        cfg_path, project, out, _ = pipeline_run
        with pytest.raises(PipelineError, match="unknown stage"):
            run_stage(project, out, "nonsense")

    def test_cli_train_interrupt_then_resume_matches_straight_run(self, pipeline_run):
        import shutil

        from langxpand.cli import main

        cfg_path, project, out, _ = pipeline_run
        out3 = out.parent / "run3"
        out3.mkdir()
        for stage_dir in sorted(out.iterdir()):
            if not stage_dir.name.startswith(("09_", "10_")):
                shutil.copytree(stage_dir, out3 / stage_dir.name)
        assert main(["train", "run", "--config", str(cfg_path), "--out", str(out3),
                     "--stop-after", "3"]) == 0
        snapshot = json.loads((out3 / "09_train/snapshot/trainer_state.json").read_text())
        assert snapshot["step"] == 3
        assert main(["train", "resume", "--config", str(cfg_path), "--out", str(out3)]) == 0
        straight = (out / "09_train/trained.xckpt").read_bytes()
        assert (out3 / "09_train/trained.xckpt").read_bytes() == straight
