import json
from pathlib import Path

from langxpand.cli import main
from langxpand.corpus_pipeline import Document, write_corpus

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def write_docs(path, texts):
    write_corpus([Document(id=f"d{i}", text=t, source="t") for i, t in enumerate(texts)], path)


class TestExitCodes:
    def test_stats_on_bundled_mini_fixture(self, capsys):
        code = main(["--json", "corpus", "stats", str(FIXTURES / "mini.jsonl")])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["num_docs"] == 10
        assert set(doc) == {"num_docs", "total_bytes", "num_tokens"}

    def test_missing_input_exit_2_names_path(self, capsys):
        code = main(["corpus", "stats", "no/such/file.jsonl"])
        assert code == 2
        assert "no/such/file.jsonl" in capsys.readouterr().err

    def test_unknown_subcommand_exit_1(self, capsys):
        assert main(["corpus", "explode"]) == 1
        assert main(["frobnicate"]) == 1

    def test_usage_error_message(self, capsys):
        code = main(["corpus", "sample", "in.jsonl", "out.jsonl"])  # no --keep-*
        assert code == 1
        assert "usage" in capsys.readouterr().err.lower()


class TestCorpusCommands:
    def test_sample_roundtrip(self, tmp_path, capsys):
        src = tmp_path / "in.jsonl"
        dst = tmp_path / "out.jsonl"
        write_docs(src, [f"doc number {i}" for i in range(10)])
        code = main(["--json", "corpus", "sample", str(src), str(dst),
                     "--keep-frac", "0.5", "--seed", "7"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["kept_docs"] == 5
        assert out["reference"]["source_num_docs"] == 54988654
        assert len(dst.read_text().strip().split("\n")) == 5

    def test_dedup_with_log(self, tmp_path, capsys):
        src = tmp_path / "in.jsonl"
        dst = tmp_path / "out.jsonl"
        log = tmp_path / "removed.jsonl"
        write_docs(src, ["same text", "same text", "other"])
        code = main(["--json", "corpus", "dedup", str(src), str(dst), "--removed", str(log)])
        assert code == 0
        entries = [json.loads(l) for l in log.read_text().strip().split("\n")]
        assert entries[0]["reason"] == "exact_duplicate"

    def test_filter_toxic_train_and_apply(self, tmp_path, capsys):
        src = tmp_path / "in.jsonl"
        dst = tmp_path / "out.jsonl"
        tsv = tmp_path / "train.tsv"
        tsv.write_text("".join(
            f"1\tzq{w} zqvile nonsense\n0\tcalm clear water {w}\n"
            for w in ("alpha", "beta", "gamma", "delta") * 10
        ))
        write_docs(src, ["zqalpha zqvile text", "calm clear water text"])
        code = main(["--json", "corpus", "filter-toxic", str(src), str(dst),
                     "--train-tsv", str(tsv), "--hash-dim", "1024"])
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"kept": 1, "removed": 1}

    def test_filter_ppl_via_trained_lm(self, tmp_path, capsys):
        ref = tmp_path / "ref.jsonl"
        src = tmp_path / "in.jsonl"
        dst = tmp_path / "out.jsonl"
        lm = tmp_path / "lm.lxlm"
        write_docs(ref, ["an ordinary sentence here"] * 20)
        assert main(["lm", "train", str(ref), str(lm), "--order", "2"]) == 0
        write_docs(src, ["an ordinary sentence here", "zzz qqq vvv www"])
        capsys.readouterr()
        code = main(["--json", "corpus", "filter-ppl", str(src), str(dst),
                     "--lm", str(lm), "--max-ppl", "10"])
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"kept": 1, "removed": 1}


class TestTokenizerCommands:
    def test_train_filter_merge_encode(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.jsonl"
        write_docs(corpus, ["xin chào các bạn"] * 50)
        addon = tmp_path / "addon.json"
        freq = tmp_path / "freq.tsv"
        assert main(["tok", "train", str(corpus), str(addon),
                     "--target-vocab", "48", "--freq-output", str(freq)]) == 0
        filtered = tmp_path / "filtered.json"
        assert main(["tok", "filter", str(addon), str(filtered), "--freq", str(freq)]) == 0
        base = tmp_path / "base.jsonl"
        write_docs(base, ["plain english words here"] * 30)
        base_tok = tmp_path / "base.json"
        assert main(["tok", "train", str(base), str(base_tok), "--target-vocab", "40"]) == 0
        merged = tmp_path / "merged.json"
        capsys.readouterr()
        code = main(["--json", "tok", "merge", str(base_tok), str(filtered), str(merged)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["merged_size"] == out["base_size"] + out["appended"]
        code = main(["--json", "tok", "encode", str(merged),
                     "--text", "xin chào english", "--decode"])
        assert code == 0
        enc = json.loads(capsys.readouterr().out)
        assert enc["roundtrip_ok"] is True
        assert enc["num_tokens"] == len(enc["ids"])


class TestCkptCommands:
    def test_expand_and_verify(self, tmp_path, capsys):
        from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint, save_checkpoint

        cfg = TinyLMConfig(vocab_size=40, hidden=8, layers=1, heads=2, kv_heads=1,
                           head_dim=4, window=4, mlp_hidden=8)
        ckpt = init_checkpoint(cfg, seed=0)
        save_checkpoint(ckpt, tmp_path / "base.xckpt", tmp_path / "base.json")
        code = main(["--json", "ckpt", "expand", str(tmp_path / "base.xckpt"),
                     str(tmp_path / "base.json"), str(tmp_path / "big.xckpt"),
                     str(tmp_path / "big.json"), "--new-vocab", "55"])
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"old_vocab": 40, "new_vocab": 55}
        code = main(["--json", "ckpt", "verify", str(tmp_path / "base.xckpt"),
                     str(tmp_path / "big.xckpt"), "--samples", "20"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["max_deviation"] < 1e-12
        assert report["factor_below_one"] is True

    def test_shrink_is_data_error(self, tmp_path, capsys):
        from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint, save_checkpoint

        cfg = TinyLMConfig(vocab_size=40, hidden=8, layers=1, heads=2, kv_heads=1,
                           head_dim=4, window=4, mlp_hidden=8)
        save_checkpoint(init_checkpoint(cfg), tmp_path / "b.xckpt", tmp_path / "b.json")
        code = main(["ckpt", "expand", str(tmp_path / "b.xckpt"), str(tmp_path / "b.json"),
                     str(tmp_path / "o.xckpt"), str(tmp_path / "o.json"), "--new-vocab", "12"])
        assert code == 2


class TestEvalCommands:
    def test_eval_clm_and_mcq(self, tmp_path, capsys):
        from langxpand.tensor_ckpt import TinyLMConfig, init_checkpoint, save_checkpoint
        from langxpand.tokenizer import assemble_model, save_tokenizer

        tok = assemble_model({c: -1.0 for c in "abcdefgh"} | {"▁" + c: -1.0 for c in "abcdefgh"})
        tok_path = tmp_path / "tok.json"
        save_tokenizer(tok, tok_path)
        cfg = TinyLMConfig(vocab_size=len(tok.pieces), hidden=8, layers=1, heads=2,
                           kv_heads=1, head_dim=4, window=8, mlp_hidden=8)
        save_checkpoint(init_checkpoint(cfg, seed=3), tmp_path / "m.xckpt", tmp_path / "m.json")
        docs = tmp_path / "docs.jsonl"
        write_docs(docs, ["abcd efgh abcd", "hgfe dcba"])
        code = main(["--json", "eval", "clm", str(tmp_path / "m.xckpt"), str(tmp_path / "m.json"),
                     str(tok_path), str(docs), "--seq-len", "8", "--max-docs", "2"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert {"Length", "Tokens", "Loss", "Accuracy"} <= set(doc)

        items = tmp_path / "items.jsonl"
        items.write_text(json.dumps({
            "id": "q0", "category": "stem_math", "question": "ab cd",
            "choices": [{"label": "a", "text": "ef"}, {"label": "b", "text": "gh"}],
            "answer": "a",
        }) + "\n")
        code = main(["--json", "eval", "mcq", str(tmp_path / "m.xckpt"), str(tmp_path / "m.json"),
                     str(tok_path), str(items)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert "total" in doc and "stem_total" in doc


class TestVocabCommands:
    def test_analyze_then_report(self, tmp_path, capsys):
        from langxpand.tokenizer import assemble_model, save_tokenizer

        base = assemble_model({c: -3.0 for c in "abcdefghij"})
        addon = assemble_model({"abc": -0.5, "def": -0.8, "ghij": -1.0})
        save_tokenizer(base, tmp_path / "base.json")
        save_tokenizer(addon, tmp_path / "addon.json")
        corpus = tmp_path / "c.jsonl"
        write_docs(corpus, ["abc def ghij abc"] * 10)
        curve = tmp_path / "curve.json"
        assert main(["vocab", "analyze", str(tmp_path / "base.json"), str(tmp_path / "addon.json"),
                     str(corpus), str(curve), "--sizes", "1,2,3"]) == 0
        outdir = tmp_path / "report"
        code = main(["--json", "vocab", "report", str(curve), str(outdir),
                     "--reference", "bundled",
                     "--base", str(tmp_path / "base.json"),
                     "--addon", str(tmp_path / "addon.json")])
        assert code == 0
        assert (outdir / "curve.csv").exists()
        assert (outdir / "curve.svg").exists()
        overlap = json.loads((outdir / "overlap.json").read_text())
        assert set(overlap) == {"shared", "base_only", "addon_only"}
