import numpy as np
import pytest

from langxpand.tensor_ckpt import (
    CheckpointFormatError,
    SurgeryError,
    TensorStore,
    TinyLMConfig,
    expand_embeddings,
    expected_tensor_names,
    init_checkpoint,
    read_store,
    verify_rescaling_identity,
    write_store,
)


def small_config(vocab=32, hidden=8):
    return TinyLMConfig(
        vocab_size=vocab, hidden=hidden, layers=1, heads=2, kv_heads=1,
        head_dim=hidden // 2, window=4, mlp_hidden=12,
    )


class TestStoreRoundtrip:
    def test_bit_exact_roundtrip(self, tmp_path):
        store = TensorStore()
        store["a"] = np.arange(6, dtype=np.float32).reshape(2, 3)
        store["b"] = np.array([[1e-300, 2.5], [3.0, -4.0]], dtype=np.float64)
        path = tmp_path / "t.xckpt"
        write_store(store, path)
        back = read_store(path)
        for name in ("a", "b"):
            assert back[name].dtype == store[name].dtype
            assert back[name].tobytes() == store[name].tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.xckpt"
        store = TensorStore({"a": np.zeros((2, 2), dtype=np.float32)})
        write_store(store, path)
        blob = bytearray(path.read_bytes())
        blob[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError, match="bad magic"):
            read_store(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "t.xckpt"
        write_store(TensorStore({"a": np.zeros((4, 4), dtype=np.float64)}), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            read_store(path)

    def test_header_length_mismatch_rejected(self, tmp_path):
        import json
        import struct

        path = tmp_path / "t.xckpt"
        write_store(TensorStore({"a": np.zeros((2, 3), dtype=np.float32)}), path)
        blob = path.read_bytes()
        (hlen,) = struct.unpack_from("<Q", blob, 8)
        header = json.loads(blob[16 : 16 + hlen])
        header["a"]["shape"] = [2, 2]  # no longer matches declared len
        hb = json.dumps(header).encode()
        path.write_bytes(blob[:8] + struct.pack("<Q", len(hb)) + hb + blob[16 + hlen :])
        with pytest.raises(CheckpointFormatError, match="declared length"):
            read_store(path)

    def test_non_finite_rejected_on_store(self):
        store = TensorStore()
        with pytest.raises(CheckpointFormatError, match="non-finite"):
            store["bad"] = np.array([1.0, np.nan])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointFormatError, match="not found"):
            read_store(tmp_path / "nope.xckpt")


class TestConfig:
    def test_validation(self):
        cfg = small_config()
        cfg.validate()
        with pytest.raises(CheckpointFormatError, match="divisible"):
            TinyLMConfig(vocab_size=8, hidden=8, layers=1, heads=3, kv_heads=2,
                         head_dim=2, window=2, mlp_hidden=4).validate()
        with pytest.raises(CheckpointFormatError, match="positive"):
            TinyLMConfig(vocab_size=0, hidden=8, layers=1, heads=2, kv_heads=1,
                         head_dim=4, window=2, mlp_hidden=4).validate()

    def test_checkpoint_validate_names_and_shapes(self):
        cfg = small_config()
        ckpt = init_checkpoint(cfg, seed=1)
        ckpt.validate()
        assert set(expected_tensor_names(cfg)) <= set(ckpt.tensors.names())
        del ckpt.tensors._tensors["lm_head.weight"]
        with pytest.raises(CheckpointFormatError, match="missing"):
            ckpt.validate()


class TestExpandEmbeddings:
    def test_mean_row_hand_case(self):
        # rows [[1,3],[3,5]] -> appended row is the column mean [2,4]
        cfg = small_config(vocab=2, hidden=2)
        cfg = TinyLMConfig(vocab_size=2, hidden=2, layers=1, heads=1, kv_heads=1,
                           head_dim=2, window=2, mlp_hidden=2)
        ckpt = init_checkpoint(cfg, seed=0, dtype="f64")
        ckpt.tensors["embed.weight"] = np.array([[1.0, 3.0], [3.0, 5.0]])
        ckpt.tensors["lm_head.weight"] = np.array([[1.0, 3.0], [3.0, 5.0]])
        out = expand_embeddings(ckpt, 3, jitter=0.0)
        np.testing.assert_array_equal(out.tensors["embed.weight"][2], [2.0, 4.0])
        np.testing.assert_array_equal(out.tensors["lm_head.weight"][2], [2.0, 4.0])
        assert out.config.vocab_size == 3

    def test_original_rows_bit_unchanged_and_mean_logit(self):
        cfg = TinyLMConfig(vocab_size=50, hidden=8, layers=1, heads=2, kv_heads=1,
                           head_dim=4, window=4, mlp_hidden=8)
        ckpt = init_checkpoint(cfg, seed=3, dtype="f64")
        old = ckpt.tensors["embed.weight"].copy()
        out = expand_embeddings(ckpt, 60)
        assert out.tensors["embed.weight"][:50].tobytes() == old.tobytes()
        # mean-logit identity: h . e_new == mean_j h . e_j, oracle = mean of
        # individually computed logits
        rng = np.random.Generator(np.random.PCG64(7))
        for _ in range(100):
            h = rng.normal(size=8)
            logits = old @ h
            assert abs(out.tensors["embed.weight"][50] @ h - logits.mean()) < 1e-9

    def test_jitter_deterministic_and_symmetry_breaking(self):
        cfg = small_config(vocab=10, hidden=8)
        ckpt = init_checkpoint(cfg, seed=0, dtype="f64")
        a = expand_embeddings(ckpt, 14, jitter=0.01, seed=5)
        b = expand_embeddings(ckpt, 14, jitter=0.01, seed=5)
        c = expand_embeddings(ckpt, 14, jitter=0.01, seed=6)
        assert a.tensors["embed.weight"].tobytes() == b.tensors["embed.weight"].tobytes()
        assert a.tensors["embed.weight"].tobytes() != c.tensors["embed.weight"].tobytes()
        new = a.tensors["embed.weight"][10:]
        assert not np.array_equal(new[0], new[1])

    def test_no_silent_reexpansion(self):
        ckpt = init_checkpoint(small_config(vocab=8), seed=0)
        with pytest.raises(SurgeryError, match="must exceed"):
            expand_embeddings(ckpt, 8)
        with pytest.raises(SurgeryError, match="must exceed"):
            expand_embeddings(ckpt, 4)


class TestRescalingIdentity:
    def test_hand_case_two_logits(self):
        # two original logits (0,0), one new row with z_new = 0:
        # factor = 2/3 and every expanded probability is exactly 1/3
        old = np.array([[1.0, 0.0], [1.0, 0.0]])
        new = np.vstack([old, [[1.0, 0.0]]])
        h = np.array([0.0, 5.0])  # orthogonal to every row -> all logits 0
        report = verify_rescaling_identity(old, new, [h])
        assert report["min_factor"] == pytest.approx(2.0 / 3.0, abs=0)
        assert report["max_deviation"] < 1e-15
        assert report["factor_below_one"]

    def test_random_cases_double_precision(self):
        rng = np.random.Generator(np.random.PCG64(11))
        old = rng.normal(size=(40, 16))
        new = np.vstack([old, old.mean(axis=0, keepdims=True)])
        samples = rng.normal(size=(50, 16))
        report = verify_rescaling_identity(old, new, list(samples))
        # oracle: brute-force softmax over the full vocabulary per sample
        for h in samples:
            z_all = new @ h
            p_all = np.exp(z_all - z_all.max())
            p_all /= p_all.sum()
            z_old = old @ h
            p_old = np.exp(z_old - z_old.max())
            p_old /= p_old.sum()
            factor = 1.0 / (1.0 + np.exp(z_all[-1] - z_all.max()).sum()
                            / np.exp(z_old - z_all.max()).sum())
            assert np.abs(p_all[:-1] - p_old * factor).max() < 1e-12
        assert report["max_deviation"] < 1e-12
        assert report["factor_below_one"]

    def test_mean_init_argmax_never_new_token(self):
        # z_new = mean(z_j) <= max(z_j), equality only when all logits equal
        rng = np.random.Generator(np.random.PCG64(13))
        old = rng.normal(size=(30, 8))
        ckpt_new = np.vstack([old, old.mean(axis=0, keepdims=True)])
        for _ in range(1000):
            h = rng.normal(size=8)
            z = ckpt_new @ h
            if not np.allclose(z[:-1], z[0]):
                assert z.argmax() < 30

    def test_prefix_mismatch_rejected(self):
        old = np.ones((3, 4))
        new = np.zeros((4, 4))
        with pytest.raises(SurgeryError, match="extend"):
            verify_rescaling_identity(old, new, [np.zeros(4)])
        with pytest.raises(SurgeryError, match="shape mismatch"):
            verify_rescaling_identity(old, np.ones((4, 5)), [np.zeros(4)])
