"""Checkpoint container: magic, round-trips, error paths."""

import numpy as np
import pytest

from mdasr.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from mdasr.config import RunConfig
from mdasr.denoiser import AsrModel, DenoiserConfig, pad_answer
from mdasr.training import load_model, save_model
from mdasr.vocab import Vocab


class TestContainer:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {
            "a.w": rng.standard_normal((3, 4)).astype(np.float32),
            "b": rng.standard_normal(7).astype(np.float32),
        }
        p = tmp_path / "x.ckpt"
        save_checkpoint(p, params, {"note": "test", "seed": 3})
        header, loaded = load_checkpoint(p)
        assert header["note"] == "test" and header["seed"] == 3
        assert list(loaded) == list(params)
        for k in params:
            assert loaded[k].dtype == np.float32
            np.testing.assert_array_equal(loaded[k], params[k])

    def test_magic_enforced(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="MDASR1"):
            load_checkpoint(p)

    def test_magic_constant(self):
        assert MAGIC == b"MDASR1"

    def test_truncated_blob_detected(self, tmp_path):
        p = tmp_path / "t.ckpt"
        save_checkpoint(p, {"w": np.ones(8, dtype=np.float32)}, {})
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)


class TestModelRoundTrip:
    def test_forward_outputs_bit_exact(self, tmp_path):
        cfg = RunConfig(layers=2, d_model=32, d_enc=16, heads=2, max_answer_len=8)
        vocab = Vocab()
        model = AsrModel(cfg.denoiser_config(), vocab)
        model.init_params(5)
        rng = np.random.default_rng(1)
        for name in model.store.names():
            if name.endswith(("wo", "w2", "head.w")):
                model.store[name].data = rng.normal(0, 0.1, model.store[name].shape).astype(np.float32)
        frames = rng.standard_normal((10, cfg.d_acoustic)).astype(np.float32)
        ids = pad_answer(vocab.encode("abc"), 8, vocab.pad_id)
        ac = model.acoustic(frames, 1.0)
        before, _ = model.denoise_logits(ids, ac)

        path = tmp_path / "m.ckpt"
        save_model(model, path, cfg)
        loaded, header = load_model(path)
        assert header["config_hash"]
        ac2 = loaded.acoustic(frames, 1.0)
        after, _ = loaded.denoise_logits(ids, ac2)
        np.testing.assert_array_equal(before, after)

    def test_header_carries_model_config(self, tmp_path):
        cfg = RunConfig(layers=1, d_model=16, d_enc=8, heads=2, max_answer_len=4, n_prompt=1)
        model = AsrModel(cfg.denoiser_config(causal=True), Vocab())
        model.init_params(0)
        path = tmp_path / "c.ckpt"
        save_model(model, path, cfg)
        loaded, _ = load_model(path)
        assert loaded.cfg.causal
        assert loaded.cfg.layers == 1
        assert loaded.vocab.chars == Vocab().chars
