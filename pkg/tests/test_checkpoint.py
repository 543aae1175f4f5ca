import numpy as np
import pytest

from audiodct.adapter import AdapterDims, init_adapter
from audiodct.backbone import LMConfig, LMParams, freeze
from audiodct.checkpoint import (
    CheckpointError,
    adapter_hash,
    load_bundle,
    save_bundle,
    vocab_hash,
)
from audiodct.tokenizer import build_vocab


@pytest.fixture
def vocab():
    return build_vocab(["a dog barks", "waves crash over sand"])


@pytest.fixture
def lm(vocab):
    config = LMConfig(layers=1, heads=2, dim=8, ff_dim=16, max_context=32,
                      vocab_size=len(vocab), dtype="float32")
    params = LMParams.init_random(config, np.random.default_rng(0))
    return freeze(params)


def test_round_trip_backbone(tmp_path, vocab, lm):
    path = tmp_path / "lm.bundle"
    header = save_bundle(path, vocab, lm)
    loaded = load_bundle(path)
    assert loaded.lm.frozen
    assert loaded.header["lm_content_hash"] == header["lm_content_hash"]
    assert loaded.lm.content_hash() == lm.content_hash()
    for name in lm.names:
        np.testing.assert_array_equal(loaded.lm[name].value, lm[name].value)
    assert loaded.vocab.serialize() == vocab.serialize()
    assert loaded.adapter is None


def test_round_trip_with_adapter(tmp_path, vocab, lm):
    adapter = init_adapter(np.random.default_rng(1), AdapterDims(4, 8), np.float32)
    path = tmp_path / "full.bundle"
    save_bundle(path, vocab, lm, adapter, extra={"mode": "dct"})
    loaded = load_bundle(path)
    assert loaded.adapter is not None
    assert adapter_hash(loaded.adapter) == adapter_hash(adapter)
    for name in adapter.names:
        np.testing.assert_array_equal(loaded.adapter[name].value, adapter[name].value)
    assert loaded.header["extra"]["mode"] == "dct"


def test_reload_is_byte_stable(tmp_path, vocab, lm):
    p1 = tmp_path / "a.bundle"
    p2 = tmp_path / "b.bundle"
    save_bundle(p1, vocab, lm)
    save_bundle(p2, load_bundle(p1).vocab, load_bundle(p1).lm)
    assert p1.read_bytes() == p2.read_bytes()


def test_tampered_blob_detected(tmp_path, vocab, lm):
    path = tmp_path / "lm.bundle"
    save_bundle(path, vocab, lm)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_bundle(path)


def test_not_a_bundle(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"hello world, definitely not a bundle")
    with pytest.raises(CheckpointError):
        load_bundle(path)


def test_wrong_expected_vocab_hash(tmp_path, vocab, lm):
    path = tmp_path / "lm.bundle"
    save_bundle(path, vocab, lm)
    with pytest.raises(CheckpointError):
        load_bundle(path, expect_vocab_hash="0" * 64)
    load_bundle(path, expect_vocab_hash=vocab_hash(vocab))


def test_unfrozen_round_trip_keeps_trainable(tmp_path, vocab):
    config = LMConfig(layers=1, heads=1, dim=8, ff_dim=16, max_context=32,
                      vocab_size=len(vocab))
    params = LMParams.init_random(config, np.random.default_rng(3))
    path = tmp_path / "raw.bundle"
    save_bundle(path, vocab, params)
    loaded = load_bundle(path)
    assert not loaded.lm.frozen
    assert all(n.requires_grad for n in loaded.lm.all_nodes())
