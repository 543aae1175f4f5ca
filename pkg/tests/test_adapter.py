import numpy as np
import pytest

import audiodct.autograd as ag
from audiodct.adapter import AdapterDims, adapter_forward, init_adapter
from audiodct.backbone import (
    ContextAssembly,
    EmbeddingSegment,
    LMConfig,
    LMParams,
    TokenSegment,
    freeze,
    lm_forward,
)
from conftest import fd_check


@pytest.fixture
def dims():
    return AdapterDims(in_dim=6, model_dim=16, hidden=10)


def test_block_count_rounding(dims):
    adapter = init_adapter(np.random.default_rng(0), dims, np.float64)
    out = adapter_forward(np.ones((6, 5)), adapter)
    assert out.shape == (16, 1)
    out = adapter_forward(np.ones((6, 7)), adapter)
    assert out.shape == (16, 2)
    out = adapter_forward(np.ones((6, 23)), adapter)
    assert out.shape == (16, 5)


def test_tail_padded_block_equals_explicit_zero_padding(dims):
    adapter = init_adapter(np.random.default_rng(1), dims, np.float64)
    x = np.random.default_rng(2).normal(size=(6, 7))
    padded = np.concatenate([x, np.zeros((6, 3))], axis=1)
    np.testing.assert_allclose(
        adapter_forward(x, adapter).value,
        adapter_forward(padded, adapter).value,
        atol=1e-12,
    )


def test_zero_weights_give_bias_everywhere(dims):
    adapter = init_adapter(np.random.default_rng(0), dims, np.float64)
    for name in ("adapter.w1", "adapter.w2", "adapter.b1"):
        adapter[name].value[:] = 0.0
    adapter["adapter.b2"].value[:] = np.arange(16.0)
    out = adapter_forward(np.random.default_rng(3).normal(size=(6, 12)), adapter).value
    assert out.shape == (16, 3)
    for col in range(3):
        np.testing.assert_allclose(out[:, col], np.arange(16.0), atol=1e-12)


def test_init_deterministic_and_biases_zero(dims):
    a = init_adapter(np.random.default_rng(0), dims)
    b = init_adapter(np.random.default_rng(0), dims)
    for name in a.names:
        np.testing.assert_array_equal(a[name].value, b[name].value)
    assert np.all(a["adapter.b1"].value == 0)
    assert np.all(a["adapter.b2"].value == 0)
    bound = np.sqrt(6.0 / (dims.stacked + dims.hidden))
    w1 = a["adapter.w1"].value
    assert np.all(np.abs(w1) <= bound)
    assert w1.std() > bound / 4  # actually spread out, not collapsed


def test_parameter_count(dims):
    adapter = init_adapter(np.random.default_rng(0), dims)
    expected = 30 * 10 + 10 + 10 * 16 + 16
    assert adapter.parameter_count() == expected


def test_block_locality(dims):
    """Perturbing frames of block i changes only output column i."""
    adapter = init_adapter(np.random.default_rng(4), dims, np.float64)
    x = np.random.default_rng(5).normal(size=(6, 15))
    base = adapter_forward(x, adapter).value
    for block in range(3):
        bumped = x.copy()
        bumped[:, 5 * block: 5 * (block + 1)] += 0.5
        out = adapter_forward(bumped, adapter).value
        changed = [c for c in range(3) if np.any(out[:, c] != base[:, c])]
        assert changed == [block]


def test_hidden_defaults_to_model_dim():
    dims = AdapterDims(in_dim=8, model_dim=24)
    assert dims.hidden == 24


def test_dimension_mismatch_rejected(dims):
    adapter = init_adapter(np.random.default_rng(0), dims)
    with pytest.raises(ValueError):
        adapter_forward(np.ones((7, 10)), adapter)


def test_full_path_gradient_through_frozen_lm(dims):
    """d(loss)/d(adapter) through the whole frozen transformer matches
    central finite differences at 64-bit."""
    config = LMConfig(layers=2, heads=2, dim=16, ff_dim=32, max_context=64,
                      vocab_size=11, dtype="float64")
    lm = LMParams.init_random(config, np.random.default_rng(7))
    freeze(lm)
    adapter = init_adapter(np.random.default_rng(8), dims, np.float64)
    x = np.random.default_rng(9).normal(size=(6, 8))
    targets = [4, 9, 3, 2]

    def build():
        seg = EmbeddingSegment(adapter_forward(x, adapter))
        assembly = ContextAssembly(
            [TokenSegment((1, 4)), seg, TokenSegment((6, 5))]
        )
        return ag.cross_entropy(lm_forward(lm, assembly, targets[:-1]), targets)

    worst = fd_check(build, adapter.all_nodes(), np.random.default_rng(10), samples=15)
    assert worst < 1e-4


def test_gradient_also_reaches_audio_input(dims):
    adapter = init_adapter(np.random.default_rng(0), dims, np.float64)
    x = ag.parameter(np.random.default_rng(1).normal(size=(6, 8)))

    def build():
        out = adapter_forward(x, adapter)
        return ag.mean_all(ag.mul(out, out))

    assert fd_check(build, [x], np.random.default_rng(2), samples=20) < 1e-4


def test_init_output_norm_near_embedding_norm():
    """Adapter outputs at init sit within 10x of the token-embedding scale of
    the default-size backbone (measured bound, pinned)."""
    config = LMConfig(vocab_size=200)
    lm = LMParams.init_random(config, np.random.default_rng(0))
    adapter = init_adapter(np.random.default_rng(1), AdapterDims(32, config.dim))
    x = np.random.default_rng(2).normal(size=(32, 30)).astype(np.float32)
    out = adapter_forward(x, adapter).value
    emb_norm = np.linalg.norm(lm["tok_emb"].value, axis=1).mean()
    out_norm = np.linalg.norm(out, axis=0).mean()
    assert 0.1 <= out_norm / emb_norm <= 10.0
