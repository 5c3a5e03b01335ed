import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsmil import autodiff as ad
from wsmil.audio import FeatureMatrix
from wsmil.errors import ShapeError
from wsmil.gradcheck import numerical_gradient, relative_error
from wsmil.losses import batch_loss
from wsmil.model import (
    FramePredictions,
    ModelConfig,
    forward,
    forward_batch,
    glorot_bound,
    init_params,
    load_model,
    predict,
    save_model,
    threshold,
)

TINY = ModelConfig(conv_channels=3, gru_units=2, dense_units=3)
SMALL = ModelConfig(conv_channels=4, gru_units=3, dense_units=5)


def _feats(T, seed=0, F=40):
    return FeatureMatrix(np.random.default_rng(seed).normal(size=(T, F)), 507 / 44100, "r")


def test_full_size_parameter_shapes():
    m = init_params(0)
    shapes = {k: t.shape for k, t in m.params.items()}
    assert shapes["conv1.kernel"] == (3, 3, 1, 64)
    assert shapes["conv2.kernel"] == shapes["conv3.kernel"] == (3, 3, 64, 64)
    assert shapes["gru1.fwd.W"] == (64, 192) and shapes["gru2.bwd.W"] == (128, 192)
    assert shapes["gru1.bwd.U"] == (64, 192)
    assert shapes["dense1.W"] == (128, 64) and shapes["dense2.W"] == (64, 1)
    assert ModelConfig().pooled_freq() == 1


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_params(3, SMALL), init_params(3, SMALL), init_params(4, SMALL)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_glorot_bounds_and_constant_inits():
    m = init_params(0)
    fans = {
        "conv1.kernel": (9, 9 * 64), "conv2.kernel": (9 * 64, 9 * 64), "conv3.kernel": (9 * 64, 9 * 64),
        "gru1.fwd.W": (64, 192), "gru1.fwd.U": (64, 192), "gru2.bwd.W": (128, 192),
        "dense1.W": (128, 64), "dense2.W": (64, 1),
    }
    for name, (fi, fo) in fans.items():
        bound = np.sqrt(6.0 / (fi + fo))
        assert glorot_bound(fi, fo) == pytest.approx(bound)
        w = m.params[name].data
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.5 * bound
    for i in (1, 2, 3):
        np.testing.assert_array_equal(m.params[f"bn{i}.gamma"].data, 1.0)
        np.testing.assert_array_equal(m.params[f"bn{i}.beta"].data, 0.0)
        np.testing.assert_array_equal(m.params[f"conv{i}.bias"].data, 0.0)
    np.testing.assert_array_equal(m.params["dense2.b"].data, 0.0)


def test_length_432_full_width():
    preds = predict(init_params(0), _feats(432))
    assert len(preds) == 432 and preds.o.shape == (432,)
    assert ((preds.o >= 0) & (preds.o <= 1)).all()


@given(st.integers(8, 1024))
@settings(max_examples=15, deadline=None)
def test_length_preserved(T):
    o = predict(init_params(1, SMALL), _feats(T, T)).o
    assert o.shape == (T,)
    assert np.isfinite(o).all() and ((o >= 0) & (o <= 1)).all()


def test_wrong_band_count():
    with pytest.raises(ShapeError):
        predict(init_params(0, SMALL), _feats(20, F=64))


def test_padded_batch_matches_individual_inference():
    m = init_params(2, SMALL)
    a, b = _feats(30, 1).frames, _feats(18, 2).frames
    x = np.zeros((2, 30, 40))
    x[0], x[1, :18] = a, b
    mask = np.zeros((2, 30), bool)
    mask[0], mask[1, :18] = True, True
    batch = forward_batch(m, x, mask).data
    np.testing.assert_allclose(batch[0], forward_batch(m, a).data[0], atol=1e-12)
    np.testing.assert_allclose(batch[1, :18], forward_batch(m, b).data[0], atol=1e-12)


def test_end_to_end_gradient_check():
    cfg = TINY
    model = init_params(7, cfg)
    x = np.random.default_rng(8).normal(size=(2, 12, 40))
    mask = np.ones((2, 12), bool)
    mask[1, 9:] = False
    Y = [1, 0]

    def loss_value():
        return float(batch_loss("mmm", forward_batch(model, x, mask, training=True), Y, mask).data)

    buffers = {k: v.copy() for k, v in model.buffers.items()}
    loss = batch_loss("mmm", forward_batch(model, x, mask, training=True), Y, mask)
    analytic = ad.backward(loss, list(model.params.values()))

    arrays = [t.data for t in model.params.values()]

    def f():
        # running statistics do not feed the training-mode output, but keep them fixed anyway
        for k, v in buffers.items():
            model.buffers[k][...] = v
        return loss_value()

    numeric = numerical_gradient(f, arrays)
    checked = []
    for name, a, n in zip(model.params, analytic, numeric):
        if name.startswith("conv") and name.endswith(".bias"):
            # batch norm subtracts the per-channel mean, so these gradients vanish exactly
            assert np.abs(a).max() < 1e-12 and np.abs(n).max() < 1e-9
            continue
        assert relative_error([a], [n]) <= 1e-4, name
        checked.append(name)
    assert len(checked) == len(model.params) - 3


def test_train_infer_consistency_with_frozen_statistics():
    cfg = ModelConfig(conv_channels=4, gru_units=3, dense_units=5, bn_momentum=0.0)
    m = init_params(3, cfg)
    x = np.random.default_rng(4).normal(size=(3, 25, 40))
    train_out = forward_batch(m, x, training=True).data
    # momentum 0 leaves the running statistics equal to this batch's statistics
    infer_out = forward_batch(m, x, training=False).data
    np.testing.assert_allclose(train_out, infer_out, atol=1e-9)


def test_forward_modes():
    m = init_params(0, SMALL)
    feats = _feats(40)
    tr = forward(m, feats, "train")
    inf = forward(m, feats, "infer")
    assert isinstance(tr.output, ad.Tensor) and tr.output.requires_grad
    assert inf.output is None
    with pytest.raises(ValueError):
        forward(m, feats, "eval")


def _time_reversed_model(model):
    """Parameters computing the time-reversed prediction sequence.

    Convolution kernels are flipped along time and the GRU directions swap;
    since every bidirectional layer concatenates [forward | backward], the
    input rows of the next GRU layer and of dense1 swap halves too.
    """
    rev = model.copy()
    p = {k: t.data for k, t in rev.params.items()}
    H = model.config.gru_units
    for i in range(1, len(model.config.pool_sizes) + 1):
        p[f"conv{i}.kernel"][...] = model.params[f"conv{i}.kernel"].data[::-1]
    swap_rows = np.r_[H:2 * H, 0:H]
    for layer in range(1, model.config.gru_layers + 1):
        for n in "WUb":
            f, b = model.params[f"gru{layer}.fwd.{n}"].data, model.params[f"gru{layer}.bwd.{n}"].data
            if layer > 1 and n == "W":
                f, b = f[swap_rows], b[swap_rows]
            p[f"gru{layer}.fwd.{n}"][...] = b
            p[f"gru{layer}.bwd.{n}"][...] = f
    p["dense1.W"][...] = model.params["dense1.W"].data[swap_rows]
    return rev


def test_bidirectional_time_reversal():
    m = init_params(5, SMALL)
    # random biases so the symmetry is not helped by zeros
    rng = np.random.default_rng(6)
    for k, t in m.params.items():
        if k.endswith(".b") or k.endswith(".bias") or k.endswith(".beta"):
            t.data[...] = rng.normal(size=t.shape)
    x = rng.normal(size=(2, 33, 40))
    out = forward_batch(m, x).data
    out_rev = forward_batch(_time_reversed_model(m), x[:, ::-1]).data
    np.testing.assert_allclose(out_rev[:, ::-1], out, atol=1e-12)


@pytest.mark.parametrize("o,expected", [([0.5], [1]), ([0.4999], [0]), ([0, 1, 0.7], [0, 1, 1])])
def test_threshold(o, expected):
    np.testing.assert_array_equal(threshold(FramePredictions(np.array(o)), 0.5), expected)


def test_threshold_custom_tau():
    np.testing.assert_array_equal(threshold(np.array([0.2, 0.3, 0.31]), 0.3), [0, 1, 1])


def test_checkpoint_roundtrip(tmp_path):
    m = init_params(9, SMALL)
    forward_batch(m, _feats(20).frames, training=True)  # move the running statistics
    p = tmp_path / "m.wsck"
    save_model(p, m)
    back = load_model(p)
    assert back.config.conv_channels == 4 and back.config.gru_units == 3 and back.config.dense_units == 5
    for k, v in m.arrays().items():
        assert back.arrays()[k].tobytes() == v.tobytes()
    feats = _feats(50, 3)
    assert predict(back, feats).o.tobytes() == predict(m, feats).o.tobytes()


def test_float32_model_tracks_float64():
    m = init_params(1, SMALL)
    feats = _feats(60, 2)
    o64 = predict(m, feats).o
    o32 = predict(m.astype("float32"), feats).o
    assert o32.dtype == np.float32
    np.testing.assert_allclose(o32, o64, atol=1e-5)
