"""Fused recurrent kernels: hand oracles, gradients, backend equivalence."""

import math

import numpy as np
import pytest

from rmn import autodiff as ad
from rmn import embedder as emb
from rmn.autodiff import grad_check
from rmn.kernels import reference

try:
    from rmn.kernels import _fused
except ImportError:
    _fused = None


def _cell(kind, d, h, rng, scale=0.4):
    cell = emb.RecurrentCellParams(kind, d, h, rng)
    gates = 4 if kind == "lstm" else 3
    cell.wx = ad.parameter(rng.normal(size=(d, gates * h)) * scale)
    cell.wh = ad.parameter(rng.normal(size=(h, gates * h)) * scale)
    cell.b = ad.parameter(rng.normal(size=gates * h) * scale)
    return cell


def test_zero_weight_lstm_is_fixed_point():
    rng = np.random.default_rng(0)
    cell = emb.RecurrentCellParams("lstm", 3, 4, rng)
    cell.wx = ad.constant(np.zeros((3, 16)))
    cell.wh = ad.constant(np.zeros((4, 16)))
    cell.b = ad.constant(np.zeros(16))
    x = ad.constant(rng.normal(size=(5, 3)))
    out = emb.lstm_sequence(x, [5], cell)
    assert np.abs(out.data).max() == 0.0


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_lstm_single_step_matches_hand_computation():
    # scalar-width cell, one step: every gate evaluated by hand
    wx = np.array([[0.5, -0.3, 0.8, 0.2]])
    wh = np.array([[0.1, 0.4, -0.2, 0.3]])
    b = np.array([0.05, -0.1, 0.2, 0.0])
    x = 0.7
    h_out, _ = reference.lstm_forward(np.array([[x]]), [1], wx, wh, b)
    i = sigmoid(x * 0.5 + 0.05)
    f = sigmoid(x * -0.3 - 0.1)
    g = math.tanh(x * 0.8 + 0.2)
    o = sigmoid(x * 0.2 + 0.0)
    c = f * 0.0 + i * g
    assert np.allclose(h_out[0, 0], o * math.tanh(c), atol=1e-12)


def test_gru_single_step_matches_hand_computation():
    wx = np.array([[0.5, -0.3, 0.8]])
    wh = np.array([[0.1, 0.4, -0.2]])
    b = np.array([0.05, -0.1, 0.2])
    x = -0.4
    h_out, _ = reference.gru_forward(np.array([[x]]), [1], wx, wh, b)
    r = sigmoid(x * 0.5 + 0.05)
    z = sigmoid(x * -0.3 - 0.1)
    n = math.tanh(x * 0.8 + 0.2 + r * 0.0)
    assert np.allclose(h_out[0, 0], z * 0.0 + (1 - z) * n, atol=1e-12)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_sequence_gradient_vs_finite_differences(kind):
    rng = np.random.default_rng(7)
    d, h, n, L = 3, 4, 3, 5
    cell = _cell(kind, d, h, rng)
    x = ad.parameter(rng.normal(size=(n * L, d)))
    lengths = [5, 2, 4]
    w = ad.constant(rng.normal(size=(n, h)))
    run = emb.lstm_sequence if kind == "lstm" else emb.gru_sequence

    def f(x, wx, wh, b):
        return ad.reduce_sum(ad.mul(run(x, lengths, cell), w))

    err = grad_check(f, [x, cell.wx, cell.wh, cell.b])
    assert err <= 1e-4


def test_masking_keeps_short_sequences_fixed():
    rng = np.random.default_rng(8)
    cell = _cell("lstm", 3, 4, rng)
    base = rng.normal(size=(2 * 6, 3))
    x1 = base.copy()
    x2 = base.copy()
    x2[3:6] = 99.0  # beyond the first sequence's length, must not matter
    x2[9:12] = -99.0
    out1, _ = reference.lstm_forward(x1, [3, 3], cell.wx.data, cell.wh.data,
                                     cell.b.data)
    out2, _ = reference.lstm_forward(x2, [3, 3], cell.wx.data, cell.wh.data,
                                     cell.b.data)
    assert np.array_equal(out1, out2)


@pytest.mark.skipif(_fused is None, reason="compiled extension not built")
@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_compiled_matches_reference(kind):
    rng = np.random.default_rng(9)
    gates = 4 if kind == "lstm" else 3
    n, L, d, h = 9, 7, 6, 5
    x = rng.normal(size=(n * L, d))
    lengths = rng.integers(1, L + 1, size=n)
    wx = rng.normal(size=(d, gates * h)) * 0.5
    wh = rng.normal(size=(h, gates * h)) * 0.5
    b = rng.normal(size=gates * h) * 0.5
    dh = rng.normal(size=(n, h))
    fr = getattr(reference, f"{kind}_forward")
    br = getattr(reference, f"{kind}_backward")
    fc = getattr(_fused, f"{kind}_forward")
    bc = getattr(_fused, f"{kind}_backward")
    h1, c1 = fr(x, lengths, wx, wh, b)
    h2, c2 = fc(x, lengths, wx, wh, b)
    assert np.allclose(h1, h2, atol=1e-12, rtol=1e-12)
    for g1, g2 in zip(br(dh, c1), bc(dh, c2)):
        assert np.allclose(g1, g2, atol=1e-12, rtol=1e-12)


def test_backend_selection_reports_a_backend():
    from rmn import kernels

    assert kernels.backend() in ("compiled", "numpy")
