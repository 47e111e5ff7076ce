"""Hop attention, erasure, and reasoning against scalar loop oracles."""

import math

import numpy as np
import pytest

from rmn import autodiff as ad
from rmn import model as mdl
from rmn.autodiff import Tape, TensorError, backward, grad_check


def mlp_oracle(x_row, layers, activation):
    """Pure-Python forward through (weight, bias) layers; final layer linear."""
    act = {"relu": lambda v: max(0.0, v), "tanh": math.tanh,
           "sigmoid": lambda v: 1.0 / (1.0 + math.exp(-v))}[activation]
    values = list(x_row)
    for idx, (w, b) in enumerate(layers):
        out = []
        for j in range(len(w[0])):
            s = b[j] if b is not None else 0.0
            for k in range(len(values)):
                s += values[k] * w[k][j]
            out.append(s)
        if idx < len(layers) - 1:
            out = [act(v) for v in out]
        values = out
    return values


def softmax_oracle(scores):
    mx = max(scores)
    exps = [math.exp(s - mx) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def hop_oracle(memory_rows, relation, layers, activation, beta):
    """Loop-by-loop attention hop: scores, sharpened softmax, weighted sum."""
    raw = [mlp_oracle(list(row) + list(relation), layers, activation)[0]
           for row in memory_rows]
    alpha = softmax_oracle([beta * w for w in raw])
    d = len(memory_rows[0])
    readout = [sum(alpha[i] * memory_rows[i][k] for i in range(len(memory_rows)))
               for k in range(d)]
    return raw, alpha, readout


def extract_layers(mlp):
    return [(w.data.tolist(), None if b is None else b.data.tolist())
            for w, b, _, _ in mlp.layers]


def make_hop(rng, in_width, widths=(6, 1), activation="tanh"):
    return mdl.HopParams(in_width, widths, activation, False, rng)


def test_beta_transform_values():
    assert np.allclose(mdl.beta_transform(0.0), 1.0 + np.log(2.0))
    assert np.allclose(mdl.beta_transform(-40.0), 1.0, atol=1e-12)
    assert np.allclose(mdl.beta_transform(10.0), 11.0000454, atol=1e-6)
    z = ad.parameter(np.zeros(()))
    assert np.allclose(mdl.beta_transform(z).item(), 1.0 + np.log(2.0))


def test_beta_strictly_above_one():
    for z in (-300.0, -5.0, 0.0, 7.0, 200.0):
        assert mdl.beta_transform(z) >= 1.0
        assert np.isfinite(mdl.beta_transform(z))


def test_attention_weights_named_example():
    # scorer passes through the single memory feature; beta forced to 1
    rng = np.random.default_rng(0)
    hop = mdl.HopParams(2, [1], "relu", False, rng)
    hop.score_mlp.layers[0] = (ad.constant([[1.0], [0.0]]),
                               ad.constant([0.0]), None, None)
    hop.temperature_z = ad.constant(np.full((), -50.0))
    memory = ad.constant([[np.log(2.0)], [0.0]])
    q = ad.constant([0.0])
    state = mdl.MemoryState(memory=memory, question=q, relation=q, hop=0)
    alpha, _ = mdl.attention_hop(state, hop)
    assert np.allclose(alpha.data, [2 / 3, 1 / 3], atol=1e-9)


def test_constant_scores_give_uniform_alpha_and_mean_readout():
    rng = np.random.default_rng(1)
    hop = make_hop(rng, 8)
    for w, b, bn, act in hop.score_mlp.layers:
        arr = w.data
        arr.flags.writeable = True
        arr[...] = 0.0
        arr.flags.writeable = False
    memory = ad.constant(rng.normal(size=(5, 4)))
    q = ad.constant(rng.normal(size=(4,)))
    state = mdl.MemoryState(memory=memory, question=q, relation=q, hop=0)
    alpha, readout = mdl.attention_hop(state, hop)
    assert np.allclose(alpha.data, 0.2)
    assert np.allclose(readout.data, memory.data.mean(axis=0))


def test_attention_hop_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        n, d = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        hop = make_hop(rng, 2 * d)
        memory = ad.constant(rng.normal(size=(n, d)))
        q = ad.constant(rng.normal(size=(d,)))
        state = mdl.MemoryState(memory=memory, question=q, relation=q, hop=0)
        trace = mdl.AttentionTrace()
        alpha, readout = mdl.attention_hop(state, hop, trace)
        raw, alpha_o, readout_o = hop_oracle(
            memory.data.tolist(), q.data.tolist(),
            extract_layers(hop.score_mlp), "tanh",
            mdl.beta_transform(float(hop.temperature_z.data)))
        assert np.allclose(alpha.data, alpha_o, atol=1e-10)
        assert np.allclose(readout.data, readout_o, atol=1e-10)
        assert np.allclose(trace.hops[0].raw_weights, np.array(raw).ravel(),
                           atol=1e-10)


def test_memory_update_examples():
    memory = ad.constant([[4.0, -8.0], [1.0, 2.0], [3.0, 3.0]])
    alpha = ad.constant([0.25, 1.0, 0.0])
    out = mdl.memory_update(memory, alpha)
    assert np.allclose(out.data, [[3.0, -6.0], [0.0, 0.0], [3.0, 3.0]])
    with pytest.raises(TensorError):
        mdl.memory_update(memory, ad.constant([0.5, 1.2, 0.0]))


def test_memory_update_gradient_flows_to_both_inputs():
    rng = np.random.default_rng(3)
    memory = ad.parameter(rng.normal(size=(4, 3)))
    alpha = ad.parameter(rng.uniform(0.05, 0.95, size=4))
    w = ad.constant(rng.normal(size=(4, 3)))
    err = grad_check(
        lambda m, a: ad.reduce_sum(ad.mul(mdl.memory_update(m, a), w)),
        [memory, alpha])
    assert err <= 1e-4


def test_erasure_contraction():
    rng = np.random.default_rng(4)
    memory = ad.constant(rng.normal(size=(6, 5)))
    alpha = ad.constant(rng.uniform(0.0, 1.0, size=6))
    out = mdl.memory_update(memory, alpha)
    assert (np.abs(out.data) <= np.abs(memory.data) + 1e-15).all()


def test_reason_zero_weights_give_uniform():
    rng = np.random.default_rng(5)
    f_phi = mdl.MlpParams(6, [4, 5], "relu", False, rng)
    for i, (w, b, bn, act) in enumerate(f_phi.layers):
        zw = ad.constant(np.zeros(w.shape))
        zb = ad.constant(np.zeros(b.shape))
        f_phi.layers[i] = (zw, zb, bn, act)
    dist = mdl.reason(ad.constant(np.ones(3)), ad.constant(np.ones(3)), f_phi)
    assert np.allclose(dist.probabilities, 0.2)


def test_reason_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    f_phi = mdl.MlpParams(5, [7, 4], "tanh", False, rng)
    r = rng.normal(size=3)
    q = rng.normal(size=2)
    dist = mdl.reason(ad.constant(r), ad.constant(q), f_phi)
    logits = mlp_oracle(list(r) + list(q), extract_layers(f_phi), "tanh")
    probs = softmax_oracle(logits)
    assert np.allclose(dist.probabilities, probs, atol=1e-10)
    assert dist.argmax() == int(np.argmax(probs))
    assert np.allclose(dist.probabilities.sum(), 1.0, atol=1e-9)


def _toy_model(rng, d=3, hops=2, activation="relu"):
    hop_params = [mdl.HopParams(2 * d, [5, 1], activation, False, rng,
                                name=f"hop{i}") for i in range(hops)]
    f_phi = mdl.MlpParams(2 * d, [6, 4], activation, False, rng, name="reason")
    return hop_params, f_phi


def test_single_hop_never_touches_memory_update(monkeypatch):
    rng = np.random.default_rng(7)
    hops, f_phi = _toy_model(rng, hops=1)
    calls = []
    original = mdl.memory_update
    monkeypatch.setattr(mdl, "memory_update",
                        lambda *a: calls.append(1) or original(*a))
    memory = ad.constant(rng.normal(size=(3, 3)))
    q = ad.constant(rng.normal(size=(3,)))
    mdl.rmn_forward(memory, q, hops, f_phi)
    assert calls == []


def test_two_hop_trace_rows_sum_to_one():
    rng = np.random.default_rng(8)
    hops, f_phi = _toy_model(rng, hops=2)
    memory = ad.constant(rng.normal(size=(4, 3)))
    q = ad.constant(rng.normal(size=(3,)))
    dist, trace = mdl.rmn_forward(memory, q, hops, f_phi)
    assert len(trace) == 2
    for hop in trace.hops:
        assert np.allclose(hop.alpha.sum(), 1.0, atol=1e-6)
        assert hop.beta > 1.0
    assert np.allclose(dist.probabilities.sum(), 1.0, atol=1e-6)


def test_full_model_gradient_vs_finite_differences():
    rng = np.random.default_rng(9)
    hops, f_phi = _toy_model(rng, hops=2, activation="tanh")
    memory = ad.parameter(rng.normal(size=(3, 3)))
    q = ad.parameter(rng.normal(size=(3,)))
    params = [memory, q]
    for h in hops:
        params += list(h.named_parameters().values())
    params += list(f_phi.named_parameters().values())

    def loss_fn(*_):
        dist, _ = mdl.rmn_forward(memory, q, hops, f_phi)
        return ad.cross_entropy(dist.logits, [2])

    assert grad_check(loss_fn, params) <= 1e-4


def test_temperature_monotonicity_of_entropy():
    rng = np.random.default_rng(10)
    for _ in range(20):
        w = rng.normal(size=6)
        if np.allclose(w, w[0]):
            continue
        entropies = []
        for beta in (1.0, 2.0, 5.0, 10.0):
            a = np.exp(beta * w - (beta * w).max())
            a /= a.sum()
            entropies.append(-(a * np.log(a + 1e-300)).sum())
        assert all(e1 >= e2 - 1e-9 for e1, e2 in zip(entropies, entropies[1:]))


def test_hop_parameters_are_independent():
    rng = np.random.default_rng(11)
    hops, f_phi = _toy_model(rng, hops=2)
    memory = ad.constant(rng.normal(size=(4, 3)))
    q = ad.constant(rng.normal(size=(3,)))
    _, trace_before = mdl.rmn_forward(memory, q, hops, f_phi)
    w2 = hops[1].score_mlp.layers[0][0]
    arr = w2.data
    arr.flags.writeable = True
    arr += 3.21
    arr.flags.writeable = False
    _, trace_after = mdl.rmn_forward(memory, q, hops, f_phi)
    assert np.array_equal(trace_before.hops[0].alpha, trace_after.hops[0].alpha)
    assert not np.allclose(trace_before.hops[1].alpha, trace_after.hops[1].alpha)


def test_initial_relation_must_be_question():
    q = ad.constant([1.0, 2.0])
    other = ad.constant([1.0, 2.0])
    with pytest.raises(TensorError):
        mdl.MemoryState(memory=ad.constant([[1.0, 2.0]]), question=q,
                        relation=other, hop=0)
