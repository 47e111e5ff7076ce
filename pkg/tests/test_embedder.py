"""Embedding methods: values against brute-force oracles, order behavior."""

import numpy as np
import pytest

from rmn import autodiff as ad
from rmn import embedder as emb
from rmn.autodiff import ShapeError, grad_check


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return emb.EmbeddingTable(4, 9, rng)


def test_single_word_is_table_column(table):
    out = emb.embed_sum([3], table)
    assert np.array_equal(out.data, table.table.data[:, 3])


def test_sum_is_order_invariant(table):
    a = emb.embed_sum([1, 5, 2], table).data
    b = emb.embed_sum([2, 1, 5], table).data
    assert np.allclose(a, b)


def test_sum_matches_onehot_matmul_oracle(table):
    # independent route: A @ sum_j onehot(w_j)
    words = [2, 7, 7]
    v = table.vocab_size
    onehots = np.zeros(v)
    for w in words:
        onehots[w] += 1.0
    expected = table.table.data @ onehots
    assert np.allclose(emb.embed_sum(words, table).data, expected, atol=1e-12)


def test_position_weight_values():
    assert np.allclose(emb.position_weights(2, 2), [[0.5, 0.5], [0.5, 1.0]])


def test_single_word_position_weight_is_k_over_d(table):
    # length 1: l_k1 = k/d, so the output is the column scaled elementwise
    out = emb.embed_position([6], table).data
    col = table.table.data[:, 6]
    k_over_d = np.arange(1, 5) / 4.0
    assert np.allclose(out, col * k_over_d, atol=1e-12)


def test_position_is_order_sensitive(table):
    a = emb.embed_position([1, 5], table).data
    b = emb.embed_position([5, 1], table).data
    assert not np.allclose(a, b)


def test_position_with_unit_weights_degenerates_to_sum(table):
    words = [1, 5, 2]
    ones = np.ones((4, 3))
    a = emb.embed_position(words, table, weights=ones).data
    b = emb.embed_sum(words, table).data
    assert np.allclose(a, b, atol=1e-12)


def test_position_matches_direct_evaluation(table):
    words = [3, 8]
    l = emb.position_weights(4, 2)
    expected = (l[:, 0] * table.table.data[:, 3]
                + l[:, 1] * table.table.data[:, 8])
    assert np.allclose(emb.embed_position(words, table).data, expected,
                       atol=1e-12)


def test_concat_layout_and_padding(table):
    out = emb.embed_concat([2, 5], table, 2).data
    expected = np.concatenate([table.table.data[:, 2], table.table.data[:, 5]])
    assert np.allclose(out, expected)
    padded = emb.embed_concat([2], table, 3).data
    assert padded.shape == (12,)
    assert np.allclose(padded[:4], table.table.data[:, 2])
    assert np.abs(padded[4:]).max() == 0.0
    with pytest.raises(ShapeError):
        emb.embed_concat([1, 2, 3, 4], table, 3)


def test_empty_sentence_rejected(table):
    for fn in (lambda: emb.embed_sum([], table),
               lambda: emb.embed_position([], table),
               lambda: emb.embed_concat([], table, 3)):
        with pytest.raises(ShapeError):
            fn()


def test_recurrent_is_order_sensitive(table):
    rng = np.random.default_rng(1)
    cell = emb.RecurrentCellParams("lstm", 4, 3, rng)
    a = emb.embed_recurrent([1, 5], table, cell).data
    b = emb.embed_recurrent([5, 1], table, cell).data
    assert not np.allclose(a, b)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_recurrent_full_gradient(kind, table):
    rng = np.random.default_rng(2)
    cell = emb.RecurrentCellParams(kind, 4, 3, rng)
    w = ad.constant(rng.normal(size=(1, 3)))

    def f(tbl, wx, wh, b):
        out = emb.embed_recurrent_batch([[1, 5, 2]], [3], table, cell)
        return ad.reduce_sum(ad.mul(out, w))

    err = grad_check(f, [table.table, cell.wx, cell.wh, cell.b])
    assert err <= 1e-4


def test_padding_rows_get_no_gradient(table):
    # masked pad positions must not leak gradient into word 0's column
    w = ad.constant(np.random.default_rng(3).normal(size=(2, 4)))

    def f(tbl):
        out = emb.embed_sum_batch([[3, 4, 0], [5, 0, 0]], [2, 1], table)
        return ad.reduce_sum(ad.mul(out, w))

    with ad.Tape() as t:
        loss = f(table.table)
        g = ad.backward(loss, t)
    grad_cols = g[table.table]
    assert np.abs(grad_cols[:, 0]).max() == 0.0
    assert np.abs(grad_cols[:, 3]).max() > 0.0


def test_embedder_widths():
    rng = np.random.default_rng(4)
    e = emb.Embedder("concat", 4, 9, sentence_max_len=5, question_max_len=3,
                     rng=rng)
    assert e.memory_width == 20 and e.question_width == 12
    e2 = emb.Embedder("gru", 4, 9, 5, 3, rng, hidden=7)
    assert e2.memory_width == 7 and e2.question_width == 7
    assert e2.story_cell is not e2.question_cell
