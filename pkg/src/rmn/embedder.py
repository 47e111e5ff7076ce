"""Sentence and question embedding: sum, position-weighted, concatenation,
and recurrent (LSTM/GRU) encoders over a shared word-lookup table.

Word id 0 is the reserved padding token: padded positions contribute zero
in sum/position/concat modes and are masked out of recurrent steps via the
per-sentence lengths.
"""

from __future__ import annotations

import functools

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ShapeError, Tensor

PAD_ID = 0

EMBED_KINDS = ("sum", "position", "concat", "lstm", "gru")


class EmbeddingTable:
    """Word-lookup table stored feature-major: ``table`` has shape (dim, vocab)."""

    def __init__(self, dim: int, vocab_size: int, rng: np.random.Generator,
                 name: str = "embed"):
        scale = 1.0 / np.sqrt(dim)
        self.table = ad.parameter(
            rng.uniform(-scale, scale, size=(dim, vocab_size)), name=name)
        self.dim = dim
        self.vocab_size = vocab_size

    def rows(self) -> Tensor:
        """Word-major view (vocab, dim) used by lookups."""
        return ad.transpose(self.table)


@functools.lru_cache(maxsize=512)
def position_weights(dim: int, length: int) -> np.ndarray:
    """Order-sensitivity coefficients, 1-based in both feature k and position j:
    ``l[k, j] = (1 - j/length) - (k/dim) * (1 - 2*j/length)``.
    """
    k = np.arange(1, dim + 1, dtype=np.float64)[:, None]
    j = np.arange(1, length + 1, dtype=np.float64)[None, :]
    out = (1.0 - j / length) - (k / dim) * (1.0 - 2.0 * j / length)
    out.flags.writeable = False
    return out


class RecurrentCellParams:
    """Gate weights for one recurrent encoder (LSTM or GRU) of width ``hidden``."""

    def __init__(self, kind: str, input_dim: int, hidden: int,
                 rng: np.random.Generator, name: str = "cell"):
        if kind not in ("lstm", "gru"):
            raise ValueError(f"unknown recurrent kind {kind!r}")
        gates = 4 if kind == "lstm" else 3
        sx = 1.0 / np.sqrt(input_dim)
        sh = 1.0 / np.sqrt(hidden)
        self.kind = kind
        self.input_dim = input_dim
        self.hidden = hidden
        self.wx = ad.parameter(
            rng.uniform(-sx, sx, size=(input_dim, gates * hidden)), name=f"{name}.wx")
        self.wh = ad.parameter(
            rng.uniform(-sh, sh, size=(hidden, gates * hidden)), name=f"{name}.wh")
        bias = np.zeros(gates * hidden)
        if kind == "lstm":
            bias[hidden:2 * hidden] = 1.0  # forget-gate bias keeps early memory open
        self.b = ad.parameter(bias, name=f"{name}.b")

    def parameters(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def lstm_sequence(x: Tensor, lengths, cell: RecurrentCellParams) -> Tensor:
    """Final hidden states of an LSTM over packed padded rows (fused kernel)."""
    h_out, cache = kernels.lstm_forward(x.data, lengths, cell.wx.data,
                                        cell.wh.data, cell.b.data)

    def bwd(g):
        return kernels.lstm_backward(g, cache)

    return ad.custom_op("lstm_sequence", (x, cell.wx, cell.wh, cell.b), h_out, bwd)


def gru_sequence(x: Tensor, lengths, cell: RecurrentCellParams) -> Tensor:
    """Final hidden states of a GRU over packed padded rows (fused kernel)."""
    h_out, cache = kernels.gru_forward(x.data, lengths, cell.wx.data,
                                       cell.wh.data, cell.b.data)

    def bwd(g):
        return kernels.gru_backward(g, cache)

    return ad.custom_op("gru_sequence", (x, cell.wx, cell.wh, cell.b), h_out, bwd)


def _as_id_matrix(ids, lengths=None):
    """Normalize to (int64 [n, max_len] matrix, lengths [n])."""
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if lengths is None:
        lengths = np.full(arr.shape[0], arr.shape[1], dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 1):
        raise ShapeError("empty sentence cannot be embedded")
    if np.any(lengths > arr.shape[1]):
        raise ShapeError("length exceeds padded width")
    return arr, lengths


def _word_rows(ids_flat, table: EmbeddingTable) -> Tensor:
    return ad.lookup(table.rows(), ids_flat)


def embed_sum_batch(ids, lengths, table: EmbeddingTable) -> Tensor:
    """Bag-of-words sum per sentence: [n, dim]."""
    mat, lengths = _as_id_matrix(ids, lengths)
    n, max_len = mat.shape
    e = _word_rows(mat.reshape(-1), table)
    mask = (np.arange(max_len)[None, :] < lengths[:, None]).astype(np.float64)
    masked = ad.scale_rows(e, ad.constant(mask.reshape(-1)))
    return ad.segment_sum(masked, np.full(n, max_len, dtype=np.int64))


def embed_position_batch(ids, lengths, table: EmbeddingTable,
                         weights=None) -> Tensor:
    """Position-weighted sum per sentence (order-sensitive): [n, dim]."""
    mat, lengths = _as_id_matrix(ids, lengths)
    n, max_len = mat.shape
    d = table.dim
    e = _word_rows(mat.reshape(-1), table)
    coeff = np.zeros((n, max_len, d))
    for length in np.unique(lengths):
        w = (position_weights(d, int(length)).T if weights is None
             else np.asarray(weights, dtype=np.float64).T[:length])
        rows = lengths == length
        coeff[rows, :length, :] = w
    weighted = ad.mul(e, ad.constant(coeff.reshape(n * max_len, d)))
    return ad.segment_sum(weighted, np.full(n, max_len, dtype=np.int64))


def embed_concat_batch(ids, lengths, table: EmbeddingTable,
                       max_len: int) -> Tensor:
    """Word embeddings laid side by side, zero-padded to ``max_len`` blocks."""
    mat, lengths = _as_id_matrix(ids, lengths)
    n, width = mat.shape
    if width > max_len:
        raise ShapeError(f"sentence width {width} exceeds max_len {max_len}")
    if width < max_len:
        mat = np.concatenate(
            [mat, np.zeros((n, max_len - width), dtype=np.int64)], axis=1)
    e = _word_rows(mat.reshape(-1), table)
    mask = (np.arange(max_len)[None, :] < lengths[:, None]).astype(np.float64)
    masked = ad.scale_rows(e, ad.constant(mask.reshape(-1)))
    return ad.reshape(masked, (n, max_len * table.dim))


def embed_recurrent_batch(ids, lengths, table: EmbeddingTable,
                          cell: RecurrentCellParams) -> Tensor:
    """Final recurrent hidden state per sentence: [n, hidden]."""
    mat, lengths = _as_id_matrix(ids, lengths)
    e = _word_rows(mat.reshape(-1), table)
    run = lstm_sequence if cell.kind == "lstm" else gru_sequence
    return run(e, lengths, cell)


def _single(batch_result: Tensor) -> Tensor:
    return ad.reshape(batch_result, (batch_result.shape[1],))


def embed_sum(word_ids, table: EmbeddingTable) -> Tensor:
    """Sum of word columns for one sentence (order-invariant)."""
    _require_words(word_ids)
    return _single(embed_sum_batch([list(word_ids)], None, table))


def embed_position(word_ids, table: EmbeddingTable, weights=None) -> Tensor:
    """Position-weighted sum for one sentence; ``weights`` overrides the
    standard coefficients (used to check the all-ones degeneration)."""
    _require_words(word_ids)
    return _single(embed_position_batch([list(word_ids)], None, table,
                                        weights=weights))


def embed_concat(word_ids, table: EmbeddingTable, max_len: int) -> Tensor:
    """Concatenation of word columns, zero-padded to ``max_len`` blocks."""
    _require_words(word_ids)
    ids = list(word_ids)
    return _single(embed_concat_batch([ids], [len(ids)], table, max_len))


def embed_recurrent(word_ids, table: EmbeddingTable,
                    cell: RecurrentCellParams, kind: str | None = None) -> Tensor:
    """Final hidden state after reading the sentence left to right."""
    _require_words(word_ids)
    if kind is not None and kind != cell.kind:
        raise ValueError(f"cell is {cell.kind!r}, requested {kind!r}")
    return _single(embed_recurrent_batch([list(word_ids)], None, table, cell))


def _require_words(word_ids):
    if len(word_ids) == 0:
        raise ShapeError("empty sentence cannot be embedded")


class Embedder:
    """Bundles the word table, mode, and (for recurrent modes) the two cells.

    Stories and questions share the word table but use separate recurrent
    parameters; their output widths may differ in concat mode.
    """

    def __init__(self, kind: str, dim: int, vocab_size: int,
                 sentence_max_len: int, question_max_len: int,
                 rng: np.random.Generator, hidden: int | None = None):
        if kind not in EMBED_KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}")
        self.kind = kind
        self.table = EmbeddingTable(dim, vocab_size, rng)
        self.sentence_max_len = sentence_max_len
        self.question_max_len = question_max_len
        self.story_cell = None
        self.question_cell = None
        if kind in ("lstm", "gru"):
            hidden = hidden or dim
            self.story_cell = RecurrentCellParams(kind, dim, hidden, rng, "story_cell")
            self.question_cell = RecurrentCellParams(kind, dim, hidden, rng, "question_cell")

    @property
    def memory_width(self) -> int:
        if self.kind in ("lstm", "gru"):
            return self.story_cell.hidden
        if self.kind == "concat":
            return self.table.dim * self.sentence_max_len
        return self.table.dim

    @property
    def question_width(self) -> int:
        if self.kind in ("lstm", "gru"):
            return self.question_cell.hidden
        if self.kind == "concat":
            return self.table.dim * self.question_max_len
        return self.table.dim

    def embed_sentences(self, ids, lengths) -> Tensor:
        return self._embed(ids, lengths, self.story_cell, self.sentence_max_len)

    def embed_questions(self, ids, lengths) -> Tensor:
        return self._embed(ids, lengths, self.question_cell, self.question_max_len)

    def _embed(self, ids, lengths, cell, max_len) -> Tensor:
        if self.kind == "sum":
            return embed_sum_batch(ids, lengths, self.table)
        if self.kind == "position":
            return embed_position_batch(ids, lengths, self.table)
        if self.kind == "concat":
            return embed_concat_batch(ids, lengths, self.table, max_len)
        return embed_recurrent_batch(ids, lengths, self.table, cell)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embed.table": self.table.table}
        for tag, cell in (("story_cell", self.story_cell),
                          ("question_cell", self.question_cell)):
            if cell is not None:
                for k, v in cell.parameters().items():
                    out[f"embed.{tag}.{k}"] = v
        return out
