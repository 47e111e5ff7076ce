"""Interchangeable attention scoring variants and a pairwise relation-net
baseline.

Each variant replaces the whole hop: how memory rows are scored against the
relation vector, how the relation vector advances, and how memory is
rewritten for the next hop. The ``mlp`` variant is the native hop (MLP
scorer + multiplicative erasure); ``inner_product`` and
``gated_inner_product`` score by dot product and rewrite memory with a
per-hop linear map; ``absdiff_two_embeddings`` scores a feature vector
[m * r, |m - r|] built under two separate embedding tables and keeps the
erasure rewrite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import ShapeError, Tensor

FEATURE_MAP_KINDS = ("mlp", "inner_product", "gated_inner_product",
                     "absdiff_two_embeddings")


def _col(v: Tensor) -> Tensor:
    return ad.reshape(v, (v.size, 1))


def _abs(x: Tensor) -> Tensor:
    # |x| composed from relu; subgradient 0 at the kink
    return ad.add(ad.relu(x), ad.relu(ad.sub(ad.constant(np.zeros(())), x)))


# ---------------------------------------------------------------------------
# batched hop variants (used by the trainable network)


def dot_scores(memory: Tensor, relation_rows: Tensor, counts) -> Tensor:
    """Row-wise inner product scores as a [rows, 1] tensor."""
    prod = ad.mul(memory, relation_rows)
    return ad.reshape(ad.reduce_sum(prod, axis=1), (memory.shape[0], 1))


def inner_product_attend(memory: Tensor, relation: Tensor, counts):
    """MemN2N-style hop: alpha = softmax(r . m_i), new r = readout + old r."""
    rows = ad.repeat_interleave(relation, counts)
    if rows.shape[1] != memory.shape[1]:
        raise ShapeError("inner-product hop needs matching memory/relation widths")
    scores = dot_scores(memory, rows, counts)
    alpha = ad.segment_softmax(scores, counts)
    readout = ad.segment_sum(ad.scale_rows(memory, alpha), counts)
    return alpha, readout, ad.add(readout, relation)


def gated_attend(memory: Tensor, relation: Tensor, counts, gate_w: Tensor,
                 gate_b: Tensor):
    """Gated hop: the readout and the old relation vector are mixed through a
    sigmoid gate computed from the old relation vector."""
    alpha, readout, _ = inner_product_attend(memory, relation, counts)
    gate = ad.sigmoid(ad.add_bias(ad.matmul(relation, gate_w), gate_b))
    keep = ad.sub(ad.constant(np.ones(())), gate)
    r_next = ad.add(ad.mul(gate, readout), ad.mul(keep, relation))
    return alpha, readout, r_next, gate


def absdiff_attend(memory: Tensor, relation: Tensor, memory2: Tensor,
                   relation2: Tensor, counts, score_w: Tensor, score_b: Tensor):
    """Two-view hop: per-row features [m*r, |m-r|] under both embeddings feed
    an affine scorer; the attention reads out both views."""
    rows = ad.repeat_interleave(relation, counts)
    rows2 = ad.repeat_interleave(relation2, counts)
    feats = ad.concat([
        ad.mul(memory, rows), _abs(ad.sub(memory, rows)),
        ad.mul(memory2, rows2), _abs(ad.sub(memory2, rows2)),
    ], axis=1)
    scores = ad.add_bias(ad.matmul(feats, score_w), score_b)
    alpha = ad.segment_softmax(scores, counts)
    r_next = ad.segment_sum(ad.scale_rows(memory, alpha), counts)
    r2_next = ad.segment_sum(ad.scale_rows(memory2, alpha), counts)
    return alpha, r_next, r2_next


def linear_memory_map(memory: Tensor, weight: Tensor) -> Tensor:
    """Between-hop rewrite m <- m W used by the inner-product variants."""
    return ad.matmul(memory, weight)


# ---------------------------------------------------------------------------
# single-episode contract functions (oracle-testable)


def inner_product_hop(memory: Tensor, r_prev: Tensor, weight: Tensor):
    """One inner-product hop over one episode.

    Returns (alpha [n], r_next [d]); apply ``linear_memory_map(memory,
    weight)`` to produce the next hop's memory.
    """
    rel = mdl._as_row(r_prev)
    n = memory.shape[0]
    alpha, _, r_next = inner_product_attend(memory, rel, [n])
    return ad.reshape(alpha, (n,)), ad.reshape(r_next, (r_next.size,))


def gated_inner_product_hop(memory: Tensor, r_prev: Tensor, weight: Tensor,
                            gate_w: Tensor, gate_b: Tensor):
    """One gated inner-product hop over one episode (weight is the between-hop
    map, threaded for parity with the ungated variant)."""
    rel = mdl._as_row(r_prev)
    n = memory.shape[0]
    alpha, _, r_next, _ = gated_attend(memory, rel, [n], gate_w, gate_b)
    return ad.reshape(alpha, (n,)), ad.reshape(r_next, (r_next.size,))


def absdiff_hop(memory: Tensor, r_prev: Tensor, memory2: Tensor,
                r2_prev: Tensor, score_w: Tensor, score_b: Tensor):
    """One two-view hop over one episode; returns (alpha [n], r_next, r2_next)."""
    n = memory.shape[0]
    alpha, r_next, r2_next = absdiff_attend(
        memory, mdl._as_row(r_prev), memory2, mdl._as_row(r2_prev), [n],
        score_w, score_b)
    return (ad.reshape(alpha, (n,)),
            ad.reshape(r_next, (r_next.size,)),
            ad.reshape(r2_next, (r2_next.size,)))


# ---------------------------------------------------------------------------
# relation-network baseline


class RnParams:
    """Pairwise relation scorer g over [m_i, m_j, q] plus answer MLP f over
    the summed relation vector."""

    def __init__(self, memory_width: int, question_width: int, g_widths,
                 f_widths, activation: str, batch_norm: bool,
                 rng: np.random.Generator, name: str = "rn"):
        self.memory_width = memory_width
        self.question_width = question_width
        self.g_mlp = mdl.MlpParams(2 * memory_width + question_width,
                                   g_widths, activation, batch_norm, rng,
                                   name=f"{name}.g")
        self.f_mlp = mdl.MlpParams(self.g_mlp.output_width, f_widths,
                                   activation, batch_norm, rng, name=f"{name}.f")
        self.name = name

    def set_training(self, flag: bool):
        self.g_mlp.set_training(flag)
        self.f_mlp.set_training(flag)

    def named_parameters(self):
        return {**self.g_mlp.named_parameters(), **self.f_mlp.named_parameters()}

    def named_bn_states(self):
        return {**self.g_mlp.named_bn_states(), **self.f_mlp.named_bn_states()}


def pair_indices(n: int):
    """All n^2 ordered pairs (i, j), self-pairs included, in row-major order."""
    i = np.repeat(np.arange(n, dtype=np.int64), n)
    j = np.tile(np.arange(n, dtype=np.int64), n)
    return i, j


def count_pair_evaluations(n: int) -> int:
    return n * n


def rn_pairs_forward(memory: Tensor, question_rows: Tensor, counts,
                     params: RnParams) -> Tensor:
    """Batched pairwise pass: per-episode sum of g over all ordered pairs."""
    counts = np.asarray(counts, dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pis, pjs = [], []
    for start, n in zip(starts, counts):
        i, j = pair_indices(int(n))
        pis.append(start + i)
        pjs.append(start + j)
    pi = np.concatenate(pis)
    pj = np.concatenate(pjs)
    pair_counts = counts * counts
    q_rep = ad.repeat_interleave(question_rows, pair_counts)
    x = ad.concat([ad.gather_rows(memory, pi), ad.gather_rows(memory, pj),
                   q_rep], axis=1)
    relations = params.g_mlp.apply(x)
    summed = ad.segment_sum(relations, pair_counts)
    return params.f_mlp.apply(summed)


def rn_forward(memory: Tensor, question: Tensor, params: RnParams):
    """Single-episode relation-net pass over all n^2 ordered sentence pairs."""
    logits = rn_pairs_forward(memory, mdl._as_row(question),
                              [memory.shape[0]], params)
    probs = ad.softmax(logits, axis=1)
    return mdl.AnswerDistribution(probabilities=probs.data.reshape(-1),
                                  logits=logits)


# ---------------------------------------------------------------------------
# step cost profiling


@dataclass
class CostRow:
    model: str
    n: int
    pair_evals: int
    wall_ms: float


def step_cost_profile(model: str, n_list, *, hops: int = 2, batch: int = 4,
                      width: int = 32, classes: int = 16, reps: int = 3,
                      seed: int = 0) -> list[CostRow]:
    """Wall time of one forward/backward step on synthetic memories of size n.

    Scorer evaluations per episode: n^2 for the pairwise baseline, hops*n for
    the hop-based model.
    """
    if model not in ("rn", "rmn"):
        raise ValueError(f"unknown model {model!r}")
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_list:
        memory = ad.constant(rng.normal(size=(batch * n, width)))
        questions = ad.constant(rng.normal(size=(batch, width)))
        counts = np.full(batch, n, dtype=np.int64)
        targets = rng.integers(0, classes, size=batch)
        if model == "rn":
            params = RnParams(width, width, [256, 128], [128, classes],
                              "relu", False, rng)
            def step():
                with ad.Tape() as tape:
                    logits = rn_pairs_forward(memory, questions, counts, params)
                    loss = ad.cross_entropy(logits, targets)
                    ad.backward(loss, tape)
            evals = count_pair_evaluations(n)
        else:
            hop_params = [mdl.HopParams(2 * width, [256, 128, 1], "relu",
                                        False, rng, name=f"hop{t}")
                          for t in range(hops)]
            f_phi = mdl.MlpParams(2 * width, [128, classes], "relu", False,
                                  rng, name="reason")
            def step():
                with ad.Tape() as tape:
                    mem = memory
                    relation = questions
                    for t, hp in enumerate(hop_params):
                        rel_rows = ad.repeat_interleave(relation, counts)
                        alpha, readout, _, _ = mdl.attention_hop_batch(
                            mem, rel_rows, counts, hp)
                        if t + 1 < len(hop_params):
                            mem = mdl.memory_update(mem, alpha)
                        relation = readout
                    logits = f_phi.apply(ad.concat([relation, questions], axis=1))
                    loss = ad.cross_entropy(logits, targets)
                    ad.backward(loss, tape)
            evals = hops * n
        step()  # warm-up outside the timed reps
        best = min(_time_once(step) for _ in range(reps))
        rows.append(CostRow(model=model, n=int(n), pair_evals=evals,
                            wall_ms=best * 1e3))
    return rows


def _time_once(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def write_cost_profile_csv(rows, path, header_comment: str | None = None):
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("model,n,pair_evals,wall_ms")
    for r in rows:
        lines.append(f"{r.model},{r.n},{r.pair_evals},{r.wall_ms:.3f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
