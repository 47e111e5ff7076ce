"""Multi-hop relation memory model.

One hop scores every memory row against the running relation vector with a
small MLP (ending in one unit), sharpens the scores with a learned
temperature before the softmax, and reads out a weighted sum of the memory.
Between hops the memory is eroded row-wise by the attention just spent on
it. A final MLP over [readout, question] produces the answer logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ShapeError, Tensor, TensorError

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}


class MlpParams:
    """Stack of affine layers; hidden layers carry activation and optional
    batch norm, the final layer is always linear (it produces scores/logits).

    Hidden layers under batch norm drop their affine bias: the norm's shift
    subsumes it.
    """

    def __init__(self, input_width: int, widths, activation: str,
                 batch_norm: bool, rng: np.random.Generator, name: str = "mlp"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        widths = list(widths)
        if not widths:
            raise ValueError("MLP needs at least one layer")
        self.input_width = input_width
        self.widths = widths
        self.activation = activation
        self.name = name
        self.layers = []
        fan_in = input_width
        for i, width in enumerate(widths):
            final = i == len(widths) - 1
            scale = 1.0 / np.sqrt(fan_in)
            w = ad.parameter(rng.uniform(-scale, scale, size=(fan_in, width)),
                             name=f"{name}.{i}.w")
            use_bn = batch_norm and not final
            b = None if use_bn else ad.parameter(
                rng.uniform(-scale, scale, size=width), name=f"{name}.{i}.b")
            bn = BatchNormState(width) if use_bn else None
            self.layers.append((w, b, bn, None if final else activation))
            fan_in = width

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    def apply(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.input_width:
            raise ShapeError(
                f"{self.name} expects width {self.input_width}, got {x.shape[1]}")
        out = x
        for w, b, bn, act in self.layers:
            out = ad.matmul(out, w)
            if b is not None:
                out = ad.add_bias(out, b)
            if bn is not None:
                out = ad.batch_norm(out, bn)
            if act is not None:
                out = ACTIVATIONS[act](out)
        return out

    def set_training(self, flag: bool):
        for _, _, bn, _ in self.layers:
            if bn is not None:
                bn.training = flag

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b, bn, _) in enumerate(self.layers):
            out[f"{self.name}.{i}.w"] = w
            if b is not None:
                out[f"{self.name}.{i}.b"] = b
            if bn is not None:
                out[f"{self.name}.{i}.bn.scale"] = bn.scale
                out[f"{self.name}.{i}.bn.shift"] = bn.shift
        return out

    def named_bn_states(self) -> dict[str, BatchNormState]:
        return {f"{self.name}.{i}.bn": bn
                for i, (_, _, bn, _) in enumerate(self.layers) if bn is not None}


class HopParams:
    """One attention hop: a scoring MLP ending in one unit plus a learnable
    temperature pre-image (temperature = 1 + softplus(z) > 1)."""

    def __init__(self, input_width: int, widths, activation: str,
                 batch_norm: bool, rng: np.random.Generator, name: str = "hop"):
        widths = list(widths)
        if widths[-1] != 1:
            raise ValueError("attention scorer must end in a 1-unit layer")
        self.score_mlp = MlpParams(input_width, widths, activation, batch_norm,
                                   rng, name=f"{name}.score")
        self.temperature_z = ad.parameter(np.zeros(()), name=f"{name}.z")
        self.name = name

    def temperature(self) -> Tensor:
        return ad.add(ad.softplus(self.temperature_z), ad.constant(np.ones(())))

    def set_training(self, flag: bool):
        self.score_mlp.set_training(flag)

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.score_mlp.named_parameters()
        out[f"{self.name}.z"] = self.temperature_z
        return out

    def named_bn_states(self):
        return self.score_mlp.named_bn_states()


@dataclass
class MemoryState:
    """Per-hop view of one episode: memory rows, question, relation vector."""

    memory: Tensor            # [n, memory_width]
    question: Tensor          # [question_width]
    relation: Tensor          # starts as the question object itself
    hop: int = 0

    def __post_init__(self):
        if self.hop == 0 and self.relation is not self.question:
            raise TensorError("initial relation vector must be the question")


@dataclass
class HopTrace:
    raw_weights: np.ndarray   # scorer outputs, one per memory row
    alpha: np.ndarray         # softmax attention, sums to 1
    beta: float               # temperature used this hop


@dataclass
class AttentionTrace:
    hops: list[HopTrace] = field(default_factory=list)

    def add(self, raw, alpha, beta: float):
        self.hops.append(HopTrace(np.asarray(raw, dtype=np.float64).reshape(-1),
                                  np.asarray(alpha, dtype=np.float64).reshape(-1),
                                  float(beta)))

    def __len__(self):
        return len(self.hops)


@dataclass
class AnswerDistribution:
    """Softmax answer probabilities plus the pre-softmax logits tensor."""

    probabilities: np.ndarray
    logits: Tensor

    def argmax(self):
        return np.argmax(self.probabilities, axis=-1)


def beta_transform(z):
    """Attention intensity 1 + log(1 + exp(z)), stable for large |z|.

    Accepts a float (returns float) or a scalar Tensor (differentiable).
    """
    if isinstance(z, Tensor):
        return ad.add(ad.softplus(z), ad.constant(np.ones(z.shape)))
    return 1.0 + float(np.logaddexp(0.0, float(z)))


def _as_row(t: Tensor) -> Tensor:
    return ad.reshape(t, (1, t.size)) if t.ndim == 1 else t


def attention_hop_batch(memory: Tensor, relation_rows: Tensor, counts,
                        params: HopParams):
    """Score, normalize, and read memory for a whole batch of episodes.

    ``memory`` packs all episodes' rows ([sum(counts), d]);
    ``relation_rows`` repeats each episode's relation vector per row.
    Returns (alpha [rows, 1], readout [episodes, d], raw weights, beta tensor).
    """
    scorer_in = ad.concat([memory, relation_rows], axis=1)
    raw = params.score_mlp.apply(scorer_in)          # [rows, 1]
    beta = params.temperature()
    alpha = ad.segment_softmax(ad.mul(raw, beta), counts)
    readout = ad.segment_sum(ad.scale_rows(memory, alpha), counts)
    return alpha, readout, raw, beta


def attention_hop(state: MemoryState, params: HopParams,
                  trace: AttentionTrace | None = None):
    """Single-episode hop: returns (alpha [n], next relation vector [d])."""
    n = state.memory.shape[0]
    relation = _as_row(state.relation)
    rel_rows = ad.repeat_interleave(relation, [n])
    alpha, readout, raw, beta = attention_hop_batch(
        state.memory, rel_rows, [n], params)
    if trace is not None:
        trace.add(raw.data, alpha.data, beta.item())
    return ad.reshape(alpha, (n,)), ad.reshape(readout, (readout.shape[1],))


def memory_update(memory: Tensor, alpha: Tensor) -> Tensor:
    """Erode each memory row by the attention already spent on it."""
    a = alpha.data
    if a.min() < 0.0 or a.max() > 1.0:
        raise TensorError("attention weights outside [0, 1]")
    if a.reshape(-1).shape[0] != memory.shape[0]:
        raise ShapeError("one attention weight per memory row required")
    keep = ad.sub(ad.constant(np.ones(())), alpha)
    return ad.scale_rows(memory, keep)


def reason(r_final: Tensor, question: Tensor, f_phi: MlpParams) -> AnswerDistribution:
    """Answer distribution from the final readout and the question."""
    r2 = _as_row(r_final)
    q2 = _as_row(question)
    logits = f_phi.apply(ad.concat([r2, q2], axis=1))
    probs = ad.softmax(logits, axis=1)
    data = probs.data
    if r_final.ndim == 1:
        data = data.reshape(-1)
    return AnswerDistribution(probabilities=data, logits=logits)


def rmn_forward(episode_memory: Tensor, question: Tensor, hops, f_phi: MlpParams):
    """Full single-episode pass: T hops with erasure in between, then reasoning.

    ``hops`` is the list of per-hop parameter sets (one scorer + temperature
    each). With one hop the memory is never rewritten.
    """
    if not hops:
        raise ValueError("at least one hop required")
    trace = AttentionTrace()
    state = MemoryState(memory=episode_memory, question=question,
                        relation=question, hop=0)
    for t, params in enumerate(hops):
        alpha, readout = attention_hop(state, params, trace)
        memory = state.memory
        if t + 1 < len(hops):
            memory = memory_update(memory, alpha)
        state = MemoryState(memory=memory, question=question,
                            relation=readout, hop=t + 1)
    dist = reason(state.relation, question, f_phi)
    return dist, trace
