"""Trainable networks over padded batches: the multi-hop memory model with
swappable attention variants, and the pairwise relation-net baseline."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import feature_maps as fm
from . import model as mdl
from .autodiff import Tensor
from .embedder import Embedder
from .model import AnswerDistribution, AttentionTrace


class NetworkConfigError(Exception):
    pass


def match_bias(weight: Tensor, per_episode_fields, n_classes: int) -> Tensor:
    """Per-candidate score bonus from sparse match-type features.

    ``per_episode_fields[e][f]`` lists the candidate ids whose field-f bit is
    set for episode e; each contributes ``weight[f]`` to that logit.
    """
    b = len(per_episode_fields)
    w = weight.data
    adj = np.zeros((b, n_classes))
    for e, fields in enumerate(per_episode_fields):
        for f, ids in enumerate(fields):
            if len(ids):
                adj[e, ids] += w[f]

    def bwd(g):
        dw = np.zeros_like(w)
        for e, fields in enumerate(per_episode_fields):
            for f, ids in enumerate(fields):
                if len(ids):
                    dw[f] += g[e, ids].sum()
        return (dw,)

    return ad.custom_op("match_bias", (weight,), adj, bwd)


class RmnNetwork:
    """Embedder + T attention hops + reasoning MLP, batched end to end."""

    def __init__(self, *, vocab_size: int, answer_classes: int,
                 embed_kind: str = "lstm", embed_dim: int = 32,
                 hidden: int = 32, sentence_max_len: int = 16,
                 question_max_len: int = 16, hops: int = 2,
                 g_widths=(256, 128, 1), f_widths=(512, 512),
                 activation: str = "relu", batch_norm: bool = True,
                 feature_map: str = "mlp", use_match: bool = False,
                 n_match_fields: int = 0, seed: int = 0):
        if feature_map not in fm.FEATURE_MAP_KINDS:
            raise NetworkConfigError(f"unknown feature map {feature_map!r}")
        if hops < 1:
            raise NetworkConfigError("hop count must be >= 1")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.feature_map = feature_map
        self.n_hops = hops
        self.answer_classes = answer_classes
        self.use_match = use_match and n_match_fields > 0

        self.embedder = Embedder(embed_kind, embed_dim, vocab_size,
                                 sentence_max_len, question_max_len, rng,
                                 hidden=hidden)
        d_m = self.embedder.memory_width
        d_q = self.embedder.question_width
        self.embedder2 = None
        if feature_map == "absdiff_two_embeddings":
            self.embedder2 = Embedder(embed_kind, embed_dim, vocab_size,
                                      sentence_max_len, question_max_len, rng,
                                      hidden=hidden)
        if feature_map != "mlp" and d_m != d_q:
            raise NetworkConfigError(
                f"{feature_map} attention needs equal memory/question widths, "
                f"got {d_m} vs {d_q}")

        self.hops = []
        for t in range(hops):
            if feature_map == "mlp":
                in_width = d_m + (d_q if t == 0 else d_m)
                self.hops.append(mdl.HopParams(in_width, g_widths, activation,
                                               batch_norm, rng, name=f"hop{t}"))
            elif feature_map == "inner_product":
                self.hops.append({"map_w": ad.parameter(np.eye(d_m),
                                                        name=f"hop{t}.map_w")})
            elif feature_map == "gated_inner_product":
                s = 1.0 / np.sqrt(d_m)
                self.hops.append({
                    "map_w": ad.parameter(np.eye(d_m), name=f"hop{t}.map_w"),
                    "gate_w": ad.parameter(rng.uniform(-s, s, size=(d_m, d_m)),
                                           name=f"hop{t}.gate_w"),
                    "gate_b": ad.parameter(np.zeros(d_m), name=f"hop{t}.gate_b"),
                })
            else:
                s = 1.0 / np.sqrt(4 * d_m)
                self.hops.append({
                    "score_w": ad.parameter(rng.uniform(-s, s, size=(4 * d_m, 1)),
                                            name=f"hop{t}.score_w"),
                    "score_b": ad.parameter(np.zeros(1), name=f"hop{t}.score_b"),
                })

        f_in = d_m + d_q
        self.f_phi = mdl.MlpParams(f_in, list(f_widths) + [answer_classes],
                                   activation, batch_norm, rng, name="reason")
        self.match_weight = None
        if self.use_match:
            self.match_weight = ad.parameter(np.zeros(n_match_fields),
                                             name="match.weight")

    # -- forward ------------------------------------------------------------

    def forward_batch(self, batch, train: bool = False,
                      collect_trace: bool = False):
        self.set_training(train)
        counts = batch.mem_counts
        memory = self.embedder.embed_sentences(batch.sent_ids, batch.sent_lengths)
        question = self.embedder.embed_questions(batch.q_ids, batch.q_lengths)
        relation = question
        memory2 = relation2 = None
        if self.embedder2 is not None:
            memory2 = self.embedder2.embed_sentences(batch.sent_ids,
                                                     batch.sent_lengths)
            relation2 = self.embedder2.embed_questions(batch.q_ids,
                                                       batch.q_lengths)
        traces = [AttentionTrace() for _ in range(batch.size)] if collect_trace else None

        for t, hop in enumerate(self.hops):
            last = t + 1 == self.n_hops
            beta_val = 1.0
            if self.feature_map == "mlp":
                rel_rows = ad.repeat_interleave(relation, counts)
                alpha, readout, raw, beta = mdl.attention_hop_batch(
                    memory, rel_rows, counts, hop)
                relation = readout
                beta_val = beta.item()
                if not last:
                    memory = mdl.memory_update(memory, alpha)
            elif self.feature_map == "inner_product":
                alpha, _, relation = fm.inner_product_attend(memory, relation,
                                                             counts)
                raw = alpha
                if not last:
                    memory = fm.linear_memory_map(memory, hop["map_w"])
            elif self.feature_map == "gated_inner_product":
                alpha, _, relation, _ = fm.gated_attend(
                    memory, relation, counts, hop["gate_w"], hop["gate_b"])
                raw = alpha
                if not last:
                    memory = fm.linear_memory_map(memory, hop["map_w"])
            else:
                alpha, relation, relation2 = fm.absdiff_attend(
                    memory, relation, memory2, relation2, counts,
                    hop["score_w"], hop["score_b"])
                raw = alpha
                if not last:
                    keep = ad.sub(ad.constant(np.ones(())), alpha)
                    memory = ad.scale_rows(memory, keep)
                    memory2 = ad.scale_rows(memory2, keep)
            if collect_trace:
                self._record_traces(traces, alpha.data, raw.data, beta_val, counts)

        logits = self.f_phi.apply(ad.concat([relation, question], axis=1))
        if self.use_match and batch.match_candidates is not None:
            logits = ad.add(logits, match_bias(self.match_weight,
                                               batch.match_candidates,
                                               self.answer_classes))
        return logits, traces

    @staticmethod
    def _record_traces(traces, alpha, raw, beta, counts):
        start = 0
        for b, n in enumerate(counts):
            traces[b].add(raw[start:start + n], alpha[start:start + n], beta)
            start += n

    def loss_batch(self, batch, train: bool = True):
        logits, _ = self.forward_batch(batch, train=train)
        return ad.cross_entropy(logits, batch.answers), logits

    def predict_batch(self, batch):
        """Answer class ids (eval mode, no gradient recording)."""
        logits, _ = self.forward_batch(batch, train=False)
        return np.argmax(logits.data, axis=1)

    def forward_episode(self, episode, with_match: bool = True):
        """Single-episode convenience pass -> (AnswerDistribution, trace)."""
        from .data.batching import pack_batch

        batch = pack_batch([episode], with_match=self.use_match and with_match)
        logits, traces = self.forward_batch(batch, train=False,
                                            collect_trace=True)
        probs = ad.softmax(logits, axis=1)
        dist = AnswerDistribution(probabilities=probs.data.reshape(-1),
                                  logits=logits)
        return dist, traces[0]

    # -- bookkeeping ----------------------------------------------------------

    def set_training(self, flag: bool):
        for hop in self.hops:
            if isinstance(hop, mdl.HopParams):
                hop.set_training(flag)
        self.f_phi.set_training(flag)

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.embedder.named_parameters())
        if self.embedder2 is not None:
            out.update({f"embed2.{k.split('.', 1)[1]}": v
                        for k, v in self.embedder2.named_parameters().items()})
        for hop in self.hops:
            if isinstance(hop, mdl.HopParams):
                out.update(hop.named_parameters())
            else:
                out.update({t.name: t for t in hop.values()})
        out.update(self.f_phi.named_parameters())
        if self.match_weight is not None:
            out["match.weight"] = self.match_weight
        return out

    def named_bn_states(self):
        out = {}
        for hop in self.hops:
            if isinstance(hop, mdl.HopParams):
                out.update(hop.named_bn_states())
        out.update(self.f_phi.named_bn_states())
        return out


class RnNetwork:
    """Pairwise relation baseline: g over all ordered sentence pairs, summed
    per episode, then the answer MLP."""

    def __init__(self, *, vocab_size: int, answer_classes: int,
                 embed_kind: str = "lstm", embed_dim: int = 32,
                 hidden: int = 32, sentence_max_len: int = 16,
                 question_max_len: int = 16, g_widths=(256, 128),
                 f_widths=(512, 512), activation: str = "relu",
                 batch_norm: bool = True, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.answer_classes = answer_classes
        self.embedder = Embedder(embed_kind, embed_dim, vocab_size,
                                 sentence_max_len, question_max_len, rng,
                                 hidden=hidden)
        self.params = fm.RnParams(self.embedder.memory_width,
                                  self.embedder.question_width,
                                  g_widths, list(f_widths) + [answer_classes],
                                  activation, batch_norm, rng)
        self.use_match = False

    def forward_batch(self, batch, train: bool = False,
                      collect_trace: bool = False):
        self.set_training(train)
        memory = self.embedder.embed_sentences(batch.sent_ids, batch.sent_lengths)
        question = self.embedder.embed_questions(batch.q_ids, batch.q_lengths)
        logits = fm.rn_pairs_forward(memory, question, batch.mem_counts,
                                     self.params)
        return logits, None

    def loss_batch(self, batch, train: bool = True):
        logits, _ = self.forward_batch(batch, train=train)
        return ad.cross_entropy(logits, batch.answers), logits

    def predict_batch(self, batch):
        logits, _ = self.forward_batch(batch, train=False)
        return np.argmax(logits.data, axis=1)

    def set_training(self, flag: bool):
        self.params.set_training(flag)

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.embedder.named_parameters())
        out.update(self.params.named_parameters())
        return out

    def named_bn_states(self):
        return self.params.named_bn_states()
