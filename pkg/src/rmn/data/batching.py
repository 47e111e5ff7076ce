"""Deterministic padded batching over encoded episodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    """Padded id arrays for a batch of episodes.

    Sentences from all episodes are stacked: ``sent_ids[k]`` is a padded id
    row, ``mem_counts[b]`` tells how many rows belong to episode ``b``.
    """

    sent_ids: np.ndarray        # [total_sentences, max_sentence_len] int64
    sent_lengths: np.ndarray    # [total_sentences]
    mem_counts: np.ndarray      # [episodes]
    q_ids: np.ndarray           # [episodes, max_question_len]
    q_lengths: np.ndarray       # [episodes]
    answers: np.ndarray         # [episodes]
    task_ids: np.ndarray        # [episodes]
    episode_ids: np.ndarray     # indices into the source episode list
    match_candidates: list | None = None   # per episode: per field id lists

    @property
    def size(self) -> int:
        return self.answers.shape[0]


def pack_batch(episodes, indices=None, with_match: bool = False) -> Batch:
    """Pad one group of episodes into a Batch (padding id 0)."""
    if indices is None:
        indices = np.arange(len(episodes))
    eps = [episodes[i] for i in indices]
    if not eps:
        raise ValueError("empty batch")
    sent_lists = [s for ep in eps for s in ep.sentences]
    max_s = max(len(s) for s in sent_lists)
    max_q = max(len(ep.question) for ep in eps)
    sent_ids = np.zeros((len(sent_lists), max_s), dtype=np.int64)
    sent_lengths = np.zeros(len(sent_lists), dtype=np.int64)
    for k, s in enumerate(sent_lists):
        sent_ids[k, :len(s)] = s
        sent_lengths[k] = len(s)
    q_ids = np.zeros((len(eps), max_q), dtype=np.int64)
    q_lengths = np.zeros(len(eps), dtype=np.int64)
    for b, ep in enumerate(eps):
        q_ids[b, :len(ep.question)] = ep.question
        q_lengths[b] = len(ep.question)
    return Batch(
        sent_ids=sent_ids,
        sent_lengths=sent_lengths,
        mem_counts=np.array([len(ep.sentences) for ep in eps], dtype=np.int64),
        q_ids=q_ids,
        q_lengths=q_lengths,
        answers=np.array([ep.answer_id for ep in eps], dtype=np.int64),
        task_ids=np.array([ep.task_id for ep in eps], dtype=np.int64),
        episode_ids=np.asarray(indices, dtype=np.int64),
        match_candidates=[ep.match_candidates for ep in eps] if with_match else None,
    )


def iter_batches(episodes, batch_size: int, seed: int | None = None,
                 shuffle: bool = True, with_match: bool = False):
    """Yield Batches over the episode list; shuffling is driven by the seed."""
    order = np.arange(len(episodes))
    if shuffle:
        rng = np.random.default_rng(seed)
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield pack_batch(episodes, order[start:start + batch_size],
                         with_match=with_match)
