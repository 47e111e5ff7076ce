"""End-to-end corpus preparation: raw task files -> preprocessed container.

Story pipeline: parse -> memory window -> recency tags -> encode.
Dialog pipeline: parse -> (optional silence rewrite) -> recency tags +
speaker tokens -> match-feature extraction -> encode.

Every tenth training episode is held out as the validation split, so
preparation stays deterministic without a seed.
"""

from __future__ import annotations

import glob
import os

from . import dialog as dlg
from . import story
from .container import Corpus, CorpusEpisode, write_corpus
from .vocab import Vocabulary

VAL_EVERY = 10


class DataError(Exception):
    pass


def _find_one(pattern: str, required: bool = True):
    hits = sorted(glob.glob(pattern))
    if not hits:
        if required:
            raise DataError(f"no file matching {pattern}")
        return None
    if len(hits) > 1:
        raise DataError(f"ambiguous files for {pattern}: {hits}")
    return hits[0]


def _split_train_val(episodes):
    train = [ep for i, ep in enumerate(episodes) if (i + 1) % VAL_EVERY != 0]
    val = [ep for i, ep in enumerate(episodes) if (i + 1) % VAL_EVERY == 0]
    return train, val


# ---------------------------------------------------------------------------
# story


def story_task_ids(task):
    if isinstance(task, (list, tuple)):
        return [int(t) for t in task]
    if task in ("all", "joint", 0, "0"):
        return list(range(1, 21))
    return [int(task)]


def load_story_split(data_dir, task_ids, suffix: str):
    episodes = []
    for t in task_ids:
        path = _find_one(os.path.join(data_dir, f"qa{t}_*{suffix}.txt"))
        episodes.extend(story.parse_story_file(path, task_id=t))
    return episodes


def preprocess_story_episode(ep: story.Episode) -> story.Episode:
    return story.tag_relative_position(story.window_memory(ep))


def prepare_story_corpus(data_dir, task, out_path) -> Corpus:
    task_ids = story_task_ids(task)
    raw = {"train": load_story_split(data_dir, task_ids, "_train"),
           "test": load_story_split(data_dir, task_ids, "_test")}
    processed = {name: [preprocess_story_episode(ep) for ep in eps]
                 for name, eps in raw.items()}
    train, val = _split_train_val(processed["train"])
    splits_tok = {"train": train, "val": val, "test": processed["test"]}

    words, answers = set(), set()
    for eps in raw.values():
        for ep in eps:
            for s in ep.sentences:
                words.update(s)
            words.update(ep.question)
            answers.add(ep.answer)
    answer_classes = sorted(words | answers)
    tag_words = {tok for eps in splits_tok.values() for ep in eps
                 for s in ep.sentences for tok in s[:1]}
    vocab = Vocabulary(words | answers | tag_words, answer_classes)

    splits = {}
    for name, eps in splits_tok.items():
        splits[name] = [CorpusEpisode(
            sentences=[vocab.encode(s) for s in ep.sentences],
            question=vocab.encode(ep.question),
            answer_id=vocab.answer_id(ep.answer),
            supporting=list(ep.supporting),
            task_id=ep.task_id,
        ) for ep in eps]

    corpus = _finish(Corpus(kind="story", vocab=vocab, splits=splits,
                            sentence_max_len=0, question_max_len=0))
    corpus.digest = write_corpus(out_path, corpus)
    return corpus


# ---------------------------------------------------------------------------
# dialog


DIALOG_SPLITS = (("train", "-trn.txt"), ("val", "-dev.txt"),
                 ("test", "-tst.txt"), ("test_oov", "-tst-OOV.txt"))


def prepare_dialog_corpus(data_dir, task, out_path,
                          double_silence: bool = False) -> Corpus:
    task = int(task)
    candidates_path = _find_one(os.path.join(data_dir, "*candidates*.txt"))
    candidates = dlg.load_candidates(candidates_path)
    kb_path = _find_one(os.path.join(data_dir, "*kb*.txt"), required=False)
    lexicons = dlg.load_kb_lexicons(kb_path) if kb_path else {}
    word_index = dlg.build_candidate_word_index(candidates)

    raw_splits = {}
    for name, suffix in DIALOG_SPLITS:
        path = _find_one(os.path.join(data_dir, f"*task{task}-*{suffix}"),
                         required=name != "test_oov")
        if path is None:
            continue
        eps = dlg.parse_dialog_file(path, candidates, task_id=task)
        if double_silence:
            eps = dlg.double_silence_rewrite(eps)
        raw_splits[name] = eps

    words = set()
    for eps in (raw_splits.get(n) for n in ("train", "val", "test")):
        for ep in eps or []:
            for _, toks in ep.history:
                words.update(toks)
            words.update(ep.user_input)
    for cand in candidates:
        words.update(cand.split())
    max_hist = max((len(ep.history) for eps in raw_splits.values()
                    for ep in eps), default=0)
    words |= {story.POSITION_TOKEN.format(k) for k in range(1, max_hist + 1)}
    words |= {dlg.USER_TOKEN, dlg.BOT_TOKEN}
    vocab = Vocabulary(words, candidates)

    splits = {}
    for name, eps in raw_splits.items():
        oov = name == "test_oov"
        out = []
        for ep in eps:
            n = len(ep.history)
            sentences = []
            for k, (spk, toks) in enumerate(ep.history):
                tagged = [story.POSITION_TOKEN.format(n - k),
                          dlg.USER_TOKEN if spk == "user" else dlg.BOT_TOKEN]
                sentences.append(vocab.encode(tagged + list(toks), oov_to_unk=oov))
            if not sentences:
                # opening turn: seed memory with the user utterance itself so
                # every episode has at least one memory row
                tagged = [story.POSITION_TOKEN.format(1), dlg.USER_TOKEN]
                sentences.append(vocab.encode(tagged + list(ep.user_input),
                                              oov_to_unk=oov))
            out.append(CorpusEpisode(
                sentences=sentences,
                question=vocab.encode(ep.user_input, oov_to_unk=oov),
                answer_id=ep.answer_candidate_id,
                task_id=ep.task_id,
                match_candidates=dlg.sparse_match_candidates(
                    ep.history, word_index, lexicons),
            ))
        splits[name] = out

    corpus = _finish(Corpus(kind="dialog", vocab=vocab, splits=splits,
                            sentence_max_len=0, question_max_len=0,
                            n_match_fields=len(dlg.MATCH_FIELDS)))
    corpus.digest = write_corpus(out_path, corpus)
    return corpus


def _finish(corpus: Corpus) -> Corpus:
    sent_max = 1
    q_max = 1
    for eps in corpus.splits.values():
        for ep in eps:
            sent_max = max(sent_max, max(len(s) for s in ep.sentences))
            q_max = max(q_max, len(ep.question))
    corpus.sentence_max_len = sent_max
    corpus.question_max_len = q_max
    return corpus
