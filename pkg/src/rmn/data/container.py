"""Versioned binary container for preprocessed corpora.

Layout (all integers little-endian):

    magic "RMND" | u32 version | u32 kind (0 story, 1 dialog)
    u32 sentence_max_len | u32 question_max_len | u32 n_match_fields
    vocabulary words   : u32 count, then u32 byte-length + utf-8 each
    answer classes     : same encoding
    splits             : u32 count, then per split name + episode block
    sha256 digest of everything above (32 bytes)

Episodes store id arrays as u32; story episodes carry supporting-sentence
positions, dialog episodes carry the per-field sparse match candidate ids.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .vocab import Vocabulary

MAGIC = b"RMND"
VERSION = 1
KIND_STORY = 0
KIND_DIALOG = 1


class ContainerError(Exception):
    pass


@dataclass
class CorpusEpisode:
    """Fully preprocessed, encoded training unit."""

    sentences: list                 # list of id lists
    question: list                  # id list
    answer_id: int
    supporting: list = field(default_factory=list)
    task_id: int = 0
    match_candidates: list = field(default_factory=list)  # per field: id list


@dataclass
class Corpus:
    kind: str                       # "story" | "dialog"
    vocab: Vocabulary
    splits: dict                    # name -> list[CorpusEpisode]
    sentence_max_len: int
    question_max_len: int
    n_match_fields: int = 0
    digest: str = ""

    @property
    def n_answer_classes(self) -> int:
        return len(self.vocab.answer_classes)

    def split(self, name: str):
        if name not in self.splits:
            raise ContainerError(f"corpus has no split {name!r}; "
                                 f"found {sorted(self.splits)}")
        return self.splits[name]


def _w_u32(buf, *vals):
    buf.write(struct.pack("<" + "I" * len(vals), *vals))


def _w_str(buf, s: str):
    b = s.encode("utf-8")
    _w_u32(buf, len(b))
    buf.write(b)


def _w_ids(buf, ids):
    arr = np.asarray(ids, dtype="<u4")
    _w_u32(buf, arr.shape[0])
    buf.write(arr.tobytes())


def write_corpus(path, corpus: Corpus) -> str:
    """Serialize; returns the hex digest embedded in the file."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    kind = KIND_STORY if corpus.kind == "story" else KIND_DIALOG
    _w_u32(buf, VERSION, kind, corpus.sentence_max_len,
           corpus.question_max_len, corpus.n_match_fields)
    _w_u32(buf, len(corpus.vocab.words))
    for w in corpus.vocab.words:
        _w_str(buf, w)
    _w_u32(buf, len(corpus.vocab.answer_classes))
    for a in corpus.vocab.answer_classes:
        _w_str(buf, a)
    _w_u32(buf, len(corpus.splits))
    for name in corpus.splits:
        _w_str(buf, name)
        episodes = corpus.splits[name]
        _w_u32(buf, len(episodes))
        for ep in episodes:
            _w_u32(buf, ep.task_id, len(ep.sentences))
            for s in ep.sentences:
                _w_ids(buf, s)
            _w_ids(buf, ep.question)
            _w_u32(buf, ep.answer_id)
            _w_ids(buf, ep.supporting)
            for f_ids in ep.match_candidates:
                _w_ids(buf, f_ids)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)
    return digest.hex()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def u32(self) -> int:
        (v,) = struct.unpack_from("<I", self.data, self.off)
        self.off += 4
        return v

    def text(self) -> str:
        n = self.u32()
        s = self.data[self.off:self.off + n].decode("utf-8")
        self.off += n
        return s

    def ids(self) -> list:
        n = self.u32()
        arr = np.frombuffer(self.data, dtype="<u4", count=n, offset=self.off)
        self.off += 4 * n
        return arr.astype(np.int64).tolist()

    def raw(self, n: int) -> bytes:
        b = self.data[self.off:self.off + n]
        self.off += n
        return b


def read_corpus(path) -> Corpus:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 36 or blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a corpus container")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ContainerError(f"{path}: digest mismatch (corrupt or truncated)")
    r = _Reader(payload)
    r.raw(4)
    version = r.u32()
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    kind = "story" if r.u32() == KIND_STORY else "dialog"
    sent_max = r.u32()
    q_max = r.u32()
    n_fields = r.u32()
    words = [r.text() for _ in range(r.u32())]
    answers = [r.text() for _ in range(r.u32())]
    vocab = Vocabulary.__new__(Vocabulary)
    vocab.words = words
    vocab.index = {w: i for i, w in enumerate(words)}
    vocab.answer_classes = answers
    vocab.answer_index = {a: i for i, a in enumerate(answers)}
    splits = {}
    for _ in range(r.u32()):
        name = r.text()
        episodes = []
        for _ in range(r.u32()):
            task_id = r.u32()
            n_sent = r.u32()
            sentences = [r.ids() for _ in range(n_sent)]
            question = r.ids()
            answer_id = r.u32()
            supporting = r.ids()
            match = [r.ids() for _ in range(n_fields)] if kind == "dialog" else []
            episodes.append(CorpusEpisode(
                sentences=sentences, question=question, answer_id=answer_id,
                supporting=supporting, task_id=task_id,
                match_candidates=match))
        splits[name] = episodes
    return Corpus(kind=kind, vocab=vocab, splits=splits,
                  sentence_max_len=sent_max, question_max_len=q_max,
                  n_match_fields=n_fields, digest=digest.hex())
