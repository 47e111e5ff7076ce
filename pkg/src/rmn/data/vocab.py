"""Word/id bijection with reserved specials and the answer-class list."""

from __future__ import annotations

PAD_TOKEN = "<pad>"      # id 0, reserved for padding
UNK_TOKEN = "<unk>"      # id 1, used only in OOV-test encoding
SPECIALS = (PAD_TOKEN, UNK_TOKEN)


class VocabError(Exception):
    pass


class Vocabulary:
    """Bijective word<->id map; id 0 pads, id 1 is the unknown token.

    Construction sorts the word set so ids are stable across runs. Answer
    classes are kept separately: the corpus word list for story tasks, the
    candidate strings (in file order) for dialog tasks.
    """

    def __init__(self, words, answer_classes):
        self.words = list(SPECIALS) + sorted(set(words) - set(SPECIALS))
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise VocabError("duplicate words in vocabulary")
        self.answer_classes = list(answer_classes)
        self.answer_index = {a: i for i, a in enumerate(self.answer_classes)}
        if len(self.answer_index) != len(self.answer_classes):
            raise VocabError("duplicate answer classes")

    def __len__(self):
        return len(self.words)

    def encode(self, tokens, oov_to_unk: bool = False):
        ids = []
        for tok in tokens:
            i = self.index.get(tok)
            if i is None:
                if not oov_to_unk:
                    raise VocabError(f"unknown word {tok!r}")
                i = self.index[UNK_TOKEN]
            ids.append(i)
        return ids

    def decode(self, ids):
        return [self.words[i] for i in ids]

    def answer_id(self, answer: str) -> int:
        i = self.answer_index.get(answer)
        if i is None:
            raise VocabError(f"answer {answer!r} not in answer classes")
        return i
