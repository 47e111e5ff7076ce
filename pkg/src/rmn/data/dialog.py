"""Parsing and preprocessing for the goal-oriented restaurant dialogs.

File format: numbered lines, one turn per line. ``<id> <user>\t<bot>`` is a
full exchange; a line without a tab is a knowledge-base fact surfaced to the
user (it enters the history as a user-side sentence). Numbering restarts at
1 (or a blank line) between dialogs.

Every bot turn yields one episode: the history is everything said before
the turn, the question is the user utterance of the turn, the answer is the
bot utterance ranked against the global candidate list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SILENCE = "<silence>"
USER_TOKEN = "spk_user"
BOT_TOKEN = "spk_bot"

# KB relation -> match-feature field; restaurant names come from the KB
# subject position under the "restaurant" field.
KB_FIELDS = {
    "r_cuisine": "cuisine",
    "r_location": "location",
    "r_price": "price",
    "r_number": "number",
    "r_phone": "phone",
    "r_address": "address",
}
MATCH_FIELDS = ("cuisine", "location", "price", "number", "phone", "address",
                "restaurant")

RECOMMENDATION_PREFIX = "what do you think of this option"


class DialogParseError(Exception):
    pass


@dataclass
class DialogEpisode:
    """One bot turn: prior history, the triggering user utterance, the gold
    candidate, and (when enabled) sparse match-feature structure."""

    history: list                      # list of (speaker, token-or-id list)
    user_input: list                   # token/id list
    answer_candidate_id: int
    task_id: int = 0
    raw_answer: str = ""
    # per match field: candidate ids sharing a history word of that field
    match_candidates: list = field(default_factory=list)


def tokenize(line: str):
    return line.lower().split()


def load_candidates(path):
    """Candidate utterances in file order (their index is the class id)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            head, _, rest = line.partition(" ")
            if not head.isdigit():
                raise DialogParseError(f"{path}:{lineno}: malformed candidate line")
            out.append(" ".join(tokenize(rest)))
    return out


def parse_dialog_file(path, candidates, task_id: int = 0):
    """Parse one dialog file into per-bot-turn episodes (token stage)."""
    cand_index = {c: i for i, c in enumerate(candidates)}
    episodes = []
    history: list = []
    prev_id = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                history = []
                prev_id = 0
                continue
            head, _, rest = line.partition(" ")
            try:
                num = int(head)
            except ValueError:
                raise DialogParseError(f"{path}:{lineno}: malformed line id {head!r}")
            if num == 1:
                history = []
            elif num <= prev_id:
                raise DialogParseError(
                    f"{path}:{lineno}: non-monotonic id {num} after {prev_id}")
            prev_id = num
            if "\t" in rest:
                user_raw, bot_raw = rest.split("\t", 1)
                user_tokens = tokenize(user_raw)
                bot_norm = " ".join(tokenize(bot_raw))
                cid = cand_index.get(bot_norm)
                if cid is None:
                    raise DialogParseError(
                        f"{path}:{lineno}: bot utterance not in candidate list: "
                        f"{bot_norm!r}")
                episodes.append(DialogEpisode(
                    history=[(spk, list(toks)) for spk, toks in history],
                    user_input=list(user_tokens),
                    answer_candidate_id=cid,
                    task_id=task_id,
                    raw_answer=bot_norm,
                ))
                history.append(("user", user_tokens))
                history.append(("bot", tokenize(bot_raw)))
            else:
                history.append(("user", tokenize(rest)))
    return episodes


def load_kb_lexicons(path):
    """Field lexicons from the knowledge base: one word set per match field."""
    lex = {f: set() for f in MATCH_FIELDS}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            head, _, rest = line.partition(" ")
            parts = tokenize(rest)
            if len(parts) != 3:
                raise DialogParseError(f"{path}:{lineno}: malformed KB triple")
            subject, relation, value = parts
            lex["restaurant"].add(subject)
            fieldname = KB_FIELDS.get(relation)
            if fieldname is not None:
                lex[fieldname].add(value)
    return lex


def match_type_features(history, candidates, field_lexicons):
    """Per-candidate field bits: bit (c, f) is set when some history word of
    field f appears verbatim in candidate c. Returns a [len(candidates),
    len(MATCH_FIELDS)] uint8 array."""
    import numpy as np

    hist_words = set()
    for _, toks in history:
        hist_words.update(toks)
    flags = np.zeros((len(candidates), len(MATCH_FIELDS)), dtype=np.uint8)
    for f_idx, fieldname in enumerate(MATCH_FIELDS):
        shared = hist_words & field_lexicons.get(fieldname, set())
        if not shared:
            continue
        for c_idx, cand in enumerate(candidates):
            cand_words = set(cand.split())
            if cand_words & shared:
                flags[c_idx, f_idx] = 1
    return flags


def build_candidate_word_index(candidates):
    """word -> sorted candidate ids containing it (speeds match features)."""
    index: dict[str, list[int]] = {}
    for cid, cand in enumerate(candidates):
        for w in set(cand.split()):
            index.setdefault(w, []).append(cid)
    return index


def sparse_match_candidates(history, candidate_word_index, field_lexicons):
    """Per field: candidate ids sharing some history word of that field."""
    hist_words = set()
    for _, toks in history:
        hist_words.update(toks)
    out = []
    for fieldname in MATCH_FIELDS:
        shared = hist_words & field_lexicons.get(fieldname, set())
        ids: set[int] = set()
        for w in shared:
            ids.update(candidate_word_index.get(w, ()))
        out.append(sorted(ids))
    return out


def double_silence_rewrite(episodes):
    """Double the silence token on turns whose gold answer is a restaurant
    recommendation, so option-proposal silences differ from field-asking
    silences. Idempotent; other turns untouched."""
    out = []
    for ep in episodes:
        user = ep.user_input
        if (ep.raw_answer.startswith(RECOMMENDATION_PREFIX)
                and list(user) == [SILENCE]):
            user = [SILENCE, SILENCE]
        out.append(DialogEpisode(
            history=ep.history,
            user_input=user,
            answer_candidate_id=ep.answer_candidate_id,
            task_id=ep.task_id,
            raw_answer=ep.raw_answer,
            match_candidates=ep.match_candidates,
        ))
    return out
