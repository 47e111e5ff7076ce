"""Parsing and preprocessing for the 20 story reasoning tasks.

File format (one line per numbered sentence):

    <id> <statement text>
    <id> <question text>\t<answer>\t<space-separated supporting ids>

An id reset to 1 starts a new story. Each question line becomes one episode
whose memory is every prior statement of the story. Raw line text is kept
so fixtures can be re-serialized byte-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Memory window: the most recent sentences kept per episode. Task 3 chains
# three facts over long stories and gets the wider window.
MEMORY_WINDOW = 70
MEMORY_WINDOW_TASK3 = 130

POSITION_TOKEN = "pos_{}"


class StoryParseError(Exception):
    pass


@dataclass
class Episode:
    """One question with its memory; tokens before encoding, ids after."""

    sentences: list            # list of token/id lists, oldest first
    question: list             # token/id list
    answer: object             # answer string before encoding, class id after
    supporting: list = field(default_factory=list)   # 0-based memory positions
    task_id: int = 0
    raw_sentences: list = field(default_factory=list)
    raw_question: str = ""
    raw_answer: str = ""
    raw_supporting: list = field(default_factory=list)
    line_ids: list = field(default_factory=list)     # original sentence numbers


def tokenize(line: str):
    """Lowercase and split; sentence-final punctuation is dropped."""
    cleaned = line.lower().replace(".", " ").replace("?", " ").replace("!", " ")
    return cleaned.split()


def window_for_task(task_id: int) -> int:
    return MEMORY_WINDOW_TASK3 if task_id == 3 else MEMORY_WINDOW


def parse_story_file(path, task_id: int | None = None):
    """Parse one task file into episodes (token stage)."""
    if task_id is None:
        task_id = _task_from_name(str(path))
    episodes = []
    statements = []      # (line_id, tokens, raw)
    prev_id = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            head, _, rest = line.partition(" ")
            try:
                num = int(head)
            except ValueError:
                raise StoryParseError(f"{path}:{lineno}: malformed line id {head!r}")
            if num == 1:
                statements = []
            elif num <= prev_id:
                raise StoryParseError(
                    f"{path}:{lineno}: non-monotonic id {num} after {prev_id}")
            prev_id = num
            if "\t" in rest:
                parts = rest.split("\t")
                if len(parts) < 2:
                    raise StoryParseError(f"{path}:{lineno}: malformed question line")
                qtext, answer = parts[0], parts[1]
                sup_raw = parts[2].split() if len(parts) > 2 and parts[2].strip() else []
                try:
                    sup_ids = [int(s) for s in sup_raw]
                except ValueError:
                    raise StoryParseError(f"{path}:{lineno}: malformed supporting ids")
                id_to_pos = {sid: k for k, (sid, _, _) in enumerate(statements)}
                missing = [s for s in sup_ids if s not in id_to_pos]
                if missing:
                    raise StoryParseError(
                        f"{path}:{lineno}: supporting id {missing[0]} not in story")
                episodes.append(Episode(
                    sentences=[list(toks) for _, toks, _ in statements],
                    question=tokenize(qtext),
                    answer=answer.strip().lower(),
                    supporting=[id_to_pos[s] for s in sup_ids],
                    task_id=task_id,
                    raw_sentences=[r for _, _, r in statements],
                    raw_question=qtext,
                    raw_answer=answer,
                    raw_supporting=sup_ids,
                    line_ids=[sid for sid, _, _ in statements],
                ))
            else:
                statements.append((num, tokenize(rest), rest))
    return episodes


def serialize_story_episodes(episodes) -> str:
    """Rebuild the file text from parsed episodes (fixture round-trips)."""
    lines = []
    prev_ids: list = []
    counter = 0
    for ep in episodes:
        if not _is_prefix(prev_ids, ep.line_ids):
            counter = 0  # new story: numbering restarts below
        start = len(prev_ids) if _is_prefix(prev_ids, ep.line_ids) else 0
        for k in range(start, len(ep.line_ids)):
            counter = ep.line_ids[k]
            lines.append(f"{ep.line_ids[k]} {ep.raw_sentences[k]}")
        counter += 1
        sup = " ".join(str(s) for s in ep.raw_supporting)
        lines.append(f"{counter} {ep.raw_question}\t{ep.raw_answer}\t{sup}")
        prev_ids = list(ep.line_ids)
        # the question consumed one id; later statements in the same story
        # continue numbering past it, which line_ids already reflect
    return "\n".join(lines) + "\n"


def _is_prefix(prev, cur) -> bool:
    return bool(prev) and len(prev) <= len(cur) and cur[:len(prev)] == prev


def window_memory(episode: Episode, task_id: int | None = None) -> Episode:
    """Keep only the most recent window of sentences, order preserved."""
    task = episode.task_id if task_id is None else task_id
    limit = window_for_task(task)
    n = len(episode.sentences)
    if n <= limit:
        return episode
    drop = n - limit
    return Episode(
        sentences=episode.sentences[drop:],
        question=episode.question,
        answer=episode.answer,
        supporting=[s - drop for s in episode.supporting if s >= drop],
        task_id=episode.task_id,
        raw_sentences=episode.raw_sentences[drop:],
        raw_question=episode.raw_question,
        raw_answer=episode.raw_answer,
        raw_supporting=episode.raw_supporting,
        line_ids=episode.line_ids[drop:],
    )


def tag_relative_position(episode: Episode) -> Episode:
    """Prepend a recency token to each sentence: pos_1 marks the newest."""
    n = len(episode.sentences)
    tagged = [[POSITION_TOKEN.format(n - k)] + list(toks)
              for k, toks in enumerate(episode.sentences)]
    out = Episode(
        sentences=tagged,
        question=episode.question,
        answer=episode.answer,
        supporting=list(episode.supporting),
        task_id=episode.task_id,
        raw_sentences=episode.raw_sentences,
        raw_question=episode.raw_question,
        raw_answer=episode.raw_answer,
        raw_supporting=episode.raw_supporting,
        line_ids=episode.line_ids,
    )
    return out


def _task_from_name(name: str) -> int:
    import re

    m = re.search(r"qa(\d+)[_.]", name)
    return int(m.group(1)) if m else 0
