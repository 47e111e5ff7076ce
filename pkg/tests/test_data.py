"""Parsers, preprocessing, match features, containers, batching."""

import numpy as np
import pytest

import datagen
from rmn.data import (ContainerError, batching, container, dialog, prepare,
                      read_corpus, story, vocab)

STORY_FIXTURE = """1 Mary moved to the bathroom.
2 Where is Mary?\tbathroom\t1
3 John went to the hallway.
4 Where is John?\thallway\t3
1 Sandra journeyed to the garden.
2 Sandra got the milk there.
3 Where is the milk?\tgarden\t2 1
"""


def test_parse_story_fixture(tmp_path):
    path = tmp_path / "qa1_fixture_train.txt"
    path.write_text(STORY_FIXTURE)
    eps = story.parse_story_file(path, task_id=1)
    assert len(eps) == 3
    first = eps[0]
    assert first.sentences == [["mary", "moved", "to", "the", "bathroom"]]
    assert first.question == ["where", "is", "mary"]
    assert first.answer == "bathroom"
    assert first.supporting == [0]
    # id reset started a fresh story: memory does not leak across stories
    third = eps[2]
    assert len(third.sentences) == 2
    assert third.sentences[0][0] == "sandra"
    assert third.supporting == [1, 0]


def test_story_round_trip(tmp_path):
    path = tmp_path / "qa1_fixture_train.txt"
    path.write_text(STORY_FIXTURE)
    eps = story.parse_story_file(path, task_id=1)
    assert story.serialize_story_episodes(eps) == STORY_FIXTURE


def test_generated_corpus_round_trips(tmp_path):
    datagen.write_story_task(tmp_path, 2, n_train=30, n_test=5, seed=1)
    path = next(tmp_path.glob("qa2_*_train.txt"))
    eps = story.parse_story_file(path)
    assert story.serialize_story_episodes(eps) == path.read_text()
    assert all(ep.task_id == 2 for ep in eps)


def test_multiword_answer_is_one_class(tmp_path):
    text = "1 Daniel took the milk.\n2 Daniel grabbed the football.\n" \
           "3 What is Daniel carrying?\tmilk,football\t1 2\n"
    path = tmp_path / "qa8_lists_train.txt"
    path.write_text(text)
    eps = story.parse_story_file(path)
    assert eps[0].answer == "milk,football"


def test_parse_errors_carry_line_numbers(tmp_path):
    bad = tmp_path / "qa1_bad_train.txt"
    bad.write_text("1 Mary moved.\nxx broken line\n")
    with pytest.raises(story.StoryParseError, match=":2"):
        story.parse_story_file(bad)
    nonmono = tmp_path / "qa1_mono_train.txt"
    nonmono.write_text("1 Mary moved.\n3 John left.\n2 Where is Mary?\tx\t1\n")
    with pytest.raises(story.StoryParseError, match="non-monotonic"):
        story.parse_story_file(nonmono)


def _episode(n_sentences, task_id=1):
    return story.Episode(
        sentences=[[f"w{i}"] for i in range(n_sentences)],
        question=["q"], answer="a",
        supporting=[0, n_sentences - 1], task_id=task_id,
        raw_sentences=[f"s{i}" for i in range(n_sentences)],
        raw_question="q?", raw_answer="a", raw_supporting=[],
        line_ids=list(range(1, n_sentences + 1)))


def test_window_keeps_most_recent():
    ep = story.window_memory(_episode(80, task_id=1))
    assert len(ep.sentences) == 70
    assert ep.sentences[-1] == ["w79"] and ep.sentences[0] == ["w10"]
    assert ep.supporting == [69]  # first supporting fact fell out of range

    ep3 = story.window_memory(_episode(200, task_id=3))
    assert len(ep3.sentences) == 130

    small = story.window_memory(_episode(5))
    assert len(small.sentences) == 5 and small.supporting == [0, 4]


def test_relative_position_tags():
    ep = story.tag_relative_position(_episode(3))
    assert [s[0] for s in ep.sentences] == ["pos_3", "pos_2", "pos_1"]
    # tags come after windowing, so tag values never exceed the window
    big = story.tag_relative_position(story.window_memory(_episode(90)))
    assert big.sentences[0][0] == "pos_70"
    assert big.sentences[-1][0] == "pos_1"


DIALOG_FIXTURE = """1 good morning\thello what can i help you with today
2 resto_3 r_phone resto_3_phone
3 can you book a table in seoul\ti'm on it
4 <SILENCE>\tapi_call seoul

1 hi\thello what can i help you with today
"""

DIALOG_CANDIDATES = ["hello what can i help you with today", "i'm on it",
                     "api_call seoul"]


def _write_dialog(tmp_path):
    d = tmp_path / "dlg.txt"
    d.write_text(DIALOG_FIXTURE)
    c = tmp_path / "cands.txt"
    c.write_text("".join(f"1 {x}\n" for x in DIALOG_CANDIDATES))
    return d, c


def test_parse_dialog_growing_history(tmp_path):
    d, c = _write_dialog(tmp_path)
    cands = dialog.load_candidates(c)
    eps = dialog.parse_dialog_file(d, cands, task_id=1)
    assert len(eps) == 4
    assert eps[0].history == []
    assert eps[1].history[0] == ("user", ["good", "morning"])
    # KB fact entered history as a user line
    assert ("user", ["resto_3", "r_phone", "resto_3_phone"]) in eps[2].history
    assert eps[2].user_input == ["<silence>"]
    assert eps[2].answer_candidate_id == 2
    # blank line / id reset started a new dialog
    assert eps[3].history == []


def test_dialog_answer_must_be_a_candidate(tmp_path):
    d = tmp_path / "bad.txt"
    d.write_text("1 hello\tnot in the list\n")
    with pytest.raises(dialog.DialogParseError, match="candidate"):
        dialog.parse_dialog_file(d, DIALOG_CANDIDATES)


def test_match_type_features_against_set_oracle(tmp_path):
    kb = tmp_path / "kb.txt"
    kb.write_text("1 resto_1 r_cuisine british\n"
                  "2 resto_1 r_location seoul\n"
                  "3 resto_1 r_phone resto_1_phone\n"
                  "4 resto_2 r_cuisine french\n"
                  "5 resto_2 r_location madrid\n")
    lex = dialog.load_kb_lexicons(kb)
    assert lex["location"] == {"seoul", "madrid"}
    assert lex["restaurant"] == {"resto_1", "resto_2"}

    history = [("user", ["table", "in", "seoul", "please"]),
               ("bot", ["i'm", "on", "it"])]
    candidates = ["api_call british seoul", "api_call french madrid",
                  "what do you think of resto_1", "hello"]
    flags = dialog.match_type_features(history, candidates, lex)

    # independent brute force: for every (candidate, field) intersect sets
    hist_words = {w for _, toks in history for w in toks}
    for ci, cand in enumerate(candidates):
        for fi, field in enumerate(dialog.MATCH_FIELDS):
            shared = hist_words & lex.get(field, set())
            expected = bool(set(cand.split()) & shared)
            assert flags[ci, fi] == expected
    assert flags[0, dialog.MATCH_FIELDS.index("location")] == 1
    assert flags[1, dialog.MATCH_FIELDS.index("location")] == 0
    assert flags.sum() == 1

    sparse = dialog.sparse_match_candidates(
        history, dialog.build_candidate_word_index(candidates), lex)
    dense = np.zeros_like(flags)
    for fi, ids in enumerate(sparse):
        dense[ids, fi] = 1
    assert np.array_equal(dense, flags)


def test_empty_history_has_no_match_bits():
    lex = {"location": {"seoul"}}
    flags = dialog.match_type_features([], ["api_call seoul"], lex)
    assert flags.sum() == 0


def _recommend_episode(user, answer):
    return dialog.DialogEpisode(history=[], user_input=list(user),
                                answer_candidate_id=0, task_id=3,
                                raw_answer=answer)


def test_double_silence_rewrite():
    rec = _recommend_episode(["<silence>"],
                             "what do you think of this option: resto_1")
    ask = _recommend_episode(["<silence>"], "where should it be")
    out = dialog.double_silence_rewrite([rec, ask])
    assert out[0].user_input == ["<silence>", "<silence>"]
    assert out[1].user_input == ["<silence>"]
    again = dialog.double_silence_rewrite(out)
    assert again[0].user_input == ["<silence>", "<silence>"]


def test_vocabulary_determinism_and_unknowns():
    v1 = vocab.Vocabulary({"b", "a", "c"}, ["a"])
    v2 = vocab.Vocabulary({"c", "b", "a"}, ["a"])
    assert v1.words == v2.words
    assert v1.words[0] == vocab.PAD_TOKEN and v1.words[1] == vocab.UNK_TOKEN
    assert v1.encode(["a", "c"]) == v2.encode(["a", "c"])
    with pytest.raises(vocab.VocabError):
        v1.encode(["zzz"])
    assert v1.encode(["zzz"], oov_to_unk=True) == [1]


def test_story_prepare_and_container_round_trip(tmp_path):
    datagen.write_story_task(tmp_path, 1, n_train=40, n_test=10, seed=2)
    out = tmp_path / "c.rmnd"
    corpus = prepare.prepare_story_corpus(tmp_path, 1, out)
    loaded = read_corpus(out)
    assert loaded.kind == "story"
    assert loaded.vocab.words == corpus.vocab.words
    assert loaded.vocab.answer_classes == corpus.vocab.answer_classes
    for split in corpus.splits:
        a, b = corpus.split(split), loaded.split(split)
        assert len(a) == len(b)
        assert all(x.sentences == y.sentences and x.answer_id == y.answer_id
                   and x.supporting == y.supporting for x, y in zip(a, b))
    # vocabulary gained exactly the position tokens present in the data
    max_mem = max(len(ep.sentences) for eps in corpus.splits.values()
                  for ep in eps)
    tags = [w for w in corpus.vocab.words if w.startswith("pos_")]
    assert len(tags) == max_mem


def test_prepare_is_deterministic(tmp_path):
    datagen.write_story_task(tmp_path, 1, n_train=20, n_test=5, seed=3)
    out1 = tmp_path / "c1.rmnd"
    out2 = tmp_path / "c2.rmnd"
    prepare.prepare_story_corpus(tmp_path, 1, out1)
    prepare.prepare_story_corpus(tmp_path, 1, out2)
    assert out1.read_bytes() == out2.read_bytes()


def test_container_detects_corruption(tmp_path):
    datagen.write_story_task(tmp_path, 1, n_train=10, n_test=5, seed=4)
    out = tmp_path / "c.rmnd"
    prepare.prepare_story_corpus(tmp_path, 1, out)
    blob = bytearray(out.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    out.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="digest"):
        read_corpus(out)


def test_dialog_prepare_pipeline(tmp_path):
    datagen.write_dialog_task(tmp_path, 1, n_train=30, n_dev=10, n_test=10,
                              seed=5)
    out = tmp_path / "d.rmnd"
    corpus = prepare.prepare_dialog_corpus(tmp_path, 1, out)
    assert corpus.kind == "dialog"
    assert set(corpus.splits) == {"train", "val", "test", "test_oov"}
    assert corpus.n_match_fields == len(dialog.MATCH_FIELDS)
    ep = corpus.split("train")[2]
    words = corpus.vocab.decode(ep.sentences[0])
    assert words[0].startswith("pos_") and words[1] in ("spk_user", "spk_bot")
    # every answer id indexes the gold utterance within the candidate list
    assert all(0 <= e.answer_id < corpus.n_answer_classes
               for eps in corpus.splits.values() for e in eps)
    # OOV split encodes unseen words as the unknown token instead of failing
    oov_ids = {i for e in corpus.split("test_oov") for s in e.sentences
               for i in s}
    assert 1 in oov_ids


def test_batching_is_deterministic_and_padded():
    eps = [container.CorpusEpisode(sentences=[[2, 3], [4]], question=[5],
                                   answer_id=0, task_id=1),
           container.CorpusEpisode(sentences=[[6, 7, 8]], question=[9, 2],
                                   answer_id=1, task_id=2)]
    b1 = list(batching.iter_batches(eps, 2, seed=11))
    b2 = list(batching.iter_batches(eps, 2, seed=11))
    assert np.array_equal(b1[0].sent_ids, b2[0].sent_ids)
    assert np.array_equal(b1[0].episode_ids, b2[0].episode_ids)
    batch = batching.pack_batch(eps)
    assert batch.sent_ids.shape == (3, 3)
    assert batch.sent_lengths.tolist() == [2, 1, 3]
    assert batch.mem_counts.tolist() == [2, 1]
    assert batch.q_ids.shape == (2, 2)
    assert batch.q_ids[0].tolist() == [5, 0]
