"""Dataset parsing, preprocessing, containers, and batching."""

from .batching import Batch, iter_batches, pack_batch
from .container import Corpus, CorpusEpisode, ContainerError, read_corpus, write_corpus
from .dialog import (DialogEpisode, DialogParseError, MATCH_FIELDS,
                     double_silence_rewrite, load_candidates, load_kb_lexicons,
                     match_type_features, parse_dialog_file)
from .prepare import (DataError, prepare_dialog_corpus, prepare_story_corpus,
                      preprocess_story_episode)
from .story import (Episode, StoryParseError, parse_story_file,
                    serialize_story_episodes, tag_relative_position,
                    window_memory)
from .vocab import Vocabulary, VocabError

__all__ = [
    "Batch", "iter_batches", "pack_batch",
    "Corpus", "CorpusEpisode", "ContainerError", "read_corpus", "write_corpus",
    "DialogEpisode", "DialogParseError", "MATCH_FIELDS",
    "double_silence_rewrite", "load_candidates", "load_kb_lexicons",
    "match_type_features", "parse_dialog_file",
    "DataError", "prepare_dialog_corpus", "prepare_story_corpus",
    "preprocess_story_episode",
    "Episode", "StoryParseError", "parse_story_file",
    "serialize_story_episodes", "tag_relative_position", "window_memory",
    "Vocabulary", "VocabError",
]
