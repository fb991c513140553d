"""
Preprocessing graph nodes. Each node reads the state and returns the fields it updates.
"""
import logging

from corpus.service import load_corpus, merge_corpora
from errors import ConfigError
from preprocess import (
    PreprocessStats,
    count_cross_sentence,
    generate_candidates,
    label_candidates,
    merge_title_abstract,
    split_sentences,
)
from state import PreprocessState

logger = logging.getLogger(__name__)


def load_documents(state: PreprocessState):
    """Read every corpus triple and merge them into one corpus."""
    logger.info("---LOADING CORPUS---")
    if not state.abstracts or len(state.abstracts) != len(state.entities):
        raise ConfigError("each abstracts file needs a matching entities file")
    if state.relations and len(state.relations) != len(state.abstracts):
        raise ConfigError("give one relations file per abstracts file, or none")

    corpora = []
    for i, (abstracts, entities) in enumerate(zip(state.abstracts, state.entities)):
        relations = state.relations[i] if state.relations else None
        corpora.append(load_corpus(abstracts, entities, relations))
    corpus = corpora[0] if len(corpora) == 1 else merge_corpora(*corpora)
    return {"corpus": corpus, "stats": PreprocessStats(documents=len(corpus.documents))}


def split_documents(state: PreprocessState):
    """Steps 1-3: merge title and abstract, then split sentences."""
    logger.info("---SPLITTING SENTENCES---")
    flats, sentences = {}, {}
    for pmid, doc in state.corpus.documents.items():
        flats[pmid] = merge_title_abstract(doc)
        sentences[pmid] = split_sentences(flats[pmid], state.splitter)
    state.stats.sentences = sum(len(spans) for spans in sentences.values())
    return {"flats": flats, "sentences": sentences, "stats": state.stats}


def generate_pairs(state: PreprocessState):
    """Same-sentence chemical x protein candidates."""
    logger.info("---GENERATING CANDIDATE PAIRS---")
    pairs = []
    for pmid, flat in state.flats.items():
        pairs.extend(generate_candidates(flat, state.corpus.entities.get(pmid, []), state.sentences[pmid], state.stats))
    state.stats.candidate_pairs = len(pairs)
    state.stats.cross_sentence_skipped = count_cross_sentence(
        state.corpus.all_relations(), pairs, state.stats.overlapping_keys
    )
    logger.info("%d candidate pairs, %d gold relations cross sentences",
                len(pairs), state.stats.cross_sentence_skipped)
    return {"pairs": pairs, "stats": state.stats}


def label_pairs(state: PreprocessState):
    """Steps 4-6: tag, label and filter the pairs."""
    logger.info("---LABELING PAIRS---")
    examples = label_candidates(
        state.pairs, state.corpus.all_relations(), state.flats, state.drop_rare, state.stats
    )
    return {"examples": examples, "stats": state.stats}
