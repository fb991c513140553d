"""
Corpus service layer: joining, validating, merging and summarizing
"""
import logging
from typing import Dict, Iterable, List

from corpus.models import (
    CORPUS_LABELS,
    Corpus,
    CorpusStats,
    Document,
    EntityKind,
    EntityMention,
    RelationAnnotation,
)
from corpus.parser import read_abstracts, read_entities, read_relations
from errors import (
    ArgKindMismatch,
    DuplicateEntity,
    DuplicatePmid,
    OffsetMismatch,
    OrphanEntity,
    OrphanRelation,
)
from preprocess import merge_title_abstract

logger = logging.getLogger(__name__)


def assemble_corpus(
    docs: Iterable[Document],
    ents: Iterable[EntityMention],
    rels: Iterable[RelationAnnotation],
) -> Corpus:
    """
    Join the three parsed files by pmid and validate them

    Args:
        docs: parsed abstracts
        ents: parsed entity mentions
        rels: parsed relations

    Returns:
        Corpus whose entity surfaces match the flat text and whose relations
        point from a chemical to a protein of the same document
    """
    documents: Dict[str, Document] = {}
    for doc in docs:
        if doc.pmid in documents:
            raise DuplicatePmid(doc.pmid)
        documents[doc.pmid] = doc

    flat_texts = {pmid: merge_title_abstract(doc).text for pmid, doc in documents.items()}
    entities: Dict[str, List[EntityMention]] = {pmid: [] for pmid in documents}
    index: Dict[str, Dict[str, EntityMention]] = {pmid: {} for pmid in documents}
    for mention in ents:
        if mention.pmid not in documents:
            raise OrphanEntity(mention.pmid, mention.eid)
        found = flat_texts[mention.pmid][mention.start:mention.end]
        if mention.end > len(flat_texts[mention.pmid]) or found != mention.surface:
            raise OffsetMismatch(mention.pmid, mention.eid, mention.surface, found)
        if mention.eid in index[mention.pmid]:
            raise DuplicateEntity(mention.pmid, mention.eid)
        index[mention.pmid][mention.eid] = mention
        entities[mention.pmid].append(mention)

    relations: Dict[str, List[RelationAnnotation]] = {pmid: [] for pmid in documents}
    seen = set()
    for relation in rels:
        if relation.pmid not in documents:
            raise OrphanRelation(relation.pmid, "unknown document")
        known = index[relation.pmid]
        for eid, expected in ((relation.arg1, EntityKind.CHEMICAL), (relation.arg2, EntityKind.PROTEIN)):
            mention = known.get(eid)
            if mention is None:
                raise OrphanRelation(relation.pmid, f"unknown entity {eid}")
            if mention.kind is not expected:
                raise ArgKindMismatch(relation.pmid, eid, expected.value, mention.kind.value)
        if relation in seen:
            logger.warning(
                "Dropping duplicate relation %s %s %s/%s",
                relation.pmid, relation.label.value, relation.arg1, relation.arg2,
            )
            continue
        seen.add(relation)
        relations[relation.pmid].append(relation)

    return Corpus(documents=documents, entities=entities, relations=relations)


def load_corpus(abstracts_path: str, entities_path: str, relations_path: str = None) -> Corpus:
    """Read and assemble one corpus; without a relations file the corpus has no gold"""
    rels = read_relations(relations_path) if relations_path else []
    corpus = assemble_corpus(read_abstracts(abstracts_path), read_entities(entities_path), rels)
    logger.info(
        "Loaded %d documents from %s (%d relations)",
        len(corpus.documents), abstracts_path, len(corpus.all_relations()),
    )
    return corpus


def merge_corpora(*corpora: Corpus) -> Corpus:
    """Combine independently assembled corpora; a pmid may appear in only one of them"""
    documents: Dict[str, Document] = {}
    entities: Dict[str, List[EntityMention]] = {}
    relations: Dict[str, List[RelationAnnotation]] = {}
    for corpus in corpora:
        for pmid, doc in corpus.documents.items():
            if pmid in documents:
                raise DuplicatePmid(pmid)
            documents[pmid] = doc
            entities[pmid] = list(corpus.entities.get(pmid, []))
            relations[pmid] = list(corpus.relations.get(pmid, []))
    return Corpus(documents=documents, entities=entities, relations=relations)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    per_label = {label: 0 for label in CORPUS_LABELS}
    n_chemicals = n_proteins = 0
    for pmid in corpus.documents:
        for mention in corpus.entities.get(pmid, []):
            if mention.kind is EntityKind.CHEMICAL:
                n_chemicals += 1
            else:
                n_proteins += 1
        for relation in corpus.relations.get(pmid, []):
            per_label[relation.label] += 1
    return CorpusStats(
        n_documents=len(corpus.documents),
        n_chemicals=n_chemicals,
        n_proteins=n_proteins,
        n_positive_relations=sum(per_label.values()),
        per_label_counts=per_label,
    )
