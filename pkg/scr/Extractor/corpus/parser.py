"""
Parsers and serializers for the three tab-separated corpus files.

    abstracts:  pmid <TAB> title <TAB> abstract
    entities:   pmid <TAB> eid <TAB> type <TAB> start <TAB> end <TAB> surface
    relations:  pmid <TAB> label <TAB> Arg1:<eid> <TAB> Arg2:<eid>

Input lines may end in LF or CRLF; output always uses LF. Offsets are
character offsets into the decoded UTF-8 text.
"""
import re
from typing import Iterable, Iterator, List, Tuple

from corpus.models import (
    ENTITY_TYPE_TAGS,
    Document,
    EntityKind,
    EntityMention,
    RelationAnnotation,
    corpus_label,
)
from errors import (
    BadArgPrefix,
    BadOffsets,
    DuplicatePmid,
    EmptyField,
    MalformedLine,
    UnknownEntityType,
    UnknownLabel,
)

_OFFSET_RE = re.compile(r"[0-9]+")


def _records(stream: Iterable[str], n_fields: int) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line number, fields) for every non-empty line"""
    for line_no, line in enumerate(stream, start=1):
        if line.endswith("\r\n"):
            line = line[:-2]
        elif line.endswith("\n"):
            line = line[:-1]
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise MalformedLine(line_no, n_fields, len(fields))
        yield line_no, fields


def parse_abstracts(stream: Iterable[str]) -> List[Document]:
    documents = []
    seen = set()
    for line_no, (pmid, title, abstract) in _records(stream, 3):
        if not pmid:
            raise EmptyField("pmid", line_no)
        if not title:
            raise EmptyField("title", line_no)
        if pmid in seen:
            raise DuplicatePmid(pmid, line_no)
        seen.add(pmid)
        documents.append(Document(pmid=pmid, title=title, abstract=abstract))
    return documents


def parse_entities(stream: Iterable[str]) -> List[EntityMention]:
    mentions = []
    for line_no, (pmid, eid, type_tag, start, end, surface) in _records(stream, 6):
        kind = ENTITY_TYPE_TAGS.get(type_tag)
        if kind is None:
            raise UnknownEntityType(type_tag, line_no)
        if not (_OFFSET_RE.fullmatch(start) and _OFFSET_RE.fullmatch(end)):
            raise BadOffsets(start, end, line_no)
        begin, finish = int(start), int(end)
        if begin >= finish:
            raise BadOffsets(start, end, line_no)
        mentions.append(
            EntityMention(
                pmid=pmid,
                eid=eid,
                kind=kind,
                start=begin,
                end=finish,
                surface=surface,
                type_tag=type_tag,
            )
        )
    return mentions


def _strip_arg(value: str, prefix: str, line_no: int) -> str:
    if not value.startswith(prefix) or len(value) == len(prefix):
        raise BadArgPrefix(value, prefix, line_no)
    return value[len(prefix):]


def parse_relations(stream: Iterable[str]) -> List[RelationAnnotation]:
    relations = []
    for line_no, (pmid, label, arg1, arg2) in _records(stream, 4):
        try:
            relation_label = corpus_label(label)
        except KeyError:
            raise UnknownLabel(label, line_no) from None
        relations.append(
            RelationAnnotation(
                pmid=pmid,
                label=relation_label,
                arg1=_strip_arg(arg1, "Arg1:", line_no),
                arg2=_strip_arg(arg2, "Arg2:", line_no),
            )
        )
    return relations


def serialize_abstracts(documents: Iterable[Document]) -> str:
    return "".join(f"{d.pmid}\t{d.title}\t{d.abstract}\n" for d in documents)


def _type_tag(mention: EntityMention) -> str:
    if mention.type_tag:
        return mention.type_tag
    return "CHEMICAL" if mention.kind is EntityKind.CHEMICAL else "GENE"


def serialize_entities(mentions: Iterable[EntityMention]) -> str:
    return "".join(
        f"{m.pmid}\t{m.eid}\t{_type_tag(m)}\t{m.start}\t{m.end}\t{m.surface}\n" for m in mentions
    )


def serialize_relations(relations: Iterable[RelationAnnotation]) -> str:
    return "".join(
        f"{r.pmid}\t{r.label.value}\tArg1:{r.arg1}\tArg2:{r.arg2}\n" for r in relations
    )


def read_abstracts(path: str) -> List[Document]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return parse_abstracts(f)


def read_entities(path: str) -> List[EntityMention]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return parse_entities(f)


def read_relations(path: str) -> List[RelationAnnotation]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return parse_relations(f)
