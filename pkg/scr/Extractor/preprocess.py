"""
Sentence-level preprocessing of the corpus into tagged relation examples.

1. title and abstract are joined by a single space so corpus offsets index the flat text
2. the flat text is split into sentences; only same-sentence pairs are considered
3. terminators after known non-terminal words ("in vivo.", "Vmax.") do not split
4. the chemical is wrapped as $chemical$ and the protein as #protein#, names kept
5. candidate pairs without a gold relation are labeled Other
6. pairs annotated only with the three rare labels are dropped
"""
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from config import SplitterConfig
from corpus.models import (
    CORPUS_LABELS,
    RARE_LABELS,
    Document,
    EntityKind,
    EntityMention,
    RelationAnnotation,
    RelationLabel,
)
from errors import MalformedLine, OverlapError, PreprocessError, UnknownLabel

logger = logging.getLogger(__name__)

CHEM_MARKER = "$"
PROT_MARKER = "#"

_TERMINATOR_RE = re.compile(r"[.!?](\s+)")
_WORD_RE = re.compile(r"[^\W_]+")
_CHUNK_RE = re.compile(r"\S*$")


@dataclass(frozen=True)
class FlatText:
    pmid: str
    text: str
    title_length: int


@dataclass(frozen=True, order=True)
class SentenceSpan:
    start: int
    end: int

    def contains(self, mention: EntityMention) -> bool:
        return self.start <= mention.start and mention.end <= self.end


@dataclass(frozen=True)
class CandidatePair:
    pmid: str
    sentence: SentenceSpan
    chem: EntityMention
    prot: EntityMention

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.pmid, self.chem.eid, self.prot.eid)


@dataclass(frozen=True)
class TaggedSentence:
    text: str
    chem_span: Tuple[int, int]
    prot_span: Tuple[int, int]


@dataclass(frozen=True)
class RelationExample:
    pmid: str
    chem_eid: str
    prot_eid: str
    tagged_text: str
    label: RelationLabel
    chem_char_span: Tuple[int, int]  # marker-inclusive
    prot_char_span: Tuple[int, int]


@dataclass
class PreprocessStats:
    documents: int = 0
    sentences: int = 0
    candidate_pairs: int = 0
    overlap_skipped: int = 0
    rare_dropped: int = 0
    cross_sentence_skipped: int = 0
    multi_label_resolved: int = 0
    label_counts: Counter = field(default_factory=Counter)
    overlapping_keys: Set[Tuple[str, str, str]] = field(default_factory=set)

    def lines(self) -> List[str]:
        out = [
            f"documents: {self.documents}",
            f"sentences: {self.sentences}",
            f"candidate pairs: {self.candidate_pairs}",
            f"overlap skipped: {self.overlap_skipped}",
            f"rare-label dropped: {self.rare_dropped}",
            f"cross-sentence skipped: {self.cross_sentence_skipped}",
            f"multi-label resolved: {self.multi_label_resolved}",
            f"examples: {sum(self.label_counts.values())}",
        ]
        for label in RelationLabel:
            if self.label_counts.get(label):
                out.append(f"  {label.value}: {self.label_counts[label]}")
        return out


def merge_title_abstract(doc: Document) -> FlatText:
    """Step 1: the tab between title and abstract becomes one space"""
    return FlatText(pmid=doc.pmid, text=f"{doc.title} {doc.abstract}", title_length=len(doc.title))


def _trimmed(text: str, start: int, end: int) -> Optional[SentenceSpan]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return SentenceSpan(start, end) if start < end else None


def _split_suppressed(text: str, segment_start: int, terminator: int, cfg: SplitterConfig) -> bool:
    chunk = _CHUNK_RE.search(text, segment_start, terminator).group()
    if chunk in cfg.abbreviations:
        return True
    words = _WORD_RE.findall(chunk)
    return bool(words) and words[-1] in cfg.non_terminal_tokens


def split_sentences(flat: FlatText, cfg: Optional[SplitterConfig] = None) -> List[SentenceSpan]:
    """
    Rule-based sentence splitting of a flat document text

    A boundary follows '.', '!' or '?' when whitespace and then an uppercase
    letter or digit come next, unless the word before the terminator is a
    configured non-terminal token or the token is a configured abbreviation.
    The title is always a sentence of its own.

    Args:
        flat: merged title and abstract
        cfg: splitter exceptions

    Returns:
        Ordered, disjoint, whitespace-trimmed spans
    """
    cfg = cfg or SplitterConfig()
    text = flat.text
    spans: List[SentenceSpan] = []

    title = _trimmed(text, 0, flat.title_length)
    if title:
        spans.append(title)

    segment_start = flat.title_length + 1
    for match in _TERMINATOR_RE.finditer(text, segment_start):
        following = match.end()
        if following >= len(text):
            continue
        nxt = text[following]
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if _split_suppressed(text, segment_start, match.start(), cfg):
            continue
        span = _trimmed(text, segment_start, match.start() + 1)
        if span:
            spans.append(span)
        segment_start = following

    tail = _trimmed(text, segment_start, len(text))
    if tail:
        spans.append(tail)
    return spans


def _mention_order(mention: EntityMention) -> Tuple[int, int, str]:
    return (mention.start, mention.end, mention.eid)


def generate_candidates(
    flat: FlatText,
    entities: Sequence[EntityMention],
    sentences: Sequence[SentenceSpan],
    stats: Optional[PreprocessStats] = None,
) -> List[CandidatePair]:
    """Chemical x protein pairs inside one sentence, ordered by (sentence, chemical, protein) start"""
    pairs = []
    for sentence in sentences:
        inside = [e for e in entities if sentence.contains(e)]
        chems = sorted((e for e in inside if e.kind is EntityKind.CHEMICAL), key=_mention_order)
        prots = sorted((e for e in inside if e.kind is EntityKind.PROTEIN), key=_mention_order)
        for chem in chems:
            for prot in prots:
                if chem.overlaps(prot):
                    logger.warning(
                        "Skipping overlapping pair %s/%s in document %s", chem.eid, prot.eid, flat.pmid
                    )
                    if stats is not None:
                        stats.overlap_skipped += 1
                        stats.overlapping_keys.add((flat.pmid, chem.eid, prot.eid))
                    continue
                pairs.append(CandidatePair(flat.pmid, sentence, chem, prot))
    return pairs


def tag_entities(
    flat: FlatText, sentence: SentenceSpan, chem: EntityMention, prot: EntityMention
) -> TaggedSentence:
    """
    Wrap the chemical in '$' and the protein in '#' inside the sentence text.

    Insertions go right to left so the earlier offsets stay valid. Returned
    spans are relative to the tagged sentence and include the markers.
    """
    if chem.overlaps(prot):
        raise OverlapError(flat.pmid, chem.eid, prot.eid)
    if not (sentence.contains(chem) and sentence.contains(prot)):
        raise PreprocessError(f"entities {chem.eid}/{prot.eid} are not inside the sentence in {flat.pmid}")

    text = flat.text[sentence.start:sentence.end]
    if CHEM_MARKER in text or PROT_MARKER in text:
        logger.warning("Marker character already present in sentence of document %s", flat.pmid)

    cs, ce = chem.start - sentence.start, chem.end - sentence.start
    ps, pe = prot.start - sentence.start, prot.end - sentence.start
    for start, end, marker in sorted([(cs, ce, CHEM_MARKER), (ps, pe, PROT_MARKER)], reverse=True):
        text = f"{text[:start]}{marker}{text[start:end]}{marker}{text[end:]}"

    if cs < ps:
        chem_span, prot_span = (cs, ce + 2), (ps + 2, pe + 4)
    else:
        prot_span, chem_span = (ps, pe + 2), (cs + 2, ce + 4)
    return TaggedSentence(text=text, chem_span=chem_span, prot_span=prot_span)


def label_candidates(
    pairs: Iterable[CandidatePair],
    gold: Iterable[RelationAnnotation],
    flats: Mapping[str, FlatText],
    drop_rare: bool = True,
    stats: Optional[PreprocessStats] = None,
) -> List[RelationExample]:
    """
    Attach gold labels to candidate pairs (steps 5 and 6).

    Unmatched pairs become Other. Pairs whose gold labels are all rare are
    dropped. Several kept labels resolve to the earliest in corpus order.
    """
    gold_labels: Dict[Tuple[str, str, str], Set[RelationLabel]] = defaultdict(set)
    for relation in gold:
        gold_labels[relation.key].add(relation.label)

    examples = []
    for pair in pairs:
        labels = gold_labels.get(pair.key)
        if not labels:
            label = RelationLabel.OTHER
        else:
            kept = [lab for lab in CORPUS_LABELS if lab in labels and not (drop_rare and lab in RARE_LABELS)]
            if not kept:
                if stats is not None:
                    stats.rare_dropped += 1
                continue
            if len(kept) > 1:
                logger.warning(
                    "Pair %s/%s in document %s has labels %s; keeping %s",
                    pair.chem.eid, pair.prot.eid, pair.pmid, [lab.value for lab in kept], kept[0].value,
                )
                if stats is not None:
                    stats.multi_label_resolved += 1
            label = kept[0]

        tagged = tag_entities(flats[pair.pmid], pair.sentence, pair.chem, pair.prot)
        examples.append(
            RelationExample(
                pmid=pair.pmid,
                chem_eid=pair.chem.eid,
                prot_eid=pair.prot.eid,
                tagged_text=tagged.text,
                label=label,
                chem_char_span=tagged.chem_span,
                prot_char_span=tagged.prot_span,
            )
        )
        if stats is not None:
            stats.label_counts[label] += 1
    return examples


def count_cross_sentence(
    gold: Iterable[RelationAnnotation],
    pairs: Iterable[CandidatePair],
    overlapping: Iterable[Tuple[str, str, str]] = (),
) -> int:
    """Gold relations whose two mentions never share a sentence; overlapping same-sentence pairs are not counted"""
    same_sentence = {pair.key for pair in pairs} | set(overlapping)
    return sum(1 for relation in gold if relation.key not in same_sentence)


def _flatten(text: str) -> str:
    return re.sub(r"[\t\r\n]", " ", text)


def write_examples(examples: Iterable[RelationExample]) -> str:
    """
    Examples TSV: pmid, chem_eid, prot_eid, label, tagged_text, then the
    marker-inclusive chemical and protein spans as start:end
    """
    return "".join(
        f"{ex.pmid}\t{ex.chem_eid}\t{ex.prot_eid}\t{ex.label.value}\t{_flatten(ex.tagged_text)}"
        f"\t{ex.chem_char_span[0]}:{ex.chem_char_span[1]}\t{ex.prot_char_span[0]}:{ex.prot_char_span[1]}\n"
        for ex in examples
    )


def _marker_span(text: str, marker: str, line_no: int) -> Tuple[int, int]:
    positions = [i for i, ch in enumerate(text) if ch == marker]
    if len(positions) != 2:
        raise PreprocessError(f"line {line_no}: cannot locate the {marker!r} region unambiguously")
    return (positions[0], positions[1] + 1)


def _parse_span(value: str, line_no: int) -> Tuple[int, int]:
    start, sep, end = value.partition(":")
    if not sep or not start.isdigit() or not end.isdigit():
        raise PreprocessError(f"line {line_no}: bad span {value!r}")
    return (int(start), int(end))


def read_examples(stream: Iterable[str]) -> List[RelationExample]:
    """Parse an examples TSV with seven columns, or five when spans must be recovered"""
    examples = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) not in (5, 7):
            raise MalformedLine(line_no, 7, len(fields))
        pmid, chem_eid, prot_eid, label, text = fields[:5]
        try:
            relation_label = RelationLabel(label)
        except ValueError:
            raise UnknownLabel(label, line_no) from None
        if len(fields) == 7:
            chem_span = _parse_span(fields[5], line_no)
            prot_span = _parse_span(fields[6], line_no)
        else:
            chem_span = _marker_span(text, CHEM_MARKER, line_no)
            prot_span = _marker_span(text, PROT_MARKER, line_no)
        examples.append(
            RelationExample(pmid, chem_eid, prot_eid, text, relation_label, chem_span, prot_span)
        )
    return examples


def load_examples(path: str) -> List[RelationExample]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return read_examples(f)
