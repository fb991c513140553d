"""
Word-level tokenizer and vocabulary for tagged relation examples.

Maximal alphanumeric runs are tokens; every other non-whitespace character is
a token of its own. The entity markers '$' and '#' are reserved entries so an
entity boundary never degrades to <unk>.
"""
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from corpus.models import RelationLabel
from errors import EmptyCorpus, PreprocessError, UnknownLabel, VocabMismatch
from preprocess import CHEM_MARKER, PROT_MARKER, RelationExample

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)
MARKER_TOKENS = (CHEM_MARKER, PROT_MARKER)

_TOKEN_RE = re.compile(r"[^\W_]+|\S")


def tokenize_with_offsets(text: str) -> List[Tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> List[str]:
    return [m.group() for m in _TOKEN_RE.finditer(text)]


class Vocabulary:
    """Bijection between tokens and ids; ids 0..3 are <pad>, <s>, </s>, <unk>"""

    def __init__(self, tokens: Sequence[str], min_frequency: int = 1):
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise VocabMismatch(f"vocabulary must start with {', '.join(RESERVED)}")
        self._tokens: List[str] = list(tokens)
        self._ids: Dict[str, int] = {}
        for i, token in enumerate(self._tokens):
            if token in self._ids:
                raise VocabMismatch(f"token {token!r} appears twice in the vocabulary")
            self._ids[token] = i
        self.min_frequency = min_frequency

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def token_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._tokens[i] for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("".join(f"{token}\n" for token in self._tokens))

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8", newline="") as f:
            tokens = [line.rstrip("\r\n") for line in f]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocab_from_texts(texts: Iterable[str], min_frequency: int = 1) -> Vocabulary:
    if min_frequency < 1:
        raise ValueError("min_frequency must be at least 1")
    counts: Counter = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise EmptyCorpus("cannot build a vocabulary from no examples")

    fixed = RESERVED + MARKER_TOKENS
    ranked = sorted(
        ((token, count) for token, count in counts.items() if token not in fixed),
        key=lambda item: (-item[1], item[0]),
    )
    kept = [token for token, count in ranked if count >= min_frequency]
    logger.info("Vocabulary: %d tokens kept, %d below min_frequency %d",
                len(kept), len(ranked) - len(kept), min_frequency)
    return Vocabulary([*fixed, *kept], min_frequency=min_frequency)


def build_vocab(examples: Iterable[RelationExample], min_frequency: int = 1) -> Vocabulary:
    return build_vocab_from_texts((ex.tagged_text for ex in examples), min_frequency)


@dataclass(frozen=True)
class EncodedExample:
    ids: Tuple[int, ...]
    chem_tok_span: Tuple[int, int]  # token range, end exclusive, markers included
    prot_tok_span: Tuple[int, int]
    label_id: int
    pmid: str
    chem_eid: str
    prot_eid: str

    def __len__(self) -> int:
        return len(self.ids)


def label_id(label: RelationLabel, labels: Sequence[RelationLabel]) -> int:
    try:
        return list(labels).index(label)
    except ValueError:
        raise UnknownLabel(label.value) from None


def _token_span(tokens: List[Tuple[str, int, int]], span: Tuple[int, int]) -> Tuple[int, int]:
    inside = [i for i, (_, start, end) in enumerate(tokens) if start >= span[0] and end <= span[1]]
    if not inside:
        raise PreprocessError(f"character span {span} covers no token")
    # +1 for the leading <s>
    return (inside[0] + 1, inside[-1] + 2)


def encode(
    example: RelationExample,
    vocab: Vocabulary,
    max_len: int,
    labels: Sequence[RelationLabel],
) -> Optional[EncodedExample]:
    """
    Encode one tagged example as <s> tokens </s>

    Returns None (a skip) when right-truncation to max_len would cut into
    either entity span.
    """
    if max_len < 8:
        raise ValueError("max_len must be at least 8")
    tokens = tokenize_with_offsets(example.tagged_text)
    chem_span = _token_span(tokens, example.chem_char_span)
    prot_span = _token_span(tokens, example.prot_char_span)

    keep = min(len(tokens), max_len - 2)
    if max(chem_span[1], prot_span[1]) > keep + 1:
        return None

    ids = (BOS_ID, *(vocab.token_id(token) for token, _, _ in tokens[:keep]), EOS_ID)
    return EncodedExample(
        ids=ids,
        chem_tok_span=chem_span,
        prot_tok_span=prot_span,
        label_id=label_id(example.label, labels),
        pmid=example.pmid,
        chem_eid=example.chem_eid,
        prot_eid=example.prot_eid,
    )


def encode_all(
    examples: Iterable[RelationExample],
    vocab: Vocabulary,
    max_len: int,
    labels: Sequence[RelationLabel],
) -> Tuple[List[EncodedExample], int]:
    """Encode a list of examples, returning the encoded ones and the number skipped"""
    encoded, skipped = [], 0
    for example in examples:
        item = encode(example, vocab, max_len, labels)
        if item is None:
            skipped += 1
        else:
            encoded.append(item)
    if skipped:
        logger.info("Skipped %d examples whose entities fall beyond %d tokens", skipped, max_len)
    return encoded, skipped
