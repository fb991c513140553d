"""
Exception hierarchy for the relation extraction pipeline
"""
from typing import Optional


class ExtractorError(Exception):
    """Base class for every error raised by the pipeline"""


class ConfigError(ExtractorError):
    pass


# Corpus format errors

class CorpusFormatError(ExtractorError):
    """A corpus file line does not follow the tab-separated contract"""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedLine(CorpusFormatError):
    def __init__(self, line_no: int, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"expected {expected} tab-separated fields, found {found}", line_no)


class DuplicatePmid(CorpusFormatError):
    def __init__(self, pmid: str, line_no: Optional[int] = None):
        self.pmid = pmid
        super().__init__(f"duplicate pmid {pmid!r}", line_no)


class UnknownEntityType(CorpusFormatError):
    def __init__(self, type_tag: str, line_no: Optional[int] = None):
        self.type_tag = type_tag
        super().__init__(f"unknown entity type {type_tag!r}", line_no)


class BadOffsets(CorpusFormatError):
    def __init__(self, start: str, end: str, line_no: Optional[int] = None):
        self.start = start
        self.end = end
        super().__init__(f"bad offsets start={start!r} end={end!r}", line_no)


class UnknownLabel(CorpusFormatError):
    def __init__(self, label: str, line_no: Optional[int] = None):
        self.label = label
        super().__init__(f"unknown relation label {label!r}", line_no)


class BadArgPrefix(CorpusFormatError):
    def __init__(self, field: str, expected_prefix: str, line_no: Optional[int] = None):
        self.field = field
        self.expected_prefix = expected_prefix
        super().__init__(f"argument {field!r} does not start with {expected_prefix!r}", line_no)


class EmptyField(CorpusFormatError):
    def __init__(self, field: str, line_no: Optional[int] = None):
        self.field = field
        super().__init__(f"{field} is empty", line_no)


# Corpus consistency errors (raised while joining the three files)

class CorpusConsistencyError(ExtractorError):
    pass


class OrphanEntity(CorpusConsistencyError):
    def __init__(self, pmid: str, eid: str):
        self.pmid = pmid
        self.eid = eid
        super().__init__(f"entity {eid} references unknown document {pmid}")


class DuplicateEntity(CorpusConsistencyError):
    def __init__(self, pmid: str, eid: str):
        self.pmid = pmid
        self.eid = eid
        super().__init__(f"entity id {eid} repeated in document {pmid}")


class OrphanRelation(CorpusConsistencyError):
    def __init__(self, pmid: str, detail: str):
        self.pmid = pmid
        super().__init__(f"relation in document {pmid}: {detail}")


class OffsetMismatch(CorpusConsistencyError):
    def __init__(self, pmid: str, eid: str, expected: str, found: str):
        self.pmid = pmid
        self.eid = eid
        self.expected = expected
        self.found = found
        super().__init__(
            f"entity {eid} in document {pmid}: surface {expected!r} but text has {found!r}"
        )


class ArgKindMismatch(CorpusConsistencyError):
    def __init__(self, pmid: str, eid: str, expected_kind: str, found_kind: str):
        self.pmid = pmid
        self.eid = eid
        super().__init__(
            f"relation argument {eid} in document {pmid} should be {expected_kind}, is {found_kind}"
        )


# Preprocessing

class PreprocessError(ExtractorError):
    pass


class OverlapError(PreprocessError):
    def __init__(self, pmid: str, chem_eid: str, prot_eid: str):
        self.pmid = pmid
        super().__init__(f"entities {chem_eid} and {prot_eid} overlap in document {pmid}")


# Vocabulary / tokenization

class VocabularyError(ExtractorError):
    pass


class EmptyCorpus(VocabularyError):
    pass


class VocabMismatch(VocabularyError):
    pass


# Model

class ModelError(ExtractorError):
    pass


class IdOutOfRange(ModelError):
    pass


class SequenceTooLong(ModelError):
    pass


class SpanOutOfRange(ModelError):
    pass


class InsufficientLayers(ModelError):
    pass


# Training

class TrainingError(ExtractorError):
    pass


class EmptyInput(TrainingError):
    pass


class NonFiniteGradient(TrainingError):
    pass


# Checkpoints

class CheckpointError(ExtractorError):
    pass


class CheckpointIOError(CheckpointError):
    pass


class FormatVersionMismatch(CheckpointError):
    def __init__(self, found: str, expected: str):
        self.found = found
        self.expected = expected
        super().__init__(f"unsupported checkpoint format {found!r}, expected {expected!r}")


class ShapeMismatch(CheckpointError):
    pass
