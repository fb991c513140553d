"""
Corpus Data Models
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple


class EntityKind(Enum):
    CHEMICAL = "Chemical"
    PROTEIN = "Protein"


# Entity type column values and the kind they fold into
ENTITY_TYPE_TAGS: Dict[str, EntityKind] = {
    "CHEMICAL": EntityKind.CHEMICAL,
    "GENE": EntityKind.PROTEIN,
    "GENE-Y": EntityKind.PROTEIN,
    "GENE-N": EntityKind.PROTEIN,
}


class RelationLabel(str, Enum):
    # Declaration order is the canonical corpus statistics order
    ANTAGONIST = "ANTAGONIST"
    INHIBITOR = "INHIBITOR"
    AGONIST = "AGONIST"
    ACTIVATOR = "ACTIVATOR"
    INDIRECT_UPREGULATOR = "INDIRECT-UPREGULATOR"
    INDIRECT_DOWNREGULATOR = "INDIRECT-DOWNREGULATOR"
    PART_OF = "PART-OF"
    DIRECT_REGULATOR = "DIRECT-REGULATOR"
    SUBSTRATE = "SUBSTRATE"
    PRODUCT_OF = "PRODUCT-OF"
    AGONIST_ACTIVATOR = "AGONIST-ACTIVATOR"
    AGONIST_INHIBITOR = "AGONIST-INHIBITOR"
    SUBSTRATE_PRODUCT_OF = "SUBSTRATE_PRODUCT-OF"
    OTHER = "Other"


CORPUS_LABELS: Tuple[RelationLabel, ...] = tuple(
    label for label in RelationLabel if label is not RelationLabel.OTHER
)
RARE_LABELS: Tuple[RelationLabel, ...] = (
    RelationLabel.AGONIST_ACTIVATOR,
    RelationLabel.AGONIST_INHIBITOR,
    RelationLabel.SUBSTRATE_PRODUCT_OF,
)
EVALUATED_LABELS: Tuple[RelationLabel, ...] = tuple(
    label for label in CORPUS_LABELS if label not in RARE_LABELS
)
_CORPUS_LABEL_BY_VALUE = {label.value: label for label in CORPUS_LABELS}


def corpus_label(value: str) -> RelationLabel:
    """Case-sensitive lookup of one of the 13 corpus labels; KeyError otherwise"""
    return _CORPUS_LABEL_BY_VALUE[value]


def label_table(drop_rare: bool = True) -> List[RelationLabel]:
    """Ordered class table: kept corpus labels in canonical order, Other last"""
    kept = EVALUATED_LABELS if drop_rare else CORPUS_LABELS
    return [*kept, RelationLabel.OTHER]


@dataclass(frozen=True)
class Document:
    pmid: str
    title: str
    abstract: str


@dataclass(frozen=True)
class EntityMention:
    pmid: str
    eid: str
    kind: EntityKind
    start: int  # inclusive character offset into the flat text
    end: int  # exclusive
    surface: str
    type_tag: str = ""  # original type column, kept for byte-identical output

    def overlaps(self, other: "EntityMention") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class RelationAnnotation:
    pmid: str
    label: RelationLabel
    arg1: str  # chemical entity id
    arg2: str  # gene/protein entity id

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.pmid, self.arg1, self.arg2)


@dataclass(frozen=True)
class Corpus:
    documents: Dict[str, Document] = field(default_factory=dict)
    entities: Dict[str, List[EntityMention]] = field(default_factory=dict)
    relations: Dict[str, List[RelationAnnotation]] = field(default_factory=dict)

    def entity_index(self, pmid: str) -> Dict[str, EntityMention]:
        return {e.eid: e for e in self.entities.get(pmid, [])}

    def all_relations(self) -> List[RelationAnnotation]:
        return [r for pmid in self.documents for r in self.relations.get(pmid, [])]


@dataclass(frozen=True)
class CorpusStats:
    n_documents: int
    n_chemicals: int
    n_proteins: int
    n_positive_relations: int
    per_label_counts: Dict[RelationLabel, int]

    def lines(self) -> List[str]:
        out = [
            f"documents: {self.n_documents}",
            f"chemicals: {self.n_chemicals}",
            f"proteins: {self.n_proteins}",
            f"positive relations: {self.n_positive_relations}",
        ]
        out.extend(f"{label.value}: {count}" for label, count in self.per_label_counts.items())
        return out
