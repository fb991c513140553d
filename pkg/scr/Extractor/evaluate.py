"""
Prediction, micro-averaged scoring and the per-class results table.

Scores are computed over relation tuples (pmid, label, Arg1, Arg2) with set
semantics on both sides; Other is a classifier-internal class and never
appears in a tuple.
"""
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

from corpus.models import EVALUATED_LABELS, RelationAnnotation, RelationLabel
from corpus.parser import serialize_relations
from errors import VocabMismatch
from model import predict_logits
from tokenizer import EncodedExample, Vocabulary
from train import Checkpoint

logger = logging.getLogger(__name__)

GLOBAL_ROW = "Global results across all interactions types"

RelationTuple = Tuple[str, RelationLabel, str, str]


@dataclass(frozen=True)
class PredictedRelation:
    pmid: str
    label: RelationLabel
    arg1: str
    arg2: str

    def __post_init__(self):
        if self.label is RelationLabel.OTHER:
            raise ValueError("Other is never emitted as a predicted relation")

    def as_tuple(self) -> RelationTuple:
        return (self.pmid, self.label, self.arg1, self.arg2)

    def as_annotation(self) -> RelationAnnotation:
        return RelationAnnotation(pmid=self.pmid, label=self.label, arg1=self.arg1, arg2=self.arg2)


def predict(
    ckpt: Checkpoint,
    examples: Sequence[EncodedExample],
    vocab: Optional[Vocabulary] = None,
    batch_size: int = 64,
) -> List[PredictedRelation]:
    """
    Classify every example in eval mode and keep the non-Other decisions.

    Args:
        ckpt: trained checkpoint
        examples: examples encoded with the checkpoint's vocabulary
        vocab: vocabulary the examples were encoded with, checked when given
        batch_size: examples per forward pass

    Returns:
        Predicted relations in input order; the lowest class id wins a tie
    """
    if vocab is not None and vocab != ckpt.vocab:
        raise VocabMismatch("examples were encoded with a different vocabulary than the checkpoint's")
    vocab_size = len(ckpt.vocab)
    predictions = []
    for start in range(0, len(examples), batch_size):
        chunk = list(examples[start:start + batch_size])
        for ex in chunk:
            if max(ex.ids) >= vocab_size:
                raise VocabMismatch(f"example {ex.pmid} {ex.chem_eid}/{ex.prot_eid} has ids beyond the vocabulary")
        classes = predict_logits(ckpt.params, chunk, ckpt.model_cfg).argmax(dim=-1).tolist()
        for ex, class_id in zip(chunk, classes):
            label = ckpt.labels[class_id]
            if label is not RelationLabel.OTHER:
                predictions.append(PredictedRelation(ex.pmid, label, ex.chem_eid, ex.prot_eid))
    logger.info("Predicted %d relations from %d candidate pairs", len(predictions), len(examples))
    return predictions


@dataclass
class ConfusionCounts:
    labels: Tuple[RelationLabel, ...]
    tp: Dict[RelationLabel, int] = field(default_factory=dict)
    fp: Dict[RelationLabel, int] = field(default_factory=dict)
    fn: Dict[RelationLabel, int] = field(default_factory=dict)


class ClassScores(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass
class MetricReport:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    per_class: Dict[RelationLabel, ClassScores] = field(default_factory=dict)


TupleLike = Union[RelationTuple, PredictedRelation, RelationAnnotation]


def _as_tuple(item: TupleLike) -> RelationTuple:
    if isinstance(item, (PredictedRelation, RelationAnnotation)):
        return (item.pmid, item.label, item.arg1, item.arg2)
    return tuple(item)


def _restrict(items: Iterable[TupleLike], labels: Tuple[RelationLabel, ...], side: str) -> Set[RelationTuple]:
    kept, ignored = set(), 0
    for item in items:
        t = _as_tuple(item)
        if t[1] in labels:
            kept.add(t)
        else:
            ignored += 1
    if ignored:
        logger.warning("Ignoring %d %s tuples whose label is not evaluated", ignored, side)
    return kept


def confusion(
    pred: Iterable[TupleLike],
    gold: Iterable[TupleLike],
    labels: Sequence[RelationLabel] = EVALUATED_LABELS,
) -> ConfusionCounts:
    """Per-class TP/FP/FN under exact matching of all four tuple fields"""
    labels = tuple(labels)
    pred_set = _restrict(pred, labels, "predicted")
    gold_set = _restrict(gold, labels, "gold")
    counts = ConfusionCounts(labels=labels)
    for label in labels:
        p = {t for t in pred_set if t[1] is label}
        g = {t for t in gold_set if t[1] is label}
        counts.tp[label] = len(p & g)
        counts.fp[label] = len(p - g)
        counts.fn[label] = len(g - p)
    return counts


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(precision: float, recall: float) -> float:
    total = precision + recall
    return 2 * precision * recall / total if total else 0.0


def micro_metrics(counts: ConfusionCounts) -> MetricReport:
    tp = sum(counts.tp.values())
    fp = sum(counts.fp.values())
    fn = sum(counts.fn.values())
    precision, recall = _ratio(tp, tp + fp), _ratio(tp, tp + fn)

    per_class = {}
    for label in counts.labels:
        p = _ratio(counts.tp[label], counts.tp[label] + counts.fp[label])
        r = _ratio(counts.tp[label], counts.tp[label] + counts.fn[label])
        per_class[label] = ClassScores(p, r, _f1(p, r))
    return MetricReport(
        micro_precision=precision, micro_recall=recall, micro_f1=_f1(precision, recall), per_class=per_class
    )


def write_predictions(preds: Iterable[PredictedRelation]) -> str:
    return serialize_relations(pred.as_annotation() for pred in preds)


def _fmt(value: float) -> str:
    return str(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report(metrics: MetricReport) -> str:
    """Tab-separated table: one row per evaluated class, then the global micro row"""
    rows = ["Relation\tP\tR\tF1"]
    for label, scores in metrics.per_class.items():
        rows.append(f"{label.value}\t{_fmt(scores.precision)}\t{_fmt(scores.recall)}\t{_fmt(scores.f1)}")
    rows.append(
        f"{GLOBAL_ROW}\t{_fmt(metrics.micro_precision)}\t{_fmt(metrics.micro_recall)}\t{_fmt(metrics.micro_f1)}"
    )
    return "\n".join(rows) + "\n"
