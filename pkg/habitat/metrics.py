"""Classification metrics: top-k accuracy, MCC, per-class PRF, weighted F1 and
confusion matrices.

All quantities except top-k use the top-1 prediction of each record.
Confusion matrices keep raw counts and normalize on view; rows are true
classes and columns predicted classes.
"""

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import MetricsError

TRUE_PREDICTED_CORNER = 'true\\predicted'


@dataclass(frozen=True)
class PredictionRecord:
    """Ranked class output of a model or an annotator for one sample."""

    sample_id: str
    true_class: str
    ranked_classes: Tuple[str, ...]
    scores: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'ranked_classes', tuple(self.ranked_classes))
        if not self.ranked_classes:
            raise MetricsError(f'record {self.sample_id} has no ranked classes')
        if len(set(self.ranked_classes)) != len(self.ranked_classes):
            raise MetricsError(f'record {self.sample_id} ranks a class twice')
        if self.scores is not None:
            object.__setattr__(self, 'scores', tuple(float(s) for s in self.scores))
            if len(self.scores) != len(self.ranked_classes):
                raise MetricsError(f'record {self.sample_id} has {len(self.scores)} scores '
                                   f'for {len(self.ranked_classes)} ranked classes')

    @property
    def top1(self) -> str:
        return self.ranked_classes[0]

    @classmethod
    def from_scores(cls, sample_id, true_class, scores, class_order):
        """Rank ``class_order`` by descending score; ties keep class order."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(class_order),):
            raise MetricsError(f'expected {len(class_order)} scores, got {scores.shape}')
        ranking = np.argsort(-scores, kind='stable')
        return cls(
            sample_id=str(sample_id),
            true_class=true_class,
            ranked_classes=tuple(class_order[i] for i in ranking),
            scores=tuple(float(scores[i]) for i in ranking),
        )


class Normalization(str, enum.Enum):
    NONE = 'none'
    PER_TRUE_CLASS = 'per_true_class'


@dataclass(frozen=True)
class ClassPRF:
    code: str
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int

    @property
    def has_support(self) -> bool:
        return self.tp + self.fn > 0


@dataclass
class MetricsReport:
    n_samples: int
    top1: float
    top3: Optional[float]
    mcc: float
    weighted_f1: float
    per_class: List[ClassPRF] = field(default_factory=list)
    level: str = 'L3'

    def to_dict(self) -> dict:
        return {
            'level': self.level,
            'n_samples': self.n_samples,
            'top1': self.top1,
            'top3': self.top3,
            'mcc': self.mcc,
            'weighted_f1': self.weighted_f1,
            'per_class': [
                {
                    'code': row.code,
                    'precision': row.precision,
                    'recall': row.recall,
                    'f1': row.f1,
                    'support': row.support,
                }
                for row in self.per_class
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricsReport':
        rows = [
            ClassPRF(code=r['code'], precision=r['precision'], recall=r['recall'], f1=r['f1'],
                     support=r['support'], tp=0, fp=0, fn=0)
            for r in data.get('per_class', [])
        ]
        return cls(
            n_samples=data['n_samples'],
            top1=data['top1'],
            top3=data.get('top3'),
            mcc=data['mcc'],
            weighted_f1=data['weighted_f1'],
            per_class=rows,
            level=data.get('level', 'L3'),
        )


def _require_records(records) -> None:
    if not records:
        raise MetricsError('no prediction records')


def _resolve_order(records, class_order=None) -> Tuple[str, ...]:
    if class_order is not None:
        order = tuple(class_order)
        known = set(order)
        for r in records:
            if r.true_class not in known or r.top1 not in known:
                raise MetricsError(f'record {r.sample_id} uses a class outside the class order')
        return order
    return tuple(sorted({r.true_class for r in records} | {r.top1 for r in records}))


def _counts(records, order) -> np.ndarray:
    index = {code: i for i, code in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for r in records:
        counts[index[r.true_class], index[r.top1]] += 1
    return counts


def topk_accuracy(records: Sequence[PredictionRecord], k: int, n_classes: Optional[int] = None) -> float:
    """Fraction of records whose true class is among the first ``k`` ranks."""
    _require_records(records)
    if k < 1:
        raise MetricsError(f'k must be >= 1, got {k}')
    needed = k if n_classes is None else min(k, n_classes)
    hits = 0
    for r in records:
        if len(r.ranked_classes) < needed:
            raise MetricsError(f'record {r.sample_id} ranks {len(r.ranked_classes)} classes, top-{k} needs {needed}')
        hits += r.true_class in r.ranked_classes[:k]
    return hits / len(records)


def mcc_from_counts(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.int64)
    s = int(counts.sum())
    correct = int(np.trace(counts))
    t = counts.sum(axis=1)
    p = counts.sum(axis=0)
    numerator = correct * s - int(np.dot(t, p))
    pred_term = s * s - int(np.dot(p, p))
    true_term = s * s - int(np.dot(t, t))
    if pred_term == 0 or true_term == 0:
        return 0.0
    return numerator / (math.sqrt(pred_term) * math.sqrt(true_term))


def mcc(records: Sequence[PredictionRecord]) -> float:
    """Multiclass Matthews correlation of top-1 predictions (0 when degenerate)."""
    _require_records(records)
    order = _resolve_order(records)
    return mcc_from_counts(_counts(records, order))


def prf_from_counts(counts: np.ndarray, order: Sequence[str]) -> List[ClassPRF]:
    rows = []
    for i, code in enumerate(order):
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum()) - tp
        fn = int(counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        rows.append(ClassPRF(code, precision, recall, f1, tp + fn, tp, fp, fn))
    return rows


def per_class_prf(records: Sequence[PredictionRecord], class_order=None) -> List[ClassPRF]:
    """One-vs-rest precision, recall and F1 per class from top-1 predictions."""
    _require_records(records)
    order = _resolve_order(records, class_order)
    return prf_from_counts(_counts(records, order), order)


def weighted_f1(table: Iterable[ClassPRF]) -> float:
    table = list(table)
    total = sum(row.support for row in table)
    if total <= 0:
        raise MetricsError('weighted F1 needs a positive total support')
    return sum(row.support * row.f1 for row in table) / total


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    class_order: Tuple[str, ...]
    normalization: Normalization = Normalization.PER_TRUE_CLASS

    def view(self) -> np.ndarray:
        """Matrix under this normalization; unsupported rows stay zero."""
        if self.normalization is Normalization.NONE:
            return self.counts.astype(np.float64)
        support = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        np.divide(self.counts, support, out=out, where=support > 0)
        return out

    def renormalized(self, normalization) -> 'ConfusionMatrix':
        return ConfusionMatrix(self.counts, self.class_order, Normalization(normalization))

    def restricted(self, codes: Sequence[str]) -> 'ConfusionMatrix':
        idx = [self.class_order.index(c) for c in codes]
        return ConfusionMatrix(self.counts[np.ix_(idx, idx)], tuple(codes), self.normalization)


@dataclass(frozen=True)
class DeltaMatrix:
    values: np.ndarray
    class_order: Tuple[str, ...]
    normalization: Normalization


def confusion_matrix(records: Sequence[PredictionRecord], normalization=Normalization.PER_TRUE_CLASS,
                     class_order=None) -> ConfusionMatrix:
    _require_records(records)
    order = _resolve_order(records, class_order)
    return ConfusionMatrix(_counts(records, order), order, Normalization(normalization))


def delta_cm(cm_a: ConfusionMatrix, cm_b: ConfusionMatrix, restrict_to: Optional[Sequence[str]] = None) -> DeltaMatrix:
    """Elementwise ``a - b`` of two matrices sharing class order and normalization."""
    if cm_a.class_order != cm_b.class_order:
        raise MetricsError('confusion matrices use different class orders')
    if cm_a.normalization is not cm_b.normalization:
        raise MetricsError('confusion matrices use different normalizations')
    if restrict_to is not None:
        missing = [c for c in restrict_to if c not in cm_a.class_order]
        if missing:
            raise MetricsError(f'classes not in matrix: {missing}')
        cm_a, cm_b = cm_a.restricted(restrict_to), cm_b.restricted(restrict_to)
    return DeltaMatrix(cm_a.view() - cm_b.view(), cm_a.class_order, cm_a.normalization)


def evaluate(records: Sequence[PredictionRecord], class_order=None, level: str = 'L3') -> MetricsReport:
    """Bundle every headline metric; Top-3 is None if any record ranks fewer than 3 classes."""
    _require_records(records)
    order = _resolve_order(records, class_order)
    counts = _counts(records, order)
    table = prf_from_counts(counts, order)
    n_classes = len(order)
    has_top3 = all(len(r.ranked_classes) >= min(3, n_classes) for r in records)
    return MetricsReport(
        n_samples=len(records),
        top1=topk_accuracy(records, 1),
        top3=topk_accuracy(records, 3, n_classes) if has_top3 else None,
        mcc=mcc_from_counts(counts),
        weighted_f1=weighted_f1(table),
        # drop classes that neither occur nor get predicted
        per_class=[row for row in table if row.tp + row.fp + row.fn > 0],
        level=level,
    )


def compare_reports(report: MetricsReport, baseline: MetricsReport) -> Dict[str, Optional[float]]:
    """Signed change of the headline metrics relative to a baseline report."""
    out = {}
    for key in ('top1', 'top3', 'mcc', 'weighted_f1'):
        a, b = getattr(report, key), getattr(baseline, key)
        out[key] = None if a is None or b is None else a - b
    return out


# --- file formats -----------------------------------------------------------

def write_predictions(records: Iterable[PredictionRecord], path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample_id', 'true_class', 'ranked_classes', 'scores'])
        for r in records:
            scores = '' if r.scores is None else '|'.join(repr(s) for s in r.scores)
            writer.writerow([r.sample_id, r.true_class, '|'.join(r.ranked_classes), scores])
    return path


def read_predictions(path) -> List[PredictionRecord]:
    records = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        expected = {'sample_id', 'true_class', 'ranked_classes'}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise MetricsError(f'{path}: predictions header must include {sorted(expected)}')
        for line_no, row in enumerate(reader, start=2):
            try:
                scores = row.get('scores') or ''
                records.append(PredictionRecord(
                    sample_id=row['sample_id'],
                    true_class=row['true_class'],
                    ranked_classes=tuple(c for c in row['ranked_classes'].split('|') if c),
                    scores=tuple(float(s) for s in scores.split('|')) if scores else None,
                ))
            except (TypeError, ValueError) as exc:
                raise MetricsError(f'{path}:{line_no}: {exc}') from None
    return records


def write_report(report: MetricsReport, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_report(path) -> MetricsReport:
    with open(path, 'r', encoding='utf-8') as f:
        return MetricsReport.from_dict(json.load(f))


def write_matrix(matrix: np.ndarray, class_order: Sequence[str], path) -> Path:
    """Delimited grid with class codes as header row and first column."""
    path = Path(path)
    matrix = np.asarray(matrix)
    fmt = str if np.issubdtype(matrix.dtype, np.integer) else (lambda v: repr(float(v)))
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow([TRUE_PREDICTED_CORNER, *class_order])
        for code, row in zip(class_order, matrix):
            writer.writerow([code, *(fmt(v) for v in row.tolist())])
    return path


def read_matrix(path) -> Tuple[np.ndarray, Tuple[str, ...]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != TRUE_PREDICTED_CORNER:
        raise MetricsError(f'{path}: not a matrix export')
    order = tuple(rows[0][1:])
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    if values.shape != (len(order), len(order)) or tuple(r[0] for r in rows[1:]) != order:
        raise MetricsError(f'{path}: row and column class orders differ')
    return values, order


def write_confusion_matrix(cm: ConfusionMatrix, path) -> Path:
    """Counts export; the normalized view is re-derived on read."""
    return write_matrix(cm.counts, cm.class_order, path)


def read_confusion_matrix(path, normalization=Normalization.PER_TRUE_CLASS) -> ConfusionMatrix:
    values, order = read_matrix(path)
    if not np.all(values == np.round(values)):
        raise MetricsError(f'{path}: confusion matrix export must hold integer counts')
    return ConfusionMatrix(values.astype(np.int64), order, Normalization(normalization))
