"""Model-versus-expert benchmark.

A stratified subset of the test split goes to human annotators, who return
ranked labels per sample. Annotators and models are then scored on exactly
the same records, and every pair of participants gets an MCC agreement value.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import DatasetManifest, _class_rng, _group_by_label, _label_order, largest_remainder_allocation
from .exceptions import AnnotationError
from .metrics import (
    ConfusionMatrix, MetricsReport, Normalization, PredictionRecord, confusion_matrix, evaluate, mcc,
)
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

MAX_RANKS = 3
ANNOTATION_HEADER = ['sample_id', 'rank1', 'rank2', 'rank3']
PARTICIPANT_ID = re.compile(r'^[A-Za-z0-9_.-]+$')
# stream id for subset shuffles; splits use 0
SUBSET_STREAM = 2


@dataclass(frozen=True)
class AnnotationSet:
    """Ranked labels from one participant, keyed by sample id in file order."""

    annotator_id: str
    records: Mapping[str, Tuple[str, ...]]
    note: str = ''

    def __post_init__(self):
        if not PARTICIPANT_ID.match(self.annotator_id or ''):
            raise AnnotationError(f'participant id {self.annotator_id!r} must be a bare pseudonymous token')
        records = {}
        for sid, ranks in self.records.items():
            ranks = tuple(ranks)
            if not 1 <= len(ranks) <= MAX_RANKS:
                raise AnnotationError(f"{self.annotator_id}: '{sid}' needs 1 to {MAX_RANKS} ranked labels")
            if len(set(ranks)) != len(ranks):
                raise AnnotationError(f"{self.annotator_id}: '{sid}' ranks a label twice")
            records[sid] = ranks
        if not records:
            raise AnnotationError(f'{self.annotator_id}: no annotations')
        object.__setattr__(self, 'records', records)

    @property
    def sample_ids(self) -> Tuple[str, ...]:
        return tuple(self.records)

    @property
    def full_top3(self) -> bool:
        return all(len(r) == MAX_RANKS for r in self.records.values())

    def top1(self, sample_id: str) -> str:
        return self.records[sample_id][0]

    def validate_codes(self, taxonomy: Taxonomy) -> None:
        known = set(taxonomy.l3_order)
        for sid, ranks in self.records.items():
            unknown = [c for c in ranks if c not in known]
            if unknown:
                raise AnnotationError(f"{self.annotator_id}: '{sid}' uses unknown codes {unknown}")


Participant = Union[AnnotationSet, Sequence[PredictionRecord]]


def read_annotations(path, taxonomy: Optional[Taxonomy] = None) -> AnnotationSet:
    """Parse ``# annotator: <id>`` (and optional ``# note:``) then ``sample_id,rank1[,rank2,rank3]`` rows."""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        lines = f.read().splitlines()
    meta = {}
    while lines and lines[0].startswith('#'):
        key, _, value = lines.pop(0).lstrip('#').partition(':')
        meta[key.strip()] = value.strip()
    if 'annotator' not in meta:
        raise AnnotationError(f'{path}: missing "# annotator:" header')
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ANNOTATION_HEADER[:2]:
        raise AnnotationError(f'{path}: expected header {",".join(ANNOTATION_HEADER)}')
    records: Dict[str, Tuple[str, ...]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or not row[0].strip():
            continue
        sid = row[0].strip()
        if sid in records:
            raise AnnotationError(f"{path}:{line_no}: duplicate sample_id '{sid}'")
        records[sid] = tuple(code.strip() for code in row[1:MAX_RANKS + 1] if code.strip())
    annotations = AnnotationSet(meta['annotator'], records, meta.get('note', ''))
    if taxonomy is not None:
        annotations.validate_codes(taxonomy)
    return annotations


def write_annotations(annotations: AnnotationSet, path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f'# annotator: {annotations.annotator_id}\n')
        if annotations.note:
            f.write(f'# note: {annotations.note}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(ANNOTATION_HEADER)
        for sid, ranks in annotations.records.items():
            writer.writerow([sid, *ranks, *([''] * (MAX_RANKS - len(ranks)))])
    return path


def draw_expert_subset(test_manifest: DatasetManifest, fraction: float, seed: int,
                       taxonomy: Optional[Taxonomy] = None) -> DatasetManifest:
    """Per-class largest-remainder draw of ``fraction`` of the test split."""
    if not 0 < fraction <= 1:
        raise AnnotationError(f'fraction must be in (0, 1], got {fraction}')
    groups = _group_by_label(test_manifest.records)
    order = _label_order(groups, taxonomy)
    alloc = largest_remainder_allocation({c: len(groups[c]) for c in order}, fraction, order)
    chosen = set()
    for class_index, code in enumerate(order):
        ids = groups[code]
        perm = _class_rng(seed, class_index, SUBSET_STREAM).permutation(len(ids))
        chosen.update(ids[i] for i in perm[:alloc[code]])
    if not chosen:
        raise AnnotationError(f'fraction {fraction} of {len(test_manifest)} records selects nothing')
    logger.info('Drew %d of %d test records for expert review (fraction %s)', len(chosen), len(test_manifest),
                fraction)
    return test_manifest.subset(chosen)


def predictions_to_participant(records: Sequence[PredictionRecord], participant_id: str = 'model',
                               keep: int = MAX_RANKS) -> AnnotationSet:
    return AnnotationSet(participant_id, {r.sample_id: r.ranked_classes[:keep] for r in records})


def _as_participant(participant: Participant) -> AnnotationSet:
    if isinstance(participant, AnnotationSet):
        return participant
    return predictions_to_participant(participant)


def _aligned_records(participant: AnnotationSet, truth: DatasetManifest) -> List[PredictionRecord]:
    missing = [r.sample_id for r in truth.records if r.sample_id not in participant.records]
    if missing:
        raise AnnotationError(f'{participant.annotator_id}: {len(missing)} subset record(s) not annotated, '
                              f'e.g. {missing[:3]}')
    extra = [sid for sid in participant.records if sid not in truth]
    if extra:
        raise AnnotationError(f'{participant.annotator_id}: {len(extra)} record(s) outside the subset, '
                              f'e.g. {extra[:3]}')
    return [PredictionRecord(r.sample_id, r.l3_label, participant.records[r.sample_id]) for r in truth.records]


def score_participant(participant: Participant, truth: DatasetManifest,
                      taxonomy: Optional[Taxonomy] = None) -> MetricsReport:
    """Metrics of one participant on exactly the records of ``truth``."""
    participant = _as_participant(participant)
    if taxonomy is not None:
        participant.validate_codes(taxonomy)
    records = _aligned_records(participant, truth)
    return evaluate(records, taxonomy.l3_order if taxonomy is not None else None)


@dataclass(frozen=True)
class AgreementMatrix:
    participant_ids: Tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def value(self, a: str, b: str) -> float:
        ids = self.participant_ids
        return float(self.values[ids.index(a), ids.index(b)])


def agreement_matrix(participants: Sequence[Participant]) -> AgreementMatrix:
    """Pairwise multiclass MCC of top-1 labels; the diagonal is exactly 1."""
    sets = [_as_participant(p) for p in participants]
    if len(sets) < 2:
        raise AnnotationError('agreement needs at least two participants')
    ids = [s.annotator_id for s in sets]
    if len(set(ids)) != len(ids):
        raise AnnotationError(f'participant ids must be unique, got {ids}')
    coverage = set(sets[0].records)
    for s in sets[1:]:
        if set(s.records) != coverage:
            raise AnnotationError(f'{s.annotator_id} and {sets[0].annotator_id} cover different samples')

    sample_ids = sorted(coverage)
    values = np.eye(len(sets))
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            a, b = sets[i], sets[j]
            pairs = [PredictionRecord(sid, a.top1(sid), (b.top1(sid),)) for sid in sample_ids]
            values[i, j] = values[j, i] = mcc(pairs)
    return AgreementMatrix(tuple(ids), values)


def write_agreement(matrix: AgreementMatrix, path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['participant', *matrix.participant_ids])
        for pid, row in zip(matrix.participant_ids, matrix.values):
            writer.writerow([pid, *(repr(float(v)) for v in row)])
    return path


def read_agreement(path) -> AgreementMatrix:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    ids = tuple(rows[0][1:])
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return AgreementMatrix(ids, values)


def per_participant_cm(participant: Participant, truth: DatasetManifest, class_order=None,
                       normalization=Normalization.PER_TRUE_CLASS) -> ConfusionMatrix:
    records = _aligned_records(_as_participant(participant), truth)
    return confusion_matrix(records, normalization, class_order)


def per_class_accuracy(participant: Participant, truth: DatasetManifest, class_order=None) -> Dict[str, float]:
    """Share of each true class labelled correctly (classes without support omitted)."""
    cm = per_participant_cm(participant, truth, class_order)
    support = cm.counts.sum(axis=1)
    diagonal = np.diag(cm.view())
    return {code: float(diagonal[i]) for i, code in enumerate(cm.class_order) if support[i] > 0}
