"""Sample manifests, stratified splits and class distributions."""

import csv
import enum
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import ManifestError, SplitError
from .taxonomy import Level, Taxonomy, parent_of

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ['sample_id', 'image_ref', 'l3_label', 'source_tag']
IMAGE_SUFFIXES = {'.jpg', '.jpeg', '.png', '.bmp', '.tif', '.tiff', '.webp'}
DEFAULT_MIN_TEST_COUNT = 4


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image_ref: str
    l3_label: str
    source_tag: str = ''


class DatasetManifest:
    """Ordered, non-empty collection of labelled samples."""

    def __init__(self, records: Iterable[SampleRecord], taxonomy_ref: str = 'default', dropped_count: int = 0):
        self.records = tuple(records)
        self.taxonomy_ref = taxonomy_ref
        # images discarded while building (unlabelled or unknown class)
        self.dropped_count = dropped_count
        if not self.records:
            raise ManifestError('manifest is empty')
        seen = set()
        for r in self.records:
            if r.sample_id in seen:
                raise ManifestError(f"duplicate sample_id '{r.sample_id}'")
            seen.add(r.sample_id)
        self._by_id = {r.sample_id: r for r in self.records}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, sample_id: str) -> SampleRecord:
        return self._by_id[sample_id]

    def __contains__(self, sample_id):
        return sample_id in self._by_id

    def __eq__(self, other):
        return (isinstance(other, DatasetManifest) and self.records == other.records
                and self.taxonomy_ref == other.taxonomy_ref)

    def subset(self, sample_ids: Iterable[str]) -> 'DatasetManifest':
        """Records with the given ids, in manifest order."""
        wanted = set(sample_ids)
        return DatasetManifest([r for r in self.records if r.sample_id in wanted], self.taxonomy_ref)

    def validate_labels(self, taxonomy: Taxonomy) -> None:
        for r in self.records:
            if r.l3_label not in taxonomy.l3_order:
                raise ManifestError(f"sample '{r.sample_id}' has unknown L3 label '{r.l3_label}'")


class Split(str, enum.Enum):
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'


class SplitFractions(BaseModel):
    """``val`` is the share of the non-test pool carved out for validation."""

    model_config = ConfigDict(frozen=True)

    train: float = Field(0.75, gt=0, lt=1)
    val: float = Field(0.20, gt=0, lt=1)
    test: float = Field(0.25, gt=0, lt=1)

    @model_validator(mode='after')
    def _train_and_test_cover_everything(self):
        if not math.isclose(self.train + self.test, 1.0, abs_tol=1e-9):
            raise ValueError(f'train + test must equal 1, got {self.train} + {self.test}')
        return self


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Mapping[str, Split]
    seed: int
    fractions: SplitFractions

    def ids(self, split) -> List[str]:
        split = Split(split)
        return [sid for sid, s in self.assignment.items() if s is split]

    def counts(self) -> Dict[Split, int]:
        c = Counter(self.assignment.values())
        return {s: c.get(s, 0) for s in Split}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def largest_remainder_allocation(counts: Mapping[str, int], fraction: float,
                                 order: Optional[Sequence[str]] = None) -> Dict[str, int]:
    """Apportion ``round(fraction * total)`` across classes by largest remainder.

    Every class receives floor or ceil of its exact quota. Equal remainders are
    resolved by ``order`` (defaults to the mapping order).
    """
    order = list(order) if order is not None else list(counts)
    quotas = {c: counts[c] * fraction for c in order}
    alloc = {c: int(math.floor(q)) for c, q in quotas.items()}
    target = _round_half_up(sum(counts[c] for c in order) * fraction)
    leftover = target - sum(alloc.values())
    ranked = sorted(order, key=lambda c: (-(quotas[c] - alloc[c]), order.index(c)))
    for c in ranked[:max(leftover, 0)]:
        alloc[c] += 1
    return alloc


def _class_rng(seed: int, class_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, class_index, stream]))


def _group_by_label(records: Sequence[SampleRecord]) -> Dict[str, List[str]]:
    groups: Dict[str, List[str]] = {}
    for r in records:
        groups.setdefault(r.l3_label, []).append(r.sample_id)
    return groups


def _label_order(groups: Mapping[str, Sequence[str]], taxonomy: Optional[Taxonomy]) -> List[str]:
    if taxonomy is None:
        return sorted(groups)
    rank = {c: i for i, c in enumerate(taxonomy.l3_order)}
    return sorted(groups, key=lambda c: (rank.get(c, len(rank)), c))


def stratified_split(manifest: DatasetManifest, fractions: SplitFractions = None,
                     min_test_count: int = DEFAULT_MIN_TEST_COUNT, seed: int = 0,
                     taxonomy: Optional[Taxonomy] = None) -> SplitAssignment:
    """Per-class train/val/test partition with largest-remainder rounding.

    Classes with fewer than ``min_test_count`` samples go entirely to train.
    Validation is carved per class from what remains after the test draw.
    """
    fractions = fractions or SplitFractions()
    if len(manifest) < 2:
        raise SplitError('a split needs at least 2 samples')

    groups = _group_by_label(manifest.records)
    order = _label_order(groups, taxonomy)
    eligible = [c for c in order if len(groups[c]) >= min_test_count]
    excluded = [c for c in order if c not in eligible]
    if excluded:
        logger.info('Classes below min_test_count=%d kept in train only: %s', min_test_count, ', '.join(excluded))

    test_alloc = largest_remainder_allocation({c: len(groups[c]) for c in eligible}, fractions.test, eligible)
    pool = {c: len(groups[c]) - test_alloc[c] for c in eligible}
    val_alloc = largest_remainder_allocation(pool, fractions.val, eligible)

    assignment: Dict[str, Split] = {}
    for class_index, code in enumerate(order):
        ids = list(groups[code])
        if code not in test_alloc:
            for sid in ids:
                assignment[sid] = Split.TRAIN
            continue
        perm = _class_rng(seed, class_index, 0).permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        n_test, n_val = test_alloc[code], val_alloc[code]
        for sid in shuffled[:n_test]:
            assignment[sid] = Split.TEST
        for sid in shuffled[n_test:n_test + n_val]:
            assignment[sid] = Split.VAL
        for sid in shuffled[n_test + n_val:]:
            assignment[sid] = Split.TRAIN

    ordered = {r.sample_id: assignment[r.sample_id] for r in manifest.records}
    return SplitAssignment(ordered, seed, fractions)


def class_distribution(manifest: DatasetManifest, level=Level.L3,
                       taxonomy: Optional[Taxonomy] = None) -> Dict[str, int]:
    """Histogram of labels; L2 counts push L3 labels through ``parent_of``."""
    level = Level(level)
    counts = Counter(r.l3_label for r in manifest.records)
    if level is Level.L3:
        return dict(counts)
    if taxonomy is None:
        raise ManifestError('an L2 distribution needs the taxonomy')
    l2 = Counter()
    for code, n in counts.items():
        l2[parent_of(taxonomy, code)] += n
    return dict(l2)


def major_groups(histogram: Mapping[str, int], coverage: float = 0.98) -> List[str]:
    """Fewest most-frequent classes whose counts reach ``coverage`` of the total."""
    total = sum(histogram.values())
    chosen, running = [], 0
    for code, n in sorted(histogram.items(), key=lambda kv: (-kv[1], kv[0])):
        if total and running / total >= coverage - 1e-12:
            break
        chosen.append(code)
        running += n
    return chosen


def build_manifest(root, label_file, taxonomy: Taxonomy, taxonomy_ref: str = 'default') -> DatasetManifest:
    """Scan ``root`` for images and keep those with a known L3 label.

    The label file is CSV with columns ``image_ref,l3_label`` and an optional
    ``source_tag``; ``image_ref`` is relative to ``root``.
    """
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK):
        raise ManifestError(f'image root {root} is not a readable directory')

    labels: Dict[str, Tuple[str, str]] = {}
    try:
        with open(label_file, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {'image_ref', 'l3_label'}.issubset(reader.fieldnames):
                raise ManifestError(f'{label_file}: header must include image_ref and l3_label')
            for line_no, row in enumerate(reader, start=2):
                if row.get('image_ref') is None or None in row:
                    raise ManifestError(f'{label_file}:{line_no}: malformed row')
                ref = Path(row['image_ref'].strip()).as_posix()
                labels[ref] = ((row.get('l3_label') or '').strip(), (row.get('source_tag') or '').strip())
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ManifestError(f'cannot read label file {label_file}: {exc}') from None

    images = sorted(
        p.relative_to(root).as_posix()
        for p in root.rglob('*')
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )

    records, unlabelled, unknown = [], 0, Counter()
    for ref in images:
        label, source = labels.get(ref, ('', ''))
        if not label:
            unlabelled += 1
            continue
        if label not in taxonomy or taxonomy.get(label).level is not Level.L3:
            unknown[label] += 1
            continue
        sample_id = str(Path(ref).with_suffix('').as_posix())
        records.append(SampleRecord(sample_id, ref, label, source))

    if unlabelled:
        logger.info('Dropped %d unlabelled images under %s', unlabelled, root)
    if unknown:
        logger.warning('Dropped %d images with unknown classes: %s', sum(unknown.values()),
                       ', '.join(f'{k} ({v})' for k, v in sorted(unknown.items())))
    if not records:
        raise ManifestError(f'no labelled images found under {root}')
    return DatasetManifest(records, taxonomy_ref, dropped_count=unlabelled + sum(unknown.values()))


# --- file formats -----------------------------------------------------------

def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f'# taxonomy: {manifest.taxonomy_ref}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.sample_id, r.image_ref, r.l3_label, r.source_tag])
    return path


def read_manifest(path) -> DatasetManifest:
    taxonomy_ref = 'default'
    with open(path, 'r', encoding='utf-8', newline='') as f:
        lines = f.read().splitlines()
    while lines and lines[0].startswith('#'):
        key, _, value = lines.pop(0).lstrip('#').partition(':')
        if key.strip() == 'taxonomy':
            taxonomy_ref = value.strip()
    reader = csv.DictReader(lines)
    if reader.fieldnames != MANIFEST_HEADER:
        raise ManifestError(f'{path}: expected header {",".join(MANIFEST_HEADER)}')
    records = [SampleRecord(row['sample_id'], row['image_ref'], row['l3_label'], row['source_tag'] or '')
               for row in reader]
    return DatasetManifest(records, taxonomy_ref)


def resolve_image(manifest_path, record: SampleRecord) -> Path:
    """Image path of ``record``; relative refs resolve against the manifest's folder."""
    ref = Path(record.image_ref)
    return ref if ref.is_absolute() else Path(manifest_path).resolve().parent / ref


def write_split(split: SplitAssignment, path) -> Path:
    path = Path(path)
    fr = split.fractions
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f'# fractions: train={fr.train!r} val={fr.val!r} test={fr.test!r}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample_id', 'split', 'seed'])
        for sid, s in split.assignment.items():
            writer.writerow([sid, s.value, split.seed])
    return path


def read_split(path) -> SplitAssignment:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith('# fractions:'):
        raise SplitError(f'{path}: missing fractions header')
    parts = dict(item.split('=') for item in lines[0].partition(':')[2].split())
    fractions = SplitFractions(**{k: float(v) for k, v in parts.items()})
    reader = csv.DictReader(lines[1:])
    assignment, seeds = {}, set()
    for row in reader:
        if row['sample_id'] in assignment:
            raise SplitError(f"{path}: sample '{row['sample_id']}' assigned twice")
        assignment[row['sample_id']] = Split(row['split'])
        seeds.add(int(row['seed']))
    if len(seeds) != 1:
        raise SplitError(f'{path}: expected a single seed, found {sorted(seeds)}')
    return SplitAssignment(assignment, seeds.pop(), fractions)
