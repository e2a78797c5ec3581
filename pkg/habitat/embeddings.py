"""Embedding export and cluster-quality indices.

Indices are computed on raw encoder embeddings with Euclidean distances and
arithmetic class centroids; every report says so in its ``space`` field.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.spatial.distance import cdist, pdist, squareform

from .checkpoints import Checkpoint, encoder_from_checkpoint, load_checkpoint, parameter_digest
from .config import TrainConfig
from .dataset import Split
from .encoders import HabitatEncoder, encode
from .exceptions import ClusterIndexError, ImageDecodeError, ManifestError
from .taxonomy import Taxonomy, children_of, l2_order
from .training import HabitatImageDataset, TrainingData
from .transforms import AugmentationConfig

logger = logging.getLogger(__name__)

SPACE = 'raw_encoder'
OVERALL = 'overall'


@dataclass(frozen=True)
class EmbeddingSet:
    matrix: np.ndarray
    labels: Tuple[str, ...]
    sample_ids: Tuple[str, ...]
    encoder_id: str = 'unknown'
    split_id: str = 'unknown'

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'labels', tuple(self.labels))
        object.__setattr__(self, 'sample_ids', tuple(self.sample_ids))
        if matrix.ndim != 2:
            raise ClusterIndexError(f'embedding matrix must be 2-D, got shape {matrix.shape}')
        n = matrix.shape[0]
        if n < 2:
            raise ClusterIndexError(f'an embedding set needs at least 2 rows, got {n}')
        if len(self.labels) != n or len(self.sample_ids) != n:
            raise ClusterIndexError(f'{n} rows but {len(self.labels)} labels and {len(self.sample_ids)} ids')
        if not np.isfinite(matrix).all():
            raise ClusterIndexError('embedding matrix has non-finite entries')
        for token in (self.encoder_id, self.split_id):
            if not token or any(ch.isspace() for ch in token):
                raise ClusterIndexError(f'encoder/split ids must be non-empty without spaces, got {token!r}')

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def restricted(self, codes: Sequence[str]) -> 'EmbeddingSet':
        wanted = set(codes)
        keep = [i for i, label in enumerate(self.labels) if label in wanted]
        return EmbeddingSet(self.matrix[keep], [self.labels[i] for i in keep], [self.sample_ids[i] for i in keep],
                            self.encoder_id, self.split_id)

    def validate_labels(self, taxonomy: Taxonomy) -> None:
        unknown = sorted({label for label in self.labels if label not in taxonomy.l3_order})
        if unknown:
            raise ManifestError(f'embedding labels not in taxonomy: {unknown}')


# --- file format ------------------------------------------------------------

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.csv')


def write_embeddings(embeddings: EmbeddingSet, path) -> Path:
    """Header line ``n D encoder_id split_id``, then little-endian float32 rows; ids and labels in a sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(f'{embeddings.n} {embeddings.dim} {embeddings.encoder_id} {embeddings.split_id}\n'.encode('ascii'))
        f.write(embeddings.matrix.astype('<f4').tobytes())
    with open(sidecar_path(path), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample_id', 'label'])
        writer.writerows(zip(embeddings.sample_ids, embeddings.labels))
    return path


def read_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            header = f.readline().decode('ascii').split()
            payload = f.read()
        n, dim, encoder_id, split_id = int(header[0]), int(header[1]), header[2], header[3]
    except (OSError, UnicodeDecodeError, IndexError, ValueError) as exc:
        raise ClusterIndexError(f'cannot read embedding file {path}: {exc}') from None
    if len(payload) != n * dim * 4:
        raise ClusterIndexError(f'{path}: expected {n * dim * 4} payload bytes, found {len(payload)}')
    matrix = np.frombuffer(payload, dtype='<f4').reshape(n, dim)
    with open(sidecar_path(path), 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    if len(rows) != n:
        raise ClusterIndexError(f'{sidecar_path(path)}: {len(rows)} rows for {n} embeddings')
    return EmbeddingSet(matrix, [r['label'] for r in rows], [r['sample_id'] for r in rows], encoder_id, split_id)


# --- export -----------------------------------------------------------------

def _encoder_and_augmentation(source) -> Tuple[HabitatEncoder, AugmentationConfig]:
    augmentation = None
    if isinstance(source, HabitatEncoder):
        encoder = source
    else:
        checkpoint = source if isinstance(source, Checkpoint) else load_checkpoint(source)
        encoder = encoder_from_checkpoint(checkpoint)
        if checkpoint.train_config:
            augmentation = TrainConfig.model_validate(checkpoint.train_config).augmentation
    if augmentation is None:
        size = encoder.spec.input_size
        augmentation = AugmentationConfig(resize_to=size, crop_size=size, max_rotation_degrees=0.0)
    return encoder, augmentation


def export_embeddings(encoder_source, data: TrainingData, split='test', batch_size: int = 32) -> EmbeddingSet:
    """Inference-mode embeddings of one split, rows in manifest order.

    Images that fail to decode are skipped and counted in the log.
    """
    split = Split(split)
    encoder, augmentation = _encoder_and_augmentation(encoder_source)
    records = data.records(split)
    if not records:
        raise ClusterIndexError(f'{split.value} split is empty')
    dataset = HabitatImageDataset(data, records, sorted({r.l3_label for r in records}), augmentation)

    kept, tensors, skipped = [], [], 0
    for i, record in enumerate(records):
        try:
            tensors.append(dataset.load(i))
            kept.append(record)
        except ImageDecodeError as exc:
            skipped += 1
            logger.warning('Skipping %s: %s', record.sample_id, exc)
    if skipped:
        logger.warning('Skipped %d unreadable image(s) of %d', skipped, len(records))

    rows = []
    for start in range(0, len(tensors), batch_size):
        rows.append(encode(torch.stack(tensors[start:start + batch_size]), encoder).cpu().numpy())
    matrix = np.concatenate(rows) if rows else np.zeros((0, encoder.embed_dim))
    return EmbeddingSet(
        matrix.astype(np.float32),
        [r.l3_label for r in kept],
        [r.sample_id for r in kept],
        encoder_id=parameter_digest(encoder)[:16],
        split_id=f'{split.value}-seed{data.split.seed}',
    )


# --- indices ----------------------------------------------------------------

def _arrays(embeddings, labels=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(embeddings, EmbeddingSet):
        matrix, labels = embeddings.matrix, embeddings.labels
    else:
        matrix = np.asarray(embeddings, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
    codes, inverse = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    if len(inverse) != matrix.shape[0]:
        raise ClusterIndexError(f'{matrix.shape[0]} rows but {len(inverse)} labels')
    return matrix, codes, inverse


def _centroids(matrix: np.ndarray, inverse: np.ndarray, k: int) -> np.ndarray:
    return np.stack([matrix[inverse == c].mean(axis=0) for c in range(k)])


def calinski_harabasz(embeddings, labels=None) -> float:
    """``[tr(B)/(k-1)] / [tr(W)/(n-k)]``; +inf when the within-class scatter is zero."""
    matrix, codes, inverse = _arrays(embeddings, labels)
    n, k = matrix.shape[0], len(codes)
    if k < 2:
        raise ClusterIndexError(f'Calinski-Harabasz needs at least 2 clusters, got {k}')
    centroids = _centroids(matrix, inverse, k)
    sizes = np.bincount(inverse, minlength=k)
    between = float((sizes * ((centroids - matrix.mean(axis=0)) ** 2).sum(axis=1)).sum())
    within = float(((matrix - centroids[inverse]) ** 2).sum())
    if within == 0.0:
        return math.inf
    if n <= k:
        raise ClusterIndexError(f'Calinski-Harabasz needs more samples than clusters (n={n}, k={k})')
    return (between / (k - 1)) / (within / (n - k))


def davies_bouldin(embeddings, labels=None) -> float:
    """Mean over clusters of the worst ``(s_i + s_j) / d_ij``."""
    matrix, codes, inverse = _arrays(embeddings, labels)
    k = len(codes)
    if k < 2:
        raise ClusterIndexError(f'Davies-Bouldin needs at least 2 clusters, got {k}')
    centroids = _centroids(matrix, inverse, k)
    spread = np.array([np.linalg.norm(matrix[inverse == c] - centroids[c], axis=1).mean() for c in range(k)])
    distances = squareform(pdist(centroids))
    for i in range(k):
        for j in range(i + 1, k):
            if distances[i, j] == 0.0:
                raise ClusterIndexError(f"clusters '{codes[i]}' and '{codes[j]}' have coincident centroids")
    ratios = (spread[:, None] + spread[None, :]) / np.where(distances > 0, distances, np.inf)
    np.fill_diagonal(ratios, -np.inf)
    return float(ratios.max(axis=1).mean())


@dataclass(frozen=True)
class ClusterQualityReport:
    scope: str
    ch_index: float
    db_index: float
    k: int
    n: int
    space: str = SPACE

    def to_dict(self) -> dict:
        return {'scope': self.scope, 'ch_index': self.ch_index, 'db_index': self.db_index, 'k': self.k,
                'n': self.n, 'space': self.space}


def cluster_quality(embeddings: EmbeddingSet, scope: str = OVERALL) -> ClusterQualityReport:
    return ClusterQualityReport(scope, calinski_harabasz(embeddings), davies_bouldin(embeddings),
                                len(set(embeddings.labels)), embeddings.n)


def grouped_quality(embeddings: EmbeddingSet, taxonomy: Taxonomy) -> List[ClusterQualityReport]:
    """Overall report, then one per L2 group with at least two L3 classes present."""
    reports = [cluster_quality(embeddings)]
    present = set(embeddings.labels)
    for group in l2_order(taxonomy):
        codes = [c for c in children_of(taxonomy, group) if c in present]
        if len(codes) < 2:
            logger.info('Skipping %s: %d L3 class(es) present', group, len(codes))
            continue
        try:
            reports.append(cluster_quality(embeddings.restricted(codes), scope=group))
        except ClusterIndexError as exc:
            logger.info('Skipping %s: %s', group, exc)
    return reports


def class_separation(embeddings: EmbeddingSet) -> Dict[str, float]:
    """Smallest centroid distance against the mean within-class spread."""
    matrix, codes, inverse = _arrays(embeddings)
    k = len(codes)
    if k < 2:
        raise ClusterIndexError('class separation needs at least 2 classes')
    centroids = _centroids(matrix, inverse, k)
    spread = float(np.mean([np.linalg.norm(matrix[inverse == c] - centroids[c], axis=1).mean() for c in range(k)]))
    distances = cdist(centroids, centroids)
    min_distance = float(distances[~np.eye(k, dtype=bool)].min())
    return {
        'min_centroid_distance': min_distance,
        'mean_within_spread': spread,
        'ratio': math.inf if spread == 0 else min_distance / spread,
    }


def write_quality_reports(reports: Mapping[str, Sequence[ClusterQualityReport]], out_dir) -> Dict[str, Path]:
    """JSON of every report per embedding file plus a side-by-side CSV by scope."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / 'cluster_quality.json'
    with open(json_path, 'w', encoding='utf-8') as f:
        # Infinity marks a zero within-class scatter
        json.dump({name: [r.to_dict() for r in rs] for name, rs in reports.items()}, f, indent=2, sort_keys=True)
        f.write('\n')

    names = list(reports)
    scopes: List[str] = []
    for rs in reports.values():
        scopes.extend(r.scope for r in rs if r.scope not in scopes)
    by_key = {(name, r.scope): r for name, rs in reports.items() for r in rs}
    csv_path = out_dir / 'cluster_quality.csv'
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['scope'] + [f'{name}_{col}' for name in names for col in ('ch', 'db', 'k', 'n')])
        for scope in scopes:
            row = [scope]
            for name in names:
                r: Optional[ClusterQualityReport] = by_key.get((name, scope))
                row.extend([repr(r.ch_index), repr(r.db_index), r.k, r.n] if r else ['', '', '', ''])
            writer.writerow(row)
    return {'json': json_path, 'csv': csv_path}
