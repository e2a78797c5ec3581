"""Synthetic stand-ins for the survey photographs.

Toy images are striped colour textures with one signature (hue, stripe
frequency, stripe orientation) per class. In ``confusable_pair`` mode the
first two classes share a colour signature up to a small shift and differ
only in stripe orientation.
"""

import colorsys
import enum
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from .dataset import DatasetManifest, SampleRecord, write_manifest
from .exceptions import ConfigError
from .taxonomy import Taxonomy, default_taxonomy

logger = logging.getLogger(__name__)

# The grassland pair that is hardest to tell apart in the field comes first.
TOY_CLASS_PREFERENCE = (
    'neutral_grassland',
    'improved_grassland',
    'broadleaved_mixed_woodland',
    'arable_horticulture',
    'bog',
    'dwarf_shrub_heath',
)
CONFUSABLE_SHIFT = np.array([6.0, -5.0, 4.0])
STRIPE_AMPLITUDE = 40.0
NOISE_SIGMA = 10.0

# Long-tailed class profile of a 5598-image survey; the two rock classes fall
# below the default test exclusion threshold.
CS_SHAPED_COUNTS = {
    'acid_grassland': 400,
    'bracken': 150,
    'calcareous_grassland': 60,
    'improved_grassland': 1150,
    'neutral_grassland': 1200,
    'broadleaved_mixed_woodland': 500,
    'coniferous_woodland': 150,
    'dwarf_shrub_heath': 330,
    'bog': 350,
    'fen_marsh_swamp': 300,
    'arable_horticulture': 900,
    'urban': 40,
    'inland_rock': 15,
    'supralittoral_rock': 3,
    'supralittoral_sediment': 20,
    'littoral_rock': 3,
    'littoral_sediment': 17,
    'montane': 10,
}

MIN_TOY_CLASSES = 2
MIN_TOY_IMAGE_SIZE = 4


class Difficulty(str, enum.Enum):
    SEPARABLE = 'separable'
    CONFUSABLE_PAIR = 'confusable-pair'


def toy_class_codes(n_classes: int, taxonomy: Optional[Taxonomy] = None) -> List[str]:
    taxonomy = taxonomy or default_taxonomy()
    preferred = [c for c in TOY_CLASS_PREFERENCE if c in taxonomy.l3_order]
    codes = preferred + [c for c in taxonomy.l3_order if c not in preferred]
    if n_classes > len(codes):
        raise ConfigError(f'taxonomy has only {len(codes)} L3 classes, asked for {n_classes}')
    return codes[:n_classes]


def toy_dataset_problems(n_classes, n_per_class, image_size) -> List[str]:
    problems = []
    if not isinstance(n_classes, int) or n_classes < MIN_TOY_CLASSES:
        problems.append(f'need at least {MIN_TOY_CLASSES} classes, got {n_classes!r}')
    if not isinstance(n_per_class, int) or n_per_class < 1:
        problems.append(f'per_class must be >= 1, got {n_per_class!r}')
    if not isinstance(image_size, int) or image_size < MIN_TOY_IMAGE_SIZE:
        problems.append(f'image_size must be >= {MIN_TOY_IMAGE_SIZE}, got {image_size!r}')
    return problems


def _signatures(n_classes: int, difficulty: Difficulty) -> List[Dict]:
    signatures = []
    for k in range(n_classes):
        r, g, b = colorsys.hsv_to_rgb(k / n_classes, 0.6, 0.75)
        signatures.append({
            'color': np.array([r, g, b]) * 255.0,
            'cycles': 3 + k % 3,
            'theta': k * math.pi / n_classes,
        })
    if difficulty is Difficulty.CONFUSABLE_PAIR:
        base = signatures[0]
        signatures[1] = {
            'color': base['color'] + CONFUSABLE_SHIFT,
            'cycles': base['cycles'],
            'theta': base['theta'] + math.pi / 2,
        }
    return signatures


def render_texture(signature: Dict, image_size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    phase = rng.uniform(0, 2 * math.pi)
    coord = xx * math.cos(signature['theta']) + yy * math.sin(signature['theta'])
    stripes = STRIPE_AMPLITUDE * np.sin(2 * math.pi * signature['cycles'] * coord / image_size + phase)
    noise = rng.normal(0.0, NOISE_SIGMA, size=(image_size, image_size, 3))
    pixels = signature['color'][None, None, :] + stripes[:, :, None] + noise
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def generate_toy_dataset(n_classes: int, n_per_class: int, image_size: int, difficulty='separable',
                         seed: int = 0, out_dir=None, taxonomy: Optional[Taxonomy] = None) -> DatasetManifest:
    """Write a balanced toy image set under ``out_dir`` and return its manifest.

    Image refs are relative to ``out_dir``, where ``manifest.csv`` is written too.
    """
    problems = toy_dataset_problems(n_classes, n_per_class, image_size)
    if problems:
        raise ConfigError('; '.join(problems))
    if out_dir is None:
        raise ConfigError('out_dir is required')
    difficulty = Difficulty(difficulty)

    out_dir = Path(out_dir)
    codes = toy_class_codes(n_classes, taxonomy)
    signatures = _signatures(n_classes, difficulty)
    records = []
    for k, code in enumerate(codes):
        class_dir = out_dir / 'images' / code
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, k, i]))
            pixels = render_texture(signatures[k], image_size, rng)
            ref = f'images/{code}/{code}_{i:04d}.png'
            Image.fromarray(pixels).save(out_dir / ref, format='PNG')
            records.append(SampleRecord(f'toy_{code}_{i:04d}', ref, code, f'toy-{difficulty.value}'))

    manifest = DatasetManifest(records, taxonomy_ref='default')
    write_manifest(manifest, out_dir / 'manifest.csv')
    logger.info('Generated %d toy images (%d classes, %s) in %s', len(records), n_classes,
                difficulty.value, out_dir)
    return manifest


def cs_shaped_manifest(counts: Optional[Dict[str, int]] = None, image_root: str = 'images') -> DatasetManifest:
    """Image-free manifest with the survey's long-tailed class profile."""
    counts = counts or CS_SHAPED_COUNTS
    records = []
    for code, n in counts.items():
        for i in range(n):
            records.append(SampleRecord(f'cs_{code}_{i:05d}', f'{image_root}/{code}/{i:05d}.jpg', code,
                                        f'square_{i % 500:03d}'))
    return DatasetManifest(records)


def class_pixel_means(manifest: DatasetManifest, root, codes: Sequence[str]) -> Dict[str, np.ndarray]:
    """Mean RGB over every pixel of every image of each class."""
    from .transforms import load_image

    sums = {c: np.zeros(3) for c in codes}
    counts = {c: 0 for c in codes}
    for r in manifest.records:
        if r.l3_label in sums:
            pixels = load_image(Path(root) / r.image_ref).reshape(-1, 3).astype(np.float64)
            sums[r.l3_label] += pixels.mean(axis=0)
            counts[r.l3_label] += 1
    return {c: sums[c] / max(counts[c], 1) for c in codes}
