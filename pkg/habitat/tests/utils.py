"""Helpers shared by the habitat test suites."""

import tempfile
from pathlib import Path

from habitat.dataset import SplitFractions, stratified_split, write_split
from habitat.metrics import PredictionRecord
from habitat.toydata import generate_toy_dataset
from habitat.training import TrainingData

FIXTURES = Path(__file__).resolve().parent / 'fixtures'


def fixture(name: str) -> Path:
    return FIXTURES / name


def records_from_labels(truths, predictions, prefix='r'):
    """One single-rank record per (truth, prediction) pair."""
    return [PredictionRecord(f'{prefix}{i}', t, (p,)) for i, (t, p) in enumerate(zip(truths, predictions))]


def toy_training_data(root, n_classes=4, per_class=12, image_size=16, difficulty='separable', seed=0,
                      test=0.25, val=0.2) -> TrainingData:
    """Generate a toy image set under ``root`` with a stratified split next to it."""
    root = Path(root)
    manifest = generate_toy_dataset(n_classes, per_class, image_size, difficulty, seed, root)
    split = stratified_split(manifest, SplitFractions(train=1 - test, val=val, test=test), 2, seed)
    write_split(split, root / 'split.csv')
    return TrainingData.from_files(root / 'manifest.csv', root / 'split.csv')


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.addCleanup(self._tmp.cleanup)
