import dataclasses
import json
import math
import os
import unittest

import numpy as np
import torch
from django.test import SimpleTestCase

from habitat.checkpoints import classifier_from_checkpoint, load_checkpoint, parameter_digest
from habitat.config import TrainConfig, preset
from habitat.dataset import Split, SplitAssignment
from habitat.embeddings import export_embeddings
from habitat.encoders import ClassifierHead, EncoderSpec, HabitatClassifier, build_encoder, normalize_projection
from habitat.exceptions import EncoderContractError
from habitat.metrics import evaluate
from habitat.tests.utils import TempDirMixin, toy_training_data
from habitat.training import (
    BEST_CHECKPOINT, EPOCHS_FILENAME, FINAL_CHECKPOINT, PRETRAIN_PREFIX, RUN_RECORD_FILENAME, eval_augmentation,
    linear_probe, predict, pretrain_supcon, read_run_record, train_supervised,
)
from habitat.toydata import toy_class_codes
from habitat.transforms import AugmentationConfig

SPEC = EncoderSpec(input_size=16, patch_size=4, embed_dim=8, depth=1)


def small_config(**overrides):
    values = dict(
        learning_rate=1e-3, batch_size=4, epochs=2, encoder=SPEC,
        augmentation=AugmentationConfig(resize_to=16, crop_size=16, max_rotation_degrees=0.0),
    )
    values.update(overrides)
    return TrainConfig(**values)


class SupervisedTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.data = toy_training_data(self.tmp / 'toy', n_classes=2, per_class=12, image_size=16)

    def test_run_writes_checkpoints_and_record(self):
        out = self.tmp / 'run'
        outcome = train_supervised(small_config(), self.data, out_dir=out, progress=False)
        record = outcome.record
        self.assertEqual([e.epoch for e in record.epochs], [1, 2])
        self.assertIn(record.best_epoch, (1, 2))
        self.assertTrue(all(math.isfinite(e.train_loss) and e.val_top1 is not None for e in record.epochs))
        self.assertEqual(record.checkpoints, {'best': BEST_CHECKPOINT, 'final': FINAL_CHECKPOINT})
        self.assertEqual(len((out / EPOCHS_FILENAME).read_text().splitlines()), 2)
        self.assertEqual(read_run_record(out).epochs, record.epochs)
        self.assertEqual(parameter_digest(load_checkpoint(out / FINAL_CHECKPOINT).state_dict),
                         parameter_digest(outcome.model))

    def test_same_seed_same_weights(self):
        first = train_supervised(small_config(), self.data, progress=False)
        second = train_supervised(small_config(), self.data, progress=False)
        self.assertEqual(parameter_digest(first.model), parameter_digest(second.model))
        self.assertEqual([e.train_loss for e in first.record.epochs], [e.train_loss for e in second.record.epochs])

    def test_empty_validation_split_uses_final_epoch(self):
        assignment = {sid: (Split.TRAIN if s is Split.VAL else s) for sid, s in self.data.split.assignment.items()}
        data = dataclasses.replace(self.data, split=SplitAssignment(assignment, 0, self.data.split.fractions))
        with self.assertLogs('habitat.training', level='WARNING'):
            outcome = train_supervised(small_config(), data, progress=False)
        self.assertEqual(outcome.record.best_epoch, 2)
        self.assertIsNone(outcome.record.epochs[-1].val_top1)

    def test_wrong_paradigm(self):
        with self.assertRaises(ValueError):
            train_supervised(small_config(paradigm='supcon'), self.data, progress=False)

    def test_predict_ranks_every_class(self):
        outcome = train_supervised(small_config(epochs=1), self.data, progress=False)
        records = predict(outcome.model, self.data, 'test')
        self.assertEqual([r.sample_id for r in records], [r.sample_id for r in self.data.records('test')])
        for r in records:
            self.assertEqual(len(r.ranked_classes), len(outcome.model.class_order))
            self.assertAlmostEqual(sum(r.scores), 1.0, places=9)
            self.assertEqual(list(r.scores), sorted(r.scores, reverse=True))

    def test_evaluation_reuses_training_resize(self):
        augmentation = AugmentationConfig(resize_to=20, crop_size=16, max_rotation_degrees=0.0)
        out = self.tmp / 'run'
        outcome = train_supervised(small_config(epochs=1, augmentation=augmentation), self.data, out_dir=out,
                                   progress=False)
        self.assertEqual(eval_augmentation(outcome.model), augmentation)
        loaded = classifier_from_checkpoint(load_checkpoint(out / BEST_CHECKPOINT))
        self.assertEqual(eval_augmentation(loaded), augmentation)
        self.assertEqual(predict(outcome.model, self.data, 'test'),
                         predict(outcome.model, self.data, 'test', augmentation))

    def test_untrained_classifier_evaluates_at_input_size(self):
        model = HabitatClassifier(build_encoder(SPEC), ClassifierHead(SPEC.embed_dim, ['bog', 'urban']))
        augmentation = eval_augmentation(model)
        self.assertEqual((augmentation.resize_to, augmentation.crop_size), (16, 16))


class ContrastiveTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.data = toy_training_data(self.tmp / 'toy', n_classes=2, per_class=12, image_size=16)

    def test_zero_epochs_keeps_initial_encoder(self):
        config = small_config(paradigm='supcon', epochs=0)
        outcome = pretrain_supcon(config, self.data, out_dir=self.tmp / 'run', progress=False)
        torch.manual_seed(config.seed)
        self.assertEqual(parameter_digest(outcome.model), parameter_digest(build_encoder(SPEC)))
        self.assertEqual(outcome.record.epochs, [])
        self.assertTrue((self.tmp / 'run' / f'{PRETRAIN_PREFIX}{RUN_RECORD_FILENAME}').is_file())

    def test_pretrain_then_probe(self):
        out = self.tmp / 'run'
        config = small_config(paradigm='supcon', epochs=1, probe_epochs=2)
        pretrained = pretrain_supcon(config, self.data, out_dir=out, progress=False)
        [epoch] = pretrained.record.epochs
        self.assertTrue(math.isfinite(epoch.train_loss))
        self.assertIsNotNone(epoch.val_loss)
        self.assertIsNone(epoch.val_top1)

        digest = parameter_digest(load_checkpoint(pretrained.paths['encoder']).state_dict)
        probed = linear_probe(pretrained.paths['encoder'], config, self.data, out_dir=out, progress=False)
        self.assertEqual(len(probed.record.epochs), 2)
        self.assertEqual(probed.record.stage, 'linear_probe')
        self.assertEqual(parameter_digest(probed.model.encoder), digest)
        best = load_checkpoint(out / BEST_CHECKPOINT)
        self.assertEqual(best.extra['encoder_digest'], digest)
        with open(out / f'{PRETRAIN_PREFIX}{RUN_RECORD_FILENAME}', encoding='utf-8') as f:
            self.assertEqual(json.load(f)['stage'], 'supcon_pretrain')

    def test_probe_leaves_a_live_encoder_untouched(self):
        torch.manual_seed(0)
        encoder = build_encoder(SPEC)
        before = parameter_digest(encoder)
        linear_probe(encoder, small_config(epochs=1), self.data, progress=False)
        self.assertEqual(parameter_digest(encoder), before)

    def test_probe_head_must_match_encoder(self):
        encoder = build_encoder(SPEC)
        with self.assertRaises(EncoderContractError):
            linear_probe(encoder, small_config(), self.data, head=ClassifierHead(5, ['bog', 'urban']), progress=False)

    def test_pretraining_returns_the_projection_head(self):
        config = small_config(paradigm='supcon', epochs=1)
        outcome = pretrain_supcon(config, self.data, out_dir=self.tmp / 'run', progress=False)
        self.assertFalse(outcome.projection.training)
        with torch.no_grad():
            projected = outcome.projection(torch.randn(3, SPEC.embed_dim))
        self.assertEqual(tuple(projected.shape), (3, config.projection_dim))
        self.assertEqual(set(outcome.paths), {'encoder'})


@unittest.skipUnless(os.environ.get('HABITAT_SLOW_TESTS'), 'set HABITAT_SLOW_TESTS=1 to run end-to-end training')
class ToyEndToEndTests(TempDirMixin, SimpleTestCase):
    def test_separable_toy_set_is_learned(self):
        data = toy_training_data(self.tmp / 'toy', n_classes=4, per_class=40, image_size=64)
        outcome = train_supervised(preset('toy'), data, progress=False)
        report = evaluate(predict(outcome.model, data, 'test'))
        self.assertGreaterEqual(report.top1, 0.9)

    def test_contrastive_pipeline_learns_separable_set(self):
        data = toy_training_data(self.tmp / 'toy', n_classes=4, per_class=50, image_size=64)
        config = preset('toy', paradigm='supcon')
        pretrained = pretrain_supcon(config, data, progress=False)
        probed = linear_probe(pretrained.model, config, data, progress=False)
        report = evaluate(predict(probed.model, data, 'test'))
        self.assertGreaterEqual(report.top1, 0.9)

    def test_projections_pull_the_confusable_pair_apart(self):
        data = toy_training_data(self.tmp / 'toy', n_classes=4, per_class=50, image_size=64,
                                 difficulty='confusable-pair')
        outcome = pretrain_supcon(preset('toy', paradigm='supcon'), data, progress=False)
        embeddings = export_embeddings(outcome.model, data, 'test')
        with torch.no_grad():
            vectors = torch.as_tensor(embeddings.matrix, dtype=torch.float32)
            projections = normalize_projection(outcome.projection(vectors)).double().numpy()
        labels = np.array(embeddings.labels)
        first, second = toy_class_codes(2)
        a, b = projections[labels == first], projections[labels == second]
        within = np.mean([mean_off_diagonal(a @ a.T), mean_off_diagonal(b @ b.T)])
        self.assertGreater(within, float((a @ b.T).mean()))


def mean_off_diagonal(gram):
    n = len(gram)
    return (gram.sum() - np.trace(gram)) / (n * (n - 1))
