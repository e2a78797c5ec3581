import csv
import json
from io import StringIO

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from habitat.dataset import DatasetManifest, SampleRecord, read_manifest, read_split, write_manifest
from habitat.embeddings import read_embeddings
from habitat.expert import read_agreement
from habitat.metrics import read_confusion_matrix, read_matrix
from habitat.tests.test_expert import GOLDEN_TRUTH
from habitat.tests.utils import TempDirMixin, fixture


def run(command, **options):
    out = StringIO()
    call_command(command, stdout=out, stderr=StringIO(), verbosity=0, **options)
    return out.getvalue()


class CommandPlumbingTests(TempDirMixin, SimpleTestCase):
    def test_golden_evaluation(self):
        out = self.tmp / 'eval'
        summary = run('eval', predictions=str(fixture('golden_predictions.csv')), out=str(out))
        self.assertEqual((out / 'metrics.json').read_bytes(), fixture('golden_metrics.json').read_bytes())
        self.assertIn('top1=0.5000', summary)
        with open(out / 'run_config.json', encoding='utf-8') as f:
            saved = json.load(f)
        self.assertEqual(saved['command'], 'eval')
        self.assertEqual(saved['params']['predictions'], str(fixture('golden_predictions.csv')))

    def test_replay_is_byte_identical(self):
        first = self.tmp / 'first'
        run('eval', predictions=str(fixture('golden_predictions.csv')), out=str(first))
        second = self.tmp / 'second'
        run('eval', config=str(first / 'run_config.json'), out=str(second))
        self.assertEqual((second / 'metrics.json').read_bytes(), (first / 'metrics.json').read_bytes())

    def test_replay_refuses_other_command(self):
        run('eval', predictions=str(fixture('golden_predictions.csv')), out=str(self.tmp / 'eval'))
        with self.assertRaisesMessage(CommandError, "saved by 'eval'"):
            run('cm', config=str(self.tmp / 'eval' / 'run_config.json'))

    def test_l2_level_and_baseline(self):
        base = self.tmp / 'base'
        run('eval', predictions=str(fixture('golden_predictions.csv')), out=str(base))
        out = self.tmp / 'l2'
        run('eval', predictions=str(fixture('golden_predictions.csv')), level='l2',
            baseline=str(base / 'metrics.json'), out=str(out))
        with open(out / 'metrics.json', encoding='utf-8') as f:
            metrics = json.load(f)
        self.assertEqual((metrics['level'], metrics['top1']), ('L2', 1.0))
        with open(out / 'comparison.json', encoding='utf-8') as f:
            self.assertEqual(json.load(f)['top1'], 0.5)

    def test_missing_input_file(self):
        with self.assertRaises(CommandError):
            run('eval', predictions=str(self.tmp / 'absent.csv'), out=str(self.tmp / 'eval'))

    def test_missing_required_options(self):
        with self.assertRaisesMessage(CommandError, '--checkpoint'):
            run('eval', out=str(self.tmp / 'eval'))

    def test_output_defaults_to_artifact_root(self):
        with override_settings(HABITAT={'ARTIFACT_ROOT': self.tmp / 'artifacts'}):
            run('eval', predictions=str(fixture('golden_predictions.csv')))
        self.assertTrue((self.tmp / 'artifacts' / 'eval' / 'metrics.json').is_file())

    def test_stochastic_command_needs_seed(self):
        with self.assertRaisesMessage(CommandError, '--seed'):
            run('toydata', classes=2, per_class=4, image_size=16, out=str(self.tmp / 'toy'))

    def test_toydata_bounds_are_rejected_before_writing(self):
        out = self.tmp / 'toy'
        with self.assertRaisesMessage(CommandError, 'need at least 2 classes, got 1'):
            run('toydata', classes=1, per_class=4, image_size=16, seed=0, out=str(out))
        self.assertFalse(out.exists())

    def test_toydata_class_count_beyond_taxonomy(self):
        with self.assertRaisesMessage(CommandError, 'taxonomy has only'):
            run('toydata', classes=40, per_class=1, image_size=8, seed=0, out=str(self.tmp / 'toy'))

    def test_invalid_configuration_is_reported(self):
        with self.assertRaisesMessage(CommandError, 'alpha must be within [0, 1]'):
            run('gradcam', alpha=1.5, out=str(self.tmp / 'cam'))


class MatrixCommandTests(TempDirMixin, SimpleTestCase):
    def test_confusion_matrix_and_delta(self):
        a = self.tmp / 'a'
        run('cm', predictions=str(fixture('golden_predictions.csv')), out=str(a))
        cm = read_confusion_matrix(a / 'confusion_matrix.csv')
        self.assertEqual(cm.counts.shape, (18, 18))
        self.assertEqual(int(cm.counts.sum()), 4)
        self.assertTrue((a / 'confusion_matrix.png').is_file())
        values, _ = read_matrix(a / 'confusion_matrix_normalized.csv')
        np.testing.assert_allclose(cm.view(), values)

        delta = self.tmp / 'delta'
        run('cm_delta', a=str(a / 'confusion_matrix.csv'), b=str(a / 'confusion_matrix.csv'),
            restrict_to='bog,fen_marsh_swamp', out=str(delta))
        values, order = read_matrix(delta / 'delta.csv')
        self.assertEqual(order, ('bog', 'fen_marsh_swamp'))
        self.assertEqual(values.tolist(), [[0.0, 0.0], [0.0, 0.0]])
        self.assertTrue((delta / 'delta.png').is_file())


class DataCommandTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.toy = self.tmp / 'toy'
        run('toydata', classes=3, per_class=10, image_size=32, seed=0, out=str(self.toy))

    def split(self, out, seed=1):
        run('split', manifest=str(self.toy / 'manifest.csv'), min_test_count=2, seed=seed, out=str(out))
        return out / 'split.csv'

    def test_toydata_then_split(self):
        manifest = read_manifest(self.toy / 'manifest.csv')
        self.assertEqual(len(manifest), 30)
        split = read_split(self.split(self.tmp / 'split'))
        self.assertEqual(set(split.assignment), {r.sample_id for r in manifest.records})
        with open(self.tmp / 'split' / 'distribution.json', encoding='utf-8') as f:
            self.assertIn('test', json.load(f)['splits'])

    def test_split_replay(self):
        path = self.split(self.tmp / 'one', seed=5)
        run('split', config=str(self.tmp / 'one' / 'run_config.json'), out=str(self.tmp / 'two'))
        self.assertEqual((self.tmp / 'two' / 'split.csv').read_bytes(), path.read_bytes())

    def test_expert_subset(self):
        split = self.split(self.tmp / 'split')
        out = self.tmp / 'expert'
        run('expert_subset', manifest=str(self.toy / 'manifest.csv'), split=str(split), fraction=0.5, seed=2,
            out=str(out))
        subset = read_manifest(out / 'expert_subset.csv')
        test_ids = set(read_split(split).ids('test'))
        self.assertTrue({r.sample_id for r in subset.records} <= test_ids)
        lines = (out / 'annotation_template.csv').read_text().splitlines()
        self.assertEqual(lines[0], '# annotator: ANNOTATOR_ID')
        self.assertEqual(lines[1], 'sample_id,rank1,rank2,rank3')
        self.assertEqual(len(lines), 2 + len(subset))


class ExpertCommandTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.subset = self.tmp / 'expert_subset.csv'
        write_manifest(DatasetManifest(SampleRecord(sid, f'{sid}.jpg', label) for sid, label in GOLDEN_TRUTH.items()),
                       self.subset)
        self.participants = dict(
            subset=str(self.subset),
            annotations=[str(fixture('expert_annotations.csv'))],
            predictions=[str(fixture('golden_predictions.csv'))],
            model_ids=['model'],
        )

    def test_expert_score(self):
        out = self.tmp / 'score'
        run('expert_score', out=str(out), **self.participants)
        with open(out / 'scores.json', encoding='utf-8') as f:
            scores = json.load(f)
        self.assertEqual(scores['expert_1']['top1'], 0.75)
        self.assertEqual(scores['model']['top1'], 0.5)
        with open(out / 'metrics_expert_1.json', encoding='utf-8') as f:
            self.assertEqual(json.load(f)['per_class_accuracy'], {'bog': 1.0, 'fen_marsh_swamp': 0.5})
        for name in ('confusion_matrix_expert_1.csv', 'confusion_matrix_model.png'):
            self.assertTrue((out / name).is_file())

    def test_agreement(self):
        out = self.tmp / 'agree'
        run('agree', out=str(out), **self.participants)
        matrix = read_agreement(out / 'agreement.csv')
        self.assertEqual(matrix.participant_ids, ('expert_1', 'model'))
        self.assertEqual(matrix.value('expert_1', 'expert_1'), 1.0)
        self.assertAlmostEqual(matrix.value('expert_1', 'model'), -4 / 48 ** 0.5)

    def test_duplicate_participant_ids(self):
        options = {**self.participants, 'model_ids': ['expert_1']}
        with self.assertRaisesMessage(CommandError, 'unique'):
            run('agree', out=str(self.tmp / 'agree'), **options)


class ModelCommandTests(TempDirMixin, SimpleTestCase):
    """Train one small classifier and run the model-consuming commands on it."""

    def test_train_embed_cluster_gradcam(self):
        toy = self.tmp / 'toy'
        run('toydata', classes=2, per_class=10, image_size=32, seed=0, out=str(toy))
        run('split', manifest=str(toy / 'manifest.csv'), min_test_count=2, seed=0, out=str(toy))
        data = dict(manifest=str(toy / 'manifest.csv'), split=str(toy / 'split.csv'))

        train = self.tmp / 'train'
        run('train', preset='toy', epochs=1, batch_size=4, seed=0, out=str(train), **data)
        checkpoint = train / 'classifier_best.safetensors'
        self.assertTrue(checkpoint.is_file())
        self.assertTrue((train / 'training_curves.png').is_file())

        evaluated = self.tmp / 'eval'
        run('eval', checkpoint=str(checkpoint), out=str(evaluated), **data)
        with open(evaluated / 'predictions.csv', encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), len(read_split(toy / 'split.csv').ids('test')))

        embedded = self.tmp / 'embed'
        run('embed', checkpoint=str(checkpoint), out=str(embedded), **data)
        embeddings = read_embeddings(embedded / 'embeddings.bin')
        self.assertEqual(embeddings.dim, 32)

        quality = self.tmp / 'quality'
        summary = run('cluster_quality', embeddings=[str(embedded / 'embeddings.bin')], names=['supervised'],
                      out=str(quality))
        self.assertIn('supervised: CH=', summary)
        self.assertTrue((quality / 'cluster_quality.csv').is_file())

        cams = self.tmp / 'gradcam'
        run('gradcam', checkpoint=str(checkpoint), limit=2, target='true', out=str(cams), **data)
        self.assertEqual(len(list(cams.glob('gradcam_*.png'))), 2)
        self.assertEqual(len(list(cams.glob('gradcam_*.csv'))), 2)
