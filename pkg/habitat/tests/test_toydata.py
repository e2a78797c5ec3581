from collections import Counter
from itertools import combinations

import numpy as np
from django.test import SimpleTestCase

from habitat.exceptions import ConfigError
from habitat.tests.utils import TempDirMixin
from habitat.toydata import class_pixel_means, generate_toy_dataset, toy_class_codes, toy_dataset_problems


class ToyDatasetTests(TempDirMixin, SimpleTestCase):
    def test_balanced_manifest(self):
        manifest = generate_toy_dataset(4, 50, 16, 'separable', seed=7, out_dir=self.tmp)
        self.assertEqual(len(manifest), 200)
        self.assertEqual(set(Counter(r.l3_label for r in manifest).values()), {50})
        self.assertTrue((self.tmp / 'manifest.csv').is_file())

    def test_same_seed_same_bytes(self):
        a = generate_toy_dataset(2, 3, 16, seed=1, out_dir=self.tmp / 'a')
        generate_toy_dataset(2, 3, 16, seed=1, out_dir=self.tmp / 'b')
        for record in a:
            self.assertEqual((self.tmp / 'a' / record.image_ref).read_bytes(),
                             (self.tmp / 'b' / record.image_ref).read_bytes())

    def test_confusable_pair_is_close_in_colour(self):
        manifest = generate_toy_dataset(4, 10, 24, 'confusable-pair', seed=2, out_dir=self.tmp)
        codes = toy_class_codes(4)
        means = class_pixel_means(manifest, self.tmp, codes)
        pair = np.linalg.norm(means[codes[0]] - means[codes[1]])
        others = [np.linalg.norm(means[a] - means[b]) for a, b in combinations(codes, 2)
                  if {a, b} != {codes[0], codes[1]}]
        self.assertLess(pair, 0.25 * np.mean(others))

    def test_needs_two_classes(self):
        with self.assertRaisesMessage(ConfigError, 'need at least 2 classes, got 1'):
            generate_toy_dataset(1, 5, 16, out_dir=self.tmp)

    def test_more_classes_than_the_taxonomy(self):
        with self.assertRaisesMessage(ConfigError, 'taxonomy has only 18 L3 classes'):
            toy_class_codes(19)

    def test_every_bound_is_reported(self):
        self.assertEqual(len(toy_dataset_problems(1, 0, 2)), 3)
        self.assertEqual(toy_dataset_problems(2, 1, 4), [])

    def test_confusable_pair_leads_the_class_list(self):
        self.assertEqual(toy_class_codes(2), ['neutral_grassland', 'improved_grassland'])
