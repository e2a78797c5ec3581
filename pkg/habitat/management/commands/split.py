import dataclasses
import json
from pathlib import Path

from habitat.dataset import (
    DatasetManifest, Split, SplitFractions, build_manifest, class_distribution, major_groups, read_manifest,
    stratified_split, write_manifest, write_split,
)
from habitat.management.base import HabitatCommand
from habitat.taxonomy import Level


class Command(HabitatCommand):
    help = ('Stratified train/val/test split of a manifest. With --images and --labels a manifest is built '
            'first from the image folder.')
    command_name = 'split'
    stochastic = True
    param_names = ('manifest', 'images', 'labels', 'fractions', 'min_test_count')

    def add_command_arguments(self, parser):
        parser.add_argument('--manifest', help='Existing manifest.csv')
        parser.add_argument('--images', help='Image root to scan (with --labels)')
        parser.add_argument('--labels', help='Label CSV with image_ref,l3_label[,source_tag]')
        parser.add_argument('--train', type=float, default=0.75)
        parser.add_argument('--val', type=float, default=0.20, help='Share of the non-test pool kept for validation')
        parser.add_argument('--test', type=float, default=0.25)
        parser.add_argument('--min-test-count', type=int, default=4)

    def handle(self, *args, **options):
        options['fractions'] = {'train': options.get('train'), 'val': options.get('val'), 'test': options.get('test')}
        return super().handle(*args, **options)

    def _manifest(self, params, out_dir: Path, taxonomy) -> Path:
        if params.get('manifest'):
            return Path(params['manifest'])
        self.require(params, 'images', 'labels')
        root = Path(params['images']).resolve()
        built = build_manifest(root, params['labels'], taxonomy)
        # refs become absolute so the manifest can live in the output directory
        records = [dataclasses.replace(r, image_ref=(root / r.image_ref).as_posix()) for r in built.records]
        path = out_dir / 'manifest.csv'
        write_manifest(DatasetManifest(records, built.taxonomy_ref), path)
        self.stdout.write(f'Built manifest of {len(records)} records ({built.dropped_count} dropped)')
        return path

    def run(self, params, seed, out_dir):
        taxonomy = self.taxonomy()
        manifest = read_manifest(self._manifest(params, out_dir, taxonomy))
        manifest.validate_labels(taxonomy)
        split = stratified_split(manifest, SplitFractions(**params['fractions']), params['min_test_count'], seed,
                                 taxonomy)
        write_split(split, out_dir / 'split.csv')

        distribution = {}
        for s in Split:
            ids = split.ids(s)
            if not ids:
                continue
            subset = manifest.subset(ids)
            distribution[s.value] = {
                'L3': class_distribution(subset, Level.L3),
                'L2': class_distribution(subset, Level.L2, taxonomy),
            }
        overall_l2 = class_distribution(manifest, Level.L2, taxonomy)
        summary = {'splits': distribution, 'major_groups': major_groups(overall_l2)}
        with open(out_dir / 'distribution.json', 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write('\n')

        counts = split.counts()
        return (f"train={counts[Split.TRAIN]} val={counts[Split.VAL]} test={counts[Split.TEST]} "
                f"written to {out_dir / 'split.csv'}")
