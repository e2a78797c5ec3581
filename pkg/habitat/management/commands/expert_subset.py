import csv
import dataclasses

from habitat.dataset import DatasetManifest, Split, resolve_image, write_manifest
from habitat.expert import ANNOTATION_HEADER, draw_expert_subset
from habitat.management.base import HabitatCommand
from habitat.training import TrainingData


class Command(HabitatCommand):
    help = ('Draw a class-stratified share of the test split for expert annotation and write '
            'a blank annotation sheet for it.')
    command_name = 'expert_subset'
    stochastic = True
    param_names = ('manifest', 'split', 'fraction')

    def add_command_arguments(self, parser):
        parser.add_argument('--manifest')
        parser.add_argument('--split')
        parser.add_argument('--fraction', type=float, default=0.1)

    def run(self, params, seed, out_dir):
        self.require(params, 'manifest', 'split')
        taxonomy = self.taxonomy()
        data = TrainingData.from_files(params['manifest'], params['split'])
        test = DatasetManifest(data.records(Split.TEST), data.manifest.taxonomy_ref)
        subset = draw_expert_subset(test, params['fraction'], seed, taxonomy)

        # absolute refs so the subset manifest can be read from the output directory
        records = [dataclasses.replace(r, image_ref=resolve_image(data.manifest_path, r).as_posix())
                   for r in subset.records]
        path = write_manifest(DatasetManifest(records, subset.taxonomy_ref), out_dir / 'expert_subset.csv')
        with open(out_dir / 'annotation_template.csv', 'w', encoding='utf-8', newline='') as f:
            f.write('# annotator: ANNOTATOR_ID\n')
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(ANNOTATION_HEADER)
            for r in subset.records:
                writer.writerow([r.sample_id, '', '', ''])
        return f'{len(subset)} of {len(test)} test samples selected; subset manifest at {path}'
