import json

from habitat.embeddings import class_separation, export_embeddings, write_embeddings
from habitat.management.base import HabitatCommand
from habitat.training import TrainingData


class Command(HabitatCommand):
    help = 'Export raw encoder embeddings of one split (embeddings.bin plus an id/label sidecar).'
    command_name = 'embed'
    param_names = ('checkpoint', 'manifest', 'split', 'subset', 'batch_size')

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', help='Encoder or classifier checkpoint')
        parser.add_argument('--manifest')
        parser.add_argument('--split')
        parser.add_argument('--subset', choices=['train', 'val', 'test'], default='test')
        parser.add_argument('--batch-size', type=int, default=32)

    def run(self, params, seed, out_dir):
        self.require(params, 'checkpoint', 'manifest', 'split')
        data = TrainingData.from_files(params['manifest'], params['split'])
        embeddings = export_embeddings(params['checkpoint'], data, params.get('subset') or 'test',
                                       params.get('batch_size') or 32)
        embeddings.validate_labels(self.taxonomy())
        path = write_embeddings(embeddings, out_dir / 'embeddings.bin')
        with open(out_dir / 'separation.json', 'w', encoding='utf-8') as f:
            json.dump(class_separation(embeddings), f, indent=2, sort_keys=True)
            f.write('\n')
        return f'{embeddings.n} embeddings of dimension {embeddings.dim} written to {path}'
