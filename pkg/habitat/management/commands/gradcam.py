import torch

from habitat.checkpoints import classifier_from_checkpoint, load_checkpoint
from habitat.dataset import Split
from habitat.exceptions import ConfigError, ImageDecodeError
from habitat.explain import gradcam, save_overlays
from habitat.management.base import HabitatCommand
from habitat.training import TrainingData, eval_augmentation
from habitat.transforms import eval_transform, load_image, to_tensor

TARGET_PREDICTED = 'predicted'
TARGET_TRUE = 'true'


class Command(HabitatCommand):
    help = ('GradCAM overlays for samples of a split. --target is "predicted", "true" or an L3 code; '
            'the saliency grid is saved next to each PNG.')
    command_name = 'gradcam'
    param_names = ('checkpoint', 'manifest', 'split', 'subset', 'samples', 'limit', 'target', 'layer', 'alpha')

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', help='Classifier checkpoint')
        parser.add_argument('--manifest')
        parser.add_argument('--split')
        parser.add_argument('--subset', choices=['train', 'val', 'test'], default='test')
        parser.add_argument('--samples', nargs='+', help='Sample ids (default: the first --limit of the subset)')
        parser.add_argument('--limit', type=int, default=8)
        parser.add_argument('--target', default=TARGET_PREDICTED)
        parser.add_argument('--layer', help="Layer tag, e.g. 'encoder.blocks.1' (default: the last block)")
        parser.add_argument('--alpha', type=float, default=0.5)

    def _records(self, params, data: TrainingData):
        records = data.records(Split(params.get('subset') or 'test'))
        if params.get('samples'):
            by_id = {r.sample_id: r for r in records}
            missing = [sid for sid in params['samples'] if sid not in by_id]
            if missing:
                raise ConfigError(f"samples not in the {params.get('subset') or 'test'} split: {missing}")
            return [by_id[sid] for sid in params['samples']]
        return records[:params.get('limit') or 8]

    def _target(self, params, model, record, tensor):
        target = params.get('target') or TARGET_PREDICTED
        if target == TARGET_TRUE:
            return record.l3_label
        if target == TARGET_PREDICTED:
            with torch.no_grad():
                return model.class_order[int(model(tensor.unsqueeze(0)).argmax(dim=-1))]
        return target

    def run(self, params, seed, out_dir):
        self.require(params, 'checkpoint', 'manifest', 'split')
        checkpoint = load_checkpoint(params['checkpoint'])
        model = classifier_from_checkpoint(checkpoint).eval()
        augmentation = eval_augmentation(model)
        data = TrainingData.from_files(params['manifest'], params['split'])

        items = []
        for record in self._records(params, data):
            try:
                image = eval_transform(load_image(data.image_path(record)), augmentation)
            except ImageDecodeError as exc:
                self.stderr.write(f'Skipping {record.sample_id}: {exc}')
                continue
            tensor = to_tensor(image)
            saliency = gradcam(model, tensor, self._target(params, model, record, tensor), params.get('layer'),
                               sample_id=record.sample_id)
            items.append((saliency, image))
        written = save_overlays(items, out_dir, params.get('alpha', 0.5))
        return f'{len(written)} GradCAM overlay(s) written to {out_dir}'
