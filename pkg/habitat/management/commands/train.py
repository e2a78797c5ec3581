from habitat.config import PRESETS, TrainConfig, preset_params
from habitat.management.base import HabitatCommand
from habitat.plots import plot_training_curves
from habitat.training import (
    PRETRAIN_PREFIX, TrainingData, linear_probe, pretrain_supcon, train_supervised,
)


class Command(HabitatCommand):
    help = ('Train a habitat classifier. supervised: encoder and head end to end. supcon: contrastive '
            'pretraining followed by a linear probe on the frozen encoder.')
    command_name = 'train'
    stochastic = True
    param_names = ('manifest', 'split', 'train_config')

    def add_command_arguments(self, parser):
        parser.add_argument('--manifest')
        parser.add_argument('--split')
        parser.add_argument('--preset', choices=sorted(PRESETS), default='toy')
        parser.add_argument('--paradigm', choices=['supervised', 'supcon'], default='supervised')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--learning-rate', type=float)
        parser.add_argument('--weight-decay', type=float)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--temperature', type=float)
        parser.add_argument('--probe-epochs', type=int)
        parser.add_argument('--probe-learning-rate', type=float)
        parser.add_argument('--encoder-ref', help="External backbone factory 'package.module:factory'")
        parser.add_argument('--embed-dim', type=int, help='Declared embedding size of an external backbone')

    def handle(self, *args, **options):
        overrides = {
            key: options.get(key)
            for key in ('paradigm', 'epochs', 'learning_rate', 'weight_decay', 'batch_size', 'temperature',
                        'probe_epochs', 'probe_learning_rate', 'seed')
        }
        if options.get('encoder_ref'):
            overrides['encoder'] = {'kind': 'external', 'external_ref': options['encoder_ref'],
                                    'embed_dim': options.get('embed_dim')}
        options['train_config'] = preset_params(options.get('preset') or 'toy', **overrides)
        return super().handle(*args, **options)

    def run(self, params, seed, out_dir):
        self.require(params, 'manifest', 'split')
        config = TrainConfig.model_validate(params['train_config'])
        data = TrainingData.from_files(params['manifest'], params['split'])
        taxonomy = self.taxonomy()
        data.manifest.validate_labels(taxonomy)

        if config.paradigm == 'supervised':
            outcome = train_supervised(config, data, taxonomy, out_dir=out_dir, progress=self.progress)
        else:
            pretrained = pretrain_supcon(config, data, taxonomy, out_dir=out_dir, progress=self.progress)
            plot_training_curves(pretrained.record, out_dir / f'{PRETRAIN_PREFIX}training_curves.png')
            outcome = linear_probe(pretrained.paths['encoder'], config, data, taxonomy, out_dir=out_dir,
                                   progress=self.progress)
        plot_training_curves(outcome.record, out_dir / 'training_curves.png')

        last = outcome.record.epochs[-1] if outcome.record.epochs else None
        detail = '' if last is None or last.val_top1 is None else f', final val top-1 {last.val_top1:.4f}'
        best = outcome.record.best_epoch
        return f'{config.paradigm} training done (best epoch {best}{detail}); checkpoints in {out_dir}'
