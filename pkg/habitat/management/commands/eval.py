import json

from habitat.checkpoints import classifier_from_checkpoint, load_checkpoint
from habitat.metrics import compare_reports, evaluate, read_predictions, read_report, write_predictions, write_report
from habitat.management.base import HabitatCommand
from habitat.taxonomy import aggregate_to_l2, l2_order
from habitat.training import TrainingData, predict


def load_or_predict(command, params, out_dir):
    """Prediction records from --predictions, or from running a checkpoint over a split."""
    if params.get('predictions'):
        return read_predictions(params['predictions'])
    command.require(params, 'checkpoint', 'manifest', 'split')
    model = classifier_from_checkpoint(load_checkpoint(params['checkpoint']))
    data = TrainingData.from_files(params['manifest'], params['split'])
    records = predict(model, data, params.get('subset') or 'test')
    write_predictions(records, out_dir / 'predictions.csv')
    return records


def add_prediction_arguments(parser):
    parser.add_argument('--predictions', help='Predictions CSV (sample_id,true_class,ranked_classes,scores)')
    parser.add_argument('--checkpoint', help='Classifier checkpoint to run instead of --predictions')
    parser.add_argument('--manifest')
    parser.add_argument('--split')
    parser.add_argument('--subset', choices=['train', 'val', 'test'], default='test')


class Command(HabitatCommand):
    help = 'Top-1, Top-3, MCC, weighted F1 and per-class precision/recall/F1 of a set of predictions.'
    command_name = 'eval'
    param_names = ('predictions', 'checkpoint', 'manifest', 'split', 'subset', 'level', 'baseline')

    def add_command_arguments(self, parser):
        add_prediction_arguments(parser)
        parser.add_argument('--level', choices=['l3', 'l2'], default='l3')
        parser.add_argument('--baseline', help='metrics.json of a baseline run to report differences against')

    def run(self, params, seed, out_dir):
        taxonomy = self.taxonomy()
        records = load_or_predict(self, params, out_dir)
        if params.get('level') == 'l2':
            report = evaluate(aggregate_to_l2(records, taxonomy), l2_order(taxonomy), level='L2')
        else:
            report = evaluate(records, taxonomy.l3_order)
        write_report(report, out_dir / 'metrics.json')

        if params.get('baseline'):
            delta = compare_reports(report, read_report(params['baseline']))
            with open(out_dir / 'comparison.json', 'w', encoding='utf-8') as f:
                json.dump(delta, f, indent=2, sort_keys=True)
                f.write('\n')

        top3 = 'n/a' if report.top3 is None else f'{report.top3:.4f}'
        return (f'{report.level} n={report.n_samples} top1={report.top1:.4f} top3={top3} '
                f'mcc={report.mcc:.4f} weighted_f1={report.weighted_f1:.4f}')
