import json
from pathlib import Path

from habitat.dataset import read_manifest
from habitat.exceptions import ConfigError
from habitat.expert import (
    per_class_accuracy, per_participant_cm, predictions_to_participant, read_annotations, score_participant,
)
from habitat.metrics import read_predictions, write_confusion_matrix, write_report
from habitat.management.base import HabitatCommand
from habitat.plots import plot_confusion_matrix


def load_participants(params, subset, taxonomy):
    """Annotation sets, then model predictions restricted to the subset, in command-line order."""
    participants = [read_annotations(path, taxonomy) for path in params.get('annotations') or []]
    predictions = params.get('predictions') or []
    model_ids = params.get('model_ids') or [Path(p).parent.name or Path(p).stem for p in predictions]
    if len(model_ids) != len(predictions):
        raise ConfigError(f'{len(model_ids)} model id(s) for {len(predictions)} predictions file(s)')
    for model_id, path in zip(model_ids, predictions):
        records = [r for r in read_predictions(path) if r.sample_id in subset]
        participants.append(predictions_to_participant(records, model_id))
    ids = [p.annotator_id for p in participants]
    if len(set(ids)) != len(ids):
        raise ConfigError(f'participant ids must be unique, got {ids}; pass --model-ids')
    return participants


def add_participant_arguments(parser):
    parser.add_argument('--subset', help='expert_subset.csv written by expert_subset')
    parser.add_argument('--annotations', nargs='+', help='Annotation CSVs, one per expert')
    parser.add_argument('--predictions', nargs='+', help='Model predictions CSVs')
    parser.add_argument('--model-ids', nargs='+', help='Participant id per predictions file')


class Command(HabitatCommand):
    help = 'Score experts and models on the same expert subset.'
    command_name = 'expert_score'
    param_names = ('subset', 'annotations', 'predictions', 'model_ids')

    def add_command_arguments(self, parser):
        add_participant_arguments(parser)

    def run(self, params, seed, out_dir):
        self.require(params, 'subset')
        taxonomy = self.taxonomy()
        subset = read_manifest(params['subset'])
        participants = load_participants(params, subset, taxonomy)
        if not participants:
            raise ConfigError('pass --annotations and/or --predictions')

        scores = {}
        for participant in participants:
            pid = participant.annotator_id
            report = score_participant(participant, subset, taxonomy)
            accuracy = per_class_accuracy(participant, subset, taxonomy.l3_order)
            write_report(report, out_dir / f'metrics_{pid}.json', {'per_class_accuracy': accuracy})
            cm = per_participant_cm(participant, subset, taxonomy.l3_order)
            write_confusion_matrix(cm, out_dir / f'confusion_matrix_{pid}.csv')
            plot_confusion_matrix(cm, out_dir / f'confusion_matrix_{pid}.png', title=pid)
            scores[pid] = {'top1': report.top1, 'top3': report.top3, 'mcc': report.mcc,
                           'weighted_f1': report.weighted_f1, 'n_samples': report.n_samples}
        with open(out_dir / 'scores.json', 'w', encoding='utf-8') as f:
            json.dump(scores, f, indent=2, sort_keys=True)
            f.write('\n')
        return '\n'.join(f"{pid}: top1={s['top1']:.4f} mcc={s['mcc']:.4f}" for pid, s in scores.items())
