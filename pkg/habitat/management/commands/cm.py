from habitat.metrics import Normalization, confusion_matrix, write_confusion_matrix, write_matrix
from habitat.management.base import HabitatCommand
from habitat.management.commands.eval import add_prediction_arguments, load_or_predict
from habitat.plots import plot_confusion_matrix
from habitat.taxonomy import aggregate_to_l2, l2_order


class Command(HabitatCommand):
    help = 'Confusion matrix (counts and normalized CSV) with a heatmap.'
    command_name = 'cm'
    param_names = ('predictions', 'checkpoint', 'manifest', 'split', 'subset', 'level', 'normalization')

    def add_command_arguments(self, parser):
        add_prediction_arguments(parser)
        parser.add_argument('--level', choices=['l3', 'l2'], default='l3')
        parser.add_argument('--normalization', choices=[n.value for n in Normalization],
                            default=Normalization.PER_TRUE_CLASS.value)

    def run(self, params, seed, out_dir):
        taxonomy = self.taxonomy()
        records = load_or_predict(self, params, out_dir)
        order = taxonomy.l3_order
        if params.get('level') == 'l2':
            records, order = aggregate_to_l2(records, taxonomy), l2_order(taxonomy)
        cm = confusion_matrix(records, params.get('normalization') or Normalization.PER_TRUE_CLASS, order)
        write_confusion_matrix(cm, out_dir / 'confusion_matrix.csv')
        write_matrix(cm.view(), cm.class_order, out_dir / 'confusion_matrix_normalized.csv')
        plot_confusion_matrix(cm, out_dir / 'confusion_matrix.png')
        return f'{len(order)}x{len(order)} confusion matrix over {len(records)} records written to {out_dir}'
