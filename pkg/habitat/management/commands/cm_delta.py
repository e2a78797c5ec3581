from habitat.metrics import Normalization, delta_cm, read_confusion_matrix, write_matrix
from habitat.management.base import HabitatCommand
from habitat.plots import plot_delta_matrix


class Command(HabitatCommand):
    help = ('Signed difference a - b of two normalized confusion matrices; '
            'positive cells (blue) mark where a improves on b.')
    command_name = 'cm_delta'
    param_names = ('a', 'b', 'restrict_to', 'normalization')

    def add_command_arguments(self, parser):
        parser.add_argument('--a', help='confusion_matrix.csv of the first run')
        parser.add_argument('--b', help='confusion_matrix.csv of the baseline run')
        parser.add_argument('--restrict-to', help='Comma-separated class codes to keep, e.g. the major habitats')
        parser.add_argument('--normalization', choices=[n.value for n in Normalization],
                            default=Normalization.PER_TRUE_CLASS.value)

    def run(self, params, seed, out_dir):
        self.require(params, 'a', 'b')
        normalization = params.get('normalization') or Normalization.PER_TRUE_CLASS
        cm_a = read_confusion_matrix(params['a'], normalization)
        cm_b = read_confusion_matrix(params['b'], normalization)
        restrict = [c.strip() for c in (params.get('restrict_to') or '').split(',') if c.strip()] or None
        delta = delta_cm(cm_a, cm_b, restrict)
        write_matrix(delta.values, delta.class_order, out_dir / 'delta.csv')
        plot_delta_matrix(delta, out_dir / 'delta.png')
        return f'{len(delta.class_order)}-class delta matrix written to {out_dir}'
