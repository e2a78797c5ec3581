from habitat.dataset import read_manifest
from habitat.expert import agreement_matrix, write_agreement
from habitat.management.base import HabitatCommand
from habitat.management.commands.expert_score import add_participant_arguments, load_participants


class Command(HabitatCommand):
    help = 'Pairwise MCC agreement of top-1 labels between experts and models on the expert subset.'
    command_name = 'agree'
    param_names = ('subset', 'annotations', 'predictions', 'model_ids')

    def add_command_arguments(self, parser):
        add_participant_arguments(parser)

    def run(self, params, seed, out_dir):
        self.require(params, 'subset')
        subset = read_manifest(params['subset'])
        matrix = agreement_matrix(load_participants(params, subset, self.taxonomy()))
        path = write_agreement(matrix, out_dir / 'agreement.csv')
        return f'{len(matrix.participant_ids)}x{len(matrix.participant_ids)} agreement matrix written to {path}'
