from habitat.management.base import HabitatCommand
from habitat.toydata import Difficulty, generate_toy_dataset


class Command(HabitatCommand):
    help = 'Generate a procedurally textured toy image set and its manifest.'
    command_name = 'toydata'
    stochastic = True
    param_names = ('classes', 'per_class', 'image_size', 'difficulty')

    def add_command_arguments(self, parser):
        parser.add_argument('--classes', type=int, default=4)
        parser.add_argument('--per-class', type=int, default=50)
        parser.add_argument('--image-size', type=int, default=64)
        parser.add_argument('--difficulty', choices=[d.value for d in Difficulty], default='separable')

    def run(self, params, seed, out_dir):
        manifest = generate_toy_dataset(
            params['classes'], params['per_class'], params['image_size'], params['difficulty'], seed, out_dir,
            self.taxonomy(),
        )
        return f'Wrote {len(manifest)} images and manifest.csv to {out_dir}'
