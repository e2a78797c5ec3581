from pathlib import Path

from habitat.embeddings import grouped_quality, read_embeddings, write_quality_reports
from habitat.exceptions import ConfigError
from habitat.management.base import HabitatCommand


class Command(HabitatCommand):
    help = ('Calinski-Harabasz and Davies-Bouldin indices of exported embeddings, overall and per L2 group. '
            'Several exports are reported side by side.')
    command_name = 'cluster_quality'
    param_names = ('embeddings', 'names')

    def add_command_arguments(self, parser):
        parser.add_argument('--embeddings', nargs='+', help='One or more embeddings.bin files')
        parser.add_argument('--names', nargs='+', help='Column name per embeddings file (default: parent folder)')

    def run(self, params, seed, out_dir):
        self.require(params, 'embeddings')
        paths = [Path(p) for p in params['embeddings']]
        names = params.get('names') or [p.parent.name or p.stem for p in paths]
        if len(names) != len(paths):
            raise ConfigError(f'{len(names)} name(s) for {len(paths)} embeddings file(s)')
        if len(set(names)) != len(names):
            raise ConfigError(f'names must be unique, got {names}; pass --names')

        taxonomy = self.taxonomy()
        reports = {}
        for name, path in zip(names, paths):
            embeddings = read_embeddings(path)
            embeddings.validate_labels(taxonomy)
            reports[name] = grouped_quality(embeddings, taxonomy)
        written = write_quality_reports(reports, out_dir)

        lines = []
        for name, rs in reports.items():
            overall = rs[0]
            lines.append(f'{name}: CH={overall.ch_index:.3f} DB={overall.db_index:.3f} '
                         f'({len(rs) - 1} L2 group(s))')
        lines.append(f"written to {written['json']}")
        return '\n'.join(lines)
