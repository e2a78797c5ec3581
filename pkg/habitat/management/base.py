"""Shared plumbing for the pipeline's management commands.

Each command declares its parameters once; they are collected into a
RunConfig, validated, saved as ``run_config.json`` in the output directory and
handed to ``run``. ``--config`` replays a saved RunConfig instead of reading
the other flags.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

from django.core.management.base import BaseCommand, CommandError

from habitat.config import RunConfig, habitat_setting, load_run_config, save_run_config, validate_config
from habitat.exceptions import ConfigError, HabitatError
from habitat.taxonomy import Taxonomy, configured_taxonomy

logger = logging.getLogger('habitat.commands')


class HabitatCommand(BaseCommand):
    command_name = ''
    # commands that draw random numbers must be given --seed
    stochastic = False
    # option dests copied into RunConfig.params
    param_names: tuple = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Replay a saved run_config.json (other flags are ignored)')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--seed', type=int, help='Random seed' + (' (required)' if self.stochastic else ''))
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def _run_config(self, options) -> RunConfig:
        if options.get('config'):
            config = load_run_config(options['config'])
            if config.command != self.command_name:
                raise CommandError(f"{options['config']} was saved by '{config.command}', not '{self.command_name}'")
            if options.get('out'):
                config = config.model_copy(update={'output_dir': str(options['out'])})
            return config
        out = options.get('out') or self.default_output_dir()
        params: Dict[str, Any] = {}
        for name in self.param_names:
            value = options.get(name)
            params[name] = str(value) if isinstance(value, Path) else value
        return RunConfig(command=self.command_name, params=params, seed=options.get('seed'),
                         output_dir=str(out))

    def default_output_dir(self) -> Path:
        root = habitat_setting('ARTIFACT_ROOT')
        if not root:
            raise CommandError('--out is required when HABITAT_ARTIFACT_ROOT is not set')
        return Path(root) / self.command_name

    def handle(self, *args, **options):
        self.verbosity = options.get('verbosity', 1)
        try:
            config = self._run_config(options)
        except HabitatError as exc:
            raise CommandError(str(exc)) from exc
        if self.stochastic and config.seed is None:
            raise CommandError('--seed is required for this command')
        problems = validate_config(config)
        if problems:
            raise CommandError('invalid configuration: ' + '; '.join(problems))

        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = save_run_config(config, out_dir)
        logger.debug('Saved run config to %s', path)
        try:
            summary = self.run(config.params, config.seed, out_dir)
        except HabitatError as exc:
            raise CommandError(str(exc)) from exc
        except (OSError, KeyError) as exc:
            # missing inputs and incomplete replayed configs
            raise CommandError(f'{type(exc).__name__}: {exc}') from exc
        if summary:
            self.stdout.write(self.style.SUCCESS(summary))

    def run(self, params: Dict[str, Any], seed: Optional[int], out_dir: Path) -> Optional[str]:
        raise NotImplementedError

    @property
    def progress(self) -> bool:
        return getattr(self, 'verbosity', 1) > 0

    def taxonomy(self) -> Taxonomy:
        return configured_taxonomy()

    def require(self, params: Dict[str, Any], *names: str) -> None:
        missing = [n for n in names if params.get(n) in (None, '', [])]
        if missing:
            raise ConfigError('missing required option(s): ' + ', '.join('--' + n.replace('_', '-') for n in missing))
