"""Training configuration, named presets and persisted run configurations."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .encoders import EncoderSpec
from .exceptions import ConfigError
from .transforms import AugmentationConfig

logger = logging.getLogger(__name__)

RUN_CONFIG_FORMAT_VERSION = '1'
RUN_CONFIG_FILENAME = 'run_config.json'


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    paradigm: Literal['supervised', 'supcon'] = 'supervised'
    learning_rate: float = Field(5e-6, gt=0)
    weight_decay: float = Field(0.05, ge=0)
    batch_size: int = Field(16, ge=2)
    epochs: int = Field(50, ge=0)
    temperature: Optional[float] = Field(0.1, gt=0)
    optimizer: Literal['adamw'] = 'adamw'
    augmentation: AugmentationConfig = AugmentationConfig()
    encoder: EncoderSpec = EncoderSpec(input_size=384, patch_size=16, embed_dim=64)
    projection_hidden_dim: Optional[int] = Field(None, gt=0)
    projection_dim: int = Field(128, gt=0)
    # linear-probe stage; None reuses the pretraining values
    probe_learning_rate: Optional[float] = Field(None, gt=0)
    probe_epochs: Optional[int] = Field(None, ge=0)
    seed: int = 0

    @model_validator(mode='after')
    def _cross_field(self):
        problems = cross_field_problems(self.model_dump(mode='json'))
        if problems:
            raise ValueError('; '.join(problems))
        return self

    @property
    def effective_probe_learning_rate(self) -> float:
        return self.probe_learning_rate or self.learning_rate

    @property
    def effective_probe_epochs(self) -> int:
        return self.epochs if self.probe_epochs is None else self.probe_epochs


def cross_field_problems(params: Dict[str, Any]) -> List[str]:
    problems = []
    if params.get('paradigm') == 'supcon':
        tau = params.get('temperature')
        if tau is None or (isinstance(tau, (int, float)) and tau <= 0):
            problems.append('supcon training needs a positive temperature')
    aug = params.get('augmentation') or {}
    resize, crop = aug.get('resize_to'), aug.get('crop_size')
    if isinstance(resize, int) and isinstance(crop, int) and crop > resize:
        problems.append(f'crop size {crop} exceeds resize_to {resize}')
    enc = params.get('encoder') or {}
    size = enc.get('input_size')
    if isinstance(size, int) and isinstance(crop, int) and size != crop:
        problems.append(f'encoder input_size {size} differs from crop size {crop}')
    return problems


PRESETS: Dict[str, Dict[str, Any]] = {
    'survey': {
        'learning_rate': 5e-6,
        'weight_decay': 0.05,
        'batch_size': 16,
        'epochs': 50,
        'temperature': 0.1,
        'augmentation': {'resize_to': 384, 'crop_size': 384, 'max_rotation_degrees': 15.0},
        'encoder': {'kind': 'reference_tiny', 'input_size': 384, 'patch_size': 16, 'embed_dim': 64},
    },
    'toy': {
        'learning_rate': 1e-3,
        'weight_decay': 0.05,
        'batch_size': 16,
        'epochs': 30,
        'temperature': 0.1,
        'augmentation': {'resize_to': 72, 'crop_size': 64, 'max_rotation_degrees': 10.0},
        'encoder': {'kind': 'reference_tiny', 'input_size': 64, 'patch_size': 8, 'embed_dim': 32},
    },
}


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        elif value is not None:
            merged[key] = value
    return merged


def preset_params(name: str, **overrides) -> Dict[str, Any]:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})") from None
    return _merge(base, overrides)


def preset(name: str, **overrides) -> TrainConfig:
    try:
        return TrainConfig.model_validate(preset_params(name, **overrides))
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def format_validation_error(exc: ValidationError) -> str:
    return '; '.join(_describe(err) for err in exc.errors())


def _describe(err: Dict[str, Any]) -> str:
    loc = '.'.join(str(p) for p in err.get('loc', ()))
    msg = err.get('msg', 'invalid')
    return f'{loc}: {msg}' if loc else msg


class RunConfig(BaseModel):
    """Everything needed to replay one command invocation."""

    command: str
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    output_dir: str = '.'
    format_version: str = RUN_CONFIG_FORMAT_VERSION


def validate_config(config: RunConfig) -> List[str]:
    """All diagnostics for a run configuration; an empty list means ok."""
    diagnostics = []
    if config.format_version != RUN_CONFIG_FORMAT_VERSION:
        diagnostics.append(f'unsupported run config format version {config.format_version!r}')
    params = config.params
    if config.command == 'train':
        train = params.get('train_config', params)
        try:
            TrainConfig.model_validate(train)
        except ValidationError as exc:
            for err in exc.errors():
                # cross-field failures are re-derived below one by one
                if err.get('type') != 'value_error' or err.get('loc'):
                    diagnostics.append(_describe(err))
        diagnostics.extend(cross_field_problems(train))
    elif config.command == 'split':
        from .dataset import SplitFractions

        try:
            SplitFractions.model_validate(params.get('fractions', {}))
        except ValidationError as exc:
            diagnostics.extend(_describe(err) for err in exc.errors())
        if int(params.get('min_test_count', 0)) < 0:
            diagnostics.append('min_test_count must be >= 0')
    elif config.command == 'toydata':
        from .toydata import toy_dataset_problems

        diagnostics.extend(toy_dataset_problems(params.get('classes'), params.get('per_class'),
                                                params.get('image_size')))
    elif config.command == 'expert_subset':
        fraction = params.get('fraction')
        if not isinstance(fraction, (int, float)) or not 0 < fraction <= 1:
            diagnostics.append(f'fraction must be in (0, 1], got {fraction!r}')
    elif config.command == 'gradcam':
        alpha = params.get('alpha', 0.5)
        if not isinstance(alpha, (int, float)) or not 0 <= alpha <= 1:
            diagnostics.append(f'alpha must be within [0, 1], got {alpha!r}')
    # keep first occurrence of each message
    return list(dict.fromkeys(diagnostics))


def save_run_config(config: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / RUN_CONFIG_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config.model_dump(mode='json'), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if path.is_dir():
        path = path / RUN_CONFIG_FILENAME
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return RunConfig.model_validate(json.load(f))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'cannot load run config {path}: {exc}') from None


def habitat_setting(name: str, default=None):
    """Value from ``settings.HABITAT``; ``default`` when Django is not configured."""
    from django.conf import settings
    from django.core.exceptions import ImproperlyConfigured

    try:
        return settings.HABITAT.get(name, default)
    except (ImproperlyConfigured, AttributeError):
        return default
