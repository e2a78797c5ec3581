"""Checkpoint files.

A checkpoint is a safetensors file (little-endian float32 tensors) whose
string metadata carries the format version, the checkpoint kind, the encoder
spec, the class order and the training configuration.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from .encoders import ClassifierHead, EncoderSpec, HabitatClassifier, HabitatEncoder, build_encoder
from .exceptions import CheckpointError
from .transforms import AugmentationConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = '1'
KIND_ENCODER = 'encoder'
KIND_CLASSIFIER = 'classifier'
METADATA_KEY = 'habitat_checkpoint'


@dataclass
class Checkpoint:
    kind: str
    encoder_spec: EncoderSpec
    state_dict: Dict[str, torch.Tensor]
    class_order: Tuple[str, ...] = ()
    train_config: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def encoder_state(self) -> Dict[str, torch.Tensor]:
        prefix = 'encoder.'
        if self.kind == KIND_ENCODER:
            return dict(self.state_dict)
        return {k[len(prefix):]: v for k, v in self.state_dict.items() if k.startswith(prefix)}


def parameter_digest(state) -> str:
    """SHA-256 over tensors in key order; equal digests mean bitwise-equal parameters."""
    if isinstance(state, torch.nn.Module):
        state = state.state_dict()
    h = hashlib.sha256()
    for key in sorted(state):
        tensor = state[key].detach().to('cpu').contiguous()
        h.update(key.encode('utf-8'))
        h.update(str(tuple(tensor.shape)).encode('utf-8'))
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, kind: str, encoder_spec: EncoderSpec, module: torch.nn.Module,
                    class_order: Sequence[str] = (), train_config: Optional[dict] = None,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().to('cpu', torch.float32).contiguous() for k, v in module.state_dict().items()}
    header = {
        'format_version': FORMAT_VERSION,
        'kind': kind,
        'encoder_spec': encoder_spec.model_dump(mode='json'),
        'class_order': list(class_order),
        'train_config': train_config,
        'extra': extra or {},
    }
    # a single metadata entry keeps the file header byte-stable
    save_file(tensors, str(path), metadata={METADATA_KEY: json.dumps(header, sort_keys=True)})
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'checkpoint {path} does not exist')
    try:
        with safe_open(str(path), framework='pt') as f:
            metadata = f.metadata() or {}
        state = load_file(str(path))
        header = json.loads(metadata[METADATA_KEY])
    except KeyError:
        raise CheckpointError(f'{path}: not a habitat checkpoint (no {METADATA_KEY} metadata)') from None
    except (SafetensorError, OSError, ValueError) as exc:
        raise CheckpointError(f'cannot read checkpoint {path}: {exc}') from None

    version = header.get('format_version')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint format version {version!r}')
    try:
        return Checkpoint(
            kind=header['kind'],
            encoder_spec=EncoderSpec.model_validate(header['encoder_spec']),
            state_dict=state,
            class_order=tuple(header.get('class_order') or ()),
            train_config=header.get('train_config'),
            extra=header.get('extra') or {},
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f'{path}: malformed checkpoint metadata: {exc}') from None


def encoder_from_checkpoint(checkpoint: Checkpoint) -> HabitatEncoder:
    encoder = build_encoder(checkpoint.encoder_spec)
    missing, unexpected = encoder.load_state_dict(checkpoint.encoder_state(), strict=False)
    if missing or unexpected:
        raise CheckpointError(f'encoder parameters do not match spec (missing={missing}, unexpected={unexpected})')
    encoder.eval()
    return encoder


def classifier_from_checkpoint(checkpoint: Checkpoint) -> HabitatClassifier:
    if checkpoint.kind != KIND_CLASSIFIER:
        raise CheckpointError(f'expected a classifier checkpoint, got {checkpoint.kind!r}')
    encoder = build_encoder(checkpoint.encoder_spec)
    augmentation = None
    if checkpoint.train_config and checkpoint.train_config.get('augmentation'):
        augmentation = AugmentationConfig.model_validate(checkpoint.train_config['augmentation'])
    model = HabitatClassifier(encoder, ClassifierHead(checkpoint.encoder_spec.embed_dim, checkpoint.class_order),
                              augmentation)
    try:
        model.load_state_dict(checkpoint.state_dict)
    except RuntimeError as exc:
        raise CheckpointError(f'classifier parameters do not match: {exc}') from None
    model.eval()
    return model
