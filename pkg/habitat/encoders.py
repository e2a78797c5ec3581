"""Image encoders, classifier and projection heads.

``reference_tiny`` is a small self-contained vision transformer: patchify,
linear patch embedding, attention blocks with residual connections and layer
normalization, then mean pooling to an embedding of size D. Pretrained
backbones plug in through ``ExternalEncoderAdapter``.
"""

import enum
import importlib
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .attention import scaled_dot_attention
from .exceptions import DegenerateProjectionError, EncoderContractError, UninitializedEncoderError
from .transforms import AugmentationConfig

logger = logging.getLogger(__name__)


class EncoderKind(str, enum.Enum):
    REFERENCE_TINY = 'reference_tiny'
    EXTERNAL = 'external'


class EncoderSpec(BaseModel):
    model_config = ConfigDict(frozen=True, use_enum_values=False)

    kind: EncoderKind = EncoderKind.REFERENCE_TINY
    input_size: int = Field(64, gt=0)
    embed_dim: int = Field(32, gt=0)
    patch_size: int = Field(8, gt=0)
    depth: int = Field(2, ge=1)
    num_heads: int = Field(1, ge=1)
    # 'package.module:factory'; the factory takes the spec and returns a module
    external_ref: Optional[str] = None

    @model_validator(mode='after')
    def _consistent(self):
        if self.kind is EncoderKind.REFERENCE_TINY:
            if self.input_size % self.patch_size:
                raise ValueError(f'input_size {self.input_size} is not a multiple of patch_size {self.patch_size}')
            if self.embed_dim % self.num_heads:
                raise ValueError(f'embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}')
        elif not self.external_ref:
            raise ValueError('external encoders need external_ref')
        return self

    @property
    def grid_shape(self) -> Tuple[int, int]:
        side = self.input_size // self.patch_size
        return side, side


class AttentionBlock(nn.Module):
    """Pre-norm transformer block around ``scaled_dot_attention``."""

    def __init__(self, dim: int, num_heads: int = 1, mlp_ratio: int = 2):
        super().__init__()
        self.num_heads = num_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        h = self.num_heads
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q, k, v = (t.reshape(b, n, h, d // h).transpose(1, 2) for t in (q, k, v))
        attended = scaled_dot_attention(q, k, v).transpose(1, 2).reshape(b, n, d)
        x = x + self.proj(attended)
        return x + self.mlp(self.norm2(x))


class HabitatEncoder(nn.Module):
    """Maps (B, 3, S, S) images to (B, D) embeddings."""

    spec: EncoderSpec
    supports_gradients = True

    @property
    def embed_dim(self) -> int:
        return self.spec.embed_dim

    def _check_input(self, images: torch.Tensor) -> None:
        size = self.spec.input_size
        if images.dim() != 4 or images.shape[1] != 3 or images.shape[2:] != (size, size):
            raise EncoderContractError(f'expected (B, 3, {size}, {size}) images, got {tuple(images.shape)}')


class TinyHabitatEncoder(HabitatEncoder):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        d = spec.embed_dim
        self.patch_embed = nn.Conv2d(3, d, kernel_size=spec.patch_size, stride=spec.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, spec.grid_shape[0] * spec.grid_shape[1], d))
        self.blocks = nn.ModuleList([AttentionBlock(d, spec.num_heads) for _ in range(spec.depth)])
        self.norm = nn.LayerNorm(d)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.spec.grid_shape

    def default_layer_tag(self) -> str:
        return f'blocks.{len(self.blocks) - 1}'

    def forward_tokens(self, images: torch.Tensor) -> torch.Tensor:
        self._check_input(images)
        tokens = self.patch_embed(images).flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        return tokens

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.norm(self.forward_tokens(images)).mean(dim=1)


class ExternalEncoderAdapter(HabitatEncoder):
    """Wraps a pretrained backbone; only the embedding contract is enforced."""

    def __init__(self, spec: EncoderSpec, backbone: Optional[nn.Module] = None,
                 supports_gradients: bool = True, layer_tag: Optional[str] = None):
        super().__init__()
        self.spec = spec
        self.backbone = backbone
        self.supports_gradients = supports_gradients
        self._layer_tag = layer_tag

    def default_layer_tag(self) -> Optional[str]:
        return self._layer_tag

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if self.backbone is None:
            raise UninitializedEncoderError(f'external encoder {self.spec.external_ref} has no backbone loaded')
        self._check_input(images)
        out = self.backbone(images).flatten(1)
        if out.shape[-1] != self.spec.embed_dim:
            raise EncoderContractError(
                f'backbone {self.spec.external_ref} returned dimension {out.shape[-1]}, declared {self.spec.embed_dim}'
            )
        return out


def resolve_external(ref: str):
    module_name, _, attr = ref.partition(':')
    if not attr:
        raise EncoderContractError(f"external_ref must look like 'package.module:factory', got {ref!r}")
    try:
        return getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise EncoderContractError(f'cannot resolve external encoder {ref!r}: {exc}') from None


def build_encoder(spec: EncoderSpec) -> HabitatEncoder:
    if spec.kind is EncoderKind.REFERENCE_TINY:
        return TinyHabitatEncoder(spec)
    factory = resolve_external(spec.external_ref)
    backbone = factory(spec)
    if isinstance(backbone, HabitatEncoder):
        return backbone
    return ExternalEncoderAdapter(spec, backbone)


class ClassifierHead(nn.Module):
    def __init__(self, embed_dim: int, class_order: Sequence[str]):
        super().__init__()
        self.class_order = tuple(class_order)
        self.linear = nn.Linear(embed_dim, len(self.class_order))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.shape[-1] != self.linear.in_features:
            raise EncoderContractError(
                f'classifier expects dimension {self.linear.in_features}, got {embeddings.shape[-1]}'
            )
        return self.linear(embeddings)


class ProjectionHead(nn.Module):
    """Two-layer perceptron D -> h -> p with ReLU, output on the unit sphere."""

    def __init__(self, embed_dim: int, hidden_dim: Optional[int] = None, out_dim: int = 128):
        super().__init__()
        hidden_dim = hidden_dim or embed_dim
        self.fc1 = nn.Linear(embed_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def pre_normalization(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.shape[-1] != self.fc1.in_features:
            raise EncoderContractError(
                f'projection head expects dimension {self.fc1.in_features}, got {embeddings.shape[-1]}'
            )
        return self.fc2(F.relu(self.fc1(embeddings)))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        return normalize_projection(self.pre_normalization(embeddings))


def normalize_projection(vectors: torch.Tensor) -> torch.Tensor:
    norms = vectors.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise DegenerateProjectionError('projection produced an all-zero vector')
    return vectors / norms


class HabitatClassifier(nn.Module):
    """Encoder followed by a linear classifier over the L3 class order.

    ``augmentation`` holds the training-time image settings; evaluation reuses
    their resize and centre crop.
    """

    def __init__(self, encoder: HabitatEncoder, head: ClassifierHead,
                 augmentation: Optional[AugmentationConfig] = None):
        super().__init__()
        self.encoder = encoder
        self.head = head
        self.augmentation = augmentation

    @property
    def class_order(self) -> Tuple[str, ...]:
        return self.head.class_order

    @property
    def grid_shape(self):
        return getattr(self.encoder, 'grid_shape', None)

    @property
    def supports_gradients(self) -> bool:
        return self.encoder.supports_gradients

    def default_layer_tag(self) -> Optional[str]:
        tag = self.encoder.default_layer_tag()
        return f'encoder.{tag}' if tag else None

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(images))


class SupConNetwork(nn.Module):
    def __init__(self, encoder: HabitatEncoder, projection: ProjectionHead):
        super().__init__()
        self.encoder = encoder
        self.projection = projection

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.projection(self.encoder(images))


@dataclass(frozen=True)
class Embedding:
    sample_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class ClassScores:
    raw: np.ndarray
    probabilities: np.ndarray
    class_order: Tuple[str, ...]


def softmax(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


@torch.no_grad()
def encode(images: torch.Tensor, encoder: HabitatEncoder) -> torch.Tensor:
    """Inference-mode embeddings for one image (3, S, S) or a batch."""
    single = images.dim() == 3
    batch = images.unsqueeze(0) if single else images
    was_training = encoder.training
    encoder.eval()
    try:
        out = encoder(batch)
    finally:
        encoder.train(was_training)
    if not torch.isfinite(out).all():
        raise EncoderContractError('encoder produced non-finite embeddings')
    return out[0] if single else out


def classify(embedding, head: ClassifierHead) -> ClassScores:
    vector = embedding.vector if isinstance(embedding, Embedding) else embedding
    vector = torch.as_tensor(np.asarray(vector), dtype=head.linear.weight.dtype)
    with torch.no_grad():
        raw = head(vector).double().numpy()
    return ClassScores(raw=raw, probabilities=softmax(raw), class_order=head.class_order)


def project(embedding, head: ProjectionHead) -> torch.Tensor:
    vector = embedding.vector if isinstance(embedding, Embedding) else embedding
    vector = torch.as_tensor(np.asarray(vector), dtype=head.fc1.weight.dtype)
    with torch.no_grad():
        return head(vector)
