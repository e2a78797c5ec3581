"""Scaled dot-product attention: ``softmax(Q K^T / sqrt(d)) V``."""

import math
from dataclasses import dataclass
from typing import Optional, Union

import torch

from .exceptions import AttentionShapeError


@dataclass(frozen=True)
class AttentionInput:
    query: torch.Tensor
    key: torch.Tensor
    value: torch.Tensor
    d: Optional[int] = None

    @property
    def scale_dim(self) -> int:
        return self.key.shape[-1] if self.d is None else self.d


def _check_shapes(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, d: int) -> None:
    if q.dim() < 2 or k.dim() < 2 or v.dim() < 2:
        raise AttentionShapeError('Q, K and V must be at least 2-D (n x d)')
    if q.shape[-1] != k.shape[-1]:
        raise AttentionShapeError(f'Q and K column counts differ: {q.shape[-1]} vs {k.shape[-1]}')
    if k.shape[-2] != v.shape[-2]:
        raise AttentionShapeError(f'K and V row counts differ: {k.shape[-2]} vs {v.shape[-2]}')
    if k.shape[-2] < 1 or q.shape[-2] < 1:
        raise AttentionShapeError('attention needs at least one row')
    if d <= 0:
        raise AttentionShapeError(f'key dimension must be positive, got {d}')


def attention_weights(query: torch.Tensor, key: torch.Tensor, d: Optional[int] = None) -> torch.Tensor:
    """Row-stochastic weight matrix, softmax taken after subtracting the row max."""
    d = key.shape[-1] if d is None else d
    scores = query @ key.transpose(-2, -1) / math.sqrt(d)
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    weights = scores.exp()
    return weights / weights.sum(dim=-1, keepdim=True)


def scaled_dot_attention(query: Union[torch.Tensor, AttentionInput], key: torch.Tensor = None,
                         value: torch.Tensor = None, d: Optional[int] = None,
                         return_weights: bool = False):
    """Attention output for (..., n, d) inputs; leading dims are batch dims."""
    if isinstance(query, AttentionInput):
        query, key, value, d = query.query, query.key, query.value, query.scale_dim
    d = key.shape[-1] if d is None else d
    _check_shapes(query, key, value, d)
    weights = attention_weights(query, key, d)
    output = weights @ value
    if return_weights:
        return output, weights
    return output
