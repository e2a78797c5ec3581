"""GradCAM saliency maps and their overlays.

The feature map is captured with a forward hook and differentiated with
``torch.autograd.grad``, so concurrent calls never share ``.grad`` buffers.
Transformer token outputs are reshaped to the encoder's patch grid; a leading
extra token is dropped when the count is one more than the grid.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps
from PIL import Image

from .exceptions import GradientUnavailableError, SaliencyError, UnknownClassError
from .transforms import to_tensor

logger = logging.getLogger(__name__)

HEAT_CMAP = 'jet'


@dataclass(frozen=True)
class SaliencyMap:
    grid: np.ndarray
    upsampled: np.ndarray
    target_class: str
    layer_tag: str
    sample_id: Optional[str] = None


def _resolve_layer(model: torch.nn.Module, layer_tag: Optional[str]) -> Tuple[str, torch.nn.Module]:
    if layer_tag is None:
        default = getattr(model, 'default_layer_tag', None)
        layer_tag = default() if callable(default) else None
        if not layer_tag:
            raise SaliencyError('model has no default GradCAM layer; pass layer_tag')
    try:
        return layer_tag, model.get_submodule(layer_tag)
    except AttributeError:
        raise SaliencyError(f"layer '{layer_tag}' not found in model") from None


def _target_index(model, target_class, class_order: Optional[Sequence[str]]) -> Tuple[int, str]:
    order = tuple(class_order or getattr(model, 'class_order', ()) or ())
    if isinstance(target_class, (int, np.integer)):
        index = int(target_class)
        return index, order[index] if index < len(order) else str(index)
    if target_class not in order:
        raise UnknownClassError(f"target class '{target_class}' is not in the model's class order")
    return order.index(target_class), target_class


def _as_batch(image) -> torch.Tensor:
    if isinstance(image, np.ndarray) and image.dtype == np.uint8:
        image = to_tensor(image)
    tensor = torch.as_tensor(image, dtype=torch.float32)
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 4 or tensor.shape[0] != 1:
        raise SaliencyError(f'expected one image, got shape {tuple(tensor.shape)}')
    return tensor


def _spatial(features: torch.Tensor, grid_shape) -> torch.Tensor:
    """Feature map as (1, C, h, w)."""
    if features.dim() == 4:
        return features
    if features.dim() == 3 and grid_shape:
        h, w = grid_shape
        tokens = features
        if tokens.shape[1] == h * w + 1:
            tokens = tokens[:, 1:]
        if tokens.shape[1] == h * w:
            return tokens.transpose(1, 2).reshape(tokens.shape[0], tokens.shape[2], h, w)
    raise SaliencyError(f'layer output of shape {tuple(features.shape)} has no spatial structure')


def gradcam(model: torch.nn.Module, image, target_class, layer_tag: Optional[str] = None,
            class_order: Optional[Sequence[str]] = None, sample_id: Optional[str] = None) -> SaliencyMap:
    """Gradient-weighted class activation map of ``target_class`` at ``layer_tag``.

    Channel weights are the spatial mean of the target logit's gradient; the
    map is the rectified weighted channel sum, divided by its max when nonzero
    and bilinearly upsampled to the input size.
    """
    if not getattr(model, 'supports_gradients', True):
        raise GradientUnavailableError('this backbone is inference-only; GradCAM needs gradients')
    layer_tag, layer = _resolve_layer(model, layer_tag)
    index, code = _target_index(model, target_class, class_order)
    batch = _as_batch(image).requires_grad_(True)

    captured = []
    handle = layer.register_forward_hook(lambda module, inputs, output: captured.append(output))
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            logits = model(batch)
            if not captured:
                raise SaliencyError(f"layer '{layer_tag}' did not run during the forward pass")
            features = captured[-1]
            if isinstance(features, (tuple, list)):
                features = features[0]
            if not features.requires_grad:
                raise GradientUnavailableError(f"layer '{layer_tag}' output is detached from the graph")
            if not 0 <= index < logits.shape[-1]:
                raise UnknownClassError(f'target index {index} outside {logits.shape[-1]} classes')
            (grad,) = torch.autograd.grad(logits[0, index], features, allow_unused=True)
    finally:
        handle.remove()
        model.train(was_training)

    if grad is None:
        grad = torch.zeros_like(features)
    grid_shape = getattr(model, 'grid_shape', None)
    activations = _spatial(features.detach(), grid_shape)
    gradients = _spatial(grad.detach(), grid_shape)
    weights = gradients.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * activations).sum(dim=1, keepdim=True))
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    upsampled = F.interpolate(cam, size=batch.shape[-2:], mode='bilinear', align_corners=False)
    return SaliencyMap(
        grid=cam[0, 0].double().numpy(),
        upsampled=upsampled[0, 0].clamp(0.0, 1.0).double().numpy(),
        target_class=code,
        layer_tag=layer_tag,
        sample_id=sample_id,
    )


def overlay(saliency: SaliencyMap, image: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the jet-coloured map over ``image``; per-pixel opacity is ``alpha * map``."""
    image = np.asarray(image)
    heat = saliency.upsampled
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[:2] != heat.shape:
        raise SaliencyError(f'map of shape {heat.shape} does not match image of shape {image.shape}')
    colours = colormaps[HEAT_CMAP](heat)[..., :3] * 255.0
    weight = (alpha * heat)[..., None]
    blended = (1.0 - weight) * image.astype(np.float64) + weight * colours
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def _slug(text: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', text)


def overlay_stem(saliency: SaliencyMap) -> str:
    return f'gradcam_{_slug(saliency.sample_id or "image")}_{_slug(saliency.target_class)}'


def write_grid(saliency: SaliencyMap, path) -> Path:
    np.savetxt(path, saliency.grid, delimiter=',', fmt='%.9g')
    return Path(path)


def read_grid(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=','))


def save_overlays(items: Iterable[Tuple[SaliencyMap, np.ndarray]], out_dir, alpha: float = 0.5) -> List[Path]:
    """Write ``gradcam_<sample_id>_<class>.png`` and the raw grid as ``.csv`` per map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for saliency, image in items:
        stem = overlay_stem(saliency)
        png = out_dir / f'{stem}.png'
        Image.fromarray(overlay(saliency, image, alpha)).save(png, format='PNG')
        write_grid(saliency, out_dir / f'{stem}.csv')
        written.append(png)
    logger.info('Wrote %d GradCAM overlay(s) to %s', len(written), out_dir)
    return written
