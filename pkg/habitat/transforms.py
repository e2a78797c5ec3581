"""Image decoding and the training-time augmentation pipeline.

Order is fixed: resize to a square, random crop, random rotation. Rotation
fills borders by replicating edge pixels.
"""

import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from .exceptions import AugmentationError, ImageDecodeError

logger = logging.getLogger(__name__)


class AugmentationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    resize_to: int = Field(384, gt=0)
    crop_size: int = Field(384, gt=0)
    max_rotation_degrees: float = Field(15.0, ge=0, le=180)
    rng_seed: int = 0

    @model_validator(mode='after')
    def _crop_fits(self):
        if self.crop_size > self.resize_to:
            raise ValueError(f'crop size {self.crop_size} exceeds resize_to {self.resize_to}')
        return self

    @property
    def ops(self) -> List[Tuple[str, float]]:
        ops = [('random_crop', self.crop_size)]
        if self.max_rotation_degrees > 0:
            ops.append(('random_rotation', self.max_rotation_degrees))
        return ops


def load_image(path) -> np.ndarray:
    """Decode an image file to an 8-bit RGB array (H, W, 3)."""
    try:
        with Image.open(Path(path)) as img:
            return np.asarray(img.convert('RGB'), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f'cannot decode image {path}: {exc}') from None


def _check_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ImageDecodeError(f'expected an (H, W, 3) image, got shape {image.shape}')
    if image.dtype != np.uint8:
        raise ImageDecodeError(f'expected 8-bit pixels, got {image.dtype}')
    return image


def _resize(image: np.ndarray, size: int) -> np.ndarray:
    pil = Image.fromarray(image)
    # PIL returns an unchanged copy when the size already matches
    return np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.uint8)


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    rotated = ndimage.rotate(image.astype(np.float32), degrees, axes=(1, 0), reshape=False,
                             order=1, mode='nearest')
    return np.clip(np.rint(rotated), 0, 255).astype(np.uint8)


def augment(image, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Resize, random-crop and rotate ``image``; deterministic given ``rng``.

    Draw order from ``rng``: crop (top, left), then the rotation angle when
    rotation is enabled.
    """
    image = _check_image(image)
    if config.crop_size > config.resize_to:
        raise AugmentationError(f'crop {config.crop_size} larger than resized image {config.resize_to}')
    resized = _resize(image, config.resize_to)
    top, left = rng.integers(0, config.resize_to - config.crop_size + 1, size=2)
    out = resized[top:top + config.crop_size, left:left + config.crop_size]
    if config.max_rotation_degrees > 0:
        angle = float(rng.uniform(-config.max_rotation_degrees, config.max_rotation_degrees))
        out = _rotate(out, angle)
    return np.ascontiguousarray(out)


def eval_transform(image, config: AugmentationConfig) -> np.ndarray:
    """Resize then center crop; the deterministic counterpart of ``augment``."""
    image = _check_image(image)
    resized = _resize(image, config.resize_to)
    offset = (config.resize_to - config.crop_size) // 2
    return np.ascontiguousarray(resized[offset:offset + config.crop_size, offset:offset + config.crop_size])


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 scaled to [-1, 1]."""
    tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float()
    return tensor.div(127.5).sub(1.0)


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one (epoch, sample, view) position."""
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))
