"""Static figures: confusion-matrix heatmaps, delta maps and training curves."""

import itertools
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import habitat_setting  # noqa: E402
from .metrics import ConfusionMatrix, DeltaMatrix, Normalization  # noqa: E402

SEQUENTIAL_CMAP = 'Blues'
# RdBu runs red (low) to blue (high): gains show blue, losses red
DIVERGING_CMAP = 'RdBu'


def _dpi() -> int:
    return int(habitat_setting('PLOT_DPI', 150))


def _figure_size(n: int):
    side = max(4.0, 0.45 * n + 2.0)
    return side + 1.0, side


def _annotate(ax, values: np.ndarray, fmt: str, threshold: float) -> None:
    if values.shape[0] > 20:
        return
    for i, j in itertools.product(range(values.shape[0]), range(values.shape[1])):
        ax.text(j, i, format(values[i, j], fmt), ha='center', va='center', fontsize=7,
                color='white' if abs(values[i, j]) > threshold else 'black')


def _axes(ax, labels, title: str) -> None:
    ticks = np.arange(len(labels))
    ax.set_xticks(ticks)
    ax.set_xticklabels(labels, rotation=60, ha='right', fontsize=8)
    ax.set_yticks(ticks)
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel('Predicted class')
    ax.set_ylabel('True class')
    ax.set_title(title)


def plot_confusion_matrix(cm: ConfusionMatrix, path, title: Optional[str] = None) -> Path:
    values = cm.view()
    normalized = cm.normalization is not Normalization.NONE
    fig, ax = plt.subplots(figsize=_figure_size(len(cm.class_order)))
    image = ax.imshow(values, interpolation='nearest', cmap=SEQUENTIAL_CMAP,
                      vmin=0.0, vmax=1.0 if normalized else max(values.max(), 1.0))
    fig.colorbar(image, ax=ax)
    _axes(ax, cm.class_order, title or 'Confusion matrix')
    _annotate(ax, values, '.2f' if normalized else '.0f', (1.0 if normalized else values.max()) / 2)
    fig.tight_layout()
    fig.savefig(path, dpi=_dpi())
    plt.close(fig)
    return Path(path)


def plot_delta_matrix(delta: DeltaMatrix, path, title: Optional[str] = None) -> Path:
    """Diverging heatmap symmetric about zero."""
    values = delta.values
    limit = float(np.abs(values).max()) or 1.0
    fig, ax = plt.subplots(figsize=_figure_size(len(delta.class_order)))
    image = ax.imshow(values, interpolation='nearest', cmap=DIVERGING_CMAP, vmin=-limit, vmax=limit)
    fig.colorbar(image, ax=ax)
    _axes(ax, delta.class_order, title or 'Confusion matrix difference')
    _annotate(ax, values, '+.2f', limit / 2)
    fig.tight_layout()
    fig.savefig(path, dpi=_dpi())
    plt.close(fig)
    return Path(path)


def plot_training_curves(record, path) -> Path:
    """Loss per epoch on the left, validation top-1 on the right when recorded."""
    epochs = [e.epoch for e in record.epochs]
    fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(10, 4))
    loss_ax.plot(epochs, [e.train_loss for e in record.epochs], label='train')
    val_loss = [e.val_loss for e in record.epochs]
    if any(v is not None for v in val_loss):
        loss_ax.plot(epochs, [np.nan if v is None else v for v in val_loss], label='val')
    loss_ax.set_xlabel('epoch')
    loss_ax.set_ylabel('loss')
    loss_ax.legend()
    val_top1 = [e.val_top1 for e in record.epochs]
    if any(v is not None for v in val_top1):
        acc_ax.plot(epochs, [np.nan if v is None else v for v in val_top1], label='val top-1')
        acc_ax.set_ylim(0, 1)
        acc_ax.legend()
    acc_ax.set_xlabel('epoch')
    acc_ax.set_ylabel('accuracy')
    fig.suptitle(record.stage.replace('_', ' '))
    fig.tight_layout()
    fig.savefig(path, dpi=_dpi())
    plt.close(fig)
    return Path(path)
