"""Supervised and two-stage supervised-contrastive training.

``train_supervised`` optimizes encoder and classifier head jointly under
cross-entropy. ``pretrain_supcon`` trains encoder + projection head under the
supervised contrastive loss on two augmented views per sample, and
``linear_probe`` then fits a fresh classifier head on the frozen encoder.

Augmentation randomness comes from a generator per (epoch, sample, view), so
results do not depend on the number of loader workers.
"""

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, model_validator
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from .checkpoints import (
    KIND_CLASSIFIER, KIND_ENCODER, Checkpoint, encoder_from_checkpoint, load_checkpoint, parameter_digest,
    save_checkpoint,
)
from .config import TrainConfig, habitat_setting
from .dataset import DatasetManifest, SampleRecord, Split, SplitAssignment, read_manifest, read_split, resolve_image
from .encoders import (
    ClassifierHead, EncoderSpec, HabitatClassifier, HabitatEncoder, ProjectionHead, SupConNetwork, build_encoder,
    softmax,
)
from .exceptions import (
    DegenerateBatchError, EmptySplitError, EncoderContractError, FrozenEncoderViolation, ManifestError,
    NonFiniteLossError,
)
from .losses import cross_entropy_loss, supcon_loss
from .metrics import PredictionRecord
from .taxonomy import Taxonomy, configured_taxonomy
from .transforms import AugmentationConfig, augment, eval_transform, load_image, sample_rng, to_tensor

logger = logging.getLogger(__name__)

EPOCHS_FILENAME = 'epochs.jsonl'
RUN_RECORD_FILENAME = 'run_record.json'
ENCODER_CHECKPOINT = 'encoder.safetensors'
PRETRAIN_PREFIX = 'pretrain_'
BEST_CHECKPOINT = 'classifier_best.safetensors'
FINAL_CHECKPOINT = 'classifier_final.safetensors'

# augmentation streams; validation views never share draws with training
TRAIN_STREAM = 0
VAL_STREAM = 1


@dataclass
class TrainingData:
    """A manifest, its split, and where the manifest lives (image refs resolve from there)."""

    manifest: DatasetManifest
    split: SplitAssignment
    manifest_path: Path

    @classmethod
    def from_files(cls, manifest_path, split_path) -> 'TrainingData':
        manifest_path = Path(manifest_path)
        return cls(read_manifest(manifest_path), read_split(split_path), manifest_path)

    def records(self, split) -> List[SampleRecord]:
        wanted = set(self.split.ids(split))
        return [r for r in self.manifest.records if r.sample_id in wanted]

    def image_path(self, record: SampleRecord) -> Path:
        return resolve_image(self.manifest_path, record)


class HabitatImageDataset(Dataset):
    """Images of one split as tensors with class indices.

    ``augmented`` datasets draw ``views`` independent augmentations per sample;
    the others apply the deterministic evaluation transform.
    """

    def __init__(self, data: TrainingData, records: Sequence[SampleRecord], class_order: Sequence[str],
                 augmentation: AugmentationConfig, augmented: bool = False, views: int = 1,
                 seed: int = 0, stream: int = TRAIN_STREAM):
        self.data = data
        self.records = list(records)
        self.augmentation = augmentation
        self.augmented = augmented
        self.views = views
        self.seed = seed
        self.stream = stream
        self.epoch = 0
        self._index = {code: i for i, code in enumerate(class_order)}
        for r in self.records:
            if r.l3_label not in self._index:
                raise ManifestError(f"sample '{r.sample_id}' has label '{r.l3_label}' outside the class order")

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self):
        return len(self.records)

    def load(self, index: int) -> torch.Tensor:
        record = self.records[index]
        image = load_image(self.data.image_path(record))
        if not self.augmented:
            return to_tensor(eval_transform(image, self.augmentation))
        views = []
        for v in range(self.views):
            rng = sample_rng(self.seed, self.augmentation.rng_seed, self.stream, self.epoch, index, v)
            views.append(to_tensor(augment(image, self.augmentation, rng)))
        return views[0] if self.views == 1 else torch.stack(views)

    def __getitem__(self, index: int):
        return self.load(index), self._index[self.records[index].l3_label]


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_top1: Optional[float] = None
    val_loss: Optional[float] = None
    val_top1: Optional[float] = None
    seconds: float = 0.0


class TrainRunRecord(BaseModel):
    stage: str
    config: TrainConfig
    epochs: List[EpochRecord] = []
    checkpoints: Dict[str, str] = {}
    best_epoch: Optional[int] = None
    wall_clock_seconds: float = 0.0

    @model_validator(mode='after')
    def _contiguous(self):
        numbers = [e.epoch for e in self.epochs]
        if numbers != list(range(1, len(numbers) + 1)):
            raise ValueError(f'epochs must be numbered 1..n without gaps, got {numbers}')
        return self


def write_run_record(record: TrainRunRecord, out_dir, prefix: str = '') -> Path:
    """``<prefix>epochs.jsonl``, one line per epoch, and the full ``<prefix>run_record.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f'{prefix}{EPOCHS_FILENAME}', 'w', encoding='utf-8') as f:
        for epoch in record.epochs:
            f.write(json.dumps(epoch.model_dump(mode='json'), sort_keys=True) + '\n')
    path = out_dir / f'{prefix}{RUN_RECORD_FILENAME}'
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(record.model_dump(mode='json'), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_run_record(path) -> TrainRunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / RUN_RECORD_FILENAME
    with open(path, 'r', encoding='utf-8') as f:
        return TrainRunRecord.model_validate(json.load(f))


@dataclass
class TrainOutcome:
    model: torch.nn.Module
    record: TrainRunRecord
    best_state: Optional[Dict[str, torch.Tensor]] = None
    paths: Dict[str, Path] = field(default_factory=dict)
    # contrastive pretraining only; never checkpointed
    projection: Optional[ProjectionHead] = None


def _device() -> torch.device:
    return torch.device(habitat_setting('DEVICE', 'cpu'))


def _loader(dataset: Dataset, batch_size: int, shuffle: bool, seed: int) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=int(habitat_setting('NUM_WORKERS', 0) or 0))


def _require_records(data: TrainingData, split: Split) -> List[SampleRecord]:
    records = data.records(split)
    if not records:
        raise EmptySplitError(f'{split.value} split is empty')
    return records


def _check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f'loss became {loss.item()} at epoch {epoch}, step {step}; '
                                 f'try a lower learning rate')


def _class_order(taxonomy: Optional[Taxonomy]) -> Sequence[str]:
    return (taxonomy or configured_taxonomy()).l3_order


def _snapshot(module: torch.nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _log_epoch(stage: str, n_epochs: int, rec: EpochRecord) -> None:
    logger.info('%s epoch %d/%d train_loss=%.4f val_loss=%s val_top1=%s', stage, rec.epoch, n_epochs,
                rec.train_loss, 'n/a' if rec.val_loss is None else f'{rec.val_loss:.4f}',
                'n/a' if rec.val_top1 is None else f'{rec.val_top1:.4f}')


@torch.no_grad()
def _evaluate_classifier(forward: Callable, loader: DataLoader, device) -> tuple:
    total_loss, correct, n = 0.0, 0, 0
    for images, labels in loader:
        images, labels = images.to(device), labels.to(device)
        logits = forward(images)
        total_loss += cross_entropy_loss(logits, labels).item() * len(labels)
        correct += int((logits.argmax(dim=1) == labels).sum())
        n += len(labels)
    return total_loss / n, correct / n


def _fit_classifier(stage: str, model: HabitatClassifier, params, forward: Callable, set_mode: Callable,
                    config: TrainConfig, lr: float, n_epochs: int, data: TrainingData,
                    progress: bool) -> tuple:
    """Shared cross-entropy loop; returns (epoch records, best state, best epoch)."""
    device = _device()
    model.to(device)
    class_order = model.class_order
    train_set = HabitatImageDataset(data, _require_records(data, Split.TRAIN), class_order, config.augmentation,
                                    augmented=True, seed=config.seed)
    val_records = data.records(Split.VAL)
    val_loader = None
    if val_records:
        val_set = HabitatImageDataset(data, val_records, class_order, config.augmentation)
        val_loader = _loader(val_set, config.batch_size, shuffle=False, seed=config.seed)
    else:
        logger.warning('%s: validation split is empty; the final epoch doubles as best', stage)
    train_loader = _loader(train_set, config.batch_size, shuffle=True, seed=config.seed)
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=config.weight_decay)

    epochs, best_state, best_epoch, best_top1 = [], _snapshot(model), None, -1.0
    for epoch in range(1, n_epochs + 1):
        started = time.perf_counter()
        train_set.set_epoch(epoch)
        set_mode(True)
        total_loss, correct, n = 0.0, 0, 0
        for step, (images, labels) in enumerate(tqdm(train_loader, desc=f'{stage} {epoch}/{n_epochs}',
                                                     leave=False, disable=not progress)):
            images, labels = images.to(device), labels.to(device)
            logits = forward(images)
            loss = cross_entropy_loss(logits, labels)
            _check_finite(loss, epoch, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(labels)
            correct += int((logits.detach().argmax(dim=1) == labels).sum())
            n += len(labels)

        set_mode(False)
        val_loss = val_top1 = None
        if val_loader is not None:
            val_loss, val_top1 = _evaluate_classifier(forward, val_loader, device)
        rec = EpochRecord(epoch=epoch, train_loss=total_loss / n, train_top1=correct / n, val_loss=val_loss,
                          val_top1=val_top1, seconds=time.perf_counter() - started)
        epochs.append(rec)
        _log_epoch(stage, n_epochs, rec)
        if val_top1 is not None and val_top1 > best_top1:
            best_top1, best_epoch, best_state = val_top1, epoch, _snapshot(model)

    if best_epoch is None:
        best_state, best_epoch = _snapshot(model), (n_epochs or None)
    return epochs, best_state, best_epoch


def _save_classifier_pair(out_dir, model: HabitatClassifier, best_state, config: TrainConfig,
                          extra: dict) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    spec = model.encoder.spec
    final = save_checkpoint(out_dir / FINAL_CHECKPOINT, KIND_CLASSIFIER, spec, model, model.class_order,
                            config.model_dump(mode='json'), extra)
    best_model = copy.deepcopy(model)
    best_model.load_state_dict(best_state)
    best = save_checkpoint(out_dir / BEST_CHECKPOINT, KIND_CLASSIFIER, spec, best_model, model.class_order,
                           config.model_dump(mode='json'), extra)
    return {'best': best, 'final': final}


def train_supervised(config: TrainConfig, data: TrainingData, taxonomy: Optional[Taxonomy] = None,
                     encoder_spec: Optional[EncoderSpec] = None, out_dir=None,
                     progress: bool = True) -> TrainOutcome:
    """End-to-end cross-entropy training of encoder + classifier head.

    Keeps the best-validation-accuracy weights alongside the final ones; with
    ``out_dir`` both are written as checkpoints next to the run record.
    """
    if config.paradigm != 'supervised':
        raise ValueError(f"train_supervised needs paradigm 'supervised', got '{config.paradigm}'")
    started = time.perf_counter()
    torch.manual_seed(config.seed)
    spec = encoder_spec or config.encoder
    encoder = build_encoder(spec)
    model = HabitatClassifier(encoder, ClassifierHead(encoder.embed_dim, _class_order(taxonomy)), config.augmentation)

    def set_mode(training: bool):
        model.train(training)

    epochs, best_state, best_epoch = _fit_classifier(
        'supervised', model, model.parameters(), model, set_mode, config, config.learning_rate, config.epochs,
        data, progress,
    )
    model.eval()
    record = TrainRunRecord(stage='supervised', config=config, epochs=epochs, best_epoch=best_epoch)
    outcome = TrainOutcome(model, record, best_state)
    if out_dir is not None:
        outcome.paths = _save_classifier_pair(out_dir, model, best_state, config, {'stage': 'supervised'})
        record.checkpoints = {k: p.name for k, p in outcome.paths.items()}
    record.wall_clock_seconds = time.perf_counter() - started
    if out_dir is not None:
        write_run_record(record, out_dir)
    return outcome


def _contrastive_batch(images: torch.Tensor, labels: torch.Tensor):
    """(B, 2, 3, S, S) views -> (2B, 3, S, S) with labels repeated to match."""
    return torch.cat([images[:, 0], images[:, 1]]), labels.repeat(2)


def _supcon_step_loss(network: SupConNetwork, images, labels, temperature: float, resample: Callable):
    views, view_labels = _contrastive_batch(images, labels)
    try:
        return supcon_loss(network(views), view_labels, temperature)
    except DegenerateBatchError:
        logger.warning('degenerate contrastive batch; drawing one replacement batch')
        images, labels = resample()
        views, view_labels = _contrastive_batch(images, labels)
        return supcon_loss(network(views), view_labels, temperature)


def pretrain_supcon(config: TrainConfig, data: TrainingData, taxonomy: Optional[Taxonomy] = None,
                    encoder_spec: Optional[EncoderSpec] = None, out_dir=None,
                    progress: bool = True) -> TrainOutcome:
    """Contrastive pretraining; the returned model is the encoder alone.

    Every step sees 2 x batch_size views. The trained projection head is
    returned on the outcome but never written to disk.
    """
    if config.paradigm != 'supcon':
        raise ValueError(f"pretrain_supcon needs paradigm 'supcon', got '{config.paradigm}'")
    started = time.perf_counter()
    torch.manual_seed(config.seed)
    device = _device()
    spec = encoder_spec or config.encoder
    encoder = build_encoder(spec)
    projection = ProjectionHead(encoder.embed_dim, config.projection_hidden_dim, config.projection_dim)
    network = SupConNetwork(encoder, projection).to(device)
    class_order = _class_order(taxonomy)

    train_set = HabitatImageDataset(data, _require_records(data, Split.TRAIN), class_order, config.augmentation,
                                    augmented=True, views=2, seed=config.seed)
    train_loader = _loader(train_set, config.batch_size, shuffle=True, seed=config.seed)
    val_records = data.records(Split.VAL)
    val_loader = None
    if val_records:
        val_set = HabitatImageDataset(data, val_records, class_order, config.augmentation, augmented=True,
                                      views=2, seed=config.seed, stream=VAL_STREAM)
        val_loader = _loader(val_set, config.batch_size, shuffle=False, seed=config.seed)
    optimizer = torch.optim.AdamW(network.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    resample_rng = np.random.default_rng(config.seed)

    def resample():
        idx = resample_rng.choice(len(train_set), size=min(config.batch_size, len(train_set)), replace=False)
        items = [train_set[int(i)] for i in idx]
        return torch.stack([x for x, _ in items]).to(device), torch.tensor([y for _, y in items], device=device)

    epochs = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        train_set.set_epoch(epoch)
        network.train()
        total_loss, n = 0.0, 0
        for step, (images, labels) in enumerate(tqdm(train_loader, desc=f'supcon {epoch}/{config.epochs}',
                                                     leave=False, disable=not progress)):
            images, labels = images.to(device), labels.to(device)
            loss = _supcon_step_loss(network, images, labels, config.temperature, resample)
            _check_finite(loss, epoch, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(labels)
            n += len(labels)

        network.eval()
        val_loss = None
        if val_loader is not None:
            with torch.no_grad():
                losses, counts = [], []
                for images, labels in val_loader:
                    views, view_labels = _contrastive_batch(images.to(device), labels.to(device))
                    losses.append(supcon_loss(network(views), view_labels, config.temperature).item())
                    counts.append(len(labels))
                val_loss = float(np.average(losses, weights=counts))
        rec = EpochRecord(epoch=epoch, train_loss=total_loss / n, val_loss=val_loss,
                          seconds=time.perf_counter() - t0)
        epochs.append(rec)
        _log_epoch('supcon', config.epochs, rec)

    encoder.eval()
    projection.eval()
    record = TrainRunRecord(stage='supcon_pretrain', config=config, epochs=epochs)
    outcome = TrainOutcome(encoder, record, projection=projection)
    if out_dir is not None:
        path = save_checkpoint(Path(out_dir) / ENCODER_CHECKPOINT, KIND_ENCODER, spec, encoder, (),
                               config.model_dump(mode='json'), {'stage': 'supcon_pretrain'})
        outcome.paths = {'encoder': path}
        record.checkpoints = {'encoder': path.name}
    record.wall_clock_seconds = time.perf_counter() - started
    if out_dir is not None:
        write_run_record(record, out_dir, PRETRAIN_PREFIX)
    return outcome


def _resolve_encoder(source) -> HabitatEncoder:
    if isinstance(source, HabitatEncoder):
        return source
    if not isinstance(source, Checkpoint):
        source = load_checkpoint(source)
    return encoder_from_checkpoint(source)


def linear_probe(encoder_source, config: TrainConfig, data: TrainingData, taxonomy: Optional[Taxonomy] = None,
                 head: Optional[ClassifierHead] = None, out_dir=None, progress: bool = True) -> TrainOutcome:
    """Fit a fresh linear head on a frozen encoder.

    ``encoder_source`` is an encoder, a Checkpoint or a checkpoint path. The
    encoder's parameter digest is compared before and after; any change raises
    FrozenEncoderViolation.
    """
    started = time.perf_counter()
    torch.manual_seed(config.seed)
    encoder = _resolve_encoder(encoder_source)
    head = head or ClassifierHead(encoder.embed_dim, _class_order(taxonomy))
    if head.linear.in_features != encoder.embed_dim:
        raise EncoderContractError(f'classifier head expects dimension {head.linear.in_features}, '
                                   f'encoder produces {encoder.embed_dim}')
    for p in encoder.parameters():
        p.requires_grad_(False)
    encoder.eval()
    digest = parameter_digest(encoder)
    model = HabitatClassifier(encoder, head, config.augmentation)

    def forward(images):
        with torch.no_grad():
            embeddings = encoder(images)
        return head(embeddings)

    def set_mode(training: bool):
        head.train(training)

    epochs, best_state, best_epoch = _fit_classifier(
        'probe', model, head.parameters(), forward, set_mode, config, config.effective_probe_learning_rate,
        config.effective_probe_epochs, data, progress,
    )
    model.eval()
    if parameter_digest(encoder) != digest:
        raise FrozenEncoderViolation('encoder parameters changed during the linear probe')

    record = TrainRunRecord(stage='linear_probe', config=config, epochs=epochs, best_epoch=best_epoch)
    outcome = TrainOutcome(model, record, best_state)
    if out_dir is not None:
        outcome.paths = _save_classifier_pair(out_dir, model, best_state, config,
                                              {'stage': 'linear_probe', 'encoder_digest': digest})
        record.checkpoints = {k: p.name for k, p in outcome.paths.items()}
    record.wall_clock_seconds = time.perf_counter() - started
    if out_dir is not None:
        write_run_record(record, out_dir)
    return outcome


@torch.no_grad()
def predict(model: HabitatClassifier, data: TrainingData, split='test',
            augmentation: Optional[AugmentationConfig] = None, batch_size: int = 32) -> List[PredictionRecord]:
    """Ranked predictions with softmax scores for every record of ``split``, in manifest order."""
    split = Split(split)
    records = _require_records(data, split)
    augmentation = augmentation or eval_augmentation(model)
    dataset = HabitatImageDataset(data, records, model.class_order, augmentation)
    device = _device()
    model.to(device).eval()
    out, offset = [], 0
    for images, _ in _loader(dataset, batch_size, shuffle=False, seed=0):
        probabilities = softmax(model(images.to(device)).cpu().double().numpy())
        for row in probabilities:
            record = records[offset]
            out.append(PredictionRecord.from_scores(record.sample_id, record.l3_label, row, model.class_order))
            offset += 1
    return out


def eval_augmentation(model: HabitatClassifier) -> AugmentationConfig:
    if model.augmentation is not None:
        return model.augmentation
    size = model.encoder.spec.input_size
    return AugmentationConfig(resize_to=size, crop_size=size, max_rotation_degrees=0.0)
