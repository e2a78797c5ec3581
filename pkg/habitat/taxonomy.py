"""Habitat class hierarchy (L2 groups and their L3 classes)."""

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .exceptions import TaxonomyError, UnknownClassError
from .metrics import PredictionRecord

logger = logging.getLogger(__name__)

DEFAULT_TAXONOMY_PATH = Path(__file__).resolve().parent / 'default_taxonomy.yaml'


class Level(str, enum.Enum):
    L2 = 'L2'
    L3 = 'L3'


@dataclass(frozen=True)
class HabitatClass:
    code: str
    name: str
    level: Level
    parent_code: Optional[str] = None
    note: str = ''


@dataclass(frozen=True)
class Taxonomy:
    """Immutable L2/L3 hierarchy; ``l3_order`` is the index space for vectors."""

    classes: Tuple[HabitatClass, ...]
    l3_order: Tuple[str, ...]
    _by_code: Mapping[str, HabitatClass] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, '_by_code', {c.code: c for c in self.classes})

    def __contains__(self, code):
        return code in self._by_code

    def get(self, code: str) -> HabitatClass:
        try:
            return self._by_code[code]
        except KeyError:
            raise UnknownClassError(f"unknown habitat code '{code}'") from None

    @property
    def l2_codes(self) -> Tuple[str, ...]:
        return l2_order(self)

    def index_of(self, l3_code: str) -> int:
        try:
            return self.l3_order.index(l3_code)
        except ValueError:
            raise UnknownClassError(f"'{l3_code}' is not an L3 class") from None

    def name_of(self, code: str) -> str:
        return self.get(code).name


def _validate(classes: Sequence[HabitatClass]) -> None:
    if not classes:
        raise TaxonomyError('taxonomy is empty')

    seen = set()
    for cls in classes:
        if cls.code in seen:
            raise TaxonomyError(f"duplicate habitat code '{cls.code}'")
        seen.add(cls.code)

    levels = {c.code: c.level for c in classes}
    for cls in classes:
        if cls.level is Level.L3:
            if not cls.parent_code:
                raise TaxonomyError(f"L3 class '{cls.code}' has no parent")
            if levels.get(cls.parent_code) is not Level.L2:
                raise TaxonomyError(
                    f"L3 class '{cls.code}' names unknown L2 parent '{cls.parent_code}'"
                )
        elif cls.parent_code:
            raise TaxonomyError(f"L2 class '{cls.code}' must not have a parent")

    if not any(c.level is Level.L3 for c in classes):
        raise TaxonomyError('taxonomy has no L3 classes')


def _parse_entry(entry: Mapping) -> HabitatClass:
    if not isinstance(entry, Mapping):
        raise TaxonomyError(f'taxonomy entry must be a mapping, got {entry!r}')
    try:
        code = str(entry['code']).strip()
        level = Level(str(entry['level']).strip().upper())
    except KeyError as exc:
        raise TaxonomyError(f'taxonomy entry missing field {exc.args[0]!r}: {dict(entry)}') from None
    except ValueError:
        raise TaxonomyError(f"bad level in taxonomy entry {dict(entry)}") from None
    parent = entry.get('parent')
    return HabitatClass(
        code=code,
        name=str(entry.get('name') or code.replace('_', ' ').title()),
        level=level,
        parent_code=str(parent).strip() if parent else None,
        note=str(entry.get('note') or ''),
    )


def build_taxonomy(entries: Iterable[Mapping]) -> Taxonomy:
    classes = [_parse_entry(e) for e in entries]
    _validate(classes)
    l3_order = tuple(c.code for c in classes if c.level is Level.L3)
    return Taxonomy(classes=tuple(classes), l3_order=l3_order)


def load_taxonomy(definition=None) -> Taxonomy:
    """Load and validate a taxonomy document; no argument gives the built-in default.

    ``definition`` may be a path to a YAML document, YAML text, or an already
    parsed list of records.
    """
    if definition is None:
        return default_taxonomy()
    if isinstance(definition, Path) or (isinstance(definition, str) and '\n' not in definition
                                         and Path(definition).is_file()):
        with open(definition, 'r', encoding='utf-8') as f:
            entries = yaml.safe_load(f)
    elif isinstance(definition, str):
        entries = yaml.safe_load(definition)
    else:
        entries = definition
    if not entries:
        raise TaxonomyError('taxonomy is empty')
    if isinstance(entries, Mapping):
        entries = entries.get('classes', [])
    return build_taxonomy(entries)


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    with open(DEFAULT_TAXONOMY_PATH, 'r', encoding='utf-8') as f:
        return build_taxonomy(yaml.safe_load(f))


def dump_taxonomy(taxonomy: Taxonomy, path) -> Path:
    path = Path(path)
    rows = []
    for cls in taxonomy.classes:
        row = {'code': cls.code, 'name': cls.name, 'level': cls.level.value}
        if cls.parent_code:
            row['parent'] = cls.parent_code
        if cls.note:
            row['note'] = cls.note
        rows.append(row)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(rows, f, sort_keys=False, allow_unicode=True)
    return path


def configured_taxonomy() -> Taxonomy:
    """Taxonomy named by settings.HABITAT['TAXONOMY_FILE'], else the default."""
    from django.conf import settings

    path = settings.HABITAT.get('TAXONOMY_FILE')
    return load_taxonomy(path) if path else default_taxonomy()


def parent_of(taxonomy: Taxonomy, l3_code: str) -> str:
    cls = taxonomy.get(l3_code)
    if cls.level is not Level.L3:
        raise TaxonomyError(f"'{l3_code}' is an L2 class and has no parent")
    return cls.parent_code


def children_of(taxonomy: Taxonomy, l2_code: str) -> Tuple[str, ...]:
    cls = taxonomy.get(l2_code)
    if cls.level is not Level.L2:
        raise TaxonomyError(f"'{l2_code}' is not an L2 class")
    return tuple(c for c in taxonomy.l3_order if taxonomy.get(c).parent_code == l2_code)


def l2_order(taxonomy: Taxonomy) -> Tuple[str, ...]:
    order = []
    for code in taxonomy.l3_order:
        parent = taxonomy.get(code).parent_code
        if parent not in order:
            order.append(parent)
    return tuple(order)


def aggregate_to_l2(predictions: Sequence[PredictionRecord], taxonomy: Taxonomy) -> List[PredictionRecord]:
    """Map L3 prediction records onto their L2 groups.

    With scores, an L2 score is the sum of its children's scores and the
    ranking is re-derived from the sums (ties by L2 order). Without scores the
    ranking keeps the first occurrence of each parent, so a correct L3 top-1
    always stays correct.
    """
    groups = l2_order(taxonomy)
    aggregated = []
    for record in predictions:
        true_parent = parent_of(taxonomy, record.true_class)
        if record.scores is not None:
            sums = defaultdict(float)
            for code, score in zip(record.ranked_classes, record.scores):
                sums[parent_of(taxonomy, code)] += float(score)
            present = [g for g in groups if g in sums]
            values = np.array([sums[g] for g in present], dtype=np.float64)
            ranking = np.argsort(-values, kind='stable')
            aggregated.append(replace(
                record,
                true_class=true_parent,
                ranked_classes=tuple(present[i] for i in ranking),
                scores=tuple(float(values[i]) for i in ranking),
            ))
        else:
            ranked = []
            for code in record.ranked_classes:
                parent = parent_of(taxonomy, code)
                if parent not in ranked:
                    ranked.append(parent)
            aggregated.append(replace(record, true_class=true_parent, ranked_classes=tuple(ranked)))
    return aggregated
