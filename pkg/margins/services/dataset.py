# margins/services/dataset.py
"""
margins Dataset Service
Columnar comment table, CSV ingestion and the preprocessing pipeline
(binarization, annotator disagreement, stratified sampling, dedup)
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from pathlib import Path
import json
import logging
import math

import numpy as np
import pandas as pd

from margins.schemas.dataset_schema import (
    AttributeChannel,
    ChannelKind,
    CommentRecord,
    SchemaConfig,
    score_channel_name,
)
from margins.utils.validators import (
    ConfigError,
    DomainError,
    FormatError,
    ParseError,
    SchemaError,
    check_unique,
    require_columns,
)

logger = logging.getLogger(__name__)

BINARY_THRESHOLD = 0.5
BIN_SUFFIX = "_bin"
DIS_SUFFIX = "_dis"
DIS_FLAG_SUFFIX = "_dis_bin"
FLOAT_FORMAT = "%.17g"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class DatasetTable:
    """
    Immutable columnar collection of comments.

    Decimal values live in ``values`` (NaN marks an absent model score);
    ``binary``, ``disagreement`` and ``disagreement_flags`` are filled by
    ``preprocess``.
    """

    def __init__(
        self,
        channels: Sequence[AttributeChannel],
        ids: Sequence[int],
        texts: Sequence[str],
        values: Dict[str, np.ndarray],
        binary: Optional[Dict[str, np.ndarray]] = None,
        disagreement: Optional[Dict[str, np.ndarray]] = None,
        disagreement_flags: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.channels: List[AttributeChannel] = list(channels)
        check_unique([c.name for c in self.channels], "channel")

        toxicity = {c.name for c in self.channels if c.kind == ChannelKind.TOXICITY_ANNOTATION}
        for channel in self.channels:
            if channel.kind == ChannelKind.MODEL_SCORE and channel.target_attribute not in toxicity:
                raise SchemaError(
                    f"score channel '{channel.name}' targets unknown attribute '{channel.target_attribute}'",
                    field=channel.name,
                )

        self.ids = _frozen(np.asarray(ids, dtype=np.int64))
        if self.ids.size > 1 and not np.all(np.diff(self.ids) > 0):
            raise SchemaError("row ids must be strictly increasing", field="id")
        self.texts: Tuple[str, ...] = tuple(texts)
        if len(self.texts) != self.ids.size:
            raise SchemaError("text column length does not match id column", field="text")

        self.values = {name: _frozen(np.asarray(v, dtype=np.float64)) for name, v in values.items()}
        for channel in self.channels:
            if channel.name not in self.values:
                raise SchemaError(f"no values for channel '{channel.name}'", field=channel.name)
            if self.values[channel.name].shape != (self.ids.size,):
                raise SchemaError(f"channel '{channel.name}' is not row-aligned", field=channel.name)

        self.binary = {n: _frozen(np.asarray(v, dtype=np.int8)) for n, v in (binary or {}).items()}
        self.disagreement = {n: _frozen(np.asarray(v, dtype=np.float64)) for n, v in (disagreement or {}).items()}
        self.disagreement_flags = {
            n: _frozen(np.asarray(v, dtype=np.int8)) for n, v in (disagreement_flags or {}).items()
        }

    # Schema accessors

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def n_rows(self) -> int:
        return len(self)

    def channel(self, name: str) -> AttributeChannel:
        for channel in self.channels:
            if channel.name == name:
                return channel
        raise SchemaError(f"unknown channel '{name}'", field=name)

    def _names(self, kind: ChannelKind) -> List[str]:
        return [c.name for c in self.channels if c.kind == kind]

    @property
    def toxicity_names(self) -> List[str]:
        return self._names(ChannelKind.TOXICITY_ANNOTATION)

    @property
    def demographic_names(self) -> List[str]:
        return self._names(ChannelKind.DEMOGRAPHIC_ANNOTATION)

    @property
    def annotation_names(self) -> List[str]:
        return self.toxicity_names + self.demographic_names

    @property
    def score_channels(self) -> List[AttributeChannel]:
        return [c for c in self.channels if c.kind == ChannelKind.MODEL_SCORE]

    @property
    def model_ids(self) -> List[str]:
        seen: List[str] = []
        for channel in self.score_channels:
            if channel.model_id not in seen:
                seen.append(channel.model_id)
        return seen

    def score_channel(self, model_id: str, target: str) -> Optional[AttributeChannel]:
        for channel in self.score_channels:
            if channel.model_id == model_id and channel.target_attribute == target:
                return channel
        return None

    @property
    def is_preprocessed(self) -> bool:
        return all(c.name in self.binary for c in self.channels) and all(
            name in self.disagreement for name in self.annotation_names
        )

    # Row views

    def record(self, index: int) -> CommentRecord:
        values = {}
        for channel in self.channels:
            value = float(self.values[channel.name][index])
            if not math.isnan(value):
                values[channel.name] = value
        binary = {
            name: int(column[index])
            for name, column in self.binary.items()
            if name in values
        }
        disagreement = {name: float(self.disagreement[name][index]) for name in self.annotation_names
                        if name in self.disagreement}
        return CommentRecord(
            id=int(self.ids[index]),
            text=self.texts[index],
            values=values,
            binary=binary,
            disagreement=disagreement,
        )

    def records(self) -> Iterable[CommentRecord]:
        for index in range(len(self)):
            yield self.record(index)

    # Matrix views used by the outlier detector

    def demographic_matrix(self) -> np.ndarray:
        names = self.demographic_names
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.values[name] for name in names])

    def disagreement_matrix(self, channels: Optional[Sequence[str]] = None) -> np.ndarray:
        names = list(channels) if channels is not None else self.annotation_names
        missing = [name for name in names if name not in self.disagreement]
        if missing:
            raise ConfigError(f"disagreement not computed for {missing}; preprocess the table first")
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.disagreement[name] for name in names])

    def binary_column(self, name: str) -> np.ndarray:
        if name not in self.binary:
            raise ConfigError(f"channel '{name}' has not been binarized; preprocess the table first", field=name)
        return self.binary[name]

    # Derived tables

    def take(self, indices: Sequence[int]) -> "DatasetTable":
        index = np.asarray(indices, dtype=np.int64)
        return DatasetTable(
            channels=self.channels,
            ids=self.ids[index],
            texts=[self.texts[i] for i in index],
            values={n: v[index] for n, v in self.values.items()},
            binary={n: v[index] for n, v in self.binary.items()},
            disagreement={n: v[index] for n, v in self.disagreement.items()},
            disagreement_flags={n: v[index] for n, v in self.disagreement_flags.items()},
        )

    def with_scores(self, channels: Sequence[AttributeChannel], values: Dict[str, np.ndarray]) -> "DatasetTable":
        """Return a copy with score channels added or replaced"""
        replaced = {c.name for c in channels}
        kept = [c for c in self.channels if c.name not in replaced]
        new_values = {n: v for n, v in self.values.items() if n not in replaced}
        new_binary = {n: v for n, v in self.binary.items() if n not in replaced}
        for channel in channels:
            column = np.asarray(values[channel.name], dtype=np.float64)
            new_values[channel.name] = column
            if self.binary:
                new_binary[channel.name] = binarize_array(column)
        return DatasetTable(
            channels=kept + list(channels),
            ids=self.ids,
            texts=self.texts,
            values=new_values,
            binary=new_binary,
            disagreement=self.disagreement,
            disagreement_flags=self.disagreement_flags,
        )


# Scalar operations

def binarize(value: float) -> int:
    """1 iff value >= 0.5; a 50/50 annotator split counts as positive"""
    return 1 if value >= BINARY_THRESHOLD else 0


def disagreement(value: float) -> Tuple[float, int]:
    """Bernoulli variance of an averaged binary annotation, plus a not-unanimous flag"""
    flag = 0 if value in (0.0, 1.0) else 1
    return value * (1.0 - value), flag


def binarize_array(values: np.ndarray) -> np.ndarray:
    """Vectorized binarize; absent (NaN) entries map to 0"""
    values = np.asarray(values, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return (values >= BINARY_THRESHOLD).astype(np.int8)


def disagreement_array(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    flags = ((values != 0.0) & (values != 1.0)).astype(np.int8)
    return values * (1.0 - values), flags


# Ingestion

def _parse_decimal_column(raw: pd.Series, column: str, allow_missing: bool) -> np.ndarray:
    """Parse cell by cell with float() so %.17g dumps read back bit-exactly; rows are 1-based"""
    parsed = np.empty(len(raw), dtype=np.float64)
    for position, cell in enumerate(raw.astype(str)):
        row = position + 1
        cell = cell.strip()
        if cell == "" or cell.lower() == "nan":
            if not allow_missing:
                raise ParseError(f"missing value in column '{column}' at row {row}", field=column, row=row)
            parsed[position] = np.nan
            continue
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"cannot parse '{cell}' in column '{column}' at row {row}", field=column, row=row)
        if not math.isfinite(value) or value < 0.0 or value > 1.0:
            raise DomainError(f"value {cell} in column '{column}' at row {row} is outside [0, 1]", field=column, row=row)
        parsed[position] = value
    return parsed


def _parse_ids(raw: pd.Series, column: str) -> np.ndarray:
    ids = np.empty(len(raw), dtype=np.int64)
    for position, cell in enumerate(raw.astype(str)):
        try:
            ids[position] = int(cell.strip())
        except ValueError:
            raise ParseError(f"cannot parse id '{cell}' at row {position + 1}", field=column, row=position + 1)
    return ids


def channels_from_config(config: SchemaConfig) -> List[Tuple[AttributeChannel, str]]:
    """Pairs of (channel, source column) in schema order: toxicity, demographics, scores"""
    pairs = [
        (AttributeChannel(name=c, kind=ChannelKind.TOXICITY_ANNOTATION), c) for c in config.toxicity_annotations
    ]
    pairs += [
        (AttributeChannel(name=c, kind=ChannelKind.DEMOGRAPHIC_ANNOTATION), c) for c in config.demographic_annotations
    ]
    pairs += [
        (
            AttributeChannel(
                name=score_channel_name(s.model, s.target),
                kind=ChannelKind.MODEL_SCORE,
                model_id=s.model,
                target_attribute=s.target,
            ),
            s.column,
        )
        for s in config.model_scores
    ]
    return pairs


def load_dataset(csv_path: Path, schema_config: SchemaConfig) -> DatasetTable:
    """
    Read a UTF-8 CSV into a DatasetTable. Binarization and disagreement are
    separate pipeline steps (see ``preprocess``).
    """
    csv_path = Path(csv_path)
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"dataset file not found: {csv_path}", field=str(csv_path))
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot read {csv_path}: {e}", field=str(csv_path))

    pairs = channels_from_config(schema_config)
    required = [schema_config.text_column] + [column for _, column in pairs]
    if schema_config.id_column:
        required.insert(0, schema_config.id_column)
    require_columns(list(frame.columns), required)

    if schema_config.id_column:
        ids = _parse_ids(frame[schema_config.id_column], schema_config.id_column)
    else:
        ids = np.arange(len(frame), dtype=np.int64)

    values = {}
    for channel, column in pairs:
        values[channel.name] = _parse_decimal_column(
            frame[column], column, allow_missing=channel.kind == ChannelKind.MODEL_SCORE
        )

    texts = frame[schema_config.text_column].tolist()

    unique_ids, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        duplicate = int(unique_ids[np.argmax(counts > 1)])
        raise ParseError(f"duplicate id {duplicate}", field=schema_config.id_column or "id")

    if ids.size > 1 and not np.all(np.diff(ids) > 0):
        logger.warning(f"ids in {csv_path.name} are not ascending; rows reordered by id")
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        texts = [texts[i] for i in order]
        values = {n: v[order] for n, v in values.items()}

    table = DatasetTable(channels=[c for c, _ in pairs], ids=ids, texts=texts, values=values)
    logger.info(
        f"Loaded {len(table)} rows from {csv_path.name}: {len(table.toxicity_names)} toxicity, "
        f"{len(table.demographic_names)} demographic, {len(table.score_channels)} score channels"
    )
    return table


# Pipeline steps

def preprocess(table: DatasetTable) -> DatasetTable:
    """Binarize every channel and compute disagreement for every annotation channel"""
    binary = {c.name: binarize_array(table.values[c.name]) for c in table.channels}
    dis, flags = {}, {}
    for name in table.annotation_names:
        dis[name], flags[name] = disagreement_array(table.values[name])
    return DatasetTable(
        channels=table.channels,
        ids=table.ids,
        texts=table.texts,
        values=table.values,
        binary=binary,
        disagreement=dis,
        disagreement_flags=flags,
    )


def stratified_sample(table: DatasetTable, fraction: float, seed: int) -> DatasetTable:
    """
    Per demographic channel, draw ceil(fraction * positives) rows without
    replacement; union across channels, dedup by id, ascending id order.
    """
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"sampling fraction must be in (0, 1], got {fraction}", field="fraction")
    if len(table) == 0:
        return table
    if not table.is_preprocessed:
        raise ConfigError("stratified sampling needs binarized demographics; preprocess the table first")

    rng = np.random.default_rng(seed)
    chosen = []
    for name in table.demographic_names:
        positives = np.flatnonzero(table.binary[name] == 1)
        count = min(positives.size, math.ceil(fraction * positives.size - 1e-9))
        if count == 0:
            continue
        chosen.append(rng.choice(positives, size=count, replace=False))

    if not chosen:
        return table.take([])
    rows = np.unique(np.concatenate(chosen))
    logger.info(f"Stratified sample kept {rows.size} of {len(table)} rows (fraction={fraction}, seed={seed})")
    return table.take(rows)


def dedup_texts(table: DatasetTable) -> DatasetTable:
    """Drop rows whose exact text already appeared at a lower id"""
    seen = set()
    keep = []
    for index, text in enumerate(table.texts):
        if text in seen:
            continue
        seen.add(text)
        keep.append(index)
    if len(keep) < len(table):
        logger.info(f"Removed {len(table) - len(keep)} duplicate-text rows")
    return table.take(keep)


def demographic_vector(record: CommentRecord, table: DatasetTable) -> np.ndarray:
    return np.array([record.values.get(name, 0.0) for name in table.demographic_names], dtype=np.float64)


def disagreement_vector(record: CommentRecord, channels: Optional[Sequence[str]] = None) -> np.ndarray:
    """Disagreement values, toxicity channels first then demographics, unless channels are given"""
    names = list(channels) if channels is not None else list(record.disagreement)
    return np.array([record.disagreement[name] for name in names], dtype=np.float64)


# Canonical dump

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".schema.json")


def save_dataset(table: DatasetTable, path: Path) -> None:
    """Write the canonical CSV plus a JSON schema sidecar"""
    path = Path(path)
    columns = {"id": table.ids, "text": list(table.texts)}
    for channel in table.channels:
        columns[channel.name] = table.values[channel.name]
        if channel.name in table.binary:
            columns[channel.name + BIN_SUFFIX] = table.binary[channel.name]
        if channel.name in table.disagreement:
            columns[channel.name + DIS_SUFFIX] = table.disagreement[channel.name]
            columns[channel.name + DIS_FLAG_SUFFIX] = table.disagreement_flags[channel.name]
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")

    sidecar = {
        "channels": [c.model_dump(mode="json") for c in table.channels],
        "preprocessed": table.is_preprocessed,
        "rows": len(table),
    }
    _sidecar(path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_canonical(path: Path) -> DatasetTable:
    """Inverse of save_dataset"""
    path = Path(path)
    sidecar_path = _sidecar(path)
    if not path.exists() or not sidecar_path.exists():
        raise FormatError(f"canonical dataset {path} or its schema sidecar is missing", field=str(path))
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    channels = [AttributeChannel(**c) for c in meta["channels"]]

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if len(frame) != meta["rows"]:
        raise FormatError(f"{path.name} has {len(frame)} rows, sidecar says {meta['rows']}", field=str(path))

    ids = _parse_ids(frame["id"], "id")
    values, binary, dis, flags = {}, {}, {}, {}
    for channel in channels:
        values[channel.name] = _parse_decimal_column(
            frame[channel.name], channel.name, allow_missing=channel.kind == ChannelKind.MODEL_SCORE
        )
        if channel.name + BIN_SUFFIX in frame:
            binary[channel.name] = frame[channel.name + BIN_SUFFIX].astype(np.int8).to_numpy()
        if channel.name + DIS_SUFFIX in frame:
            dis[channel.name] = _parse_decimal_column(
                frame[channel.name + DIS_SUFFIX], channel.name + DIS_SUFFIX, allow_missing=False
            )
            flags[channel.name] = frame[channel.name + DIS_FLAG_SUFFIX].astype(np.int8).to_numpy()

    return DatasetTable(
        channels=channels,
        ids=ids,
        texts=frame["text"].tolist(),
        values=values,
        binary=binary,
        disagreement=dis,
        disagreement_flags=flags,
    )
