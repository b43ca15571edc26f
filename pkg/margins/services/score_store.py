# margins/services/score_store.py
"""
margins Score Import/Export
Offline path for model scores computed elsewhere (id + attribute columns)
"""

from pathlib import Path
import logging

import numpy as np
import pandas as pd

from margins.schemas.dataset_schema import AttributeChannel, ChannelKind, score_channel_name
from margins.services.dataset import DatasetTable, FLOAT_FORMAT, _parse_decimal_column, _parse_ids
from margins.utils.validators import FormatError, SchemaError

logger = logging.getLogger(__name__)


def import_scores(table: DatasetTable, csv_path: Path, model_id: str) -> DatasetTable:
    """Join a score file on id; rows absent from the file get absent scores"""
    csv_path = Path(csv_path)
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"score file not found: {csv_path}", field=str(csv_path))
    if "id" not in frame.columns:
        raise FormatError(f"{csv_path.name} has no id column", field="id")

    attributes = [c for c in frame.columns if c != "id"]
    if not attributes:
        raise FormatError(f"{csv_path.name} has no score columns", field=str(csv_path))
    for attribute in attributes:
        if attribute not in table.toxicity_names:
            raise SchemaError(f"score column '{attribute}' is not a toxicity attribute", field=attribute)

    ids = _parse_ids(frame["id"], "id")
    unique, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise FormatError(f"duplicate id {int(unique[np.argmax(counts > 1)])} in {csv_path.name}", field="id")

    positions = np.searchsorted(table.ids, ids)
    positions = np.clip(positions, 0, max(len(table) - 1, 0))
    known = (table.ids[positions] == ids) if len(table) else np.zeros(ids.size, dtype=bool)
    if not np.all(known):
        logger.warning(f"{int((~known).sum())} ids in {csv_path.name} are not in the dataset and were ignored")

    channels, values = [], {}
    for attribute in attributes:
        parsed = _parse_decimal_column(frame[attribute], attribute, allow_missing=True)
        column = np.full(len(table), np.nan)
        column[positions[known]] = parsed[known]
        channel = AttributeChannel(
            name=score_channel_name(model_id, attribute),
            kind=ChannelKind.MODEL_SCORE,
            model_id=model_id,
            target_attribute=attribute,
        )
        channels.append(channel)
        values[channel.name] = column

    logger.info(f"Imported {model_id} scores for {int(known.sum())} of {len(table)} rows from {csv_path.name}")
    return table.with_scores(channels, values)


def export_scores(table: DatasetTable, model_id: str, path: Path) -> None:
    channels = [c for c in table.score_channels if c.model_id == model_id]
    if not channels:
        raise SchemaError(f"no score channels for model '{model_id}'", field=model_id)
    columns = {"id": table.ids}
    for channel in channels:
        columns[channel.target_attribute] = table.values[channel.name]
    pd.DataFrame(columns).to_csv(Path(path), index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
