# margins/services/synthetic.py
"""
margins Synthetic Dataset Service
Seeded comment tables with a planted rare group whose model errors are inflated
"""

from pathlib import Path
from typing import List, Optional, Tuple
import logging

import numpy as np
import pandas as pd

from margins.schemas.dataset_schema import (
    AttributeChannel,
    ChannelKind,
    DEMOGRAPHIC_GROUPS,
    ModelScoreColumn,
    SchemaConfig,
    TOXICITY_ATTRIBUTES,
    score_channel_name,
)
from margins.schemas.synthetic_schema import PlantedSpec, SyntheticConfig
from margins.services.dataset import DatasetTable, FLOAT_FORMAT
from margins.utils.helpers import write_json
from margins.utils.validators import ConfigError

logger = logging.getLogger(__name__)

MIN_PLANTED_ROWS = 20

# Beta shape per toxicity type; truth is the draw rounded to tenths,
# standing in for the share of annotators who marked the comment
TOXICITY_SHAPES = {
    "toxicity": (0.8, 3.5),
    "severe_toxicity": (0.3, 6.0),
    "identity_attack": (0.5, 4.5),
    "insult": (0.7, 4.0),
    "obscene": (0.5, 5.0),
    "threat": (0.3, 6.0),
}

MEMBER_LEVELS = np.array([0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
STRAY_LEVELS = np.array([0.1, 0.2, 0.3, 0.4])
STRAY_RATE = 0.05
PLANTED_EXTRA_IDENTITIES = 2

IDENTITY_TERMS = {
    "black": "black",
    "white": "white",
    "asian": "asian",
    "latino": "latino",
    "other_race_or_ethnicity": "multiracial",
    "male": "men",
    "female": "women",
    "transgender": "transgender",
    "other_gender": "nonbinary",
    "heterosexual": "straight",
    "homosexual_gay_or_lesbian": "gay",
    "bisexual": "bisexual",
    "other_sexual_orientation": "asexual",
    "christian": "christian",
    "jewish": "jewish",
    "muslim": "muslim",
    "hindu": "hindu",
    "buddhist": "buddhist",
    "atheist": "atheist",
    "other_religion": "pagan",
    "physical_disability": "wheelchair",
    "intellectual_or_learning_disability": "dyslexic",
    "psychiatric_or_mental_illness": "depression",
    "other_disability": "neurodivergent",
}

FILLER = (
    "the people in this thread keep saying that nothing will change unless we vote "
    "again and read the article before posting another comment about policy news city "
    "council budget school taxes housing police park road election editor story"
).split()


def _identity_levels(rng: np.random.Generator, members: np.ndarray) -> np.ndarray:
    """Decimal annotations: positive levels for members, occasional stray low levels otherwise"""
    levels = np.zeros(members.shape)
    levels[members] = rng.choice(MEMBER_LEVELS, size=int(members.sum()))
    stray = ~members & (rng.random(members.shape) < STRAY_RATE)
    levels[stray] = rng.choice(STRAY_LEVELS, size=int(stray.sum()))
    return levels


def _compose_text(rng: np.random.Generator, identities: List[str]) -> str:
    words = list(rng.choice(FILLER, size=int(rng.integers(5, 10))))
    words += [IDENTITY_TERMS.get(name, name.replace("_", " ")) for name in identities]
    return " ".join(words[i] for i in rng.permutation(len(words)))


def generate_synthetic(
    n: int = 2000,
    n_groups: int = 24,
    planted: Optional[PlantedSpec] = None,
    seed: int = 0,
    model_id: str = "synthetic",
    noise_sigma: float = 0.1,
) -> DatasetTable:
    """
    Random demographic memberships, tenths-valued toxicity truth and model
    scores equal to truth plus Gaussian noise. On planted-group rows the
    noise sigma is multiplied by the inflation factor, and those rows mention
    extra identities so they also stand out in text and demographic space.
    """
    config = SyntheticConfig(
        n=n, n_groups=n_groups, planted=planted or PlantedSpec(), seed=seed,
        model_id=model_id, noise_sigma=noise_sigma,
    )
    planted = config.planted
    groups = DEMOGRAPHIC_GROUPS[: config.n_groups]
    target = planted.group or groups[-1]
    if target not in groups:
        raise ConfigError(f"planted group '{target}' is not among the first {n_groups} groups", field="planted.group")
    if planted.prevalence * n < MIN_PLANTED_ROWS:
        raise ConfigError(
            f"planted group would have {planted.prevalence * n:.1f} rows; at least {MIN_PLANTED_ROWS} are needed",
            field="planted.prevalence",
        )

    rng = np.random.default_rng(seed)
    n_planted = int(round(planted.prevalence * n))
    common = [g for g in groups if g != target]

    base_rates = rng.uniform(0.01, 0.08, size=len(common))
    members = rng.random((n, len(common))) < base_rates
    is_planted = np.zeros(n, dtype=bool)
    is_planted[rng.choice(n, size=n_planted, replace=False)] = True
    for row in np.flatnonzero(is_planted):
        members[row, rng.choice(len(common), size=PLANTED_EXTRA_IDENTITIES, replace=False)] = True

    values = {}
    common_levels = _identity_levels(rng, members)
    for position, name in enumerate(common):
        values[name] = common_levels[:, position]
    planted_levels = np.zeros(n)
    planted_levels[is_planted] = rng.choice(MEMBER_LEVELS, size=n_planted)
    values[target] = planted_levels

    sigma = np.where(is_planted, config.noise_sigma * planted.inflation, config.noise_sigma)
    score_values = {}
    for attribute in TOXICITY_ATTRIBUTES:
        a, b = TOXICITY_SHAPES[attribute]
        truth = np.round(rng.beta(a, b, size=n) * 10.0) / 10.0
        values[attribute] = truth
        score_values[score_channel_name(model_id, attribute)] = np.clip(
            truth + rng.normal(0.0, 1.0, size=n) * sigma, 0.0, 1.0
        )

    texts = []
    for row in range(n):
        identities = [name for name in groups if values[name][row] >= 0.5]
        texts.append(_compose_text(rng, identities))

    channels = [AttributeChannel(name=t, kind=ChannelKind.TOXICITY_ANNOTATION) for t in TOXICITY_ATTRIBUTES]
    channels += [AttributeChannel(name=g, kind=ChannelKind.DEMOGRAPHIC_ANNOTATION) for g in groups]
    channels += [
        AttributeChannel(
            name=score_channel_name(model_id, t), kind=ChannelKind.MODEL_SCORE, model_id=model_id, target_attribute=t
        )
        for t in TOXICITY_ATTRIBUTES
    ]
    values.update(score_values)

    logger.info(
        f"Generated {n} synthetic rows, {len(groups)} groups, planted '{target}' "
        f"({n_planted} rows, inflation {planted.inflation})"
    )
    return DatasetTable(channels=channels, ids=np.arange(n), texts=texts, values=values)


def planted_rows(table: DatasetTable, group: str) -> np.ndarray:
    """Boolean mask of rows annotated into the planted group"""
    return table.values[group] >= 0.5


def synthetic_schema_config(table: DatasetTable) -> SchemaConfig:
    return SchemaConfig(
        id_column="id",
        text_column="comment_text",
        toxicity_annotations=table.toxicity_names,
        demographic_annotations=table.demographic_names,
        model_scores=[
            ModelScoreColumn(column=f"{c.model_id}_{c.target_attribute}", model=c.model_id, target=c.target_attribute)
            for c in table.score_channels
        ],
    )


def write_synthetic(table: DatasetTable, csv_path: Path, schema_path: Path) -> Tuple[Path, Path]:
    """Write the raw CSV in ingest layout plus the schema document that reads it back"""
    config = synthetic_schema_config(table)
    columns = {"id": table.ids, "comment_text": list(table.texts)}
    for name in table.annotation_names:
        columns[name] = table.values[name]
    for score in config.model_scores:
        columns[score.column] = table.values[score_channel_name(score.model, score.target)]

    csv_path, schema_path = Path(csv_path), Path(schema_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    write_json(schema_path, config.model_dump(mode="json"))
    logger.info(f"Wrote synthetic dataset to {csv_path} and schema to {schema_path}")
    return csv_path, schema_path
