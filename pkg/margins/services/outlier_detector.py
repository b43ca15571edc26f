# margins/services/outlier_detector.py
"""
margins Outlier Detection Service
Exact brute-force k-nearest-neighbor search and Local Outlier Factor scoring
with exact-count contamination thresholding
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence
import json
import logging
import math

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from margins.config import settings
from margins.schemas.outlier_schema import OutlierConfig, OutlierSpace
from margins.services.dataset import DatasetTable
from margins.services.embedder import EmbeddingMatrix
from margins.utils.validators import AlignmentError, ConfigError, FormatError, check_contamination

logger = logging.getLogger(__name__)

LRD_EPSILON = 1e-10
MAX_DEFAULT_NEIGHBORS = 4000


class Neighborhood(NamedTuple):
    k_distance: float
    neighbors: np.ndarray  # indices, sorted by (distance, index); may exceed k under ties


def default_n_neighbors(n: int) -> int:
    """k = min(4000, max(10, ceil(0.2 n))), clamped to n - 1"""
    k = min(MAX_DEFAULT_NEIGHBORS, max(10, math.ceil(0.2 * n)))
    return max(1, min(k, n - 1))


class _BlockedDistances:
    """
    Exact Euclidean distances from fixed-size blocks of query rows to the full
    point set. Block boundaries never depend on the worker count, so serial and
    parallel runs see bit-identical rows.
    """

    def __init__(self, points: np.ndarray, block_size: Optional[int] = None, threads: int = 1):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.n = self.points.shape[0]
        self.block_size = block_size or settings.LOF_BLOCK_SIZE
        self.threads = max(1, threads)

    def blocks(self) -> List[slice]:
        return [slice(start, min(start + self.block_size, self.n)) for start in range(0, self.n, self.block_size)]

    def rows(self, block: slice) -> np.ndarray:
        distances = cdist(self.points[block], self.points, metric="euclidean")
        local = np.arange(block.stop - block.start)
        distances[local, local + block.start] = np.inf  # self excluded
        return distances

    def map(self, fn: Callable[[slice, np.ndarray], None]) -> None:
        def run(block: slice) -> None:
            fn(block, self.rows(block))

        blocks = self.blocks()
        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(run, blocks))
        else:
            for block in blocks:
                run(block)


def _validate_points(points: np.ndarray, k: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ConfigError(f"points must be a 2-D array, got shape {points.shape}")
    n = points.shape[0]
    if k < 1 or k >= n:
        raise ConfigError(f"n_neighbors must satisfy 1 <= k < n, got k={k}, n={n}", field="n_neighbors")
    if not np.all(np.isfinite(points)):
        raise ConfigError("points contain non-finite coordinates")
    return points


def _k_distances(engine: _BlockedDistances, k: int) -> np.ndarray:
    k_distance = np.empty(engine.n, dtype=np.float64)

    def fill(block: slice, distances: np.ndarray) -> None:
        k_distance[block] = np.partition(distances, k - 1, axis=1)[:, k - 1]

    engine.map(fill)
    return k_distance


def knn(points: np.ndarray, k: int, threads: int = 1, block_size: Optional[int] = None) -> List[Neighborhood]:
    """k-distance and tie-inclusive neighborhood of every point"""
    points = _validate_points(points, k)
    engine = _BlockedDistances(points, block_size, threads)
    k_distance = _k_distances(engine, k)
    out: List[Optional[Neighborhood]] = [None] * engine.n

    def collect(block: slice, distances: np.ndarray) -> None:
        for local, row in enumerate(distances):
            index = block.start + local
            members = np.flatnonzero(row <= k_distance[index])
            members = members[np.lexsort((members, row[members]))]
            out[index] = Neighborhood(float(k_distance[index]), members)

    engine.map(collect)
    return out


def lof_scores(points: np.ndarray, k: int, threads: int = 1, block_size: Optional[int] = None) -> np.ndarray:
    """
    Negated Local Outlier Factor of every point; more negative is more outlying.

    Neighborhoods are streamed block by block instead of stored, since under
    heavy duplication a neighborhood can hold most of the dataset.
    """
    points = _validate_points(points, k)
    engine = _BlockedDistances(points, block_size, threads)
    k_distance = _k_distances(engine, k)

    lrd = np.empty(engine.n, dtype=np.float64)
    sizes = np.empty(engine.n, dtype=np.float64)

    def density(block: slice, distances: np.ndarray) -> None:
        mask = distances <= k_distance[block, None]
        reach = np.where(mask, np.maximum(distances, k_distance[None, :]), 0.0)
        sizes[block] = mask.sum(axis=1)
        lrd[block] = sizes[block] / (reach.sum(axis=1) + LRD_EPSILON)

    engine.map(density)

    lof = np.empty(engine.n, dtype=np.float64)

    def factor(block: slice, distances: np.ndarray) -> None:
        mask = distances <= k_distance[block, None]
        neighbor_lrd = np.where(mask, lrd[None, :], 0.0).sum(axis=1)
        lof[block] = neighbor_lrd / (sizes[block] * lrd[block] + LRD_EPSILON)

    engine.map(factor)
    return -lof


class LofResult:
    """Scores, exact-count flags and the realized threshold for one space"""

    def __init__(
        self,
        ids: np.ndarray,
        scores: np.ndarray,
        flags: np.ndarray,
        threshold: float,
        contamination: float,
        config: Optional[OutlierConfig] = None,
        n_neighbors: Optional[int] = None,
    ):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.flags = np.asarray(flags, dtype=bool)
        self.threshold = float(threshold)
        self.contamination = float(contamination)
        self.config = config
        self.n_neighbors = n_neighbors

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())

    @property
    def space(self) -> Optional[str]:
        return self.config.space.value if self.config else None


def flag_lowest(scores: np.ndarray, ids: np.ndarray, m: int) -> np.ndarray:
    """Boolean mask of the m lowest scores, ties broken by ascending id"""
    order = np.lexsort((ids, scores))
    flags = np.zeros(scores.size, dtype=bool)
    flags[order[:m]] = True
    return flags


def flag_count(contamination: float, n: int) -> int:
    return int(math.floor(contamination * n + 1e-9))


def threshold_by_contamination(
    scores: np.ndarray,
    contamination: float,
    ids: Optional[Sequence[int]] = None,
    config: Optional[OutlierConfig] = None,
) -> LofResult:
    """Flag exactly floor(c * n) records with the lowest scores"""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ConfigError("scores contain non-finite values")
    check_contamination(contamination)
    ids = np.arange(scores.size, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    m = flag_count(contamination, scores.size)
    if m == 0:
        raise ConfigError(
            f"contamination {contamination} flags no records out of {scores.size}", field="contamination"
        )
    flags = flag_lowest(scores, ids, m)
    return LofResult(ids, scores, flags, float(scores[flags].max()), contamination, config)


class OutlierAssignment:
    """Per-space LOF results covering every record of a table"""

    def __init__(self, ids: np.ndarray, results: Mapping[str, LofResult]):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.results: Dict[str, LofResult] = dict(results)
        for space, result in self.results.items():
            if not np.array_equal(result.ids, self.ids):
                raise AlignmentError(f"{space} outlier flags are not aligned with the dataset", field=space)

    @property
    def spaces(self) -> List[str]:
        return list(self.results)

    def flags(self, space: str) -> np.ndarray:
        if space not in self.results:
            raise ConfigError(f"no outliers detected for space '{space}'", field=space)
        return self.results[space].flags


def feature_matrix(
    table: DatasetTable,
    space: OutlierSpace,
    embeddings: Optional[EmbeddingMatrix] = None,
    disagreement_channels: Optional[Sequence[str]] = None,
) -> np.ndarray:
    if space == OutlierSpace.TEXT:
        if embeddings is None:
            raise ConfigError("text outliers need embeddings; run embed first", field="embeddings")
        if embeddings.n_rows != len(table):
            raise AlignmentError(
                f"embeddings have {embeddings.n_rows} rows, dataset has {len(table)}", field="embeddings"
            )
        return np.asarray(embeddings.data, dtype=np.float64)
    if space == OutlierSpace.DEMOGRAPHIC:
        return table.demographic_matrix()
    return table.disagreement_matrix(disagreement_channels)


def run_space(
    table: DatasetTable,
    config: OutlierConfig,
    embeddings: Optional[EmbeddingMatrix] = None,
    disagreement_channels: Optional[Sequence[str]] = None,
    threads: int = 1,
    block_size: Optional[int] = None,
) -> LofResult:
    points = feature_matrix(table, config.space, embeddings, disagreement_channels)
    k = config.n_neighbors or default_n_neighbors(len(table))
    logger.info(f"LOF over {config.space.value} space: n={len(table)}, dims={points.shape[1]}, k={k}")
    scores = lof_scores(points, k, threads=threads, block_size=block_size)
    result = threshold_by_contamination(scores, config.contamination, table.ids, config)
    result.n_neighbors = k
    logger.info(
        f"{config.space.value} outliers: {result.n_flagged} flagged, threshold={result.threshold:.6f}"
    )
    return result


def detect_outliers(
    table: DatasetTable,
    embeddings: Optional[EmbeddingMatrix],
    configs: Mapping[OutlierSpace, OutlierConfig],
    disagreement_channels: Optional[Sequence[str]] = None,
    threads: int = 1,
    block_size: Optional[int] = None,
) -> OutlierAssignment:
    """Run LOF + thresholding for each configured space"""
    if embeddings is not None and embeddings.n_rows != len(table):
        raise AlignmentError(f"embeddings have {embeddings.n_rows} rows, dataset has {len(table)}", field="embeddings")
    results = {}
    for space in OutlierSpace:
        if space not in configs:
            continue
        results[space.value] = run_space(
            table, configs[space], embeddings, disagreement_channels, threads, block_size
        )
    return OutlierAssignment(table.ids, results)


# Persistence

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_lof_result(result: LofResult, path: Path) -> None:
    """CSV of id, space, score (17 significant digits), flag plus a JSON sidecar"""
    path = Path(path)
    frame = pd.DataFrame(
        {
            "id": result.ids,
            "space": result.space or "",
            "score": result.scores,
            "flag": result.flags.astype(np.int8),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    meta = {
        "threshold": result.threshold,
        "contamination": result.contamination,
        "n_neighbors": result.n_neighbors,
        "n_flagged": result.n_flagged,
        "config": result.config.model_dump(mode="json") if result.config else None,
    }
    _sidecar(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_lof_result(path: Path) -> LofResult:
    path = Path(path)
    if not path.exists() or not _sidecar(path).exists():
        raise FormatError(f"outlier file {path} or its sidecar is missing", field=str(path))
    meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    frame = pd.read_csv(path, dtype={"id": np.int64, "space": str, "score": str, "flag": np.int8})
    scores = np.array([float(cell) for cell in frame["score"]], dtype=np.float64)
    config = OutlierConfig(**meta["config"]) if meta.get("config") else None
    return LofResult(
        ids=frame["id"].to_numpy(),
        scores=scores,
        flags=frame["flag"].to_numpy().astype(bool),
        threshold=meta["threshold"],
        contamination=meta["contamination"],
        config=config,
        n_neighbors=meta.get("n_neighbors"),
    )
