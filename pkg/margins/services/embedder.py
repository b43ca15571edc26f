# margins/services/embedder.py
"""
margins Text Embedding Service
Deterministic TF-IDF + sparse random projection embedder and the EMBD file format
"""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import re
import struct

import numpy as np
from scipy import sparse

from margins.services.dataset import DatasetTable
from margins.utils.validators import ConfigError, FormatError, MarginsError

logger = logging.getLogger(__name__)

EMBD_MAGIC = b"EMBD"
EMBD_HEADER = struct.Struct("<4sIII")
ROW_BLOCK = 1024

_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


def tokenize(text: str) -> List[str]:
    """Lowercase and split on any non-alphanumeric character"""
    return [token for token in _SPLIT.split(text.lower()) if token]


class Vocabulary:
    """Terms sorted lexicographically; index assignment is independent of corpus order"""

    def __init__(self, terms: Dict[str, Tuple[int, int]], n_docs: int, min_df: int):
        self.terms = terms
        self.n_docs = n_docs
        self.min_df = min_df

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def build(cls, documents: Sequence[Sequence[str]], min_df: int) -> "Vocabulary":
        document_frequency: Counter = Counter()
        for tokens in documents:
            document_frequency.update(set(tokens))
        kept = sorted(term for term, df in document_frequency.items() if df >= min_df)
        terms = {term: (index, document_frequency[term]) for index, term in enumerate(kept)}
        return cls(terms, n_docs=len(documents), min_df=min_df)

    def idf(self) -> np.ndarray:
        weights = np.empty(len(self.terms), dtype=np.float64)
        for index, df in self.terms.values():
            weights[index] = math.log(self.n_docs / (1 + df)) + 1.0
        return weights


class EmbeddingMatrix:
    """Row-aligned text vectors; builtin rows are L2-normalized"""

    def __init__(self, data: np.ndarray, source: str, seed: Optional[int] = None):
        data = np.asarray(data)
        if data.ndim != 2:
            raise FormatError(f"embedding data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FormatError("embedding data contains non-finite entries")
        if source not in ("builtin", "external"):
            raise ConfigError(f"unknown embedding source '{source}'", field="source")
        self.data = data
        self.source = source
        self.seed = seed if source == "builtin" else None

    @property
    def n_rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def tfidf_matrix(documents: Sequence[Sequence[str]], vocabulary: Vocabulary) -> sparse.csr_matrix:
    """Raw-count tf times ln(n/(1+df)) + 1, one row per document, sorted column indices"""
    idf = vocabulary.idf()
    indptr = [0]
    indices: List[int] = []
    data: List[float] = []
    for tokens in documents:
        counts = Counter(token for token in tokens if token in vocabulary.terms)
        row = sorted((vocabulary.terms[term][0], count) for term, count in counts.items())
        indices.extend(index for index, _ in row)
        data.extend(count * idf[index] for index, count in row)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(documents), len(vocabulary)),
    )


def projection_matrix(n_terms: int, dim: int, seed: int) -> np.ndarray:
    """Entries in {-1, 0, +1} with probabilities {1/6, 2/3, 1/6}, scaled by sqrt(3/dim)"""
    rng = np.random.default_rng(seed)
    draws = rng.random((n_terms, dim))
    signs = np.zeros((n_terms, dim), dtype=np.float64)
    signs[draws < 1.0 / 6.0] = -1.0
    signs[draws >= 5.0 / 6.0] = 1.0
    return signs * math.sqrt(3.0 / dim)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    out = matrix.copy()
    nonzero = norms > 0
    out[nonzero] /= norms[nonzero, None]
    return out


def embed_texts(texts: Sequence[str], dim: int = 64, seed: int = 0, min_df: int = 5, threads: int = 1) -> np.ndarray:
    if dim < 2:
        raise ConfigError(f"embedding dim must be at least 2, got {dim}", field="dim")
    if min_df < 1:
        raise ConfigError(f"min_df must be at least 1, got {min_df}", field="min_df")

    documents = [tokenize(text) for text in texts]
    vocabulary = Vocabulary.build(documents, min_df)
    weights = tfidf_matrix(documents, vocabulary)
    projection = projection_matrix(len(vocabulary), dim, seed)
    logger.info(f"Embedding {len(documents)} texts: vocabulary={len(vocabulary)} terms, dim={dim}, seed={seed}")

    out = np.zeros((len(documents), dim), dtype=np.float64)
    blocks = [(start, min(start + ROW_BLOCK, len(documents))) for start in range(0, len(documents), ROW_BLOCK)]

    def project(block: Tuple[int, int]) -> None:
        start, stop = block
        out[start:stop] = _normalize_rows(np.asarray(weights[start:stop] @ projection))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(project, blocks))
    else:
        for block in blocks:
            project(block)
    return out


def embed_corpus(table: DatasetTable, dim: int = 64, seed: int = 0, min_df: int = 5, threads: int = 1) -> EmbeddingMatrix:
    """Embed every comment text of the table, rows in id order"""
    return EmbeddingMatrix(embed_texts(table.texts, dim, seed, min_df, threads), source="builtin", seed=seed)


def save_embeddings(matrix: EmbeddingMatrix, path: Path) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4")
    try:
        with open(path, "wb") as handle:
            handle.write(EMBD_HEADER.pack(EMBD_MAGIC, matrix.n_rows, matrix.dim, 0))
            handle.write(payload.tobytes(order="C"))
    except OSError as e:
        raise MarginsError(f"cannot write embeddings to {path}: {e}", field=str(path), code="IO_ERROR")


def load_embeddings(
    path: Path, expected_rows: int, source: str = "external", seed: Optional[int] = None
) -> EmbeddingMatrix:
    """Read an EMBD file; source and seed come from the manifest entry that wrote it"""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read embeddings from {path}: {e}", field=str(path))

    if len(blob) < EMBD_HEADER.size:
        raise FormatError(f"{path.name}: truncated header", field=str(path))
    magic, rows, cols, _reserved = EMBD_HEADER.unpack_from(blob, 0)
    if magic != EMBD_MAGIC:
        raise FormatError(f"{path.name}: bad magic {magic!r}", field=str(path))
    expected_bytes = EMBD_HEADER.size + rows * cols * 4
    if len(blob) != expected_bytes:
        raise FormatError(
            f"{path.name}: payload is {len(blob) - EMBD_HEADER.size} bytes, header implies {rows * cols * 4}",
            field=str(path),
        )
    if rows != expected_rows:
        raise FormatError(f"{path.name}: {rows} rows, dataset has {expected_rows}", field=str(path))

    data = np.frombuffer(blob, dtype="<f4", offset=EMBD_HEADER.size).reshape(rows, cols).astype(np.float32)
    return EmbeddingMatrix(data, source=source, seed=seed)
