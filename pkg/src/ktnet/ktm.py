#!/usr/bin/env python3
"""
Knowledge transfer from 2D parsers to the 3D surface classifier.

A relation graph between the 25 surface labels and the 33 two-dimensional
node labels (2 instance, 14 part, 17 keypoint) mixes lexical similarity with
compositional co-occurrence. Each parser's classifier rows are associated to
surfaces through the graph, and a small transformer turns the associated
blocks into the surface classifier weights.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import body
from . import tensor as T
from .errors import ConfigError, GraphError, ShapeError
from .nn import Module
from .tensor import Tensor
from .utils import resolve_data_path

LOC_LABELS = ("person", "background")
TASKS = ("loc", "part", "kpt")
KTM_MODES = ("off", "v1-kpt-only", "v2-full", "crkg_a", "crkg_s_only")
FREQ_EPS = 1e-3

EMBEDDINGS_FILE = "embeddings.txt"
COUNTS_FILE = "relation_counts.csv"
MASK_FILE = "composition_mask.csv"


@dataclass(frozen=True)
class NodeVocab:
    """Label sets of the relation graph; labels split on ``_`` into tokens."""

    loc: Tuple[str, ...]
    part: Tuple[str, ...]
    kpt: Tuple[str, ...]
    surface: Tuple[str, ...]

    @classmethod
    def load(cls) -> "NodeVocab":
        return cls(LOC_LABELS, body.PARTS, body.KEYPOINTS, body.SURFACES)

    @property
    def nodes(self) -> Tuple[str, ...]:
        return self.loc + self.part + self.kpt

    def task_labels(self, task: str) -> Tuple[str, ...]:
        return {"loc": self.loc, "part": self.part, "kpt": self.kpt}[task]

    def block(self, task: str) -> slice:
        """Column range of ``task`` inside the node axis."""
        start = 0
        for name in TASKS:
            size = len(self.task_labels(name))
            if name == task:
                return slice(start, start + size)
            start += size
        raise GraphError(f"unknown parser task: {task}")

    @staticmethod
    def tokens(label: str) -> List[str]:
        return label.split("_")


def load_embeddings(path: Path) -> Dict[str, np.ndarray]:
    """
    Read ``token v1 ... vD`` lines; ``#`` starts a comment line.

    Raises:
        GraphError: on malformed lines or inconsistent dimensions
    """
    table: Dict[str, np.ndarray] = {}
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            token, *values = line.split()
            try:
                vector = np.array([float(v) for v in values])
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-numeric embedding value") from None
            if dim is None:
                dim = vector.size
            if vector.size != dim or dim == 0:
                raise GraphError(
                    f"{path}:{lineno}: token {token!r} has {vector.size} values, expected {dim}"
                )
            table[token] = vector
    return table


def label_embedding(label: str, embeddings: Dict[str, np.ndarray]) -> np.ndarray:
    """Mean embedding of the label's tokens."""
    vectors = []
    for token in NodeVocab.tokens(label):
        if token not in embeddings:
            raise GraphError(f"embedding table has no token {token!r} (label {label!r})")
        vectors.append(embeddings[token])
    return np.mean(vectors, axis=0)


def semantic_similarity(vocab: NodeVocab, embeddings: Dict[str, np.ndarray]) -> np.ndarray:
    """Cosine similarity between every surface label and every node label."""
    surf = np.array([label_embedding(s, embeddings) for s in vocab.surface])
    nodes = np.array([label_embedding(n, embeddings) for n in vocab.nodes])
    sn = np.linalg.norm(surf, axis=1, keepdims=True)
    nn_ = np.linalg.norm(nodes, axis=1, keepdims=True)
    if np.any(sn == 0) or np.any(nn_ == 0):
        raise GraphError("cosine similarity of a zero vector")
    return np.clip((surf / sn) @ (nodes / nn_).T, -1.0, 1.0)


def load_pair_table(path: Path, vocab: NodeVocab, column: str) -> np.ndarray:
    """
    Read a ``surface_label,node_label,<value>`` CSV into a surface x node matrix.

    Every pair must appear exactly once.
    """
    rows = {label: i for i, label in enumerate(vocab.surface)}
    cols = {label: j for j, label in enumerate(vocab.nodes)}
    matrix = np.full((len(rows), len(cols)), np.nan)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or len(header) != 3:
            raise GraphError(f"{path}: expected a 3-column header")
        for lineno, record in enumerate(reader, start=2):
            if len(record) != 3:
                raise GraphError(f"{path}:{lineno}: expected 3 fields, got {len(record)}")
            surface, node, value = record
            if surface not in rows:
                raise GraphError(f"{path}:{lineno}: unknown surface label {surface!r}")
            if node not in cols:
                raise GraphError(f"{path}:{lineno}: unknown node label {node!r}")
            try:
                number = float(value)
            except ValueError:
                raise GraphError(f"{path}:{lineno}: {column} {value!r} is not a number") from None
            matrix[rows[surface], cols[node]] = number
    missing = np.argwhere(np.isnan(matrix))
    if missing.size:
        s, n = missing[0]
        raise GraphError(
            f"{path}: {len(missing)} pair(s) missing, e.g. "
            f"{vocab.surface[s]},{vocab.nodes[n]}"
        )
    return matrix


def rescale_frequencies(counts: np.ndarray, eps: float = FREQ_EPS) -> np.ndarray:
    """Min-max rescale counts into the open interval (0, 1)."""
    if np.any(counts < 0):
        raise GraphError("relation counts must be nonnegative")
    low, high = counts.min(), counts.max()
    if high == low:
        return np.full(counts.shape, 0.5)
    return np.clip((counts - low) / (high - low), eps, 1.0 - eps)


def dependence_matrix(freq: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Frequencies kept only where a compositional relation exists."""
    freq = np.asarray(freq, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if freq.shape != mask.shape:
        raise ShapeError(f"dependence_matrix: {freq.shape} vs {mask.shape}")
    if np.any(freq <= 0) or np.any(freq >= 1):
        raise GraphError("relation frequencies must lie strictly between 0 and 1")
    if not np.all((mask == 0) | (mask == 1)):
        raise GraphError("composition mask must be binary")
    return freq * mask


def graph_matrix(m_s: np.ndarray, m_d: np.ndarray, omega: float, tau: float) -> np.ndarray:
    if np.shape(m_s) != np.shape(m_d):
        raise ShapeError(f"graph_matrix: {np.shape(m_s)} vs {np.shape(m_d)}")
    return omega * np.asarray(m_s) + tau * np.asarray(m_d)


def averaging_matrix(vocab: NodeVocab) -> np.ndarray:
    """Every entry 1/|C_n| within its parser block."""
    m = np.zeros((len(vocab.surface), len(vocab.nodes)))
    for task in TASKS:
        block = vocab.block(task)
        m[:, block] = 1.0 / (block.stop - block.start)
    return m


@dataclass
class RelationGraph:
    vocab: NodeVocab
    m_s: np.ndarray
    m_f: np.ndarray
    i_mask: np.ndarray
    m_d: np.ndarray
    m_g: np.ndarray
    omega: float = 0.5
    tau: float = 0.5
    mode: str = "crkg_s"

    def block(self, task: str) -> np.ndarray:
        return self.m_g[:, self.vocab.block(task)]

    def save_csv(self, out_dir: Path) -> List[Path]:
        """Write m_s, m_d and m_g as labelled matrices; returns the written paths."""
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in ("m_s", "m_d", "m_g"):
            path = out_dir / f"{name}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["surface", *self.vocab.nodes])
                for label, row in zip(self.vocab.surface, getattr(self, name)):
                    writer.writerow([label, *(repr(float(v)) for v in row)])
            written.append(path)
        return written


def build_graph(
    vocab: NodeVocab,
    embeddings_path: Path,
    counts_path: Path,
    mask_path: Path,
    omega: float = 0.5,
    tau: float = 0.5,
) -> RelationGraph:
    """Similarity, dependence and fused graph from the three data files."""
    m_s = semantic_similarity(vocab, load_embeddings(embeddings_path))
    m_f = rescale_frequencies(load_pair_table(counts_path, vocab, "count"))
    i_mask = load_pair_table(mask_path, vocab, "related")
    m_d = dependence_matrix(m_f, i_mask)
    return RelationGraph(vocab, m_s, m_f, i_mask, m_d, graph_matrix(m_s, m_d, omega, tau), omega, tau)


def build_graph_ablation(
    mode: str,
    embeddings_path: str = "",
    counts_path: str = "",
    mask_path: str = "",
    omega: float = 0.5,
    tau: float = 0.5,
) -> RelationGraph:
    """
    Build the relation graph or its averaging ablation.

    ``crkg_s`` is the similarity/dependence graph; ``crkg_a`` keeps the same
    component matrices but replaces the fused graph by uniform averaging
    inside each parser block. Empty paths select the packaged data files.
    """
    vocab = NodeVocab.load()
    graph = build_graph(
        vocab,
        resolve_data_path(embeddings_path, EMBEDDINGS_FILE),
        resolve_data_path(counts_path, COUNTS_FILE),
        resolve_data_path(mask_path, MASK_FILE),
        omega,
        tau,
    )
    if mode == "crkg_s":
        return graph
    if mode == "crkg_a":
        graph.m_g = averaging_matrix(vocab)
        graph.mode = "crkg_a"
        return graph
    raise GraphError(f"unknown graph mode: {mode}")


def associate(m_g: np.ndarray, w_n: Tensor) -> Tensor:
    """Surface-associated parser rows: (|C_s|, |C_n|) x (|C_n|, D)."""
    if m_g.shape[1] != w_n.shape[0]:
        raise ShapeError(f"associate: graph block {m_g.shape} vs parser weights {w_n.shape}")
    return T.matmul(Tensor(m_g), w_n)


def transform(
    associated: Sequence[Tensor], w_t: Tensor, w_i: Tensor, slope: float = 0.2
) -> Tensor:
    """
    Concatenate the associated blocks, then ``leaky_relu(X W_t) W_I``.

    Args:
        associated: One (|C_s|, D) block per contributing parser
        w_t: (k*D, D) transfer matrix
        w_i: (D, D) output matrix
        slope: Negative slope of the leaky ReLU

    Returns:
        (|C_s|, D) surface classifier weights
    """
    x = T.concat(list(associated), axis=1)
    if x.shape[1] != w_t.shape[0] or w_t.shape[1] != w_i.shape[0]:
        raise ShapeError(
            f"transform: input {x.shape}, w_t {w_t.shape}, w_i {w_i.shape} do not chain"
        )
    return T.matmul(T.leaky_relu(T.matmul(x, w_t), slope), w_i)


def mode_sources(mode: str, sources: Sequence[str]) -> Tuple[str, ...]:
    """Parsers that feed the surface weights for a KTM mode."""
    if mode == "v1-kpt-only":
        return ("kpt",)
    chosen = tuple(t for t in TASKS if t in sources)
    if not chosen:
        raise ConfigError("ktm.sources must name at least one of loc, part, kpt")
    return chosen


class ParserWeights(Module):
    """
    Classifier rows of the three 2D parsers, plus the transfer matrices.

    ``w_t`` and ``w_i`` exist only when a transformer is used.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        dim: int,
        n_sources: int = 3,
        with_transform: bool = True,
    ):
        std = 1.0 / np.sqrt(dim)
        self.w_loc = T.parameter(rng.normal(0.0, std, size=(len(LOC_LABELS), dim)))
        self.w_part = T.parameter(rng.normal(0.0, std, size=(body.NUM_PARTS, dim)))
        self.w_kpt = T.parameter(rng.normal(0.0, std, size=(body.NUM_KEYPOINTS, dim)))
        self.w_t: Optional[Tensor] = None
        self.w_i: Optional[Tensor] = None
        if with_transform:
            self.w_t = T.parameter(
                rng.normal(0.0, np.sqrt(2.0 / (n_sources * dim)), size=(n_sources * dim, dim))
            )
            self.w_i = T.parameter(rng.normal(0.0, std, size=(dim, dim)))
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def task(self, name: str) -> Tensor:
        return {"loc": self.w_loc, "part": self.w_part, "kpt": self.w_kpt}[name]


class KnowledgeTransferMachine:
    """
    Produces surface classifier weights from the current parser weights.

    Weights are recomputed on every call, so gradients of any surface loss
    flow back into the parsers.
    """

    def __init__(
        self,
        graph: RelationGraph,
        mode: str = "v2-full",
        sources: Sequence[str] = TASKS,
        slope: float = 0.2,
    ):
        if mode not in KTM_MODES or mode == "off":
            raise ConfigError(f"invalid knowledge transfer mode: {mode!r}")
        self.graph = graph
        self.mode = mode
        self.sources = mode_sources(mode, sources)
        self.slope = slope

    @property
    def uses_transform(self) -> bool:
        return self.mode != "crkg_s_only"

    def surface_weights(self, parsers: ParserWeights) -> Tensor:
        blocks = [associate(self.graph.block(t), parsers.task(t)) for t in self.sources]
        if not self.uses_transform:
            return T.scale(T.add_n(blocks), 1.0 / len(blocks))
        if parsers.w_t is None or parsers.w_i is None:
            raise ConfigError(f"mode {self.mode} needs transfer matrices")
        return transform(blocks, parsers.w_t, parsers.w_i, self.slope)


def build_ktm(
    mode: str,
    sources: Sequence[str] = TASKS,
    embeddings_path: str = "",
    counts_path: str = "",
    mask_path: str = "",
    omega: float = 0.5,
    tau: float = 0.5,
    slope: float = 0.2,
) -> Optional[KnowledgeTransferMachine]:
    """Construct the machine for a mode; ``off`` returns None."""
    if mode == "off":
        return None
    graph_mode = "crkg_a" if mode == "crkg_a" else "crkg_s"
    graph = build_graph_ablation(graph_mode, embeddings_path, counts_path, mask_path, omega, tau)
    return KnowledgeTransferMachine(graph, mode, sources, slope)
