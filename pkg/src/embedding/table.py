"""
Embedding tables and path embeddings.
"""
import logging
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.errors import DataError
from ..hin import NodeKind, NodeRef, TypedGraph

# Configure logging
logger = logging.getLogger(__name__)


class EmbeddingError(DataError):
    """Exception raised when a node has no usable vector."""
    pass


class EmbeddingTable:
    """
    One real vector per node.

    Attributes:
        dim: Vector dimensionality
        nodes: Nodes in row order
        vectors: Matrix of shape (len(nodes), dim)
        losses: Per-epoch training losses recorded by the trainer, if any
    """

    def __init__(self, nodes: Sequence[NodeRef], vectors: np.ndarray, losses: Optional[List[float]] = None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(nodes):
            raise EmbeddingError(f"Expected a ({len(nodes)}, dim) matrix, got shape {vectors.shape}")
        self.nodes: List[NodeRef] = list(nodes)
        self.vectors = vectors
        self.dim = int(vectors.shape[1])
        self.losses: List[float] = list(losses or [])
        self._rows: Dict[NodeRef, int] = {node: row for row, node in enumerate(self.nodes)}
        if len(self._rows) != len(self.nodes):
            raise EmbeddingError("Embedding table lists a node twice")

    def __contains__(self, node: NodeRef) -> bool:
        return node in self._rows

    def __len__(self) -> int:
        return len(self.nodes)

    def vector(self, node: NodeRef) -> np.ndarray:
        """
        The vector of a node.

        Raises:
            EmbeddingError: If the node has no vector
        """
        row = self._rows.get(node)
        if row is None:
            raise EmbeddingError(f"No embedding for node {node}")
        return self.vectors[row]

    @cached_property
    def norms(self) -> np.ndarray:
        """Euclidean norm of every row."""
        return np.linalg.norm(self.vectors, axis=1)

    def matrix_for(self, graph: TypedGraph) -> np.ndarray:
        """
        Vectors aligned with the graph's global node indices.

        Raises:
            EmbeddingError: If a graph node has no vector
        """
        matrix = np.empty((graph.num_nodes, self.dim), dtype=np.float64)
        for node in graph.nodes():
            matrix[graph.index(node)] = self.vector(node)
        return matrix

    def save(self, path: Union[str, Path]) -> None:
        """Write `<count> <dim>` then `<kind>:<local_id> v1 ... vdim` lines, 6 decimals."""
        lines = [f"{len(self.nodes)} {self.dim}"]
        for node, vector in zip(self.nodes, self.vectors):
            lines.append(node.token + ' ' + ' '.join(f"{value:.6f}" for value in vector))
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'EmbeddingTable':
        """
        Read a file written by `save`.

        Raises:
            EmbeddingError: If the header or a row is malformed
        """
        lines = Path(path).read_text(encoding='utf-8').splitlines()
        try:
            count, dim = (int(part) for part in lines[0].split())
        except (IndexError, ValueError):
            raise EmbeddingError(f"Embedding file '{path}' has a malformed header")
        nodes: List[NodeRef] = []
        vectors = np.zeros((count, dim), dtype=np.float64)
        rows = [line for line in lines[1:] if line.strip()]
        if len(rows) != count:
            raise EmbeddingError(f"Embedding file '{path}' declares {count} rows but has {len(rows)}")
        for row, line in enumerate(rows):
            parts = line.split()
            if len(parts) != dim + 1:
                raise EmbeddingError(f"Embedding file '{path}' row {row + 2}: expected {dim} values")
            nodes.append(NodeRef.parse(parts[0]))
            vectors[row] = [float(value) for value in parts[1:]]
        return cls(nodes, vectors)


def embed_path(path: Union[Sequence[NodeRef], object], table: EmbeddingTable) -> np.ndarray:
    """
    Mean of the node vectors along a path.

    Args:
        path: A node sequence, or any object with a `nodes` attribute
        table: The embedding table

    Returns:
        Vector of length table.dim

    Raises:
        EmbeddingError: If the path is empty or a node has no vector
    """
    nodes = getattr(path, 'nodes', path)
    if len(nodes) == 0:
        raise EmbeddingError("Cannot embed an empty path")
    return np.mean([table.vector(node) for node in nodes], axis=0)


def uniform_init(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Classic skip-gram initialization: uniform in [-0.5/dim, 0.5/dim]."""
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(count, dim))


def complete_attribute_vectors(table: EmbeddingTable, graph: TypedGraph, seed: int = 0) -> EmbeddingTable:
    """
    Extend a user/item table with brand and category vectors.

    An attribute node gets the mean vector of its adjacent items; a node with
    no embedded item neighbor gets a seeded uniform initialization.

    Args:
        table: Table covering (at least) users and items
        graph: The graph
        seed: Seed for nodes without item neighbors

    Returns:
        A table covering every graph node
    """
    rng = np.random.default_rng(seed)
    nodes: List[NodeRef] = []
    vectors: List[np.ndarray] = []
    for node in graph.nodes():
        if node in table:
            nodes.append(node)
            vectors.append(table.vector(node))
            continue
        items = [neighbor for _, neighbor in graph.neighbors(node)
                 if neighbor.kind == NodeKind.ITEM and neighbor in table]
        vector = np.mean([table.vector(item) for item in items], axis=0) if items else None
        if vector is None or not np.any(vector):
            if node.kind in (NodeKind.USER, NodeKind.ITEM):
                logger.warning(f"Node {node} has no trained vector; using random initialization")
            vector = uniform_init(rng, 1, table.dim)[0]
        nodes.append(node)
        vectors.append(vector)
    return EmbeddingTable(nodes, np.vstack(vectors) if vectors else np.zeros((0, table.dim)))
