"""
Typed heterogeneous graph.

The graph is immutable after construction. Building it adds the inverse of
every forward edge and one self-loop per node, so traversal can always move
backwards along a relation or stay in place.
"""
import logging
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Set, Tuple

import networkx as nx
import numpy as np

from .nodes import SELF_LOOP, HinError, NodeKind, NodeRef, Relation, RelationType, UnknownNodeError

# Configure logging
logger = logging.getLogger(__name__)

HEADER_TAG = 'HINv1'

# Which kinds each forward relation connects
_RELATION_KINDS = {
    RelationType.BUY: (NodeKind.USER, NodeKind.ITEM),
    RelationType.IS_BRAND_OF: (NodeKind.ITEM, NodeKind.BRAND),
    RelationType.IS_CATEGORY_OF: (NodeKind.ITEM, NodeKind.CATEGORY),
}


class Edge(NamedTuple):
    """A directed typed edge."""
    head: NodeRef
    relation: Relation
    tail: NodeRef

    def sort_key(self) -> Tuple:
        return (self.head, self.relation.name, self.tail)


class TypedGraph:
    """
    Immutable heterogeneous multigraph of users, items, brands and categories.

    Nodes are identified by `NodeRef`. Every node also has a global index:
    users first, then items, brands and categories, each block ordered by
    local id. Adjacency lists are sorted by neighbor (kind, local_id).
    """

    def __init__(self, counts: Mapping[NodeKind, int], edges: Iterable[Edge]):
        """
        Initialize a graph from a complete edge list. Use `build` to derive
        inverse edges and self-loops from forward edges.

        Args:
            counts: Number of nodes of each kind
            edges: Every edge of the graph, including inverses and self-loops

        Raises:
            HinError: If an edge endpoint does not exist
        """
        self._counts: Dict[NodeKind, int] = {kind: int(counts.get(kind, 0)) for kind in NodeKind}
        for kind, count in self._counts.items():
            if count < 0:
                raise HinError(f"Negative node count for kind '{kind.name}'")

        offset = 0
        self._offsets: Dict[NodeKind, int] = {}
        for kind in NodeKind:
            self._offsets[kind] = offset
            offset += self._counts[kind]
        self._num_nodes = offset

        unique = set()
        for edge in edges:
            for endpoint in (edge.head, edge.tail):
                if not self.has_node(endpoint):
                    raise HinError(f"Edge {edge.head} -{edge.relation}-> {edge.tail} references missing node {endpoint}")
            unique.add(edge)
        self._edges: Tuple[Edge, ...] = tuple(sorted(unique, key=Edge.sort_key))

        adjacency: Dict[NodeRef, List[Tuple[Relation, NodeRef]]] = {}
        for edge in self._edges:
            adjacency.setdefault(edge.head, []).append((edge.relation, edge.tail))
        self._adjacency: Dict[NodeRef, Tuple[Tuple[Relation, NodeRef], ...]] = {
            node: tuple(sorted(pairs, key=lambda pair: (pair[1], pair[0].name)))
            for node, pairs in adjacency.items()
        }
        self.logger = logger

    @classmethod
    def build(cls, counts: Mapping[NodeKind, int], forward_edges: Iterable[Edge]) -> 'TypedGraph':
        """
        Build a graph from forward edges, adding inverses and self-loops.

        Args:
            counts: Number of nodes of each kind
            forward_edges: Buy, IsBrandOf and IsCategoryOf edges

        Returns:
            The closed graph

        Raises:
            HinError: If an edge is not a forward edge or joins the wrong kinds
        """
        full: List[Edge] = []
        for edge in forward_edges:
            if edge.relation.inverse or edge.relation.type is RelationType.SELF_LOOP:
                raise HinError(f"Expected a forward edge, got relation '{edge.relation}'")
            head_kind, tail_kind = _RELATION_KINDS[edge.relation.type]
            if edge.head.kind != head_kind or edge.tail.kind != tail_kind:
                raise HinError(
                    f"Relation '{edge.relation}' joins {head_kind.name}->{tail_kind.name}, "
                    f"got {edge.head} -> {edge.tail}"
                )
            full.append(edge)
            full.append(Edge(edge.tail, edge.relation.invert(), edge.head))

        graph_counts = {kind: int(counts.get(kind, 0)) for kind in NodeKind}
        for kind in NodeKind:
            for local_id in range(graph_counts[kind]):
                node = NodeRef(kind, local_id)
                full.append(Edge(node, SELF_LOOP, node))
        return cls(graph_counts, full)

    # Node queries

    @property
    def num_nodes(self) -> int:
        return self._num_nodes

    @property
    def edges(self) -> Tuple[Edge, ...]:
        return self._edges

    def count(self, kind: NodeKind) -> int:
        """Number of nodes of a kind."""
        return self._counts[kind]

    @property
    def counts(self) -> Dict[NodeKind, int]:
        return dict(self._counts)

    def has_node(self, node: NodeRef) -> bool:
        return 0 <= node.local_id < self._counts.get(node.kind, 0)

    def nodes(self, kind: Optional[NodeKind] = None) -> Iterator[NodeRef]:
        """Iterate nodes in global order, optionally of a single kind."""
        kinds = [kind] if kind is not None else list(NodeKind)
        for k in kinds:
            for local_id in range(self._counts[k]):
                yield NodeRef(k, local_id)

    def index(self, node: NodeRef) -> int:
        """
        Global index of a node.

        Raises:
            UnknownNodeError: If the node does not exist
        """
        if not self.has_node(node):
            raise UnknownNodeError(f"Node {node} is not in the graph")
        return self._offsets[node.kind] + node.local_id

    def node_at(self, index: int) -> NodeRef:
        """
        Node with a given global index.

        Raises:
            UnknownNodeError: If the index is out of range
        """
        if not 0 <= index < self._num_nodes:
            raise UnknownNodeError(f"Global node index {index} is out of range")
        for kind in reversed(NodeKind):
            if index >= self._offsets[kind] and self._counts[kind] > 0:
                return NodeRef(kind, index - self._offsets[kind])
        raise UnknownNodeError(f"Global node index {index} is out of range")

    def neighbors(self, node: NodeRef) -> List[Tuple[Relation, NodeRef]]:
        """
        All (relation, neighbor) pairs of a node, self-loop and inverses included.

        Raises:
            UnknownNodeError: If the node does not exist
        """
        if not self.has_node(node):
            raise UnknownNodeError(f"Node {node} is not in the graph")
        return list(self._adjacency.get(node, ()))

    def relation_between(self, head: NodeRef, tail: NodeRef) -> Relation:
        """
        The relation of the edge head -> tail.

        Raises:
            HinError: If the nodes are not adjacent
        """
        for relation, neighbor in self._adjacency.get(head, ()):
            if neighbor == tail:
                return relation
        raise HinError(f"Nodes {head} and {tail} are not adjacent")

    # Array views

    @cached_property
    def csr(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Adjacency in compressed sparse row form over global indices.

        Returns:
            (indptr, indices); neighbors of global node n are
            indices[indptr[n]:indptr[n + 1]], in adjacency order
        """
        indptr = np.zeros(self._num_nodes + 1, dtype=np.int64)
        indices: List[int] = []
        for node in self.nodes():
            pairs = self._adjacency.get(node, ())
            indices.extend(self.index(neighbor) for _, neighbor in pairs)
            indptr[self.index(node) + 1] = len(indices)
        return indptr, np.asarray(indices, dtype=np.int64)

    @cached_property
    def network(self) -> nx.Graph:
        """Undirected view of every node and edge, labelled by NodeRef."""
        full = nx.Graph()
        full.add_nodes_from(self.nodes())
        full.add_edges_from((edge.head, edge.tail) for edge in self._edges)
        return full

    def user_item_graph(self) -> nx.Graph:
        """
        Undirected user–item bipartite view (Buy edges only, no self-loops).

        Node labels are NodeRefs; every user and item is present even when isolated.
        """
        bipartite = nx.Graph()
        bipartite.add_nodes_from(self.nodes(NodeKind.USER))
        bipartite.add_nodes_from(self.nodes(NodeKind.ITEM))
        bipartite.add_edges_from(
            (edge.head, edge.tail) for edge in self._edges
            if edge.relation.type is RelationType.BUY and not edge.relation.inverse
        )
        return bipartite

    # Validation and serialization

    def validate(self) -> None:
        """
        Check the closure invariants.

        Raises:
            HinError: If an inverse edge is missing or self-loops are not one per node
        """
        edge_set = set(self._edges)
        self_loops = 0
        for edge in self._edges:
            if edge.relation.type is RelationType.SELF_LOOP:
                if edge.head != edge.tail:
                    raise HinError(f"Self-loop joins distinct nodes {edge.head} and {edge.tail}")
                self_loops += 1
                continue
            inverse = Edge(edge.tail, edge.relation.invert(), edge.head)
            if inverse not in edge_set:
                raise HinError(f"Missing inverse of edge {edge.head} -{edge.relation}-> {edge.tail}")
        if self_loops != self._num_nodes:
            raise HinError(f"Expected {self._num_nodes} self-loops, found {self_loops}")
        self.logger.debug(f"Validated graph with {self._num_nodes} nodes and {len(self._edges)} edges")

    def to_text(self) -> str:
        """
        Serialize in the versioned HINv1 format.

        Returns:
            Header line followed by one sorted edge per line
        """
        counts = ' '.join(str(self._counts[kind]) for kind in NodeKind)
        lines = [f"{HEADER_TAG} {counts}"]
        lines.extend(f"{edge.head.token}\t{edge.relation.name}\t{edge.tail.token}" for edge in self._edges)
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'TypedGraph':
        """
        Parse the HINv1 format.

        Raises:
            HinError: If the header or an edge line is malformed, or the edges
                      are not the closure of their forward edges
        """
        lines = text.splitlines()
        if not lines:
            raise HinError("Empty graph file")
        header = lines[0].split()
        if len(header) != 5 or header[0] != HEADER_TAG:
            raise HinError(f"Expected header '{HEADER_TAG} <users> <items> <brands> <categories>', got '{lines[0]}'")
        try:
            counts = {kind: int(value) for kind, value in zip(NodeKind, header[1:])}
        except ValueError:
            raise HinError(f"Malformed graph header '{lines[0]}'")

        parsed: List[Edge] = []
        for line_number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise HinError(f"Graph line {line_number}: expected 3 tab-separated fields, got '{line}'")
            parsed.append(Edge(NodeRef.parse(parts[0]), Relation.parse(parts[1]), NodeRef.parse(parts[2])))

        forward = [
            edge for edge in parsed
            if not edge.relation.inverse and edge.relation.type is not RelationType.SELF_LOOP
        ]
        graph = cls.build(counts, forward)
        if set(graph.edges) != set(parsed):
            raise HinError("Graph file edges are not closed under inverses and self-loops")
        return graph

    def __repr__(self) -> str:
        counts = ', '.join(f"{kind.name.lower()}s={self._counts[kind]}" for kind in NodeKind)
        return f"TypedGraph({counts}, edges={len(self._edges)})"


def neighbors(g: TypedGraph, v: NodeRef) -> List[Tuple[Relation, NodeRef]]:
    """
    All adjacent (relation, node) pairs of v, in deterministic order.

    Raises:
        UnknownNodeError: If v is not in the graph
    """
    return g.neighbors(v)


def reachable_within(g: TypedGraph, source: NodeRef, max_hops: int) -> Set[NodeRef]:
    """
    Nodes reachable from source in at most max_hops steps.

    Args:
        g: The graph
        source: Start node
        max_hops: Hop bound

    Returns:
        The reachable set, source included

    Raises:
        UnknownNodeError: If source is not in the graph
    """
    g.index(source)
    return set(nx.single_source_shortest_path_length(g.network, source, cutoff=max_hops))
