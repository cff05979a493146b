"""Semantic graph construction and structure extraction.

An AmrGraph becomes a SemanticGraph by indexing nodes, attaching token
alignments, and adding one inverse edge per original edge (each role label
gets a distinct inverse role id), which makes every node pair mutually
reachable. From the semantic graph we extract the two structures the model
consumes: the L-hop subgraph around an event node, and the set of shortest
paths (plus their reverses) between two event nodes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .penman import AmrGraph, RoleClass, classify_role


class GraphError(ValueError):
    pass


class AlignmentOutOfRange(GraphError):
    def __init__(self, var: str, span):
        super().__init__(f"bad alignment span {span} for node {var!r}")
        self.var = var
        self.span = span


class NoAlignedNode(GraphError):
    def __init__(self, span):
        super().__init__(f"no node alignment overlaps event span {span}")
        self.span = span


class NoPath(GraphError):
    def __init__(self, e1: int, e2: int):
        super().__init__(f"no path between nodes {e1} and {e2}")
        self.e1 = e1
        self.e2 = e2


@dataclass(frozen=True)
class RoleInfo:
    label: str
    role_class: RoleClass
    inverse: bool

    @property
    def display(self) -> str:
        return self.label + "⁻¹" if self.inverse else self.label


@dataclass(frozen=True)
class Node:
    concept: str
    span: tuple[int, int] | None  # inclusive token span, None for auxiliary
    var: str

    @property
    def auxiliary(self) -> bool:
        return self.span is None


@dataclass(frozen=True)
class Edge:
    src: int
    role: int
    dst: int
    is_inverse: bool


@dataclass
class SemanticGraph:
    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    role_vocab: list[RoleInfo] = field(default_factory=list)

    def n_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self, i: int) -> list[tuple[int, int]]:
        """Outgoing (dst, role) pairs; inverse edges make this symmetric."""
        return [(e.dst, e.role) for e in self.edges if e.src == i]


@dataclass
class EventCentricStructure:
    """Induced subgraph of all nodes within `hops` of the event node."""

    graph: SemanticGraph
    center: int              # index within `graph`
    hops: int
    node_ids: list[int]      # subgraph index -> parent-graph index


@dataclass(frozen=True)
class PathSequence:
    """Alternating node/role sequence; len(nodes) == len(roles) + 1."""

    nodes: tuple[int, ...]
    roles: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.roles)

    def reverse(self) -> "PathSequence":
        return PathSequence(tuple(reversed(self.nodes)), tuple(reversed(self.roles)))


def build_semantic_graph(g: AmrGraph, alignments: dict[str, tuple[int, int]]) -> SemanticGraph:
    """Index the AmrGraph, attach alignments, and double the edges.

    Nodes without an alignment entry are flagged auxiliary (parser-added
    concepts such as 'cause-01' typically have no surface tokens).
    """
    index: dict[str, int] = {}
    sg = SemanticGraph()
    for var, concept in g.nodes:
        span = alignments.get(var)
        if span is not None:
            a, b = int(span[0]), int(span[1])
            if a < 0 or b < a:
                raise AlignmentOutOfRange(var, span)
            span = (a, b)
        index[var] = len(sg.nodes)
        sg.nodes.append(Node(concept=concept, span=span, var=var))

    role_ids: dict[tuple[str, bool], int] = {}

    def role_id(label: str, inverse: bool) -> int:
        key = (label, inverse)
        rid = role_ids.get(key)
        if rid is None:
            rid = len(sg.role_vocab)
            role_ids[key] = rid
            sg.role_vocab.append(RoleInfo(label, classify_role(label), inverse))
        return rid

    for src, label, tgt in g.edges:
        s, t = index[src], index[tgt]
        sg.edges.append(Edge(s, role_id(label, False), t, False))
        sg.edges.append(Edge(t, role_id(label, True), s, True))
    return sg


def resolve_event_node(sg: SemanticGraph, event_span: tuple[int, int]) -> int:
    """Node whose alignment best overlaps the event span.

    Primary key is absolute overlap length, then relative overlap (tighter
    spans win), then smallest node index.
    """
    ea, eb = event_span
    best = None
    for i, node in enumerate(sg.nodes):
        if node.span is None:
            continue
        a, b = node.span
        ov = min(b, eb) - max(a, ea) + 1
        if ov <= 0:
            continue
        rel = ov / (b - a + 1)
        key = (-ov, -rel, i)
        if best is None or key < best[0]:
            best = (key, i)
    if best is None:
        raise NoAlignedNode(event_span)
    return best[1]


def _distances_from(sg: SemanticGraph, start: int) -> list[int]:
    adj: list[list[int]] = [[] for _ in range(sg.n_nodes())]
    for e in sg.edges:
        adj[e.src].append(e.dst)
    dist = [-1] * sg.n_nodes()
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def khop_subgraph(sg: SemanticGraph, center: int, hops: int) -> EventCentricStructure:
    """Induced subgraph over nodes at undirected BFS distance <= hops."""
    if hops < 1:
        raise GraphError(f"hops must be >= 1, got {hops}")
    dist = _distances_from(sg, center)
    keep = [i for i, d in enumerate(dist) if 0 <= d <= hops]
    remap = {old: new for new, old in enumerate(keep)}
    sub = SemanticGraph(
        nodes=[sg.nodes[i] for i in keep],
        edges=[Edge(remap[e.src], e.role, remap[e.dst], e.is_inverse)
               for e in sg.edges if e.src in remap and e.dst in remap],
        role_vocab=sg.role_vocab,
    )
    return EventCentricStructure(graph=sub, center=remap[center], hops=hops, node_ids=keep)


def shortest_paths(sg: SemanticGraph, e1: int, e2: int, k_max: int = 8) -> list[PathSequence]:
    """All distinct shortest paths between e1 and e2, each followed by its
    reverse.

    Paths are enumerated from the smaller node index (a DFS over the
    shortest-path DAG, edges visited in (neighbor index, role id) order) and
    truncated to k_max distinct paths before reversal, so the result is
    deterministic, at most 2*k_max long, and identical for both argument
    orders: together with the appended reverses this makes the path set a
    pure function of the unordered event pair. Parallel edges with different
    roles yield distinct paths.
    """
    if e1 == e2:
        raise GraphError("e1 and e2 must differ")
    e1, e2 = min(e1, e2), max(e1, e2)
    d1 = _distances_from(sg, e1)
    d2 = _distances_from(sg, e2)
    if d1[e2] < 0:
        raise NoPath(e1, e2)
    total = d1[e2]

    out_edges: list[list[tuple[int, int]]] = [[] for _ in range(sg.n_nodes())]
    for e in sg.edges:
        out_edges[e.src].append((e.dst, e.role))
    for lst in out_edges:
        lst.sort()

    paths: list[PathSequence] = []

    def extend(node: int, nodes: list[int], roles: list[int]) -> None:
        if len(paths) >= k_max:
            return
        if node == e2:
            paths.append(PathSequence(tuple(nodes), tuple(roles)))
            return
        depth = len(roles)
        for nxt, role in out_edges[node]:
            if d1[nxt] == depth + 1 and d2[nxt] == total - depth - 1:
                extend(nxt, nodes + [nxt], roles + [role])
                if len(paths) >= k_max:
                    return

    extend(e1, [e1], [])
    return [q for p in paths for q in (p, p.reverse())]
