import numpy as np
import pytest

from causegraph.graph import (AlignmentOutOfRange, GraphError, NoAlignedNode,
                              NoPath, PathSequence, build_semantic_graph,
                              khop_subgraph, resolve_event_node, shortest_paths)
from causegraph.penman import AmrGraph, parse_penman
from tests.test_penman import EXAMPLE_GRAPH


def chain_graph(concepts):
    vs = [f"v{i}" for i in range(len(concepts))]
    return AmrGraph(nodes=list(zip(vs, concepts)),
                    edges=[(vs[i], "ARG0", vs[i + 1]) for i in range(len(vs) - 1)],
                    root=vs[0])


def random_amr(rng, max_nodes=12):
    """Random connected multigraph: a spanning tree plus extra edges."""
    n = int(rng.integers(2, max_nodes + 1))
    vs = [f"n{i}" for i in range(n)]
    roles = ["ARG0", "ARG1", "op1", "time", "manner", "mod"]
    edges = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        edges.append((vs[parent], roles[int(rng.integers(0, len(roles)))], vs[i]))
    for _ in range(int(rng.integers(0, n))):
        a, b = int(rng.integers(0, n)), int(rng.integers(0, n))
        if a != b:
            edges.append((vs[a], roles[int(rng.integers(0, len(roles)))], vs[b]))
    return AmrGraph(nodes=[(v, f"c{i}") for i, v in enumerate(vs)], edges=edges, root=vs[0])


# ---------------------------------------------------------------------------
# oracles


def floyd_warshall(sg):
    n = sg.n_nodes()
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for e in sg.edges:
        dist[e.src, e.dst] = 1.0
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if dist[i, k] + dist[k, j] < dist[i, j]:
                    dist[i, j] = dist[i, k] + dist[k, j]
    return dist


def enumerate_shortest_paths_dfs(sg, e1, e2, target_len):
    """Exhaustive DFS over simple paths of exactly the shortest length,
    tracking role choices on parallel edges."""
    out_edges = {}
    for e in sg.edges:
        out_edges.setdefault(e.src, []).append((e.dst, e.role))
    found = []

    def walk(node, nodes, roles):
        if len(roles) > target_len:
            return
        if node == e2 and len(roles) == target_len:
            found.append((tuple(nodes), tuple(roles)))
            return
        for nxt, role in out_edges.get(node, ()):
            if nxt not in nodes:
                walk(nxt, nodes + [nxt], roles + [role])

    walk(e1, [e1], [])
    return found


# ---------------------------------------------------------------------------
# build_semantic_graph


def test_inverse_edge_doubling():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {})
    assert len(sg.edges) == 2
    fwd, inv = sg.edges
    assert (fwd.src, fwd.dst, fwd.is_inverse) == (0, 1, False)
    assert (inv.src, inv.dst, inv.is_inverse) == (1, 0, True)
    labels = {(info.label, info.inverse) for info in sg.role_vocab}
    assert labels == {("ARG0", False), ("ARG0", True)}


def test_random_graphs_double_edges_and_role_vocab():
    rng = np.random.default_rng(5)
    for _ in range(25):
        g = random_amr(rng)
        sg = build_semantic_graph(g, {})
        assert sg.n_nodes() == len(g.nodes)
        assert len(sg.edges) == 2 * len(g.edges)
        forward = {info.label for info in sg.role_vocab if not info.inverse}
        inverse = {info.label for info in sg.role_vocab if info.inverse}
        assert forward == inverse == {r for _, r, _ in g.edges}


def test_auxiliary_flag_for_unaligned_nodes():
    g = parse_penman(EXAMPLE_GRAPH)
    alignments = {"p": (4, 4), "s": (1, 1), "h": (0, 0)}
    sg = build_semantic_graph(g, alignments)
    by_var = {n.var: n for n in sg.nodes}
    assert by_var["c"].auxiliary  # connective has no surface tokens
    assert not by_var["p"].auxiliary
    assert by_var["p"].span == (4, 4)


def test_alignment_out_of_range():
    with pytest.raises(AlignmentOutOfRange):
        build_semantic_graph(chain_graph(["a", "b"]), {"v0": (3, 2)})
    with pytest.raises(AlignmentOutOfRange):
        build_semantic_graph(chain_graph(["a", "b"]), {"v0": (-1, 0)})


def test_graph_stays_connected():
    rng = np.random.default_rng(11)
    for _ in range(10):
        sg = build_semantic_graph(random_amr(rng), {})
        dist = floyd_warshall(sg)
        assert np.all(np.isfinite(dist))


# ---------------------------------------------------------------------------
# resolve_event_node


def test_resolve_exact_span():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {"v0": (0, 1), "v1": (2, 2)})
    assert resolve_event_node(sg, (2, 2)) == 1


def test_resolve_tie_break_prefers_tighter_then_smaller_index():
    g = chain_graph(["a", "b", "c"])
    sg = build_semantic_graph(g, {"v0": (2, 3), "v1": (2, 2)})
    assert resolve_event_node(sg, (2, 2)) == 1  # max relative overlap wins
    sg = build_semantic_graph(g, {"v0": (2, 2), "v1": (2, 2)})
    assert resolve_event_node(sg, (2, 2)) == 0  # then smallest node index


def test_resolve_no_overlap():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {"v0": (0, 0)})
    with pytest.raises(NoAlignedNode):
        resolve_event_node(sg, (5, 6))


# ---------------------------------------------------------------------------
# khop_subgraph


def test_khop_star():
    center = [("c", "hub")] + [(f"l{i}", "leaf") for i in range(4)]
    g = AmrGraph(nodes=center, edges=[("c", "ARG0", f"l{i}") for i in range(4)], root="c")
    sg = build_semantic_graph(g, {})
    ecs = khop_subgraph(sg, 0, 1)
    assert sorted(ecs.node_ids) == [0, 1, 2, 3, 4]
    assert ecs.center == ecs.node_ids.index(0)


def test_khop_chain():
    sg = build_semantic_graph(chain_graph(list("abcd")), {})
    ecs = khop_subgraph(sg, 0, 2)
    assert sorted(ecs.node_ids) == [0, 1, 2]


def test_khop_rejects_zero_hops():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {})
    with pytest.raises(GraphError):
        khop_subgraph(sg, 0, 0)


def test_khop_matches_distance_oracle_and_is_monotone():
    rng = np.random.default_rng(29)
    for _ in range(40):
        sg = build_semantic_graph(random_amr(rng), {})
        dist = floyd_warshall(sg)
        center = int(rng.integers(0, sg.n_nodes()))
        previous = set()
        for hops in (1, 2, 3):
            ecs = khop_subgraph(sg, center, hops)
            expected = {i for i in range(sg.n_nodes()) if dist[center, i] <= hops}
            assert set(ecs.node_ids) == expected
            assert previous <= set(ecs.node_ids)
            previous = set(ecs.node_ids)
            # induced edges only connect kept nodes, preserving role ids
            kept = set(ecs.node_ids)
            original = [(e.src, e.role, e.dst) for e in sg.edges
                        if e.src in kept and e.dst in kept]
            mapped = [(ecs.node_ids[e.src], e.role, ecs.node_ids[e.dst])
                      for e in ecs.graph.edges]
            assert sorted(mapped) == sorted(original)


# ---------------------------------------------------------------------------
# shortest_paths


def test_example_graph_event_path():
    g = parse_penman(EXAMPLE_GRAPH)
    sg = build_semantic_graph(g, {"p": (4, 4), "s": (1, 1), "h": (0, 0)})
    protect = next(i for i, n in enumerate(sg.nodes) if n.concept == "protect-01")
    shoot = next(i for i, n in enumerate(sg.nodes) if n.concept == "shoot-02")
    paths = shortest_paths(sg, protect, shoot)
    assert all(p.length == 2 for p in paths)
    rendered = []
    for p in paths:
        concepts = [sg.nodes[i].concept for i in p.nodes]
        roles = [sg.role_vocab[r].display for r in p.roles]
        rendered.append((tuple(concepts), tuple(roles)))
    assert (("protect-01", "person", "shoot-02"), ("ARG0", "ARG1⁻¹")) in rendered


def test_adjacent_events_give_one_path_plus_reverse():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {})
    paths = shortest_paths(sg, 0, 1)
    assert len(paths) == 2
    assert paths[0].nodes == (0, 1) and paths[0].length == 1
    assert paths[1] == paths[0].reverse()


def test_reverse_is_involutive_and_keeps_roles():
    p = PathSequence(nodes=(3, 1, 2), roles=(7, 4))
    assert p.reverse().nodes == (2, 1, 3)
    assert p.reverse().roles == (4, 7)
    assert p.reverse().reverse() == p


def test_same_node_rejected():
    sg = build_semantic_graph(chain_graph(["a", "b"]), {})
    with pytest.raises(GraphError):
        shortest_paths(sg, 1, 1)


def test_no_path_on_disconnected_graph():
    from causegraph.graph import Edge, Node, RoleInfo, SemanticGraph
    from causegraph.penman import RoleClass

    sg = SemanticGraph(
        nodes=[Node("a", None, "a"), Node("b", None, "b")],
        edges=[], role_vocab=[RoleInfo("ARG0", RoleClass.CORE, False)])
    with pytest.raises(NoPath):
        shortest_paths(sg, 0, 1)


def test_shortest_paths_match_brute_force_on_200_random_graphs():
    rng = np.random.default_rng(41)
    checked_pairs = 0
    for _ in range(200):
        sg = build_semantic_graph(random_amr(rng), {})
        n = sg.n_nodes()
        dist = floyd_warshall(sg)
        e1, e2 = int(rng.integers(0, n)), int(rng.integers(0, n))
        if e1 == e2:
            continue
        paths = shortest_paths(sg, e1, e2, k_max=10_000)
        assert paths == shortest_paths(sg, e2, e1, k_max=10_000)  # order-free
        assert np.isfinite(dist[e1, e2])
        target = int(dist[e1, e2])
        forward = paths[0::2]
        reverses = paths[1::2]
        assert all(p.length == target for p in forward)
        assert [p.reverse() for p in forward] == reverses
        # no repeated nodes on any returned path
        for p in forward:
            assert len(set(p.nodes)) == len(p.nodes)
        oracle = enumerate_shortest_paths_dfs(sg, min(e1, e2), max(e1, e2), target)
        assert sorted((p.nodes, p.roles) for p in forward) == sorted(oracle)
        checked_pairs += 1
    assert checked_pairs >= 150


def test_k_max_truncation_is_deterministic():
    # parallel roles between the same nodes multiply the path count
    g = AmrGraph(nodes=[("a", "x"), ("b", "y"), ("c", "z")],
                 edges=[("a", "ARG0", "b"), ("a", "ARG1", "b"),
                        ("b", "ARG0", "c"), ("b", "ARG1", "c")],
                 root="a")
    sg = build_semantic_graph(g, {})
    full = shortest_paths(sg, 0, 2, k_max=100)
    assert len(full) == 8  # four role combinations, each with a reverse
    capped = shortest_paths(sg, 0, 2, k_max=3)
    assert len(capped) == 6
    assert capped == shortest_paths(sg, 0, 2, k_max=3)
    assert capped[0::2] == full[0::2][:3]
