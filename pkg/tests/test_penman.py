import string

import numpy as np
import pytest

from causegraph.data import gen_synthetic
from causegraph.penman import (AmrGraph, DuplicateVariableDeclaration, EmptyGraph,
                               RoleClass, UnbalancedParens, classify_role,
                               parse_penman, serialize_penman)

# the running example graph: a shooting caused by an act of protection
EXAMPLE_GRAPH = (
    "(c / cause-01"
    " :ARG0 (p / protect-01"
    "   :ARG0 (h / person :name (n / name :op1 \"Horton\"))"
    "   :ARG1 (s2 / person :mod (st / student)))"
    " :ARG1 (s / shoot-02 :ARG1 h))"
)


def test_parse_simple_graph():
    g = parse_penman("(p / protect-01 :ARG0 (p2 / person))")
    assert len(g.nodes) == 2
    assert g.edges == [("p", "ARG0", "p2")]
    assert g.root == "p"


def test_parse_reentrancy():
    g = parse_penman("(c / cause-01 :ARG0 (s / shoot-02) :ARG1 s)")
    assert len(g.nodes) == 2
    assert g.edges == [("c", "ARG0", "s"), ("c", "ARG1", "s")]


def test_parse_forward_reference():
    g = parse_penman("(a / alpha :ARG0 b :ARG1 (b / beta))")
    assert dict(g.nodes)["b"] == "beta"
    assert g.edges == [("a", "ARG0", "b"), ("a", "ARG1", "b")]
    assert not g.constants


def test_constants_become_leaf_nodes():
    g = parse_penman('(n / name :op1 "New" :op2 "York" :quant 5 :polarity -)')
    assert len(g.constants) == 4
    concepts = [dict(g.nodes)[v] for v in g.constants]
    assert concepts == ['"New"', '"York"', "5", "-"]
    assert len(g.edges) == 4


def test_serialize_single_node():
    assert serialize_penman(parse_penman("(x / dog)")) == "(x / dog)"


def test_example_graph_round_trip_mentions_all_events():
    text = serialize_penman(parse_penman(EXAMPLE_GRAPH))
    for concept in ("protect-01", "shoot-02", "cause-01"):
        assert concept in text


def _isomorphic(a: AmrGraph, b: AmrGraph) -> bool:
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    if sorted(c for _, c in a.nodes) != sorted(c for _, c in b.nodes):
        return False
    ca, cb = dict(a.nodes), dict(b.nodes)
    ea = sorted((ca[s], r, ca[t]) for s, r, t in a.edges)
    eb = sorted((cb[s], r, cb[t]) for s, r, t in b.edges)
    return ea == eb


def test_round_trip_isomorphism_on_random_graphs():
    from tests.test_graph import random_amr

    rng = np.random.default_rng(97)
    for _ in range(50):
        g = random_amr(rng)
        g2 = parse_penman(serialize_penman(g))
        assert _isomorphic(g, g2)


def test_round_trip_fixpoint_on_corpus_fixtures():
    records, _ = gen_synthetic(n_docs=100, seed=13)
    assert len(records) >= 50
    for rec in records:
        g = parse_penman(rec.amr)
        once = serialize_penman(g)
        g2 = parse_penman(once)
        assert _isomorphic(g, g2)
        assert serialize_penman(g2) == once


def test_parse_counts_every_role_token():
    rng = np.random.default_rng(17)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        variables = list(string.ascii_lowercase[:n])
        parts = []
        edge_count = 0

        def subtree(i, depth):
            nonlocal edge_count
            out = [f"({variables[i]} / concept{i}"]
            for j in range(i + 1, min(i + 1 + int(rng.integers(0, 3)), n)):
                role = f"ARG{int(rng.integers(0, 4))}"
                edge_count += 1
                out.append(f" :{role} {variables[int(rng.integers(0, n))]}")
            out.append(")")
            return "".join(out)

        text = "(" + "r0 / root"
        for i in range(n):
            text += f" :op{i % 4 + 1} " + subtree(i, 0)
            edge_count += 1
        text += ")"
        g = parse_penman(text)
        assert len(g.edges) == edge_count


def test_unbalanced_parens_error_carries_offset():
    with pytest.raises(UnbalancedParens) as err:
        parse_penman("(a / alpha :ARG0 (b / beta)")
    assert err.value.offset >= 0
    with pytest.raises(UnbalancedParens):
        parse_penman("(a / alpha)) ")


def test_duplicate_variable_declaration():
    with pytest.raises(DuplicateVariableDeclaration):
        parse_penman("(a / alpha :ARG0 (a / beta))")


def test_empty_graph():
    with pytest.raises(EmptyGraph):
        parse_penman("   ")


def test_classify_role_table_rows():
    assert classify_role("ARG0") is RoleClass.CORE
    assert classify_role(":ARG17") is RoleClass.CORE
    assert classify_role("op3") is RoleClass.OPERATOR
    assert classify_role("manner") is RoleClass.MEANS
    assert classify_role("instrument") is RoleClass.MEANS
    assert classify_role("topic") is RoleClass.MEANS
    assert classify_role("time") is RoleClass.TEMPORAL
    assert classify_role("year") is RoleClass.TEMPORAL
    assert classify_role("weekday") is RoleClass.TEMPORAL
    assert classify_role("location") is RoleClass.OTHERS
    assert classify_role("ARG0-of") is RoleClass.CORE


def test_classify_role_total_and_deterministic():
    rng = np.random.default_rng(23)
    alphabet = string.ascii_letters + string.digits + "-_:"
    for _ in range(500):
        label = "".join(rng.choice(list(alphabet), size=int(rng.integers(1, 12))))
        first = classify_role(label)
        assert first in RoleClass
        assert classify_role(label) is first
