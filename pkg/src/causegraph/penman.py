"""Parsing and serialization of AMR graphs in PENMAN notation.

The parser accepts a single well-formed s-expression per graph. Re-entrant
mentions (a bare variable where a subtree is expected) become edges to the
already-declared node, including forward references. Attribute constants
(numbers, quoted strings, polarity "-") become leaf nodes whose concept is
the literal token text, so everything downstream deals with one node kind.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class PenmanError(ValueError):
    """Base parse error; `offset` is the byte position in the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class UnbalancedParens(PenmanError):
    pass


class DuplicateVariableDeclaration(PenmanError):
    pass


class EmptyGraph(PenmanError):
    pass


class RoleClass(Enum):
    CORE = "CoreRole"
    OPERATOR = "Operator"
    MEANS = "Means"
    TEMPORAL = "Temporal"
    OTHERS = "Others"


_CORE_RE = re.compile(r"^ARG\d+$")
_OP_RE = re.compile(r"^op[1-4]$")
_MEANS = {"manner", "instrument", "topic", "medium"}
_TEMPORAL = {
    "time", "year", "weekday", "day", "month", "decade", "century", "era",
    "season", "timezone", "quarter", "dayperiod", "year2", "calendar",
    "duration", "frequency",
}


def classify_role(label: str) -> RoleClass:
    """Total map from a role label to its class; leading ':' and a trailing
    '-of' (AMR's textual inverse) are ignored for classification."""
    base = label[1:] if label.startswith(":") else label
    if base.endswith("-of") and len(base) > 3:
        base = base[:-3]
    if _CORE_RE.match(base):
        return RoleClass.CORE
    if _OP_RE.match(base):
        return RoleClass.OPERATOR
    if base in _MEANS:
        return RoleClass.MEANS
    if base in _TEMPORAL:
        return RoleClass.TEMPORAL
    return RoleClass.OTHERS


@dataclass
class AmrGraph:
    """Nodes are (variable, concept); constants are synthesized leaf nodes."""

    nodes: list[tuple[str, str]] = field(default_factory=list)
    edges: list[tuple[str, str, str]] = field(default_factory=list)
    root: str = ""
    constants: list[str] = field(default_factory=list)  # variables of leaf constants

    def concept_of(self, var: str) -> str:
        for v, c in self.nodes:
            if v == var:
                return c
        raise KeyError(var)

    def variables(self) -> set[str]:
        return {v for v, _ in self.nodes}


_TOKEN_RE = re.compile(r'"(?:[^"\\]|\\.)*"|[()/]|[^\s()/]+')


def _tokenize(text: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN s-expression into an AmrGraph.

    One node is created per first variable occurrence; later bare mentions
    of the same variable become re-entrant edges. Every role token yields
    exactly one edge.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise EmptyGraph("empty input", 0)

    # first pass: declared variables are those in "( var / concept" position
    declared: set[str] = set()
    for i, (tok, off) in enumerate(tokens):
        if tok == "(" and i + 2 < len(tokens) and tokens[i + 2][0] == "/":
            var = tokens[i + 1][0]
            if var in declared:
                raise DuplicateVariableDeclaration(f"variable {var!r} declared twice", tokens[i + 1][1])
            declared.add(var)

    g = AmrGraph()
    seen: set[str] = set()
    const_n = 0

    def fresh_const_var() -> str:
        nonlocal const_n
        while True:
            v = f"x{const_n}"
            const_n += 1
            if v not in declared and v not in seen:
                return v

    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(text))

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def parse_node() -> str:
        nonlocal pos
        tok, off = take()
        if tok != "(":
            raise UnbalancedParens(f"expected '(' but found {tok!r}", off)
        var, voff = take()
        if var is None or var in "()/":
            raise UnbalancedParens("expected a variable after '('", voff)
        slash, soff = take()
        if slash != "/":
            raise UnbalancedParens("expected '/' after the variable", soff)
        concept, coff = take()
        if concept is None or concept in "()/":
            raise UnbalancedParens("expected a concept after '/'", coff)
        if var not in seen:
            seen.add(var)
            g.nodes.append((var, concept))
        while True:
            tok, off = peek()
            if tok == ")":
                take()
                return var
            if tok is None:
                raise UnbalancedParens("unclosed '('", off)
            if not tok.startswith(":"):
                raise UnbalancedParens(f"expected a role or ')' but found {tok!r}", off)
            role = take()[0][1:]
            tgt_tok, toff = peek()
            if tgt_tok == "(":
                tgt = parse_node()
            elif tgt_tok is None or tgt_tok in ")/":
                raise UnbalancedParens(f"role :{role} has no target", toff)
            else:
                take()
                if tgt_tok in declared:
                    tgt = tgt_tok
                    if tgt not in seen:
                        # forward reference: materialize now, concept filled on declaration
                        seen.add(tgt)
                        g.nodes.append((tgt, ""))
                else:
                    tgt = fresh_const_var()
                    seen.add(tgt)
                    g.nodes.append((tgt, tgt_tok))
                    g.constants.append(tgt)
            g.edges.append((var, role, tgt))

    root = parse_node()
    if pos != len(tokens):
        raise UnbalancedParens(f"trailing content {tokens[pos][0]!r}", tokens[pos][1])
    g.root = root

    # fill concepts of forward-referenced nodes (declared later in the walk)
    concepts = {}
    for i, (tok, off) in enumerate(tokens):
        if tok == "(" and i + 3 < len(tokens) and tokens[i + 2][0] == "/":
            concepts[tokens[i + 1][0]] = tokens[i + 3][0]
    g.nodes = [(v, concepts.get(v, c)) for v, c in g.nodes]
    return g


def serialize_penman(g: AmrGraph) -> str:
    """Deterministic PENMAN text; children are emitted in original edge order.

    The output reparses to a graph isomorphic to `g` (same node/edge multiset
    up to the synthesized variables of constant leaves).
    """
    concept = dict(g.nodes)
    consts = set(g.constants)
    children: dict[str, list[tuple[str, str]]] = {}
    for src, role, tgt in g.edges:
        children.setdefault(src, []).append((role, tgt))

    emitted: set[str] = set()

    def emit(var: str) -> str:
        emitted.add(var)
        parts = [f"({var} / {concept[var]}"]
        for role, tgt in children.get(var, ()):
            if tgt in consts:
                emitted.add(tgt)
                parts.append(f" :{role} {concept[tgt]}")
            elif tgt in emitted:
                parts.append(f" :{role} {tgt}")
            else:
                parts.append(f" :{role} {emit(tgt)}")
        parts.append(")")
        return "".join(parts)

    text = emit(g.root)
    missing = g.variables() - emitted
    if missing:
        raise ValueError(f"nodes unreachable from root: {sorted(missing)}")
    return text
