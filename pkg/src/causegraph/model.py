"""Encoders and the pair classifier.

The pair representation is assembled from three blocks:

  * F_E: event nodes are initialized from aligned-token averages (auxiliary
    nodes from a trainable concept table), refined by a relational graph
    convolution over the L-hop structure around each event,

        h_i <- ReLU( sum_r sum_{j in N_i^r} (1/c_{i,r}) h_j W_r + h_i W_0 ),

    and summed over the two events so the block is order-free.
  * F_P: each shortest path (and its reverse) between the events becomes a
    state sequence [(v_1, r_1); ...; (v_n, r_pad)] fed through a BiLSTM; the
    per-path encodings are fused by scaled dot-product attention with the
    event-pair vector as query.
  * F_C: a context encoder runs over the token sequence with [CLS]/[SEP] and
    <e1></e1> <e2></e2> markers inserted; the marker and [CLS] vectors are
    combined through a tanh layer and summed over the two events.

The concatenation F_E || F_P || F_C feeds a softmax classifier. Ablation
switches replace individual blocks with zero vectors of the same width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import CorpusRecord, EventPair, Vocab
from .graph import (EventCentricStructure, NoAlignedNode, NoPath, PathSequence,
                    SemanticGraph, build_semantic_graph, khop_subgraph,
                    resolve_event_node, shortest_paths)
from .penman import RoleClass, parse_penman

ABLATIONS = ("full", "wo-stru", "wo-path", "wo-cent")
N_COARSE_RELATIONS = 2 * len(RoleClass)

_CLASS_INDEX = {rc: i for i, rc in enumerate(RoleClass)}


class ModelError(ValueError):
    pass


class SpanOutOfRange(ModelError):
    pass


class MarkerCollision(ModelError):
    pass


class MissingEmbeddingEntry(ModelError):
    def __init__(self, doc_id: str):
        super().__init__(f"no contextual-embedding entry for document {doc_id!r}")
        self.doc_id = doc_id


class TokenCountMismatch(ModelError):
    pass


class UnknownRoleId(ModelError):
    pass


class EmptyPath(ModelError):
    pass


@dataclass
class ModelConfig:
    hidden: int = 64
    layers: int = 3
    dropout: float = 0.5
    k_max: int = 8
    ablation: str = "full"
    mode: str = "internal"  # "internal" | "external"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ModelError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.mode not in ("internal", "external"):
            raise ModelError(f"unknown context mode {self.mode!r}")
        if self.hidden % 2:
            raise ModelError("hidden size must be even (bidirectional context encoder)")
        if self.layers < 1:
            raise ModelError("need at least one graph layer")


# ---------------------------------------------------------------------------
# parameters


def _lstm_params(rng, prefix: str, d_in: int, d_hid: int) -> dict[str, nm.Tensor]:
    # single fused gate matrix, gate order [input, forget, output, cell]
    return {
        f"{prefix}.W": nm.xavier_uniform(rng, d_in, 4 * d_hid, name=f"{prefix}.W"),
        f"{prefix}.U": nm.xavier_uniform(rng, d_hid, 4 * d_hid, name=f"{prefix}.U"),
        f"{prefix}.b": nm.zeros(1, 4 * d_hid, name=f"{prefix}.b"),
    }


def build_params(config: ModelConfig, n_tokens: int, n_concepts: int,
                 n_relations: int, seed: int) -> dict[str, nm.Tensor]:
    """All trainable weights, keyed by dotted names (checkpoint order sorts)."""
    rng = np.random.default_rng(seed)
    d = config.hidden
    p: dict[str, nm.Tensor] = {}
    p["emb.concept"] = nm.embedding_table(rng, n_concepts, d, name="emb.concept")
    p["emb.rel"] = nm.embedding_table(rng, n_relations, d, name="emb.rel")
    for layer in range(config.layers):
        for rel in range(N_COARSE_RELATIONS):
            name = f"rgcn.l{layer}.rel{rel}"
            p[name] = nm.xavier_uniform(rng, d, d, name=name)
        p[f"rgcn.l{layer}.self"] = nm.xavier_uniform(rng, d, d, name=f"rgcn.l{layer}.self")
    p.update(_lstm_params(rng, "path.fwd", 2 * d, d))
    p.update(_lstm_params(rng, "path.bwd", 2 * d, d))
    p["path.proj"] = nm.xavier_uniform(rng, 2 * d, d, name="path.proj")
    p["attn.Q"] = nm.xavier_uniform(rng, d, d, name="attn.Q")
    p["attn.K"] = nm.xavier_uniform(rng, d, d, name="attn.K")
    p["attn.V"] = nm.xavier_uniform(rng, d, d, name="attn.V")
    p["ctx.W_u"] = nm.xavier_uniform(rng, 2 * d, d, name="ctx.W_u")
    p["ctx.b_u"] = nm.zeros(1, d, name="ctx.b_u")
    p["clf.W"] = nm.xavier_uniform(rng, 3 * d, 2, name="clf.W")
    p["clf.b"] = nm.zeros(1, 2, name="clf.b")
    if config.mode == "internal":
        p["emb.tok"] = nm.embedding_table(rng, n_tokens, d, name="emb.tok")
        p.update(_lstm_params(rng, "ctx.fwd", d, d // 2))
        p.update(_lstm_params(rng, "ctx.bwd", d, d // 2))
    return p


# ---------------------------------------------------------------------------
# marker insertion (shared convention with the embedding exporter)


def insert_markers(tokens: list[str], span1: tuple[int, int], span2: tuple[int, int]):
    """[CLS] + tokens with <e1></e1> <e2></e2> around the event spans + [SEP].

    Returns (sequence, original->sequence position map, <e1> pos, <e2> pos).
    Overlapping event spans cannot be bracketed and raise MarkerCollision.
    """
    a1, b1 = span1
    a2, b2 = span2
    if min(b1, b2) - max(a1, a2) >= 0:
        raise MarkerCollision(f"event spans {span1} and {span2} overlap")
    seq = ["[CLS]"]
    pos_map: list[int] = []
    p_e1 = p_e2 = -1
    for k, tok in enumerate(tokens):
        if k == a1:
            p_e1 = len(seq)
            seq.append("<e1>")
        if k == a2:
            p_e2 = len(seq)
            seq.append("<e2>")
        pos_map.append(len(seq))
        seq.append(tok)
        if k == b1:
            seq.append("</e1>")
        if k == b2:
            seq.append("</e2>")
    seq.append("[SEP]")
    return seq, pos_map, p_e1, p_e2


def marker_inserted_length(n_tokens: int) -> int:
    return n_tokens + 6


# ---------------------------------------------------------------------------
# context encoder


@dataclass
class ContextOutput:
    u_cls: nm.Tensor
    u_e1: nm.Tensor
    u_e2: nm.Tensor
    x: nm.Tensor          # one row per original token
    seq_len: int


def _lstm_cell(x_t, h, c, params, prefix: str, d_hid: int):
    z = nm.add(nm.add(nm.matmul(x_t, params[f"{prefix}.W"]),
                      nm.matmul(h, params[f"{prefix}.U"])),
               params[f"{prefix}.b"])
    i = nm.sigmoid(nm.slice_cols(z, 0, d_hid))
    f = nm.sigmoid(nm.slice_cols(z, d_hid, 2 * d_hid))
    o = nm.sigmoid(nm.slice_cols(z, 2 * d_hid, 3 * d_hid))
    g = nm.tanh(nm.slice_cols(z, 3 * d_hid, 4 * d_hid))
    c_new = nm.add(nm.mul(f, c), nm.mul(i, g))
    h_new = nm.mul(o, nm.tanh(c_new))
    return h_new, c_new


def _lstm_sweep(states: list[nm.Tensor], params, prefix: str, d_hid: int) -> list[nm.Tensor]:
    h = nm.Tensor(np.zeros((1, d_hid)))
    c = nm.Tensor(np.zeros((1, d_hid)))
    outs = []
    for x_t in states:
        h, c = _lstm_cell(x_t, h, c, params, prefix, d_hid)
        outs.append(h)
    return outs


# the two opening markers share one embedding (and the closing markers share
# another) so the pair representation is exactly order-free; the events stay
# distinguishable by marker position
_TIED_MARKERS = {"<e2>": "<e1>", "</e2>": "</e1>"}


def encode_context_internal(tokens: list[str], span1, span2, params, vocab: Vocab,
                            d: int) -> ContextOutput:
    seq, pos_map, p_e1, p_e2 = insert_markers(tokens, span1, span2)
    ids = [vocab.id(_TIED_MARKERS.get(t, t)) for t in seq]
    emb = nm.gather_rows(params["emb.tok"], ids)
    states = [nm.gather_rows(emb, [t]) for t in range(len(seq))]
    fwd = _lstm_sweep(states, params, "ctx.fwd", d // 2)
    bwd = _lstm_sweep(states[::-1], params, "ctx.bwd", d // 2)[::-1]
    rows = [nm.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    h_all = nm.concat(rows, axis=0)
    return ContextOutput(
        u_cls=nm.gather_rows(h_all, [0]),
        u_e1=nm.gather_rows(h_all, [p_e1]),
        u_e2=nm.gather_rows(h_all, [p_e2]),
        x=nm.gather_rows(h_all, pos_map),
        seq_len=len(seq),
    )


def encode_context_external(tokens: list[str], span1, span2, doc_id: str,
                            embeddings: dict[str, np.ndarray]) -> ContextOutput:
    seq, pos_map, p_e1, p_e2 = insert_markers(tokens, span1, span2)
    mat = embeddings.get(doc_id)
    if mat is None:
        raise MissingEmbeddingEntry(doc_id)
    if mat.shape[0] != len(seq):
        raise TokenCountMismatch(
            f"doc {doc_id!r}: embedding rows {mat.shape[0]} != marker-inserted length {len(seq)}")
    h_all = nm.Tensor(mat)
    return ContextOutput(
        u_cls=nm.gather_rows(h_all, [0]),
        u_e1=nm.gather_rows(h_all, [p_e1]),
        u_e2=nm.gather_rows(h_all, [p_e2]),
        x=nm.gather_rows(h_all, pos_map),
        seq_len=len(seq),
    )


# ---------------------------------------------------------------------------
# graph-side encoders


def init_node_reps(sg: SemanticGraph, ctx: ContextOutput, params,
                   concept_vocab: Vocab) -> nm.Tensor:
    """Aligned nodes average their tokens' vectors; auxiliary nodes look up a
    concept embedding shared across documents."""
    rows = []
    n_tok = ctx.x.shape[0]
    for node in sg.nodes:
        if node.span is None:
            rows.append(nm.gather_rows(params["emb.concept"], [concept_vocab.id(node.concept)]))
        else:
            a, b = node.span
            if a < 0 or b >= n_tok:
                raise SpanOutOfRange(f"node {node.var!r} span {node.span} outside 0..{n_tok - 1}")
            rows.append(nm.mean(nm.gather_rows(ctx.x, list(range(a, b + 1))), axis=0))
    return nm.concat(rows, axis=0)


def coarse_relation_id(info) -> int:
    return 2 * _CLASS_INDEX[info.role_class] + (1 if info.inverse else 0)


def rgcn_matrices(sg: SemanticGraph) -> list[tuple[int, np.ndarray]]:
    """Per coarse relation, the in-edge mean aggregation matrix A with
    A[i, j] = (#edges j->i of that relation) / (#in-edges of i of that
    relation). Parallel edges count multiply."""
    n = sg.n_nodes()
    counts: dict[int, np.ndarray] = {}
    for e in sg.edges:
        if e.role >= len(sg.role_vocab):
            raise UnknownRoleId(f"edge role id {e.role} outside vocab of {len(sg.role_vocab)}")
        rel = coarse_relation_id(sg.role_vocab[e.role])
        mat = counts.get(rel)
        if mat is None:
            mat = counts[rel] = np.zeros((n, n))
        mat[e.dst, e.src] += 1.0
    out = []
    for rel in sorted(counts):
        mat = counts[rel]
        row_sum = mat.sum(axis=1, keepdims=True)
        np.divide(mat, row_sum, out=mat, where=row_sum > 0)
        out.append((rel, mat))
    return out


def rgcn_forward(mats: list[tuple[int, np.ndarray]], h0: nm.Tensor, params,
                 layers: int, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> nm.Tensor:
    h = h0
    for layer in range(layers):
        acc = nm.matmul(h, params[f"rgcn.l{layer}.self"])
        for rel, mat in mats:
            msg = nm.matmul(nm.matmul(nm.Tensor(mat), h), params[f"rgcn.l{layer}.rel{rel}"])
            acc = nm.add(acc, msg)
        h = nm.relu(acc)
        if dropout > 0.0 and rng is not None:
            h = nm.dropout(h, dropout, rng)
    return h


def event_pair_rep(h_e1: nm.Tensor, h_e2: nm.Tensor) -> nm.Tensor:
    """Order-free event-pair vector: the sum of the two event encodings."""
    if h_e1.shape != h_e2.shape:
        raise nm.ShapeMismatch(f"event reps {h_e1.shape} vs {h_e2.shape}")
    return nm.add(h_e1, h_e2)


def encode_path(path: PathSequence, node_reps: nm.Tensor, rel_ids: list[int],
                params, d: int) -> nm.Tensor:
    """BiLSTM over [(v_1, r_1); ...; (v_n, r_pad)]; final forward and backward
    states are concatenated and projected back to width d."""
    if path.length < 1:
        raise EmptyPath("path must contain at least one edge")
    if len(rel_ids) != len(path.nodes):
        raise nm.ShapeMismatch(f"{len(rel_ids)} relation ids for {len(path.nodes)} states")
    states = []
    for t, nid in enumerate(path.nodes):
        v = nm.gather_rows(node_reps, [nid])
        r = nm.gather_rows(params["emb.rel"], [rel_ids[t]])
        states.append(nm.concat([v, r], axis=1))
    h_f = _lstm_sweep(states, params, "path.fwd", d)[-1]
    h_b = _lstm_sweep(states[::-1], params, "path.bwd", d)[-1]
    return nm.matmul(nm.concat([h_f, h_b], axis=1), params["path.proj"])


def attend_paths(f_e: nm.Tensor, path_mat: nm.Tensor, params) -> nm.Tensor:
    """Scaled dot-product attention pooling: the event-pair vector queries the
    path encodings (rows of path_mat) used as both keys and values."""
    d_k = params["attn.K"].shape[1]
    q = nm.matmul(f_e, params["attn.Q"])
    k = nm.matmul(path_mat, params["attn.K"])
    v = nm.matmul(path_mat, params["attn.V"])
    scores = nm.affine(nm.matmul(q, nm.transpose(k)), 1.0 / np.sqrt(d_k))
    return nm.matmul(nm.softmax(scores), v)


def context_pair_rep(ctx: ContextOutput, params) -> nm.Tensor:
    """tanh(W_u [u_cls || u_i] + b_u) for each event, summed."""
    u1 = nm.tanh(nm.add(nm.matmul(nm.concat([ctx.u_cls, ctx.u_e1], axis=1),
                                  params["ctx.W_u"]), params["ctx.b_u"]))
    u2 = nm.tanh(nm.add(nm.matmul(nm.concat([ctx.u_cls, ctx.u_e2], axis=1),
                                  params["ctx.W_u"]), params["ctx.b_u"]))
    return nm.add(u1, u2)


def classify(f_e: nm.Tensor | None, f_p: nm.Tensor | None, f_c: nm.Tensor,
             params, ablation: str, d: int, dropout: float = 0.0,
             rng: np.random.Generator | None = None) -> nm.Tensor:
    """Softmax over the concatenated blocks, switched-off blocks zeroed."""
    if ablation not in ABLATIONS:
        raise ModelError(f"unknown ablation {ablation!r}")
    zero = nm.Tensor(np.zeros((1, d)))
    if ablation in ("wo-stru", "wo-cent") or f_e is None:
        f_e = zero
    if ablation in ("wo-stru", "wo-path") or f_p is None:
        f_p = zero
    feat = nm.concat([f_e, f_p, f_c], axis=1)
    if dropout > 0.0 and rng is not None:
        feat = nm.dropout(feat, dropout, rng)
    return nm.softmax(nm.add(nm.matmul(feat, params["clf.W"]), params["clf.b"]))


# ---------------------------------------------------------------------------
# per-document feature extraction (parameter-independent, cacheable)


@dataclass
class PairFeatures:
    pair: EventPair
    e1: int
    e2: int
    ecs1: EventCentricStructure
    ecs2: EventCentricStructure
    mats1: list[tuple[int, np.ndarray]]
    mats2: list[tuple[int, np.ndarray]]
    paths: list[PathSequence]
    path_rel_ids: list[list[int]]
    unreachable: bool
    span1: tuple[int, int]
    span2: tuple[int, int]


@dataclass
class DocFeatures:
    record: CorpusRecord
    sg: SemanticGraph
    mats: list[tuple[int, np.ndarray]]
    pairs: list[PairFeatures]
    skipped: list[tuple[EventPair, str]] = field(default_factory=list)


def extract_features(record: CorpusRecord, layers: int, k_max: int,
                     rel_vocab: Vocab) -> DocFeatures:
    """Parse the document's graph once and precompute every structure the
    forward pass needs. Pairs whose events resolve to no aligned node or
    whose spans collide are recorded as skipped."""
    sg = build_semantic_graph(parse_penman(record.amr), record.alignments)
    feats = DocFeatures(record=record, sg=sg, mats=rgcn_matrices(sg), pairs=[])
    pad_id = rel_vocab.id("[PAD]")
    for pair in record.pairs:
        span1 = record.event_span(pair.e1)
        span2 = record.event_span(pair.e2)
        try:
            if min(span1[1], span2[1]) - max(span1[0], span2[0]) >= 0:
                raise MarkerCollision(f"event spans {span1} and {span2} overlap")
            n1 = resolve_event_node(sg, span1)
            n2 = resolve_event_node(sg, span2)
        except (NoAlignedNode, MarkerCollision) as exc:
            kind = "unaligned" if isinstance(exc, NoAlignedNode) else "marker-collision"
            feats.skipped.append((pair, kind))
            continue
        ecs1 = khop_subgraph(sg, n1, layers)
        ecs2 = khop_subgraph(sg, n2, layers)
        unreachable = False
        try:
            paths = shortest_paths(sg, n1, n2, k_max=k_max)
        except NoPath:
            paths = []
            unreachable = True
        rel_ids = []
        for p in paths:
            ids = [rel_vocab.id(sg.role_vocab[r].display) for r in p.roles]
            ids.append(pad_id)
            rel_ids.append(ids)
        feats.pairs.append(PairFeatures(
            pair=pair, e1=n1, e2=n2, ecs1=ecs1, ecs2=ecs2,
            mats1=rgcn_matrices(ecs1.graph), mats2=rgcn_matrices(ecs2.graph),
            paths=paths, path_rel_ids=rel_ids, unreachable=unreachable,
            span1=span1, span2=span2,
        ))
    return feats


# ---------------------------------------------------------------------------
# full pair forward


def pair_forward(feats: DocFeatures, pf: PairFeatures, params,
                 config: ModelConfig, vocabs: dict[str, Vocab],
                 embeddings: dict[str, np.ndarray] | None = None,
                 train: bool = False,
                 rng: np.random.Generator | None = None) -> nm.Tensor:
    """Probability pair for one labeled event pair."""
    d = config.hidden
    record = feats.record
    if config.mode == "external":
        ctx = encode_context_external(record.tokens, pf.span1, pf.span2,
                                      record.doc_id, embeddings or {})
    else:
        ctx = encode_context_internal(record.tokens, pf.span1, pf.span2,
                                      params, vocabs["token"], d)
    drop = config.dropout if train else 0.0

    f_e = None
    f_p = None
    if config.ablation != "wo-stru":
        h0 = init_node_reps(feats.sg, ctx, params, vocabs["concept"])
        if config.ablation != "wo-cent":
            h_e = []
            for ecs, mats in ((pf.ecs1, pf.mats1), (pf.ecs2, pf.mats2)):
                h0_sub = nm.gather_rows(h0, ecs.node_ids)
                h_sub = rgcn_forward(mats, h0_sub, params, config.layers, drop, rng)
                h_e.append(nm.gather_rows(h_sub, [ecs.center]))
            f_e = event_pair_rep(h_e[0], h_e[1])
        if config.ablation != "wo-path" and pf.paths:
            if config.ablation == "wo-cent":
                # the graph convolution belongs to the event aggregator (the
                # path side borrows its output for node initialization), so
                # removing the event-centric component leaves the paths with
                # the pre-aggregation node representations
                h_graph = h0
            else:
                h_graph = rgcn_forward(feats.mats, h0, params, config.layers, drop, rng)
            encoded = [encode_path(p, h_graph, ids, params, d)
                       for p, ids in zip(pf.paths, pf.path_rel_ids)]
            # and without the event-pair vector there is no attention query,
            # so the softmax degrades to uniform path averaging
            query = f_e if f_e is not None else nm.Tensor(np.zeros((1, d)))
            f_p = attend_paths(query, nm.concat(encoded, axis=0), params)

    f_c = context_pair_rep(ctx, params)
    return classify(f_e, f_p, f_c, params, config.ablation, d, drop, rng)
