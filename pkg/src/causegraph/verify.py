"""Block-by-block gradient verification against central finite differences.

Each block builds a small deterministic fixture (dropout off), wires the
block's own parameters plus its tensor inputs as checkable leaves, and
reports the max relative error between tape gradients and numeric ones.
"""

from __future__ import annotations

import time

import numpy as np

from . import numerics as nm
from .data import gen_synthetic
from .model import (ModelConfig, attend_paths, build_params, classify,
                    context_pair_rep, encode_context_internal, extract_features,
                    init_node_reps, pair_forward, rgcn_forward)
from .training import TrainConfig, build_vocabs, focal_loss


def _fixture(hidden: int = 12, layers: int = 3, param_seed: int = 5):
    records, _ = gen_synthetic(n_docs=20, seed=11)
    records = records[:2]  # one path-family doc, one centric-family doc
    vocabs = build_vocabs(records)
    config = ModelConfig(hidden=hidden, layers=layers, dropout=0.0)
    params = build_params(config, len(vocabs["token"]), len(vocabs["concept"]),
                          len(vocabs["relation"]), seed=param_seed)
    # verification fixtures use unit-scale embeddings: training-scale tables
    # (sigma 0.02) push some true gradients to ~1e-8 where central differences
    # are all roundoff
    for name, t in params.items():
        if name.startswith("emb."):
            t.data *= 50.0
    feats = [extract_features(r, layers, 8, vocabs["relation"]) for r in records]
    return records, vocabs, config, params, feats


def _subset(params, prefixes) -> dict[str, nm.Tensor]:
    return {k: v for k, v in params.items() if k.startswith(prefixes)}


def gradcheck_blocks(hidden: int = 10, eps: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per model block; keys are block names."""
    records, vocabs, config, params, feats = _fixture(hidden=hidden)
    d = config.hidden
    results: dict[str, float] = {}

    rec, ft = records[0], feats[0]
    pf = ft.pairs[0]
    # every block draws from its own fixed-seed generator so one block's
    # fixture values (and hence its finite-difference conditioning) never
    # shift when another block changes
    rng = np.random.default_rng(31)
    x_const = nm.Tensor(rng.normal(0.0, 0.5, size=(len(rec.tokens), d)))

    from .model import ContextOutput

    ctx_const = ContextOutput(
        u_cls=nm.Tensor(rng.normal(size=(1, d))),
        u_e1=nm.Tensor(rng.normal(size=(1, d))),
        u_e2=nm.Tensor(rng.normal(size=(1, d))),
        x=x_const, seq_len=len(rec.tokens) + 6)

    # node initialization: averaged spans + concept table lookups
    checked = _subset(params, ("emb.concept",))

    def f_init():
        return nm.sum_all(nm.tanh(init_node_reps(ft.sg, ctx_const, params, vocabs["concept"])))

    results["node-init"] = nm.grad_check(f_init, checked, eps)

    # relational graph convolution, all layers, plus its input
    rng = np.random.default_rng(32)
    h0 = nm.Tensor(rng.normal(0.0, 0.5, size=(ft.sg.n_nodes(), d)), param=True, name="h0")
    checked = _subset(params, ("rgcn.",))
    checked["h0"] = h0

    def f_rgcn():
        return nm.sum_all(nm.tanh(rgcn_forward(ft.mats, h0, params, config.layers)))

    results["rgcn"] = nm.grad_check(f_rgcn, checked, eps)

    # path BiLSTM over a real shortest path
    from .model import encode_path

    rng = np.random.default_rng(33)
    node_reps = nm.Tensor(rng.normal(0.0, 0.5, size=(ft.sg.n_nodes(), d)),
                          param=True, name="node_reps")
    checked = _subset(params, ("path.", "emb.rel"))
    checked["node_reps"] = node_reps
    path, rel_ids = pf.paths[0], pf.path_rel_ids[0]

    def f_lstm():
        return nm.sum_all(nm.tanh(encode_path(path, node_reps, rel_ids, params, d)))

    results["bilstm"] = nm.grad_check(f_lstm, checked, eps)

    # attention pooling over three fake path encodings
    rng = np.random.default_rng(34)
    f_e = nm.Tensor(rng.normal(size=(1, d)), param=True, name="f_e")
    p_mat = nm.Tensor(rng.normal(size=(3, d)), param=True, name="p_mat")
    checked = _subset(params, ("attn.",))
    checked.update({"f_e": f_e, "p_mat": p_mat})

    def f_attn():
        return nm.sum_all(nm.tanh(attend_paths(f_e, p_mat, params)))

    results["attention"] = nm.grad_check(f_attn, checked, eps)

    # context encoder + pair interaction + classifier
    checked = _subset(params, ("ctx.", "emb.tok", "clf."))
    span1 = rec.event_span(rec.pairs[0].e1)
    span2 = rec.event_span(rec.pairs[0].e2)

    def f_ctx():
        ctx = encode_context_internal(rec.tokens, span1, span2, params, vocabs["token"], d)
        f_c = context_pair_rep(ctx, params)
        p = classify(None, None, f_c, params, "wo-stru", d)
        return focal_loss(p, 1, beta=0.5, gamma=2.0)

    results["context-classifier"] = nm.grad_check(f_ctx, checked, eps)

    # focal loss against raw logits
    logits = nm.Tensor(np.array([[0.3, -0.2]]), param=True, name="logits")

    def f_loss():
        return focal_loss(nm.softmax(logits), 1, beta=0.75, gamma=2.0)

    results["focal-loss"] = nm.grad_check(f_loss, {"logits": logits}, eps)

    # full forward pass, every parameter (smaller width: ~3k coordinates)
    frecords, fvocabs, fconfig, fparams, ffeats = _fixture(hidden=6, param_seed=8)
    full_ft = ffeats[0]
    full_pf = full_ft.pairs[0]

    def f_full():
        p = pair_forward(full_ft, full_pf, fparams, fconfig, fvocabs, train=False)
        return focal_loss(p, full_pf.pair.label, beta=0.5, gamma=2.0)

    results["full-model"] = nm.grad_check(f_full, fparams, eps)
    return results


def run_gradcheck(hidden: int = 10, eps: float = 1e-5, tol: float = 1e-4):
    """(results, elapsed seconds, all_passed) for CLI and acceptance use."""
    t0 = time.perf_counter()
    results = gradcheck_blocks(hidden=hidden, eps=eps)
    elapsed = time.perf_counter() - t0
    return results, elapsed, all(err <= tol for err in results.values())
