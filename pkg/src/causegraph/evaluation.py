"""Precision/recall/F1 and the dataset split protocols.

Two split modes: cross-topic (documents sorted by topic id; the last two
topics are the development set and the remaining topics are cut into k
contiguous blocks, so no topic ever straddles a fold boundary) and random
(documents shuffled by name with a seeded generator, cut into k equal blocks,
with a per-fold dev set carved from 10% of each fold's training documents).
Fold results aggregate by pooling confusion counts (micro).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CorpusRecord


class EvaluationError(ValueError):
    pass


class LengthMismatch(EvaluationError):
    pass


class TooFewTopics(EvaluationError):
    pass


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        """Percent; 0 when nothing was predicted positive."""
        return 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def rounded(self) -> tuple[float, float, float]:
        return (round(self.precision, 1), round(self.recall, 1), round(self.f1, 1))

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def f1_from_pr(precision: float, recall: float) -> float:
    """F1 from precision/recall given in percent (as reported in tables)."""
    return 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0


def prf1(predictions, labels) -> MetricsReport:
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    tp = fp = fn = tn = 0
    for pred, y in zip(predictions, labels):
        if pred not in (0, 1) or y not in (0, 1):
            raise EvaluationError(f"binary values required, got ({pred!r}, {y!r})")
        if pred and y:
            tp += 1
        elif pred and not y:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return MetricsReport(tp, fp, fn, tn)


# ---------------------------------------------------------------------------
# fold plans


@dataclass
class FoldPlan:
    assignments: dict[str, int]          # doc_id -> fold
    mode: str                            # "cross-topic" | "random"
    k: int
    dev_docs: list[str]                  # global dev set (cross-topic mode)
    fold_dev: dict[int, list[str]] = field(default_factory=dict)  # random mode

    def test_docs(self, fold: int) -> list[str]:
        return [d for d, f in self.assignments.items() if f == fold]

    def train_docs(self, fold: int) -> list[str]:
        dev = set(self.fold_dev.get(fold, ()))
        return [d for d, f in self.assignments.items() if f != fold and d not in dev]

    def dev_for(self, fold: int) -> list[str]:
        return self.fold_dev.get(fold, self.dev_docs)


def _topic_sort_key(topic: str):
    return (0, int(topic)) if topic.isdigit() else (1, topic)


def make_folds(records: list[CorpusRecord], mode: str, k: int, seed: int = 0) -> FoldPlan:
    if k < 2:
        raise EvaluationError(f"k must be >= 2, got {k}")
    if not records:
        raise EvaluationError("empty corpus")
    if mode == "cross-topic":
        topics: dict[str, list[str]] = {}
        for rec in records:
            topics.setdefault(rec.topic_id, []).append(rec.doc_id)
        order = sorted(topics, key=_topic_sort_key)
        if len(order) - 2 < k:
            raise TooFewTopics(f"{len(order)} topics cannot give {k} folds plus 2 dev topics")
        dev_topics = order[-2:]
        fold_topics = np.array_split(order[:-2], k)
        plan = FoldPlan(assignments={}, mode=mode, k=k,
                        dev_docs=[d for t in dev_topics for d in topics[t]])
        for fold, block in enumerate(fold_topics):
            for t in block:
                for d in topics[t]:
                    plan.assignments[d] = fold
        return plan
    if mode == "random":
        names = sorted(rec.doc_id for rec in records)
        rng = np.random.default_rng(seed)
        names = [names[i] for i in rng.permutation(len(names))]
        blocks = np.array_split(names, k)
        plan = FoldPlan(assignments={}, mode=mode, k=k, dev_docs=[])
        for fold, block in enumerate(blocks):
            for d in block:
                plan.assignments[d] = fold
        for fold in range(k):
            train = [d for d in names if plan.assignments[d] != fold]
            n_dev = max(1, int(round(0.1 * len(train))))
            plan.fold_dev[fold] = train[:n_dev]
        return plan
    raise EvaluationError(f"unknown split mode {mode!r}")


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    fold: int
    metrics: MetricsReport
    report: object                        # training.TrainReport
    pipeline: object                      # training.Pipeline (trained)
    predictions: list[tuple[str, str, str, float, float, int, int]]
    # (doc_id, e1, e2, p0, p1, prediction, label)


def _run_fold(args):
    from .training import fit

    records, plan, config, fold, embeddings = args
    by_id = {r.doc_id: r for r in records}
    train = [by_id[d] for d in sorted(plan.train_docs(fold))]
    dev = [by_id[d] for d in sorted(plan.dev_for(fold))]
    test = [by_id[d] for d in sorted(plan.test_docs(fold))]
    fold_config = type(config)(**{**config.__dict__, "seed": config.seed + 1000 * fold})
    pipe, report = fit(train, dev, fold_config, embeddings)
    test_by_id = {r.doc_id: r for r in test}
    refs, _ = pipe.usable_pairs(test)
    preds, labels, probs = pipe.predict(test_by_id, refs)
    rows = []
    for ref, pred, (p0, p1) in zip(refs, preds, probs):
        pair = pipe.features(test_by_id[ref.doc_id]).pairs[ref.pair_index].pair
        rows.append((ref.doc_id, pair.e1, pair.e2, p0, p1, pred, ref.label))
    return FoldResult(fold=fold, metrics=prf1(preds, labels), report=report,
                      pipeline=pipe, predictions=rows)


def run_cross_validation(records: list[CorpusRecord], plan: FoldPlan, config,
                         embeddings: dict[str, np.ndarray] | None = None,
                         jobs: int = 1) -> tuple[MetricsReport, list[FoldResult]]:
    """Train on the other folds, test on each fold once, pool the confusion
    counts over folds."""
    missing = [r.doc_id for r in records
               if r.doc_id not in plan.assignments and r.doc_id not in plan.dev_docs]
    if missing:
        raise EvaluationError(f"plan does not cover documents: {missing[:5]}")
    tasks = [(records, plan, config, fold, embeddings) for fold in range(plan.k)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    results.sort(key=lambda r: r.fold)
    agg = MetricsReport(
        tp=sum(r.metrics.tp for r in results),
        fp=sum(r.metrics.fp for r in results),
        fn=sum(r.metrics.fn for r in results),
        tn=sum(r.metrics.tn for r in results),
    )
    return agg, results
