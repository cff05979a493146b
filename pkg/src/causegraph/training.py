"""Focal-loss objective, class-weighted sampling, and the epoch loop."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nm
from .data import CorpusRecord, Vocab
from .evaluation import MetricsReport, prf1
from .model import (DocFeatures, ModelConfig, build_params, extract_features,
                    pair_forward)
from .penman import parse_penman
from .graph import build_semantic_graph


class TrainingError(ValueError):
    pass


class InvalidProbability(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    def __init__(self, batch_id: int):
        super().__init__(f"non-finite loss in batch {batch_id}")
        self.batch_id = batch_id


@dataclass
class TrainConfig:
    lr: float = 1e-3
    dropout: float = 0.5
    layers: int = 3
    gamma: float = 2.0
    beta: float = 0.5
    batch_size: int = 20
    pos_rate: int = 1
    neg_rate: float = 1.0
    epochs: int = 50
    seed: int = 7
    ablation: str = "full"
    hidden: int = 64
    k_max: int = 8
    patience: int = 10
    weight_decay: float = 0.01
    mode: str = "internal"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise TrainingError(f"beta must be in [0, 1], got {self.beta}")
        if self.gamma < 0.0:
            raise TrainingError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.neg_rate <= 1.0:
            raise TrainingError(f"neg_rate must be in (0, 1], got {self.neg_rate}")
        if self.pos_rate < 1:
            raise TrainingError(f"pos_rate must be >= 1, got {self.pos_rate}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(hidden=self.hidden, layers=self.layers, dropout=self.dropout,
                           k_max=self.k_max, ablation=self.ablation, mode=self.mode)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dev_precision: float
    dev_recall: float
    dev_f1: float
    dev_loss: float = 0.0


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = 0.0
    wall_time: float = 0.0
    skips: dict[str, int] = field(default_factory=lambda: {
        "unaligned": 0, "unreachable": 0, "marker-collision": 0})

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ep in self.epochs:
                fh.write(json.dumps(asdict(ep)) + "\n")
            fh.write(json.dumps({
                "best_epoch": self.best_epoch,
                "best_dev_f1": self.best_dev_f1,
                "wall_time": self.wall_time,
                "skips": self.skips,
            }) + "\n")


def focal_loss(p: nm.Tensor, label: int, beta: float, gamma: float) -> nm.Tensor:
    """-w (1 - p_t)^gamma log(p_t) with w = beta for the positive class and
    1 - beta for the negative class; p_t is clamped to [1e-12, 1]."""
    if label not in (0, 1):
        raise InvalidProbability(f"label must be 0 or 1, got {label!r}")
    vals = p.data
    if vals.shape != (1, 2) or not np.all(np.isfinite(vals)) or np.any(vals < -1e-9) \
            or abs(vals.sum() - 1.0) > 1e-6:
        raise InvalidProbability(f"not a probability pair: {vals!r}")
    p_t = nm.clamp(nm.slice_cols(p, label, label + 1), 1e-12, 1.0)
    w = beta if label == 1 else 1.0 - beta
    return nm.affine(nm.mul(nm.powc(nm.affine(p_t, -1.0, 1.0), gamma), nm.log(p_t)), -w)


@dataclass(frozen=True)
class PairRef:
    doc_id: str
    pair_index: int
    label: int


def sample_epoch(pairs: list[PairRef], pos_rate: int, neg_rate: float,
                 rng: np.random.Generator) -> list[PairRef]:
    """Duplicate each positive pos_rate times, keep each negative with
    probability neg_rate, then shuffle; deterministic given the generator."""
    out: list[PairRef] = []
    for ref in pairs:
        if ref.label == 1:
            out.extend([ref] * int(pos_rate))
        elif neg_rate >= 1.0 or rng.random() < neg_rate:
            out.append(ref)
    perm = rng.permutation(len(out))
    return [out[i] for i in perm]


# ---------------------------------------------------------------------------
# vocabulary construction (training split only; unseen items map to OOV)


def build_vocabs(records: list[CorpusRecord]) -> dict[str, Vocab]:
    tokens: set[str] = set()
    concepts: set[str] = set()
    relations: set[str] = set()
    for rec in records:
        tokens.update(rec.tokens)
        sg = build_semantic_graph(parse_penman(rec.amr), rec.alignments)
        concepts.update(n.concept for n in sg.nodes)
        relations.update(info.display for info in sg.role_vocab)
    return {
        "token": Vocab(tokens),
        "concept": Vocab(concepts),
        "relation": Vocab(relations),
    }


# ---------------------------------------------------------------------------
# pipeline: features + params + forward for a fixed corpus


class Pipeline:
    """Owns vocabularies, parameters and the per-document feature cache."""

    def __init__(self, config: TrainConfig, vocabs: dict[str, Vocab],
                 params: dict[str, nm.Tensor],
                 embeddings: dict[str, np.ndarray] | None = None):
        self.config = config
        self.mconfig = config.model_config()
        self.vocabs = vocabs
        self.params = params
        self.embeddings = embeddings
        self._features: dict[str, DocFeatures] = {}

    @classmethod
    def fresh(cls, config: TrainConfig, train_records: list[CorpusRecord],
              embeddings: dict[str, np.ndarray] | None = None) -> "Pipeline":
        vocabs = build_vocabs(train_records)
        if config.mode == "external":
            if not embeddings:
                raise TrainingError("external mode requires a contextual-embedding file")
            dims = {m.shape[1] for m in embeddings.values()}
            if len(dims) == 1:
                config.hidden = dims.pop()
        params = build_params(config.model_config(), len(vocabs["token"]),
                              len(vocabs["concept"]), len(vocabs["relation"]),
                              seed=config.seed)
        return cls(config, vocabs, params, embeddings)

    def features(self, record: CorpusRecord) -> DocFeatures:
        feats = self._features.get(record.doc_id)
        if feats is None:
            if self.config.mode == "external" and len(record.pairs) > 1:
                raise TrainingError(
                    f"document {record.doc_id!r} has {len(record.pairs)} pairs; external "
                    "mode needs one labeled pair per record (one embedding entry per doc)")
            feats = extract_features(record, self.config.layers, self.config.k_max,
                                     self.vocabs["relation"])
            self._features[record.doc_id] = feats
        return feats

    def usable_pairs(self, records: list[CorpusRecord]):
        """(refs, skips): pair references that survive feature extraction."""
        refs: list[PairRef] = []
        skips = {"unaligned": 0, "unreachable": 0, "marker-collision": 0}
        for rec in records:
            feats = self.features(rec)
            for _, kind in feats.skipped:
                skips[kind] += 1
            for i, pf in enumerate(feats.pairs):
                if pf.unreachable:
                    skips["unreachable"] += 1
                refs.append(PairRef(rec.doc_id, i, pf.pair.label))
        return refs, skips

    def forward(self, records_by_id, ref: PairRef, train: bool = False,
                rng: np.random.Generator | None = None) -> nm.Tensor:
        feats = self.features(records_by_id[ref.doc_id])
        return pair_forward(feats, feats.pairs[ref.pair_index], self.params,
                            self.mconfig, self.vocabs, self.embeddings,
                            train=train, rng=rng)

    def predict(self, records_by_id, refs: list[PairRef]):
        """(predictions, labels, probabilities) without dropout or taping."""
        preds, labels, probs = [], [], []
        for ref in refs:
            p = self.forward(records_by_id, ref, train=False)
            probs.append((float(p.data[0, 0]), float(p.data[0, 1])))
            preds.append(int(p.data[0, 1] > p.data[0, 0]))
            labels.append(ref.label)
        return preds, labels, probs


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def fit(train_records: list[CorpusRecord], dev_records: list[CorpusRecord],
        config: TrainConfig,
        embeddings: dict[str, np.ndarray] | None = None) -> tuple[Pipeline, TrainReport]:
    """Mini-batch AdamW on the summed focal loss; keeps the parameters of the
    epoch with the best dev F1 and stops early after `patience` stale epochs."""
    t0 = time.perf_counter()
    pipe = Pipeline.fresh(config, train_records, embeddings)
    by_id = {r.doc_id: r for r in list(train_records) + list(dev_records)}
    train_refs, skips = pipe.usable_pairs(train_records)
    dev_refs, dev_skips = pipe.usable_pairs(dev_records)
    for k, v in dev_skips.items():
        skips[k] += v

    rng = np.random.default_rng(config.seed)
    opt = nm.OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    report = TrainReport(skips=skips)
    best_data: dict[str, np.ndarray] | None = None
    best_key: tuple[float, float] | None = None
    batch_id = 0
    for epoch in range(config.epochs):
        samples = sample_epoch(train_refs, config.pos_rate, config.neg_rate, rng)
        epoch_losses = []
        for batch in _chunks(samples, config.batch_size):
            with nm.Tape() as tape:
                try:
                    losses = [focal_loss(pipe.forward(by_id, ref, train=True, rng=rng),
                                         ref.label, config.beta, config.gamma)
                              for ref in batch]
                except InvalidProbability as exc:
                    raise NonFiniteLoss(batch_id) from exc
                total = nm.sum_all(nm.concat(losses, axis=0)) if losses else None
            if total is None:
                continue
            if not np.isfinite(total.item()):
                raise NonFiniteLoss(batch_id)
            gmap = tape.gradients(total)
            grads = {name: gmap.get(t.tid, np.zeros_like(t.data))
                     for name, t in pipe.params.items()}
            nm.adamw_step(pipe.params, grads, opt)
            epoch_losses.append(total.item())
            batch_id += 1
        preds, labels, probs = pipe.predict(by_id, dev_refs)
        dev = prf1(preds, labels) if dev_refs else MetricsReport(0, 0, 0, 0)
        dev_loss = 0.0
        for ref, (p0, p1) in zip(dev_refs, probs):
            p_t = max(p1 if ref.label == 1 else p0, 1e-12)
            w = config.beta if ref.label == 1 else 1.0 - config.beta
            dev_loss += -w * (1.0 - p_t) ** config.gamma * np.log(p_t)
        report.epochs.append(EpochStats(
            epoch=epoch,
            loss=float(np.mean(epoch_losses)) if epoch_losses else 0.0,
            dev_precision=dev.precision, dev_recall=dev.recall, dev_f1=dev.f1,
            dev_loss=float(dev_loss)))
        # selection on dev F1; equal F1 resolves to the more confident epoch
        key = (dev.f1, -dev_loss)
        if best_key is None or key > best_key:
            best_key = key
            report.best_epoch = epoch
            report.best_dev_f1 = dev.f1
            best_data = {name: t.data.copy() for name, t in pipe.params.items()}
        elif epoch - report.best_epoch >= config.patience:
            break
    if best_data is not None:
        for name, t in pipe.params.items():
            t.data = best_data[name]
    report.wall_time = time.perf_counter() - t0
    return pipe, report
