"""Export contextual token vectors for a corpus into a CTXEMB file.

Reads the line-delimited JSON corpus, rebuilds each document's
marker-inserted token sequence ([CLS], tokens with <e1></e1> and <e2></e2>
around the two event spans, [SEP]), runs a pretrained masked-LM encoder, and
mean-pools subword vectors back onto the sequence elements so the output
carries exactly one row per marker-inserted position.

The consuming engine keys entries by doc_id, so every record must carry
exactly one labeled event pair. The four marker strings are registered as
additional special tokens; their fresh embedding rows are initialized from a
fixed seed and the encoder runs in eval mode, so repeated runs are
byte-identical.

CTXEMB layout (little-endian): magic "CTXEMB1"; uint32 document count; per
document uint32 doc_id byte length, doc_id UTF-8, uint32 token count, uint32
dimension, then token*dim float32 row-major values.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import tempfile

import numpy as np
import torch

CTXEMB_MAGIC = b"CTXEMB1"
MARKERS = ("<e1>", "</e1>", "<e2>", "</e2>")


class ExportError(ValueError):
    pass


class SequenceTooLong(ExportError):
    def __init__(self, doc_id: str, length: int, limit: int):
        super().__init__(f"document {doc_id!r} needs {length} subword positions, limit {limit}")
        self.doc_id = doc_id


class ModelLoadFailure(ExportError):
    pass


def insert_markers(tokens: list[str], span1, span2) -> list[str]:
    """Same convention as the consuming engine: [CLS] first, opening markers
    before their span, closing markers after, [SEP] last."""
    a1, b1 = span1
    a2, b2 = span2
    if min(b1, b2) - max(a1, a2) >= 0:
        raise ExportError(f"event spans {span1} and {span2} overlap")
    seq = ["[CLS]"]
    for k, tok in enumerate(tokens):
        if k == a1:
            seq.append("<e1>")
        if k == a2:
            seq.append("<e2>")
        seq.append(tok)
        if k == b1:
            seq.append("</e1>")
        if k == b2:
            seq.append("</e2>")
    seq.append("[SEP]")
    return seq


def load_corpus(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ExportError(f"line {lineno}: not JSON ({exc})") from exc
            for name in ("doc_id", "tokens", "events", "pairs"):
                if name not in obj:
                    raise ExportError(f"line {lineno}: missing field {name!r}")
            records.append(obj)
    return records


def event_span(record: dict, event_id: str):
    for ev in record["events"]:
        if ev["event_id"] == event_id:
            return tuple(ev["token_span"])
    raise ExportError(f"document {record['doc_id']!r}: unknown event {event_id!r}")


def load_model(model_id: str, seed: int = 0):
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load {model_id!r}: {exc}") from exc
    added = tokenizer.add_special_tokens({"additional_special_tokens": list(MARKERS)})
    if added:
        old = model.get_input_embeddings().weight.shape[0]
        model.resize_token_embeddings(len(tokenizer))
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            fresh = torch.normal(0.0, 0.02, size=(added, model.config.hidden_size),
                                 generator=gen)
            model.get_input_embeddings().weight[old:old + added] = fresh
    model.eval()
    return tokenizer, model


def encode_document(record: dict, tokenizer, model, max_len: int) -> np.ndarray:
    if len(record["pairs"]) != 1:
        raise ExportError(
            f"document {record['doc_id']!r} has {len(record['pairs'])} pairs; the "
            "CTXEMB boundary carries one marker-inserted sequence per document")
    pair = record["pairs"][0]
    seq = insert_markers(record["tokens"], event_span(record, pair["e1"]),
                         event_span(record, pair["e2"]))

    ids: list[int] = []
    owners: list[int] = []  # subword position -> sequence element
    for w, word in enumerate(seq):
        if word in ("[CLS]", "[SEP]"):
            piece_ids = [tokenizer.cls_token_id if word == "[CLS]" else tokenizer.sep_token_id]
        elif word in MARKERS:
            piece_ids = [tokenizer.convert_tokens_to_ids(word)]
        else:
            piece_ids = tokenizer(word, add_special_tokens=False)["input_ids"]
            if not piece_ids:
                piece_ids = [tokenizer.unk_token_id]
        ids.extend(piece_ids)
        owners.extend([w] * len(piece_ids))
    if len(ids) > max_len:
        raise SequenceTooLong(record["doc_id"], len(ids), max_len)

    with torch.no_grad():
        out = model(input_ids=torch.tensor([ids]), attention_mask=torch.ones(1, len(ids), dtype=torch.long))
    hidden = out.last_hidden_state[0].numpy()

    pooled = np.zeros((len(seq), hidden.shape[1]), dtype=np.float32)
    counts = np.zeros(len(seq), dtype=np.int64)
    for pos, w in enumerate(owners):
        pooled[w] += hidden[pos]
        counts[w] += 1
    pooled /= counts[:, None]
    return pooled


def write_ctxemb(path, entries: list[tuple[str, np.ndarray]]) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ctxemb.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CTXEMB_MAGIC)
            fh.write(struct.pack("<I", len(entries)))
            for doc_id, mat in entries:
                nb = doc_id.encode("utf-8")
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
                fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export(corpus_path, out_path, model_id: str, max_len: int = 512) -> int:
    records = load_corpus(corpus_path)
    tokenizer, model = load_model(model_id)
    entries = []
    for record in records:
        entries.append((record["doc_id"], encode_document(record, tokenizer, model, max_len)))
    write_ctxemb(out_path, entries)
    return len(entries)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="embed-export",
        description="Write contextual token vectors for a corpus into a CTXEMB file")
    ap.add_argument("--corpus", required=True, help="line-delimited JSON corpus")
    ap.add_argument("--out", required=True, help="output CTXEMB path")
    ap.add_argument("--model", required=True,
                    help="pretrained encoder (hub id or local directory)")
    ap.add_argument("--max-len", type=int, default=512,
                    help="max subword positions per document (default: 512)")
    args = ap.parse_args(argv)
    try:
        n = export(args.corpus, args.out, args.model, args.max_len)
    except ExportError as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1
    print(f"embed-export: wrote {n} documents to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
