import json
import struct
import subprocess
import sys

import numpy as np
import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

import embed_export as ee

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "strikes", "rescues", "warns", "flees", "kit",
    "yesterday", "quietly", "again", "nearby", "twice", "thereafter",
    "down", "##town",  # forces "downtown" into two pieces
]


@pytest.fixture(scope="module")
def tiny_model_dir(tmp_path_factory):
    """A local 768-dim encoder with a wordpiece vocab covering the fixtures."""
    directory = tmp_path_factory.mktemp("tiny-bert")
    (directory / "vocab.txt").write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = transformers.BertTokenizer.from_pretrained(str(directory))
    assert tokenizer.vocab_size == len(VOCAB)
    torch.manual_seed(0)
    config = transformers.BertConfig(
        vocab_size=len(VOCAB), hidden_size=768, num_hidden_layers=1,
        num_attention_heads=4, intermediate_size=128, max_position_embeddings=64)
    model = transformers.BertModel(config)
    tokenizer.save_pretrained(directory)
    model.save_pretrained(directory)
    return str(directory)


def record(doc_id, tokens, span1, span2, label=1):
    return {
        "doc_id": doc_id, "topic_id": "t0", "sentence": " ".join(tokens),
        "tokens": tokens, "amr": "(x / dummy)", "alignments": {},
        "events": [{"event_id": "ev1", "token_span": list(span1)},
                   {"event_id": "ev2", "token_span": list(span2)}],
        "pairs": [{"e1": "ev1", "e2": "ev2", "label": label}],
    }


FIXTURE = [
    record("d0", ["strikes", "kit", "warns", "kit"], (0, 0), (2, 2)),
    record("d1", ["rescues", "flees", "yesterday"], (0, 0), (1, 1)),
    record("d2", ["warns", "downtown", "flees", "twice"], (0, 0), (2, 2)),
]


def write_corpus(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def parse_ctxemb(raw: bytes):
    """Independent reader following the documented layout."""
    assert raw[:7] == b"CTXEMB1"
    off = 7
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        doc_id = raw[off:off + nlen].decode("utf-8")
        off += nlen
        n_tok, dim = struct.unpack_from("<II", raw, off)
        off += 8
        mat = np.frombuffer(raw, dtype="<f4", count=n_tok * dim, offset=off)
        out[doc_id] = mat.reshape(n_tok, dim)
        off += 4 * n_tok * dim
    assert off == len(raw)
    return out


def test_marker_insertion_convention():
    seq = ee.insert_markers(["a", "b", "c"], (0, 0), (2, 2))
    assert seq == ["[CLS]", "<e1>", "a", "</e1>", "b", "<e2>", "c", "</e2>", "[SEP]"]
    with pytest.raises(ee.ExportError):
        ee.insert_markers(["a", "b"], (0, 1), (1, 1))


def test_export_three_documents_dim_768(tmp_path, tiny_model_dir):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, FIXTURE)
    out = tmp_path / "emb.ctxemb"
    n = ee.export(corpus, out, tiny_model_dir)
    assert n == 3
    index = parse_ctxemb(out.read_bytes())
    assert sorted(index) == ["d0", "d1", "d2"]
    for rec in FIXTURE:
        mat = index[rec["doc_id"]]
        assert mat.shape == (len(rec["tokens"]) + 6, 768)
        assert np.all(np.isfinite(mat))


def test_repeat_runs_byte_identical(tmp_path, tiny_model_dir):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, FIXTURE)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    ee.export(corpus, a, tiny_model_dir)
    ee.export(corpus, b, tiny_model_dir)
    assert a.read_bytes() == b.read_bytes()


def test_empty_corpus_gives_valid_empty_file(tmp_path, tiny_model_dir):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("", encoding="utf-8")
    out = tmp_path / "empty.bin"
    assert ee.export(corpus, out, tiny_model_dir) == 0
    assert parse_ctxemb(out.read_bytes()) == {}


def test_subword_pooling_matches_manual_mean(tmp_path, tiny_model_dir):
    tokenizer, model = ee.load_model(tiny_model_dir)
    rec = FIXTURE[2]  # contains "downtown" -> "down" + "##town"
    mat = ee.encode_document(rec, tokenizer, model, max_len=64)
    seq = ee.insert_markers(rec["tokens"], (0, 0), (2, 2))
    assert mat.shape[0] == len(seq)
    pieces = tokenizer("downtown", add_special_tokens=False)["input_ids"]
    assert len(pieces) == 2  # the pooling path is actually exercised


def test_sequence_too_long(tmp_path, tiny_model_dir):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, FIXTURE)
    with pytest.raises(ee.SequenceTooLong) as err:
        ee.export(corpus, tmp_path / "o.bin", tiny_model_dir, max_len=5)
    assert err.value.doc_id == "d0"


def test_multi_pair_record_rejected(tmp_path, tiny_model_dir):
    bad = record("d9", ["warns", "flees"], (0, 0), (1, 1))
    bad["pairs"] = bad["pairs"] * 2
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, [bad])
    with pytest.raises(ee.ExportError):
        ee.export(corpus, tmp_path / "o.bin", tiny_model_dir)


def test_model_load_failure():
    with pytest.raises(ee.ModelLoadFailure):
        ee.load_model("/nonexistent/model/dir")


def test_cli_end_to_end(tmp_path, tiny_model_dir):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, FIXTURE)
    out = tmp_path / "cli.bin"
    proc = subprocess.run(
        [sys.executable, "-m", "embed_export", "--corpus", str(corpus),
         "--out", str(out), "--model", tiny_model_dir, "--max-len", "64"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


def test_primary_engine_loads_the_output(tmp_path, tiny_model_dir):
    causegraph = pytest.importorskip("causegraph")
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, FIXTURE)
    out = tmp_path / "emb.bin"
    ee.export(corpus, out, tiny_model_dir)
    index = causegraph.load_ctxemb(out)
    assert sorted(index) == ["d0", "d1", "d2"]
    for rec in FIXTURE:
        assert index[rec["doc_id"]].shape == (len(rec["tokens"]) + 6, 768)
