import pathlib

import numpy as np
import pytest

import protst


def test_encode_round_trip():
    seq = protst.encode(b"\x01\x02\xff", 8)
    assert seq.ids[:5] == [protst.vocab.CLS, 1, 2, 255, protst.vocab.SEP]
    assert seq.ids[5:] == [protst.vocab.PAD] * 3
    assert protst.decode(seq) == b"\x01\x02\xff"
    assert seq.content_len() == 3


def test_masking_leaves_framing_alone():
    seq = protst.encode(bytes(range(40)), 64)
    masked, positions, originals = protst.apply_mlm_mask(seq, 0.2, 0.5, 3)
    assert len(positions) == 8
    assert masked.ids[0] == protst.vocab.CLS
    assert all(seq.content_mask()[p] for p in positions)
    assert [seq.ids[p] for p in positions] == originals


def test_reference_decoder_matches_generated_labels():
    records = protst.generate_shard("ib", seed=3, files=4)
    files = [r for r in records if not r.is_function]
    assert len(files) == 4
    for r in files:
        inst, func, _ = protst.reference_decode(r.bytes)
        assert inst == r.inst_labels
        assert func == r.func_labels


def test_corpus_file_round_trip(tmp_path):
    records = protst.generate_shard("fsig", seed=5, files=3)
    path = str(tmp_path / "fsig.corpus")
    protst.write_corpus(records, path)
    assert protst.corpus_digest(protst.read_corpus(path)) == protst.corpus_digest(records)


def test_metrics():
    assert protst.macro_f1([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert protst.rank_pool([1.0, 0.0], [[0.0, 1.0], [1.0, 0.1]], [7, 9], 9) == 1
    assert protst.mrr_from_ranks([1, 2, 4]) == pytest.approx((1 + 0.5 + 0.25) / 3)


def test_errors_are_raised_as_protst_error():
    with pytest.raises(protst.Error, match="EmptyInput"):
        protst.encode(b"", 8)
    with pytest.raises(protst.Error, match="Io"):
        protst.load_checkpoint("/nonexistent/x.ckpt")


def test_run_graph_and_checkpoint(tmp_path: pathlib.Path):
    for shard in ("mlm", "ib"):
        protst.write_corpus(protst.generate_shard(shard, seed=2, files=6), str(tmp_path / f"{shard}.corpus"))
    graph = tmp_path / "g.graph"
    graph.write_text(
        "graph smoke\n"
        "backbone hidden=8 layers=1 heads=2 ffn=16 max_len=32 seed=1\n"
        "defaults epochs=1 batch=8 max_len=32 max_train=16 max_eval=8\n"
        "node mlm kind=mlm data=mlm.corpus\n"
        "node ib kind=ib data=ib.corpus parent=mlm\n"
    )
    out = tmp_path / "out"
    result = protst.run_graph(str(graph), str(out))
    assert set(result) == {"mlm", "ib"}
    assert result["ib"]["lineage"] == ["mlm"]
    assert 0.0 <= result["ib"]["metrics"]["macro_f1"] <= 1.0
    assert protst.run_graph(str(graph), str(out))["ib"]["reused"]

    ib = protst.load_checkpoint(str(out / "ib.ckpt"))
    mlm = protst.load_checkpoint(str(out / "mlm.ckpt"))
    assert ib.lineage == ["mlm"]
    emb = ib.parameter("backbone.embed.byte")
    assert emb.shape == (261, 8)
    assert emb.dtype == np.float64
    assert "head.ib.w0" in ib.parameter_names()
    assert mlm.digest != ib.digest
    assert protst.read_report(str(out / "ib.report"))["primary_metric"] == "macro_f1"
