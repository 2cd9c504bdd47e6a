import numpy as np
import pytest

from fpx.quant import BitWidth
from fpx.scenarios import build_default_corpus, data_path
from fpx.toymodel import (
    LayerId, LayerKind, forward, from_bytes, generate_corpus, init_model, load_model, quality_proxy,
    read_corpus, save_model, to_bytes, weight_checksum, write_corpus,
)

GOLDEN_2BLOCK = "f16d8c15022a8aa4e902f06f5b7f9df141b1286804e230022f8e47c9d6904924"


def test_init_is_deterministic_and_pinned(small_model):
    again = init_model(42, 2, 32, 64, 64)
    assert weight_checksum(again) == weight_checksum(small_model) == GOLDEN_2BLOCK
    assert weight_checksum(init_model(43, 2, 32, 64, 64)) != GOLDEN_2BLOCK


def test_layer_inventory(small_model):
    assert small_model.num_layers == 8
    assert small_model.layers[:4] == [LayerId(0, k) for k in LayerKind]
    shapes = {k: small_model.weights[LayerId(1, k)].shape for k in LayerKind}
    assert shapes == {LayerKind.QKV: (32, 96), LayerKind.OUT_PROJ: (32, 32),
                      LayerKind.FFN_UP: (32, 64), LayerKind.FFN_DOWN: (64, 32)}


def test_layer_id_ordering():
    assert LayerId(0, LayerKind.FFN_DOWN) < LayerId(1, LayerKind.QKV)
    assert LayerId(2, LayerKind.QKV) < LayerId(2, LayerKind.OUT_PROJ) < LayerId(2, LayerKind.FFN_UP)


def test_invalid_dimensions():
    with pytest.raises(ValueError):
        init_model(0, 0, 32, 64, 64)


def test_b16_plan_equals_no_plan(small_model, short_corpus):
    seq = short_corpus[0]
    ref, _ = forward(small_model, seq)
    plan16 = {l: BitWidth.B16 for l in small_model.layers}
    out, _ = forward(small_model, seq, plan16)
    assert np.array_equal(out, ref)


def test_b8_everywhere_is_close(small_model, short_corpus):
    plan8 = {l: BitWidth.B8 for l in small_model.layers}
    assert quality_proxy(small_model, short_corpus, plan8) < 0.05


def test_b4_everywhere_is_far_worse_than_b8(small_model, short_corpus):
    plan8 = {l: BitWidth.B8 for l in small_model.layers}
    plan4 = {l: BitWidth.B4 for l in small_model.layers}
    assert quality_proxy(small_model, short_corpus, plan4) > 5 * quality_proxy(small_model, short_corpus, plan8)


def test_trace_records_every_linear_layer(small_model):
    _, trace = forward(small_model, [1, 2, 3, 4])
    assert set(trace) == set(small_model.layers)
    for layer, rec in trace.items():
        w = small_model.weights[layer]
        assert rec.input.shape == (4, w.shape[0])
        np.testing.assert_allclose(rec.output, rec.input @ w, rtol=1e-10, atol=1e-12)


def test_quantizing_one_layer_leaves_upstream_untouched(small_model):
    seq = [5, 9, 2, 7, 7, 1]
    _, ref = forward(small_model, seq)
    target = LayerId(1, LayerKind.FFN_UP)
    _, tr = forward(small_model, seq, {target: BitWidth.B4})
    for layer in small_model.layers:
        if layer < target:
            assert np.array_equal(tr[layer].output, ref[layer].output)
    assert np.array_equal(tr[target].input, ref[target].input)
    assert not np.array_equal(tr[target].output, ref[target].output)


def test_causality(small_model):
    a, _ = forward(small_model, [3, 1, 4, 1, 5])
    b, _ = forward(small_model, [3, 1, 4, 1, 6])
    assert np.array_equal(a[:4], b[:4])
    assert not np.array_equal(a[4], b[4])


def test_bad_tokens(small_model):
    with pytest.raises(ValueError):
        forward(small_model, [64])
    with pytest.raises(ValueError):
        forward(small_model, [])


def test_checkpoint_round_trip(small_model, tmp_path):
    path = tmp_path / "m.fpxm"
    save_model(small_model, path)
    back = load_model(path)
    assert weight_checksum(back) == GOLDEN_2BLOCK
    out_a, _ = forward(small_model, [1, 2, 3])
    out_b, _ = forward(back, [1, 2, 3])
    assert np.array_equal(out_a, out_b)


def test_checkpoint_rejects_garbage(small_model):
    data = to_bytes(small_model)
    with pytest.raises(ValueError):
        from_bytes(b"NOPE" + data[4:])
    with pytest.raises(ValueError):
        from_bytes(data[:-4])


def test_corpus_round_trip(tmp_path):
    seqs = generate_corpus(1, 16, 3, 5)
    assert all(0 <= t < 16 for s in seqs for t in s)
    p = tmp_path / "c.txt"
    write_corpus(seqs, p)
    assert read_corpus(p) == seqs


def test_corpus_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.txt"):
        read_corpus(tmp_path / "missing.txt")
    (tmp_path / "empty.txt").write_text("\n\n")
    with pytest.raises(ValueError):
        read_corpus(tmp_path / "empty.txt")
    (tmp_path / "bad.txt").write_text("1\nx\n")
    with pytest.raises(ValueError, match=":2"):
        read_corpus(tmp_path / "bad.txt")


def test_bundled_corpus_is_regenerable():
    assert read_corpus(data_path("corpus.txt")) == build_default_corpus()
