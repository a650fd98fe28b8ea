import numpy as np
import pytest

from oascope import tensor as T
from oascope.backbone import (BackboneSpec, EmbeddingFileError, PrecomputedBackbone,
                              TokenSequence, ToyEncoder, build_backbone, hash_token,
                              load_precomputed, tokenize, write_embeddings)
from oascope.checkpoint import CheckpointError, load_checkpoint, restore_into, save_checkpoint


def toy_spec(**kw):
    defaults = dict(kind="toy_encoder", d=64, vocab_size=256, n_layers=2, n_heads=4, max_len=32)
    defaults.update(kw)
    return BackboneSpec(**defaults)


def seq_of(words, cue_ids, vocab=256, sid=0):
    return tokenize(words, cue_ids, vocab, sample_id=sid)


def test_token_sequence_invariants():
    with pytest.raises(T.ShapeError):
        TokenSequence([1, 2], ["a", "b"], [])
    with pytest.raises(T.ShapeError):
        TokenSequence([1, 2], ["a", "b"], [1, 0])
    with pytest.raises(T.ShapeError):
        TokenSequence([1, 2], ["a", "b"], [2])


def test_hash_token_stable():
    assert hash_token("not", 8192) == hash_token("not", 8192)
    assert hash_token("not", 8192) != hash_token("never", 8192)


def test_toy_encoder_output_shape():
    enc = ToyEncoder.init(toy_spec(), T.RngState(0))
    out = enc.embed(seq_of(list("abcdefg"), [2]))
    assert out.shape == (7, 64)


def test_toy_encoder_deterministic_across_runs():
    def run():
        enc = ToyEncoder.init(toy_spec(), T.RngState(11))
        with T.no_grad():
            return enc.embed(seq_of(["i", "do", "not", "know"], [2])).data

    assert np.array_equal(run(), run())


def test_toy_encoder_position_sensitive():
    enc = ToyEncoder.init(toy_spec(), T.RngState(1))
    words = ["alpha", "beta", "gamma", "delta"]
    with T.no_grad():
        base = enc.embed(seq_of(words, [0])).data
        swapped = enc.embed(seq_of(words[::-1], [0])).data
    assert not np.allclose(base, swapped[::-1])


def test_toy_encoder_rejects_overflow():
    enc = ToyEncoder.init(toy_spec(max_len=4), T.RngState(2))
    with pytest.raises(T.ShapeError):
        enc.embed(seq_of(list("abcde"), [0]))


def test_precomputed_round_trip(tmp_path):
    path = tmp_path / "emb.bin"
    rng = np.random.default_rng(3)
    tables = {0: rng.normal(size=(3, 8)).astype(np.float32),
              1: rng.normal(size=(5, 8)).astype(np.float32)}
    write_embeddings(path, tables)
    loaded = load_precomputed(path)
    assert set(loaded) == {0, 1}
    assert loaded[0].shape == (3, 8) and loaded[1].shape == (5, 8)
    for k in tables:
        assert np.array_equal(loaded[k], tables[k].astype(np.float64))


def test_precomputed_exact_row_retrieval(tmp_path):
    path = tmp_path / "emb.bin"
    table = np.zeros((2, 4), dtype=np.float32)
    table[0, 0] = 1.0
    table[1, 1] = 1.0
    write_embeddings(path, {7: table})
    spec = BackboneSpec(kind="precomputed", d=4, path=str(path))
    bb = PrecomputedBackbone.from_file(spec)
    out = bb.embed(seq_of(["a", "b"], [0], sid=7))
    assert np.array_equal(out.data, table.astype(np.float64))
    assert out.requires_grad is False


def test_precomputed_truncated_names_offset(tmp_path):
    path = tmp_path / "emb.bin"
    write_embeddings(path, {0: np.ones((2, 3), dtype=np.float32)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(EmbeddingFileError, match="byte"):
        load_precomputed(path)


def test_precomputed_bad_magic(tmp_path):
    path = tmp_path / "emb.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(EmbeddingFileError, match="magic"):
        load_precomputed(path)


def test_precomputed_d_mismatch(tmp_path):
    path = tmp_path / "emb.bin"
    write_embeddings(path, {0: np.ones((2, 3), dtype=np.float32)})
    spec = BackboneSpec(kind="precomputed", d=8, path=str(path))
    with pytest.raises(EmbeddingFileError, match="width"):
        PrecomputedBackbone.from_file(spec)


def test_precomputed_unknown_sample(tmp_path):
    path = tmp_path / "emb.bin"
    write_embeddings(path, {0: np.ones((2, 4), dtype=np.float32)})
    bb = build_backbone(BackboneSpec(kind="precomputed", d=4, path=str(path)), T.RngState(0))
    with pytest.raises(EmbeddingFileError, match="sample id"):
        bb.embed(seq_of(["a", "b"], [0], sid=99))


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "model.ckpt"
    rng = np.random.default_rng(4)
    named = {"layer.w": T.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
             "layer.b": T.Tensor(rng.normal(size=4), requires_grad=True)}
    save_checkpoint(path, named)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(named)
    for k in named:
        assert np.array_equal(loaded[k], named[k].data)
    named["layer.w"].data[:] = 0.0
    restore_into(named, loaded)
    assert np.array_equal(named["layer.w"].data, loaded["layer.w"])


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": T.Tensor(np.ones((2, 2)))})
    blob = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"WRONGMG" + blob[7:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="byte"):
        load_checkpoint(tmp_path / "trunc.ckpt")


def test_checkpoint_restore_mismatches(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": T.Tensor(np.ones((2, 2)))})
    loaded = load_checkpoint(path)
    with pytest.raises(CheckpointError, match="disagree"):
        restore_into({"other": T.Tensor(np.ones((2, 2)))}, loaded)
    with pytest.raises(CheckpointError, match="shape"):
        restore_into({"w": T.Tensor(np.ones((3, 2)))}, loaded)
