import numpy as np
import pytest

from oascope import ortho
from oascope import tensor as T
from oascope.gradcheck import check_gradients
from oascope.ortho import (OAConfig, OAEncoderState, OAHeadParams, alpha_c, alpha_em,
                           beta_ca, beta_em, beta_emb, oa_encoder_block, oa_head,
                           oa_multihead)
import oracles


def cfg_for(variant, d=16, n_heads=4, dropout_p=0.3):
    return OAConfig(d=d, n_heads=n_heads, variant=variant, dropout_p=dropout_p)


def arrs(params):
    return {k.split(".")[-1]: v.data for k, v in params.named("p").items()}


def rand_cq(rng, m, n, d):
    return T.Tensor(rng.normal(size=(m, d))), T.Tensor(rng.normal(size=(n, d)))


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(T.ShapeError):
        OAConfig(d=10, n_heads=4, variant="em")
    with pytest.raises(T.ShapeError):
        OAConfig(d=32, n_heads=4, variant="c")  # d_k=8 is not a square
    with pytest.raises(ValueError):
        OAConfig(d=16, n_heads=4, variant="nope")
    with pytest.raises(ValueError):
        OAConfig(d=16, n_heads=4, variant="em", dropout_p=1.0)
    cfg = cfg_for("c")
    assert cfg.d_k == cfg.d_v == 4 and cfg.sqrt_dk == 2 and cfg.d_ff == 16


# ---------------------------------------------------------------------------
# alpha / beta variants against loop oracles


def test_alpha_em_zero_weights_zero_output():
    cfg = cfg_for("em")
    p = ortho.AlphaEMParams.init(cfg, T.RngState(0), 0.0)
    c, q = rand_cq(np.random.default_rng(0), 3, 2, cfg.d)
    assert np.array_equal(alpha_em(c, q, p).data, np.zeros((3, 2, cfg.d_k)))


def test_alpha_em_single_query_loop_oracle():
    cfg = cfg_for("em")
    p = ortho.AlphaEMParams.init(cfg, T.RngState(1), 0.5)
    rng = np.random.default_rng(1)
    c, q = rand_cq(rng, 4, 1, cfg.d)
    got = alpha_em(c, q, p).data
    expect = oracles.alpha_em_loops(c.data, q.data, arrs(p))
    assert got.shape == (4, 1, cfg.d_k)
    assert np.allclose(got, expect, atol=1e-12)


def test_alpha_em_shape_contract():
    cfg = cfg_for("em")
    p = ortho.AlphaEMParams.init(cfg, T.RngState(2), 0.5)
    for m, n in [(1, 1), (5, 3), (2, 7)]:
        c, q = rand_cq(np.random.default_rng(m * 10 + n), m, n, cfg.d)
        assert alpha_em(c, q, p).shape == (m, n, cfg.d_k)


def test_beta_em_constructed_identity():
    cfg = cfg_for("em")
    p = ortho.BetaEMParams.init(cfg, T.RngState(3), 0.0)
    p.w.data[:, :cfg.d_k] = np.eye(cfg.d_k)
    q = np.abs(np.random.default_rng(3).normal(size=(3, cfg.d)))
    out = beta_em(T.Tensor(q), p)
    assert np.allclose(out.data, q[:, :cfg.d_k])


def test_beta_em_zero_weights():
    cfg = cfg_for("em")
    p = ortho.BetaEMParams.init(cfg, T.RngState(4), 0.0)
    q = T.Tensor(np.random.default_rng(4).normal(size=(2, cfg.d)))
    assert np.array_equal(beta_em(q, p).data, np.zeros((2, cfg.d_k)))


def test_beta_emb_single_context():
    cfg = cfg_for("emb")
    p = ortho.BetaEMBParams.init(cfg, T.RngState(5), 0.5)
    rng = np.random.default_rng(5)
    c, q = rand_cq(rng, 1, 3, cfg.d)
    got = beta_emb(c, q, p).data
    c1 = np.maximum(p.context_w.data @ c.data[0] + p.context_b.data, 0)
    q1 = np.maximum(q.data @ p.query_w.data.T + p.query_b.data, 0)
    q2 = q1 * c1  # single context row: attention summary equals that row
    expect = np.maximum(q2 @ p.out_w.data.T + p.out_b.data, 0)
    assert np.allclose(got, expect, atol=1e-12)


def test_beta_emb_matches_composed_oracle():
    cfg = OAConfig(d=8, n_heads=2, variant="emb")
    p = ortho.BetaEMBParams.init(cfg, T.RngState(6), 0.5)
    rng = np.random.default_rng(6)
    c, q = rand_cq(rng, 3, 2, 8)
    got = beta_emb(c, q, p).data
    expect = oracles.beta_emb_loops(c.data, q.data, arrs(p))
    assert np.allclose(got, expect, atol=1e-12)


def test_alpha_c_zero_generators():
    cfg = cfg_for("c")
    p = ortho.AlphaConvParams.init(cfg, T.RngState(7), 0.0)
    p.out_b.data[:] = np.random.default_rng(7).normal(size=cfg.d_k)
    c, q = rand_cq(np.random.default_rng(8), 3, 2, cfg.d)
    got = alpha_c(c, q, p, cfg).data
    expect = np.tile(np.maximum(p.out_b.data, 0), (3, 2, 1))
    assert np.allclose(got, expect)


def test_alpha_c_matches_loop_oracle():
    cfg = OAConfig(d=16, n_heads=1, variant="c")  # d_k=16, sqrt=4
    p = ortho.AlphaConvParams.init(cfg, T.RngState(9), 0.5)
    rng = np.random.default_rng(9)
    c, q = rand_cq(rng, 3, 2, 16)
    got = alpha_c(c, q, p, cfg).data
    expect = oracles.alpha_c_loops(c.data, q.data, arrs(p), cfg.sqrt_dk)
    assert got.shape == (3, 2, 16)
    assert np.allclose(got, expect, atol=1e-12)


def test_alpha_c_one_hot_filter_subsamples():
    cfg = OAConfig(d=16, n_heads=1, variant="c")
    p = ortho.AlphaConvParams.init(cfg, T.RngState(10), 0.0)
    # one query word, filters fixed via the generator bias: one-hot taps
    eye_filters = np.zeros(16)
    eye = np.eye(4)
    for f in range(4):
        eye_filters[f * 4:(f + 1) * 4] = eye[f]
    p.filter_b.data[:] = eye_filters
    c = T.Tensor(np.random.default_rng(10).normal(size=(3, 16)))
    q = T.Tensor(np.zeros((1, 16)))
    c1 = np.maximum(c.data @ p.context_w.data.T + p.context_b.data, 0)  # zeros here
    p.context_w.data[:] = np.random.default_rng(11).normal(size=p.context_w.shape)
    c1 = np.maximum(c.data @ p.context_w.data.T + p.context_b.data, 0)
    raw = T.conv1d_dynamic(T.Tensor(c1), T.Tensor(eye_filters.reshape(1, 4, 4)),
                           T.Tensor([[0.0]]), stride=4).data
    # filter f selects tap f of every window: rows reorder into strided subsamples
    expect = np.stack([c1[:, f::4].reshape(3, -1) for f in range(4)], axis=1)
    assert np.allclose(raw[:, 0, :].reshape(3, 4, 4), expect)


def test_beta_ca_single_context_identical_filters():
    cfg = cfg_for("ca", d=16, n_heads=1)
    p = ortho.BetaCAParams.init(cfg, T.RngState(12), 0.5)
    rng = np.random.default_rng(12)
    c, q = rand_cq(rng, 1, 3, 16)
    got = beta_ca(c, q, p, cfg).data
    expect = oracles.beta_ca_loops(c.data, q.data, arrs(p), cfg.sqrt_dk)
    assert np.allclose(got, expect, atol=1e-12)


def test_beta_ca_zero_generators_zero_output():
    cfg = cfg_for("ca", d=16, n_heads=1)
    p = ortho.BetaCAParams.init(cfg, T.RngState(13), 0.0)
    c, q = rand_cq(np.random.default_rng(13), 3, 2, 16)
    assert np.array_equal(beta_ca(c, q, p, cfg).data, np.zeros((2, 16)))


def test_beta_ca_matches_loop_oracle():
    cfg = cfg_for("ca", d=16, n_heads=1)
    p = ortho.BetaCAParams.init(cfg, T.RngState(14), 0.5)
    rng = np.random.default_rng(14)
    c, q = rand_cq(rng, 3, 2, 16)
    got = beta_ca(c, q, p, cfg).data
    expect = oracles.beta_ca_loops(c.data, q.data, arrs(p), cfg.sqrt_dk)
    assert np.allclose(got, expect, atol=1e-12)


# ---------------------------------------------------------------------------
# oa_head


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_oa_head_single_query_weight_one(variant):
    cfg = cfg_for(variant)
    head = OAHeadParams.init(cfg, T.RngState(15), 0.5)
    rng = np.random.default_rng(15)
    c, q = rand_cq(rng, 4, 1, cfg.d)
    trace = {}
    out = oa_head(c, q, head, cfg, training=False, trace=trace)
    assert np.allclose(out.data, trace["v_s"].data[:, 0, :], atol=1e-12)
    assert np.allclose(trace["w_s"].data.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_oa_head_weights_normalized(variant):
    cfg = cfg_for(variant)
    head = OAHeadParams.init(cfg, T.RngState(16), 0.5)
    rng = np.random.default_rng(16)
    c, q = rand_cq(rng, 5, 3, cfg.d)
    trace = {}
    oa_head(c, q, head, cfg, training=False, trace=trace)
    sums = trace["w_s"].data.sum(axis=1)
    assert np.allclose(sums, 1.0, atol=1e-9)


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_oa_head_matches_double_loop_oracle(variant):
    cfg = cfg_for(variant)
    head = OAHeadParams.init(cfg, T.RngState(17), 0.5)
    rng = np.random.default_rng(17)
    c, q = rand_cq(rng, 4, 3, cfg.d)
    trace = {}
    got = oa_head(c, q, head, cfg, training=False, trace=trace)
    expect = oracles.oa_head_loops(trace["k_s"].data, trace["v_s"].data, trace["q_s"].data)
    assert np.allclose(got.data, expect, atol=1e-9)


def test_oa_head_rejects_cueless():
    # a zero-row query cannot even be constructed
    with pytest.raises(T.ShapeError):
        T.Tensor(np.ones((0, 16)))
    # the guard itself rejects an empty query side
    import types
    with pytest.raises(T.ShapeError, match="cue"):
        ortho._check_cq(types.SimpleNamespace(shape=(3, 16)),
                        types.SimpleNamespace(shape=(0, 16)))


# ---------------------------------------------------------------------------
# oa_multihead / encoder block


def test_multihead_identity_projection_single_head():
    cfg = OAConfig(d=16, n_heads=1, variant="em")
    state = OAEncoderState.init(cfg, T.RngState(19), 0.5)
    state.w_d.data[:] = np.eye(16)
    rng = np.random.default_rng(19)
    c, q = rand_cq(rng, 3, 2, 16)
    head_out = oa_head(c, q, state.heads[0], cfg)
    assert np.allclose(oa_multihead(c, q, state, cfg).data, head_out.data, atol=1e-12)


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_multihead_output_shape(variant):
    cfg = cfg_for(variant)
    state = OAEncoderState.init(cfg, T.RngState(20), 0.5)
    c, q = rand_cq(np.random.default_rng(20), 6, 2, cfg.d)
    assert oa_multihead(c, q, state, cfg).shape == (6, cfg.d)


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_multihead_query_permutation_invariance(variant):
    cfg = cfg_for(variant)
    state = OAEncoderState.init(cfg, T.RngState(21), 0.5)
    rng = np.random.default_rng(21)
    c, q = rand_cq(rng, 4, 5, cfg.d)
    base = oa_multihead(c, q, state, cfg).data
    for _ in range(3):
        perm = rng.permutation(5)
        out = oa_multihead(c, T.Tensor(q.data[perm]), state, cfg).data
        assert np.allclose(out, base, atol=1e-9)


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_encoder_block_shape_and_context_equivariance(variant):
    cfg = cfg_for(variant)
    state = OAEncoderState.init(cfg, T.RngState(22), 0.5)
    rng = np.random.default_rng(22)
    c, q = rand_cq(rng, 5, 2, cfg.d)
    out = oa_encoder_block(c, q, state, cfg).data
    assert out.shape == (5, cfg.d)
    perm = rng.permutation(5)
    out_p = oa_encoder_block(T.Tensor(c.data[perm]), q, state, cfg).data
    assert np.allclose(out_p, out[perm], atol=1e-9)


def test_encoder_block_rows_normalized_before_gain():
    cfg = cfg_for("em")
    state = OAEncoderState.init(cfg, T.RngState(23), 0.5)
    # with unit gain and zero bias the output rows are zero mean, unit variance
    state.ln2_gain.data[:] = 1.0
    state.ln2_bias.data[:] = 0.0
    c, q = rand_cq(np.random.default_rng(23), 4, 2, cfg.d)
    out = oa_encoder_block(c, q, state, cfg).data
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
    assert np.allclose(out.var(axis=1), 1.0, atol=1e-3)


# ---------------------------------------------------------------------------
# gradients through every variant


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_oa_head_gradients(variant):
    cfg = cfg_for(variant)
    head = OAHeadParams.init(cfg, T.RngState(24), 0.3)
    ortho.randomize_biases(head.named("h"), T.RngState(124))
    rng = np.random.default_rng(24)
    c = T.Tensor(rng.normal(size=(3, cfg.d)), requires_grad=True)
    q = T.Tensor(rng.normal(size=(2, cfg.d)), requires_grad=True)
    params = [c, q] + list(head.named("h").values())
    res = check_gradients(lambda: oa_head(c, q, head, cfg).sum(), params,
                          max_probes_per_param=6, name=f"oa_head[{variant}]")
    assert res.passed, res


@pytest.mark.parametrize("variant", ortho.VARIANTS)
def test_encoder_block_gradients(variant):
    cfg = cfg_for(variant)
    state = OAEncoderState.init(cfg, T.RngState(25), 0.3)
    ortho.randomize_biases(state.named("b"), T.RngState(125))
    rng = np.random.default_rng(25)
    c = T.Tensor(rng.normal(size=(3, cfg.d)), requires_grad=True)
    q = T.Tensor(rng.normal(size=(2, cfg.d)), requires_grad=True)
    params = [c, q] + list(state.named("b").values())
    res = check_gradients(lambda: oa_encoder_block(c, q, state, cfg).sum(), params,
                          max_probes_per_param=4, name=f"oa_block[{variant}]")
    assert res.passed, res
