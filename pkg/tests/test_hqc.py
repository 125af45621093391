import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgqformer import tensor as T
from tgqformer.errors import ConfigurationError, StateError
from tgqformer.hqc import HqcConfig, HybridQueryConnector, downsample_text, n_semantic_slots, project_semantic_queries
from tgqformer.layers import ParamStore
from tgqformer.rng import stream
from tgqformer.tensor import Parameter, Tensor

D_V = 6


def make(cfg=None, **kw):
    cfg = cfg or HqcConfig(k=3, s=2, T_r=2, d_q=8, d_llm=4, n_layers=2, n_heads=2)
    return HybridQueryConnector(ParamStore(3), cfg, D_V, **kw), cfg


def inputs(n=2, L_t=5, L_v=4, seed=0):
    rng = stream(seed, "hqc-inputs")
    return rng.standard_normal((n, L_v, D_V)), rng.standard_normal((n, L_t, D_V)), np.full(n, L_t)


@given(st.integers(1, 50), st.sampled_from([1, 2, 5, 7]))
def test_slot_count_is_ceiling(L_t, s):
    assert n_semantic_slots(L_t, s) == -(-L_t // s)
    w = np.zeros((5 * 2, 2))
    out = downsample_text(Tensor(np.ones((L_t, 2))), w, np.zeros(2), 5, s)
    assert out.shape == (-(-L_t // s), 2)


@pytest.mark.parametrize("L_t,s,T_g", [(50, 5, 10), (7, 5, 2), (1, 5, 1)])
def test_slot_examples(L_t, s, T_g):
    assert n_semantic_slots(L_t, s) == T_g


def test_conv_matches_naive_loop_with_right_zero_padding():
    rng = stream(0, "conv")
    k, s, L, d = 5, 5, 7, 3
    x = rng.standard_normal((L, d))
    w = rng.standard_normal((k * d, d))
    b = rng.standard_normal(d)
    out = downsample_text(Tensor(x), w, b, k, s).data
    padded = np.vstack([x, np.zeros((10 - L, d))])
    for t in range(2):
        ref = b.copy()
        for j in range(k):
            ref += padded[t * s + j] @ w[j * d:(j + 1) * d]
        assert np.allclose(out[t], ref, atol=1e-12)


def test_bad_kernel_or_stride():
    with pytest.raises(ConfigurationError):
        HqcConfig(k=0)
    with pytest.raises(ConfigurationError):
        HqcConfig(s=0)
    with pytest.raises(ConfigurationError):
        HqcConfig(d_q=10, n_heads=3)


def test_projection_identity_and_zero():
    h = stream(1, "h").standard_normal((3, 4))
    assert np.array_equal(project_semantic_queries(Tensor(h), np.eye(4)).data, h)
    assert not project_semantic_queries(Tensor(np.zeros((3, 4))), np.ones((4, 5))).data.any()


def test_projection_gradient_finite_difference():
    rng = stream(2, "proj")
    h = rng.standard_normal((3, 4))
    W = Parameter(rng.standard_normal((4, 5)), name="W_Q")
    loss = lambda: T.tsum(T.tanh(project_semantic_queries(Tensor(h), W)))
    T.backward(loss(), [W])
    num = np.zeros_like(W.data)
    for idx in np.ndindex(W.data.shape):
        orig = W.data[idx]
        W.data[idx] = orig + 1e-6
        up = float(loss().data)
        W.data[idx] = orig - 1e-6
        num[idx] = (up - float(loss().data)) / 2e-6
        W.data[idx] = orig
    assert np.allclose(W.grad, num, atol=1e-8)


def test_forward_shapes_and_split():
    hqc, cfg = make()
    h_img, h_txt, lens = inputs(L_t=5)
    out = hqc.forward(h_img, h_txt, lens)
    assert out.E_txt.shape == (2, 3, cfg.d_llm)
    assert out.E_rnd.shape == (2, cfg.T_r, cfg.d_llm)


def test_default_split_ten_three():
    cfg = HqcConfig(d_q=8, d_llm=4, n_layers=1, n_heads=2)
    hqc = HybridQueryConnector(ParamStore(0), cfg, D_V)
    h_img, h_txt, lens = inputs(n=1, L_t=50)
    out = hqc.forward(h_img, h_txt, lens)
    assert out.E_txt.shape[1] == 10 and out.E_rnd.shape[1] == 3


def test_image_token_permutation_invariance():
    hqc, _ = make(HqcConfig(k=3, s=2, T_r=2, d_q=8, d_llm=4, n_layers=2, n_heads=1))
    h_img, h_txt, lens = inputs()
    a = hqc.forward(h_img, h_txt, lens)
    perm = stream(0, "perm").permutation(h_img.shape[1])
    b = hqc.forward(h_img[:, perm], h_txt, lens)
    assert np.allclose(a.E_txt.data, b.E_txt.data, atol=1e-12)
    assert np.allclose(a.E_rnd.data, b.E_rnd.data, atol=1e-12)


def test_zero_value_projection_ignores_image():
    hqc, _ = make()
    for blk in hqc.blocks:
        blk.cross_attn.wv.weight.data[...] = 0
        blk.cross_attn.wv.bias.data[...] = 0
    h_img, h_txt, lens = inputs()
    a = hqc.forward(h_img, h_txt, lens)
    b = hqc.forward(h_img * 3 + 1, h_txt, lens)
    assert np.array_equal(a.E_txt.data, b.E_txt.data)
    assert np.array_equal(a.E_rnd.data, b.E_rnd.data)


def test_without_self_attention_exploratory_queries_touch_only_their_rows():
    cfg = HqcConfig(k=3, s=2, T_r=2, d_q=8, d_llm=4, n_layers=2, n_heads=2, self_attention=False)
    hqc, _ = make(cfg)
    h_img, h_txt, lens = inputs()
    a = hqc.forward(h_img, h_txt, lens)
    hqc.Q_rnd.data[...] = 0
    b = hqc.forward(h_img, h_txt, lens)
    assert np.array_equal(a.E_txt.data, b.E_txt.data)
    assert not np.allclose(a.E_rnd.data, b.E_rnd.data)


def test_padded_semantic_slots_do_not_leak():
    hqc, _ = make()
    h_img, h_txt, _ = inputs(n=1, L_t=5)
    short = hqc.forward(h_img, h_txt[:, :2], np.array([2]))
    padded = np.concatenate([h_txt[:, :2], np.zeros((1, 3, D_V))], axis=1)
    long_batch = hqc.forward(np.repeat(h_img, 2, 0), np.concatenate([padded, h_txt]), np.array([2, 5]))
    assert np.allclose(short.E_txt.data[0], long_batch.txt_rows(0), atol=1e-12)
    assert np.allclose(short.E_rnd.data[0], long_batch.E_rnd.data[0], atol=1e-12)


def test_attention_export():
    hqc, cfg = make()
    h_img, h_txt, lens = inputs()
    with pytest.raises(StateError):
        hqc.export_attention("a")
    hqc.forward(h_img, h_txt, lens, item_ids=["a", "b"], record=True)
    maps = hqc.export_attention("a")
    assert len(maps["layers"]) == cfg.n_layers
    for layer in maps["layers"]:
        assert layer.shape == (cfg.n_heads, 3 + cfg.T_r, 4)
        assert np.allclose(layer.sum(axis=-1), 1, atol=1e-9)
    assert maps["semantic_mean"].shape == (4,)
    assert maps["exploratory"].shape == (cfg.T_r, 4)


def test_forward_deterministic():
    h_img, h_txt, lens = inputs()
    a = make()[0].forward(h_img, h_txt, lens)
    b = make()[0].forward(h_img, h_txt, lens)
    assert np.array_equal(a.E_txt.data, b.E_txt.data)


def test_no_dead_parameters():
    hqc, _ = make()
    h_img, h_txt, lens = inputs()
    out = hqc.forward(h_img, h_txt, lens)
    w = stream(5, "w")
    loss = T.tsum(out.E_txt * w.standard_normal(out.E_txt.shape)) + T.tsum(out.E_rnd * w.standard_normal(out.E_rnd.shape))
    params = vars_of(hqc)
    T.backward(loss, params)
    for p in params:
        assert np.any(p.grad != 0), p.name


def vars_of(hqc):
    seen = []

    def walk(obj, depth=0):
        if depth > 4:
            return
        if isinstance(obj, Parameter):
            if all(obj is not s for s in seen):
                seen.append(obj)
            return
        items = obj if isinstance(obj, list) else getattr(obj, "__dict__", {}).values()
        for v in items:
            walk(v, depth + 1)
    walk(hqc)
    return seen


def test_connector_needs_a_stream():
    with pytest.raises(ConfigurationError):
        make(semantic=False, exploratory=False)
