import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tgqformer import tensor as T
from tgqformer.errors import DimensionError, NumericError
from tgqformer.gating import (
    GateInputs, GateNetworks, agreement_score, centered_sigmoid, diagnostics, gate_inputs, passthrough,
)
from tgqformer.hqc import StreamEmbeddings
from tgqformer.layers import ParamStore
from tgqformer.rng import stream
from tgqformer.tensor import Tensor

D_V, D_LLM = 5, 4


def setup(seed=0, n=3):
    rng = stream(seed, "gate-test")
    streams = StreamEmbeddings(Tensor(rng.standard_normal((n, 2, D_LLM))),
                               Tensor(rng.standard_normal((n, 3, D_LLM))),
                               np.ones((n, 2), dtype=bool))
    f_img, f_title = rng.standard_normal((n, D_V)), rng.standard_normal((n, D_V))
    nets = GateNetworks(ParamStore(seed), D_V, D_LLM, hidden=6)
    return nets, streams, gate_inputs(streams, f_img, f_title)


def test_agreement_examples():
    v = np.array([0.3, -2.0, 1.0])
    assert agreement_score(v, v) == pytest.approx(1.0, abs=1e-12)
    assert agreement_score(v, -v) == pytest.approx(-1.0, abs=1e-12)
    assert agreement_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(NumericError):
        agreement_score(np.zeros(3), v)


def test_centered_sigmoid_examples():
    assert centered_sigmoid(Tensor(0.0)).data == 0.0
    # oracle: 2/(1+e^-10) - 1 == tanh(5)
    assert float(centered_sigmoid(Tensor(10.0)).data) == pytest.approx(0.9999092042625951, abs=1e-12)


def test_centered_sigmoid_odd_over_random_points():
    x = stream(0, "odd").uniform(-30, 30, 1000)
    assert np.max(np.abs(centered_sigmoid(Tensor(x)).data + centered_sigmoid(Tensor(-x)).data)) <= 1e-12


@given(arrays(np.float64, 20, elements=st.floats(-30, 30)))
def test_centered_sigmoid_strictly_inside_unit_interval(x):
    y = centered_sigmoid(Tensor(x)).data
    assert np.all(y > -1) and np.all(y < 1)


def test_zero_init_is_bit_exact_identity():
    nets, streams, inputs = setup()
    mod = nets.modulate(streams, inputs)
    assert np.array_equal(mod.E_txt_mod.data, streams.E_txt.data)
    assert np.array_equal(mod.E_rnd_mod.data, streams.E_rnd.data)
    assert not mod.beta_txt.data.any() and not mod.beta_rnd.data.any()


def test_gate_networks_disjoint_and_sized():
    nets, _, _ = setup()
    assert nets.txt_in == 2 * D_V + 1 + 2 * D_LLM and nets.rnd_in == D_V + D_LLM
    txt = {id(p) for p in (nets.G_txt.fc1.weight, nets.G_txt.fc1.bias, nets.G_txt.fc2.weight, nets.G_txt.fc2.bias)}
    rnd = {id(p) for p in (nets.G_rnd.fc1.weight, nets.G_rnd.fc1.bias, nets.G_rnd.fc2.weight, nets.G_rnd.fc2.bias)}
    assert not txt & rnd


def test_large_negative_gate_suppresses_stream():
    nets, streams, inputs = setup()
    nets.G_txt.fc2.bias.data[...] = -60.0
    mod = nets.modulate(streams, inputs)
    assert np.max(np.abs(mod.E_txt_mod.data)) < 1e-20
    assert np.array_equal(mod.E_rnd_mod.data, streams.E_rnd.data)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_beta_range_and_channelwise(seed):
    nets, streams, inputs = setup(seed)
    rng = stream(seed, "perturb")
    for mlp in (nets.G_txt, nets.G_rnd):
        mlp.fc2.weight.data[...] = 5 * rng.standard_normal(mlp.fc2.weight.data.shape)
    mod = nets.modulate(streams, inputs)
    for beta in (mod.beta_txt.data, mod.beta_rnd.data):
        assert np.all(beta > -1) and np.all(beta < 1)
    ratio = mod.E_txt_mod.data / streams.E_txt.data
    assert np.allclose(ratio, (1 + mod.beta_txt.data)[:, None, :], atol=1e-9)


def test_gate_summaries_use_pre_modulation_streams():
    nets, streams, inputs = setup()
    nets.G_txt.fc2.bias.data[...] = 1.0
    mod = nets.modulate(streams, inputs)
    assert np.allclose(inputs.e_bar_txt.data, streams.E_txt.data.mean(axis=1))
    assert not np.allclose(inputs.e_bar_txt.data, mod.E_txt_mod.data.mean(axis=1))
    assert np.allclose(inputs.S_title, agreement_score(inputs.f_img_global, inputs.f_title_global), atol=1e-9)


def test_dimension_error_lists_segments():
    nets, streams, inputs = setup()
    bad = GateInputs(inputs.S_title, inputs.e_bar_txt, inputs.e_bar_rnd,
                     np.zeros((3, D_V + 1)), inputs.f_title_global)
    with pytest.raises(DimensionError, match="f_img"):
        nets.modulate(streams, bad)


def test_gradients_reach_both_gates():
    nets, streams, inputs = setup()
    for mlp in (nets.G_txt, nets.G_rnd):
        mlp.fc2.weight.data[...] = 0.1
    mod = nets.modulate(streams, inputs)
    loss = T.tsum(mod.E_txt_mod * mod.E_txt_mod) + T.tsum(mod.E_rnd_mod)
    params = [nets.G_txt.fc1.weight, nets.G_rnd.fc1.weight, nets.G_txt.fc2.weight, nets.G_rnd.fc2.weight]
    T.backward(loss, params)
    assert all(np.any(p.grad != 0) for p in params)


def test_passthrough_and_diagnostics():
    nets, streams, inputs = setup()
    mod = passthrough(streams)
    assert mod.E_txt_mod is streams.E_txt and mod.beta_txt is None
    diag = diagnostics(nets.modulate(streams, inputs), inputs)
    assert diag["mean_abs_beta_txt"] == 0.0 and diag["mean_abs_beta_rnd"] == 0.0
    assert diag["mean_S_title"] == pytest.approx(float(np.mean(inputs.S_title)))
