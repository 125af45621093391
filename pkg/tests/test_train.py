import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgqformer import tensor as T
from tgqformer.corpus import ItemRecord, SynthConfig
from tgqformer.encoders import EncoderConfig
from tgqformer.errors import ConfigurationError, ContractError
from tgqformer.fusion import DEFAULT_TEMPLATE, HashVocab, assemble_sequence, encode_prompt, render_prompt
from tgqformer.gating import ModulatedStreams
from tgqformer.gradcheck import tiny_setup
from tgqformer.hqc import HqcConfig
from tgqformer.model import VARIANTS, ItemBatch, ModelConfig, TGQModel, variant
from tgqformer.pipeline import DeskConfig, prepare, run_variant
from tgqformer.rng import stream
from tgqformer.train import PairData, TrainConfig, info_nce, joint_loss, load_model, lr_at, train
from tgqformer.tensor import Tensor

REC = ItemRecord("x", "red shirt", "acme", ("Clothing", "Men", "Shirts"), image_ref="x.ppm")


def test_default_template_renders_bit_exact():
    text = render_prompt(DEFAULT_TEMPLATE, "acme", ("a", "b", "c"), "red shirt")
    assert text == ("Product image: {'image': <IMG>}, Product metadata: {'brand': acme, "
                    "'category': a,b,c, 'title': red shirt}. Produce a single embedding for retrieval.")
    assert "品牌" in render_prompt(DEFAULT_TEMPLATE, "品牌", ("a", "b", "c"), "t")


def test_template_without_placeholder_rejected():
    with pytest.raises(ConfigurationError):
        render_prompt("no image here $t$", "b", ("a", "b", "c"), "t")
    with pytest.raises(ConfigurationError):
        encode_prompt("<IMG> <IMG> $t$", REC, HashVocab(64))


def small_model(variant_key="e", **kw):
    cfg = ModelConfig(d_v=8, L_v=4, hqc=HqcConfig(k=3, s=2, T_r=3, d_q=8, d_llm=8, n_layers=1, n_heads=2),
                      gate_hidden=8, fusion_layers=1, fusion_heads=2, d_out=8, vocab_size=64,
                      variant=variant_key, **kw)
    return TGQModel(cfg)


def fake_streams(n, t_g, t_r, d=8, seed=0):
    rng = stream(seed, "streams")
    return ModulatedStreams(Tensor(rng.standard_normal((n, t_g, d))) if t_g else None,
                            Tensor(rng.standard_normal((n, t_r, d))) if t_r else None,
                            None, None, np.ones((n, t_g), dtype=bool) if t_g else None)


def test_fused_length():
    model = small_model()
    template = "a b c <IMG> d e f g"
    prompt = encode_prompt(template + " $t$", ItemRecord("x", "h", "", ("a", "a", "a"), image_ref="i"),
                           model.vocab)
    assert prompt.n_tokens == 9
    seq = assemble_sequence(prompt, fake_streams(1, 10, 3), model.backbone)
    assert seq.fused.shape == (9 - 1 + 10 + 3, 8)
    mod = fake_streams(1, 10, 3)
    injected = np.concatenate([mod.E_txt_mod.data[0], mod.E_rnd_mod.data[0]])
    assert np.array_equal(seq.fused.data[3:3 + 13], injected)
    only_rnd = assemble_sequence(prompt, fake_streams(1, 0, 3), model.backbone)
    assert only_rnd.fused.shape[0] == 9 - 1 + 3


def test_same_metadata_different_images_share_text_rows():
    model = small_model()
    prompt = model.prompt_ids(REC)
    a = assemble_sequence(prompt, fake_streams(1, 2, 3, seed=1), model.backbone)
    b = assemble_sequence(prompt, fake_streams(1, 2, 3, seed=2), model.backbone)
    k = len(prompt.prefix)
    assert np.array_equal(a.fused.data[:k], b.fused.data[:k])
    assert np.array_equal(a.fused.data[k + 5:], b.fused.data[k + 5:])
    assert not np.allclose(a.fused.data[k:k + 5], b.fused.data[k:k + 5])


def test_info_nce_oracles():
    z = np.ones((2, 4))
    assert float(info_nce(z, z).data) == pytest.approx(math.log(2), abs=1e-9)
    # every query/target cosine is zero, so all logits tie
    zq, zt = np.tile([1.0, 0.0], (3, 1)), np.tile([0.0, 1.0], (3, 1))
    assert float(info_nce(zq, zt).data) == pytest.approx(math.log(3), abs=1e-9)
    zq = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert float(info_nce(zq, zq, 0.07).data) < 1e-12
    with pytest.raises(ContractError):
        info_nce(np.ones((1, 3)), np.ones((1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(2, 6))
def test_info_nce_rotation_and_scale_invariance(seed, b, d):
    rng = stream(seed, "nce")
    zq, zt = rng.standard_normal((b, d)), rng.standard_normal((b, d))
    base = float(info_nce(zq, zt).data)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    assert float(info_nce(zq @ q, zt @ q).data) == pytest.approx(base, abs=1e-9)
    s = rng.uniform(0.1, 10, (b, 1))
    assert float(info_nce(zq * s, zt * s[::-1]).data) == pytest.approx(base, abs=1e-9)


def test_lr_schedule():
    lrs = [lr_at(s, 100, 1.0) for s in range(100)]
    assert lrs[9] == 1.0 and lrs[0] == pytest.approx(0.1)
    assert all(a >= b for a, b in zip(lrs[9:], lrs[10:]))
    assert lrs[-1] < 0.01


def test_variant_lattice_scopes():
    names = {k: small_model(k).store.names() for k in VARIANTS}
    assert not [n for n in names["a"] if n.startswith("hqc.semantic.")]
    assert not [n for n in names["c"] if n.startswith("gate.")]
    assert not [n for n in names["b"] if n.startswith("hqc.exploratory.")]
    for scope in ("hqc.semantic.", "hqc.exploratory.", "gate.", "fusion."):
        assert any(n.startswith(scope) for n in names["e"])
    with pytest.raises(ConfigurationError):
        variant("z")


def test_shared_parameters_identical_across_variants():
    a, e = small_model("a"), small_model("e")
    for name in a.store.names():
        assert np.array_equal(a.store.params[name].data, e.store.params[name].data)


def test_joint_loss_components():
    model, q, t = tiny_setup(0)
    cfg = TrainConfig(batch_pairs=2)
    parts = joint_loss(model, q, t, cfg)
    assert float(parts.total.data) == pytest.approx(parts.rec + parts.rr, abs=1e-12)
    zero = joint_loss(model, q, t, replace(cfg, lambda_rr=0.0))
    assert float(zero.total.data) == zero.rec
    assert zero.rec == parts.rec


def test_joint_loss_identical_streams_adds_one():
    model, q, t = tiny_setup(0)
    # with identical summaries in every item the regulariser reaches its maximum
    real = model.forward
    seen = {}

    def tied(batch, record=False):
        res = real(batch, record)
        res.S_rnd = res.S_txt
        seen["std"] = res.S_txt.data.std(axis=0).min()
        return res

    model.forward = tied
    parts = joint_loss(model, q, t, TrainConfig(batch_pairs=2))
    bound = 4 * 1e-5 / seen["std"]
    assert parts.rr == pytest.approx(1.0, abs=bound)
    assert float(parts.total.data) == pytest.approx(parts.rec + 1.0, abs=bound)


def test_embeddings_unit_norm_and_deterministic():
    model, q, _ = tiny_setup(1)
    z1 = model.embed(q)
    z2 = model.embed(q)
    assert np.allclose(np.linalg.norm(z1, axis=1), 1, atol=1e-9)
    assert np.array_equal(z1, z2)


def test_gradient_reaches_every_scope():
    model, q, t = tiny_setup(0)
    model.store.zero_grad()
    T.backward(joint_loss(model, q, t, TrainConfig(batch_pairs=2)).total, model.params)
    for prefix in ("hqc.exploratory.Q_rnd", "hqc.semantic.W_Q", "gate.txt", "gate.rnd", "fusion.layer", "fusion.proj"):
        grads = [model.store.params[n].grad for n in model.store.names() if n.startswith(prefix)]
        assert grads and any(np.any(g != 0) for g in grads), prefix


def desk(n_items=200):
    enc = EncoderConfig(d_v=8, L_v=4, patch=4)
    mc = ModelConfig(d_v=8, L_v=4, hqc=HqcConfig(k=5, s=5, T_r=3, d_q=16, d_llm=16, n_layers=1, n_heads=2),
                     gate_hidden=16, fusion_layers=1, fusion_heads=2, d_out=16, vocab_size=512)
    return DeskConfig(corpus=SynthConfig(n_items=n_items), encoder=enc, model=mc,
                      train=TrainConfig(lr=2e-3, batch_pairs=16, epochs=3), n_test_pairs=20)


def test_zero_epochs_checkpoint_equals_init(tmp_path):
    prep = prepare(desk(40))
    model = TGQModel(prep.cfg.model)
    init = model.store.state()
    train(model, PairData(prep.encoded, prep.records, model), prep.train_pairs,
          replace(prep.cfg.train, epochs=0), tmp_path)
    back = load_model(tmp_path / "checkpoint")
    for name, value in init.items():
        assert np.array_equal(back.store.params[name].data, value.astype(np.float32).astype(np.float64))


def test_training_reduces_loss_and_is_deterministic(tmp_path):
    prep = prepare(desk(200))

    def run(out):
        model = TGQModel(prep.cfg.model)
        return model, train(model, PairData(prep.encoded, prep.records, model), prep.train_pairs,
                            prep.cfg.train, out)

    m1, log1 = run(tmp_path / "a")
    m2, log2 = run(tmp_path / "b")
    first = np.mean([r["L"] for r in log1[:5]])
    last = np.mean([r["L"] for r in log1[-5:]])
    assert last < first
    assert all(np.isfinite([r["L_rec"], r["L_rr"]]).all() for r in log1)
    for name in m1.store.names():
        assert np.array_equal(m1.store.params[name].data, m2.store.params[name].data)
    blobs = sorted((tmp_path / "a" / "checkpoint" / "blobs").iterdir())
    assert all(b.read_bytes() == (tmp_path / "b" / "checkpoint" / "blobs" / b.name).read_bytes() for b in blobs)
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,L,L_rec,L_rr,lr"



@pytest.mark.slow
def test_reference_model_near_perfect_on_clean_small_corpus():
    # frozen reference: 200 clean items at full overlap, 30 held-out pairs, 30 epochs gives H@10 0.93
    prep = prepare(DeskConfig(n_test_pairs=30, train=TrainConfig(lr=1e-3, batch_pairs=32, epochs=30)))
    _, report, _ = run_variant(prep, "e", 1)
    assert report.hit_rates[10] > 0.9

def test_encoder_outputs_untouched_by_training():
    prep = prepare(desk(40))
    before = {k: v.H_img.data.copy() for k, v in prep.encoded.items()}
    model = TGQModel(prep.cfg.model)
    train(model, PairData(prep.encoded, prep.records, model), prep.train_pairs,
          replace(prep.cfg.train, epochs=1, max_steps=2))
    assert all(np.array_equal(before[k], prep.encoded[k].H_img.data) for k in before)


def test_train_contracts():
    with pytest.raises(ConfigurationError):
        TrainConfig(tau=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_pairs=1)
    model = small_model()
    with pytest.raises(ContractError):
        train(model, None, [], TrainConfig())
