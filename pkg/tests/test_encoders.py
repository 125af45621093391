import numpy as np
import pytest

from tgqformer.blob import write_blob
from tgqformer.corpus import ItemRecord, SynthConfig, synth_corpus
from tgqformer.encoders import EncoderConfig, IngestEncoder, SyntheticEncoder, sinusoid
from tgqformer.errors import ConfigurationError, ContractError, DimensionError
from tgqformer.gating import agreement_score
from tgqformer.rng import stream


def test_ingest_constant_tokens_mean():
    enc = IngestEncoder(EncoderConfig(d_v=4, L_v=4, mode="ingest"))
    h, f = enc.encode_image(np.ones((4, 4)))
    assert np.array_equal(f.data, np.ones(4))
    assert not h.requires_grad and not f.requires_grad


def test_ingest_blob_accepted_verbatim_and_shape_checked():
    cfg = EncoderConfig(d_v=32, L_v=16, mode="ingest")
    blob = stream(0, "blob").standard_normal((16, 32))
    enc = IngestEncoder(cfg)
    assert np.array_equal(enc.encode_image(blob)[0].data, blob)
    with pytest.raises(DimensionError, match=r"\(16, 32\)"):
        enc.encode_image(blob[:8])


def test_ingest_manifest_round_trip(tmp_path):
    cfg = EncoderConfig(d_v=4, L_v=4, mode="ingest")
    rng = stream(1, "m")
    # blobs carry float32 payloads
    img = rng.standard_normal((4, 4)).astype(np.float32).astype(np.float64)
    txt = rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64)
    write_blob(tmp_path / "a.img.tgqt", img)
    write_blob(tmp_path / "a.txt.tgqt", txt)
    (tmp_path / "manifest.tsv").write_text("a\ta.img.tgqt\ta.txt.tgqt\n")
    enc = IngestEncoder.from_manifest_file(cfg, tmp_path / "manifest.tsv")
    item = enc.encode_item(ItemRecord("a", "t", "b", ("x", "y", "z"), feature_ref="a.img.tgqt"))
    assert np.array_equal(item.H_txt.data, txt)
    assert np.allclose(item.f_img_global.data, img.mean(axis=0))
    assert np.allclose(item.f_title_global.data, txt.mean(axis=0))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EncoderConfig(d_v=3)
    with pytest.raises(ConfigurationError):
        EncoderConfig(L_v=0)
    with pytest.raises(ConfigurationError):
        EncoderConfig(L_v=15)
    with pytest.raises(ConfigurationError):
        EncoderConfig(mode="clip")


def test_synthetic_image_deterministic():
    corpus = synth_corpus(SynthConfig(n_items=4))
    img = corpus.images[corpus.items[0].item_id]
    a = SyntheticEncoder().encode_image(img)
    b = SyntheticEncoder().encode_image(img.copy())
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    assert np.allclose(a[1].data, a[0].data.mean(axis=0))


def test_render_decodes_back_to_content():
    enc = SyntheticEncoder()
    cfg = enc.cfg
    contents = np.full((cfg.L_v, cfg.d_v), np.nan)
    v = stream(0, "v").standard_normal(cfg.d_v)
    contents[5] = v / np.linalg.norm(v)
    tokens = enc.encode_image(enc.render(contents))[0].data / cfg.scale
    cos = tokens[5] @ contents[5] / np.linalg.norm(tokens[5])
    assert cos > 0.99
    assert np.allclose(tokens[0], enc.white_token / cfg.scale)


def test_title_truncated_to_50_tokens():
    enc = SyntheticEncoder()
    h = enc.encode_text(" ".join(f"t{i}" for i in range(60)))
    assert h.shape == (50, enc.cfg.d_v)


def test_repeated_token_differs_by_position_offset_only():
    enc = SyntheticEncoder()
    h = enc.encode_text("x y x").data / enc.cfg.scale
    pos = enc.cfg.pos_scale * sinusoid(3, enc.cfg.d_v)
    assert np.allclose(h[0] - pos[0], h[2] - pos[2], atol=1e-12)


def test_single_token_title():
    enc = SyntheticEncoder()
    h = enc.encode_text("solo")
    assert h.shape == (1, enc.cfg.d_v)
    assert np.array_equal(enc.encode_title_global("solo").data, h.data[0])


def test_empty_text_rejected():
    with pytest.raises(ContractError):
        SyntheticEncoder().encode_text("   ")


def test_title_global_is_mean_of_tokens():
    enc = SyntheticEncoder()
    assert np.allclose(enc.encode_title_global("a b c").data, enc.encode_text("a b c").data.mean(axis=0))


def test_title_global_duplicate_invariance_ingest():
    # the mean of token rows is unchanged when every row is duplicated
    rows = stream(2, "r").standard_normal((3, 8))
    assert np.allclose(np.repeat(rows, 2, axis=0).mean(axis=0), rows.mean(axis=0))


def test_matched_titles_agree_more_than_shuffled():
    corpus = synth_corpus(SynthConfig(n_items=80))
    enc = SyntheticEncoder()
    items = [enc.encode_item(r, corpus.images[r.item_id]) for r in corpus.items]
    f_img = np.stack([it.f_img_global.data for it in items])
    f_title = np.stack([it.f_title_global.data for it in items])
    matched = agreement_score(f_img, f_title).mean()
    shuffled = agreement_score(f_img, np.roll(f_title, 7, axis=0)).mean()
    assert matched > shuffled


def test_metadata_text_feeds_token_stream():
    corpus = synth_corpus(SynthConfig(n_items=4))
    rec = corpus.items[0]
    item = SyntheticEncoder().encode_item(rec, corpus.images[rec.item_id])
    assert item.H_txt.shape[0] == 4 + len(rec.title.split())
    assert not item.H_txt.requires_grad
