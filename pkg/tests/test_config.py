import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgqformer.config import build_desk, check_key, flatten, known_keys, load_config, parse_text, render
from tgqformer.errors import ConfigurationError


def test_parse_text_literals_and_comments():
    values = parse_text("# comment\ntrain.lr = 1e-3\n\ncorpus.n_items=40\ndesk.dirty_severity = heavy\n"
                        "model.template = a <IMG> # b $t$\n")
    assert values == {"train.lr": 1e-3, "corpus.n_items": 40, "desk.dirty_severity": "heavy",
                      "model.template": "a <IMG> # b $t$"}


def test_unknown_and_malformed_lines():
    with pytest.raises(ConfigurationError, match="unknown config key"):
        parse_text("train.learning_rate = 1")
    with pytest.raises(ConfigurationError, match="key = value"):
        parse_text("train.lr 1")
    with pytest.raises(ConfigurationError):
        check_key("model.hqc")


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.cfg")


def test_build_desk_sections_and_coercion():
    desk = build_desk({"train.lr": 1, "encoder.d_v": 8, "encoder.L_v": 4, "encoder.patch": 4,
                       "hqc.T_r": 2, "desk.ks": "1,5", "corpus.n_items": 30})
    assert desk.train.lr == 1.0 and isinstance(desk.train.lr, float)
    assert desk.model.d_v == 8 and desk.model.L_v == 4
    assert desk.model.hqc.T_r == 2 and desk.ks == (1, 5) and desk.corpus.n_items == 30
    with pytest.raises(ConfigurationError):
        build_desk({"train.tau": 0.0})


def test_flatten_round_trip():
    desk = build_desk({"train.epochs": 7, "hqc.k": 3})
    flat = flatten(desk)
    assert set(flat) == set(known_keys())
    assert build_desk(parse_text(render(flat))) == desk


@given(st.sampled_from(["train.epochs", "train.batch_pairs", "hqc.n_layers", "corpus.n_items"]),
       st.integers(3, 50))
def test_integer_overrides(key, value):
    assert flatten(build_desk({key: value}))[key] == value
