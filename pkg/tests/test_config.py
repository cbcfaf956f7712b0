"""Config file parsing: key schema, required keys, ablation names."""

from __future__ import annotations

import pytest

from repadapt.config import (ABLATION_SHARED_SPACE, ABLATION_TEXT_BRANCH, RunConfig,
                             parse_config, parse_config_text)
from repadapt.errors import ConfigError

MINIMAL = "lambda = 0.2\nbeta = 0.9\n"


def test_minimal_config_uses_desk_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.variant == "shared"
    assert cfg.L == 4 and cfg.d_v == 32
    assert cfg.lam == 0.2 and cfg.beta == 0.9
    assert cfg.seeds == (1, 2, 3)


def test_full_key_set_and_comments():
    text = """
    # experiment setup
    variant = full
    L = 6          # deeper stack
    heads = 2
    d_v = 16
    d_t = 16
    d = 8
    d_r = 8
    K = 4
    J = 3
    r1 = 2
    r2 = 4
    alpha = 0.5
    lambda = 0.1
    beta = 0.7
    tau = 0.02
    lr = 0.002
    weight_decay = 0.0
    steps = 12
    batch = 2
    seeds = 5, 6
    classes = 4
    shots = 2
    separation = 2.5
    ablation = w/o RS, w/o L-Branch
    """
    cfg = parse_config_text(text)
    assert cfg.variant == "full"
    assert cfg.L == 6 and cfg.J == 3 and cfg.K == 4
    assert cfg.seeds == (5, 6)
    assert cfg.ablation == (ABLATION_SHARED_SPACE, ABLATION_TEXT_BRANCH)
    model = cfg.model_config()
    assert model.shared_space is False
    assert model.insert_text is False
    assert model.insert_image is True


def test_required_keys_enforced():
    with pytest.raises(ConfigError, match="lambda"):
        parse_config_text("beta = 0.9\n")
    with pytest.raises(ConfigError, match="beta"):
        parse_config_text("lambda = 0.2\n")


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="momentum"):
        parse_config_text(MINIMAL + "momentum = 0.9\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text(MINIMAL + "steps = 3\nsteps = 4\n")


def test_bad_value_reports_key():
    with pytest.raises(ConfigError, match="steps"):
        parse_config_text(MINIMAL + "steps = fast\n")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text(MINIMAL + "just some words\n")


def test_unknown_ablation_rejected():
    with pytest.raises(ConfigError, match="w/o Everything"):
        parse_config_text(MINIMAL + "ablation = w/o Everything\n")


def test_decoupling_toggles():
    cfg = parse_config_text(MINIMAL + "ablation = w/o DS-Base\n")
    assert cfg.mix_base is False and cfg.mix_novel is False
    cfg = parse_config_text(MINIMAL + "ablation = w/o DS-Novel\n")
    assert cfg.mix_base is True and cfg.mix_novel is True


def test_parse_file_and_echo_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(MINIMAL + "seeds = 9\nsteps = 7\n", encoding="utf-8")
    cfg = parse_config(path)
    assert cfg.seeds == (9,) and cfg.steps == 7
    echo = cfg.echo()
    assert echo["seeds"] == [9]
    assert echo["lambda" if "lambda" in echo else "lam"] == 0.2


def test_empty_seed_list_rejected():
    with pytest.raises(ConfigError, match="seed"):
        RunConfig(seeds=())
