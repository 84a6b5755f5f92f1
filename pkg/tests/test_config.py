from pathlib import Path

import pytest

from convsearch_rl.config import DEFAULT_CONFIG, ConfigError, check_paths, load_config, parse_config
from convsearch_rl.training import ConversationalSearchPPO


def test_default_config_parses(tmp_path):
    cfg = parse_config(DEFAULT_CONFIG, tmp_path)
    assert cfg.train == tmp_path / "data" / "train.jsonl"
    assert cfg.reward.alpha == 0.2 and cfg.reward.n == 3
    assert cfg.env.max_searches == 2 and cfg.env.top_k == 3
    assert cfg.ppo.kl_coef == 1e-3 and cfg.ppo.normalize_advantages is False
    assert cfg.llm_scale.train_batch_size == 512 and cfg.llm_scale.actor_learning_rate == 1e-6
    assert cfg.output_dir == tmp_path / "runs" / "default"
    model = ConversationalSearchPPO(**cfg.estimator_params())
    assert model.get_params()["alpha"] == 0.2


def test_to_dict_is_json_ready(tmp_path):
    import json
    json.dumps(parse_config(DEFAULT_CONFIG, tmp_path).to_dict())


@pytest.mark.parametrize("edit,field", [
    (("alpha = 0.2", "alpha = -0.5"), "reward"),
    (("alpha = 0.2", "alpha = lots"), "reward.alpha"),
    (("intent_mode = query_f1", "intent_mode = vibes"), "reward"),
    (("top_k = 3", "top_k = 0"), "environment"),
    (("epsilon = 0.2", "epsilon = 2"), "ppo"),
    (("normalize_advantages = false", "normalize_advantages = perhaps"), "ppo.normalize_advantages"),
    (("checkpoint_interval = 50", "checkpoint_interval = 30"), "run.checkpoint_interval"),
    (("checkpoint_interval = 50", "checkpoint_interval = 0"), "run.checkpoint_interval"),
    (("seed = 0", "seed = 0\ncolour = red"), "run.colour"),
    (("hit_n = 3", "hit_n = 3\nbeta = 1"), "reward.beta"),
    (("[llm_scale]", "[mystery]"), "[mystery]"),
    (("train = data/train.jsonl\n", ""), "data.train"),
])
def test_field_level_errors(edit, field):
    text = DEFAULT_CONFIG.replace(*edit)
    assert text != DEFAULT_CONFIG
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert str(info.value).startswith(field)


def test_malformed_file():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("no section header\n")


def test_missing_files(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(DEFAULT_CONFIG)
    cfg = load_config(path)
    with pytest.raises(ConfigError, match="data.train"):
        check_paths(cfg)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")
