import pytest

from kcan.config import ConfigError, TrainConfig, load_config, parse_config


def test_defaults():
    c = TrainConfig()
    assert (c.embed_dim, c.tower, c.out_dim, c.hops, c.neighbors) == (16, (16, 8, 8), 8, 2, 20)
    assert (c.lr, c.epochs, c.l2, c.dropout) == (0.025, 200, 1e-3, 0.1)
    assert (c.kg_batch, c.target_batch, c.norm) == (1024, 256, "l1_sq")


def test_text_round_trip(tmp_path):
    c = TrainConfig(seed=4, tower=(16, 6, 4), ablation="no_lc", l2=1e-4)
    path = tmp_path / "c.txt"
    path.write_text("# comment\n" + c.to_text())
    back = load_config(path)
    assert back == c and back.hash() == c.hash()


def test_hash_changes_with_fields():
    assert TrainConfig().hash() != TrainConfig(seed=1).hash()
    assert TrainConfig().hash() == TrainConfig().hash()


@pytest.mark.parametrize("text", ["bogus = 1", "hops 2", "lr = abc", "norm = l3", "tower = 16,8", "dropout = 1.0", "weight_decay = adamw"])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)
