import json

import pytest

from beamdn.config import ConfigError, RunConfig, from_dict, load_config


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(None) == cfg
    assert cfg.to_json() == load_config(path).to_json()


def test_default_values():
    cfg = RunConfig()
    assert (cfg.ray.lam, cfg.ray.mu, cfg.ray.radius_k, cfg.ray.n_per_ray) == (8.0, 2.0, 3.0, 5)
    assert cfg.eval.distance_thresholds == (0.5, 1.0, 2.0, 4.0)
    assert cfg.eval.ray_angle_eps == 0.01
    assert cfg.eval.score_floor == 0.05


def test_partial_override():
    cfg = from_dict({"seed": 4, "ray": {"lam": 5}, "train": {"steps": 10}})
    assert cfg.seed == 4 and cfg.ray.lam == 5.0 and cfg.ray.mu == 2.0 and cfg.train.steps == 10
    assert cfg.ray.spec().params.lam == 5.0
    assert cfg.train.build().steps == 10


def test_with_seed():
    cfg = RunConfig()
    assert cfg.with_seed(None) is cfg
    assert cfg.with_seed(9).seed == 9


@pytest.mark.parametrize(
    "doc,needle",
    [
        ({"bogus": 1}, "bogus"),
        ({"ray": {"lambda": 3}}, "ray: unknown"),
        ({"seed": "x"}, "seed"),
        ({"seed": True}, "seed"),
        ({"ray": {"lam": "big"}}, "ray.lam"),
        ({"ray": []}, "ray"),
        ({"eval": {"distance_thresholds": 2}}, "eval.distance_thresholds"),
        ({"schema_version": 2}, "schema_version"),
        ({"ray": {"lam": -1}}, "lam"),
        ({"eval": {"distance_thresholds": [2, 1]}}, "increasing"),
    ],
)
def test_rejections(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        from_dict(doc)


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        load_config(p)
