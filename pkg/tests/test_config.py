import numpy as np
import pytest

from occtrack.config import ConfigError, TrackerConfig, apply_overrides, config_from_dict, load_config


def test_defaults_validate():
    cfg = TrackerConfig().validate()
    assert cfg.tsdf.voxel_size == 0.004 and cfg.tsdf.trunc == 0.012
    assert cfg.ransac.max_iterations == 500
    assert cfg.sampler.rotation_trigger == pytest.approx(np.deg2rad(10))
    assert cfg.refine.huber_delta == 0.5


def test_yaml_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("sampler: {rotation_trigger_deg: 15, K: 20}\npipeline: {multi_hypothesis: false}\n")
    cfg = load_config(p)
    assert cfg.sampler.rotation_trigger == pytest.approx(np.deg2rad(15))
    assert cfg.sampler.K == 20
    assert cfg.pipeline.multi_hypothesis is False


@pytest.mark.parametrize("d", [
    {"bogus": {}},
    {"tsdf": {"voxel": 0.1}},
    {"tsdf": {"voxel_size": -1.0}},
    {"sampler": {"K": 2.5}},
    {"pipeline": {"sdf_refine": "yes"}},
    {"sampler": {"rotation_trigger": 0.2}},
    {"sampler": {"lam": 2.0}},
])
def test_invalid_configs_rejected(d):
    with pytest.raises(ConfigError):
        config_from_dict(d)


def test_overrides():
    cfg = apply_overrides(TrackerConfig(), ["ransac.inlier_threshold=0.02", "pipeline.seed=4"])
    assert cfg.ransac.inlier_threshold == 0.02 and cfg.pipeline.seed == 4
    with pytest.raises(ConfigError):
        apply_overrides(TrackerConfig(), ["nosection=1"])
    with pytest.raises(ConfigError):
        apply_overrides(TrackerConfig(), ["foo.bar=1"])


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
