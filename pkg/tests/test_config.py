"""YAML config loading, validation, round trips, and fingerprints."""

from pathlib import Path

import pytest

from autobox3d.config import (
    DEFAULT_ANCHOR_DIMS,
    PipelineConfig,
    config_fingerprint,
    config_to_dict,
    load_config,
    save_config,
)
from autobox3d.errors import ValidationError


def write_config(tmp_path, text):
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    return path


class TestDefaults:
    def test_default_values(self):
        cfg = PipelineConfig()
        assert cfg.seed == 0
        assert cfg.workers == 1
        assert cfg.surface_clip is None
        assert cfg.tau_match == 2.0
        assert (cfg.d_min, cfg.d_max) == (0.5, 60.0)
        assert cfg.match_criterion == "closest_point"
        assert cfg.nms_iou == 0.5
        assert cfg.bench_budgets == (37500, 75000, 150000)
        assert cfg.weights.lambda1 == 5.0
        assert cfg.weights.gamma == 3.0
        assert cfg.swarm.n_swarm == 50
        assert cfg.swarm.n_iter == 3000

    def test_default_anchor_table(self):
        cfg = PipelineConfig()
        assert set(cfg.anchors) == set(DEFAULT_ANCHOR_DIMS)
        car = cfg.anchors["car"]
        assert tuple(car.dims_min) == (3.9, 1.6, 1.4)
        assert tuple(car.dims_max) == (5.3, 2.1, 1.9)

    def test_validation(self):
        with pytest.raises(ValidationError):
            PipelineConfig(seed=-1)
        with pytest.raises(ValidationError):
            PipelineConfig(workers=0)
        with pytest.raises(ValidationError):
            PipelineConfig(surface_clip=0.0)
        with pytest.raises(ValidationError):
            PipelineConfig(d_min=5.0, d_max=5.0)
        with pytest.raises(ValidationError):
            PipelineConfig(match_criterion="psychic")
        with pytest.raises(ValidationError):
            PipelineConfig(nms_iou=1.0)
        with pytest.raises(ValidationError):
            PipelineConfig(bench_budgets=())
        with pytest.raises(ValidationError):
            PipelineConfig(ground_quantile=0.0)


class TestLoadConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, ""))
        assert config_to_dict(cfg) == config_to_dict(PipelineConfig())

    def test_partial_overrides(self, tmp_path):
        cfg = load_config(write_config(tmp_path, """
seed: 7
workers: 2
paths:
  scenes: data/scenes
  output: data/out
swarm:
  n_swarm: 10
  n_iter: 50
association:
  tau_match: 1.5
  criterion: centroid
nms_iou: 0.3
"""))
        assert cfg.seed == 7
        assert cfg.workers == 2
        assert cfg.scenes_dir == Path("data/scenes")
        assert cfg.output_dir == Path("data/out")
        assert cfg.swarm.n_swarm == 10
        assert cfg.swarm.n_iter == 50
        assert cfg.swarm.w_init == 10.0  # untouched default
        assert cfg.tau_match == 1.5
        assert cfg.d_max == 60.0
        assert cfg.match_criterion == "centroid"
        assert cfg.nms_iou == 0.3

    def test_weights_and_thresholds(self, tmp_path):
        cfg = load_config(write_config(tmp_path, """
weights:
  lambda1: 4.0
  gamma: 2.0
thresholds:
  tau_res: 1000
  tau_occ:
    car: 0.6
"""))
        assert cfg.weights.lambda1 == 4.0
        assert cfg.weights.lambda2 == 1.0
        assert cfg.weights.gamma == 2.0
        assert cfg.thresholds.tau_res == 1000.0
        assert cfg.thresholds.tau_occ == {"car": 0.6}

    def test_anchor_override_keeps_other_classes(self, tmp_path):
        cfg = load_config(write_config(tmp_path, """
anchors:
  car:
    min: [4.0, 1.7, 1.5]
    max: [5.0, 2.0, 1.8]
"""))
        assert tuple(cfg.anchors["car"].dims_min) == (4.0, 1.7, 1.5)
        assert tuple(cfg.anchors["pedestrian"].dims_max) == (1.0, 0.9, 2.0)

    def test_surface_clip_adaptive_spelling(self, tmp_path):
        assert load_config(write_config(tmp_path, "surface_clip: adaptive")).surface_clip is None
        assert load_config(write_config(tmp_path, "surface_clip: 12.5")).surface_clip == 12.5

    def test_ground_and_clustering(self, tmp_path):
        cfg = load_config(write_config(tmp_path, """
ground:
  cell: 2.0
  height_threshold: 0.2
clustering:
  eps: 0.7
  min_pts: 4
bench:
  budgets: [100, 200]
"""))
        assert cfg.ground_cell == 2.0
        assert cfg.ground_height == 0.2
        assert cfg.cluster_eps == 0.7
        assert cfg.cluster_min_pts == 4
        assert cfg.bench_budgets == (100, 200)

    def test_unknown_root_key(self, tmp_path):
        with pytest.raises(ValidationError, match="swam"):
            load_config(write_config(tmp_path, "swam:\n  n_swarm: 5\n"))

    def test_unknown_nested_key(self, tmp_path):
        with pytest.raises(ValidationError, match="particles"):
            load_config(write_config(tmp_path, "swarm:\n  particles: 5\n"))

    def test_anchor_needs_min_and_max(self, tmp_path):
        with pytest.raises(ValidationError, match="min and max"):
            load_config(write_config(tmp_path, "anchors:\n  car:\n    min: [4, 1.7, 1.5]\n"))

    def test_anchor_triplet_shape(self, tmp_path):
        with pytest.raises(ValidationError, match="3 numbers"):
            load_config(write_config(
                tmp_path, "anchors:\n  car:\n    min: [4, 1.7]\n    max: [5, 2, 1.8]\n"
            ))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ValidationError, match="YAML"):
            load_config(write_config(tmp_path, "seed: [unclosed"))

    def test_non_mapping_root(self, tmp_path):
        with pytest.raises(ValidationError, match="mapping"):
            load_config(write_config(tmp_path, "- 1\n- 2\n"))

    def test_bad_value_propagates_as_validation_error(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(write_config(tmp_path, "seed: banana"))
        with pytest.raises(ValidationError):
            load_config(write_config(tmp_path, "nms_iou: 1.0"))


class TestRoundTrip:
    def test_save_then_load_preserves_everything(self, tmp_path):
        cfg = load_config(write_config(tmp_path, """
seed: 3
swarm:
  n_swarm: 12
weights:
  gamma: 2.5
anchors:
  car:
    min: [4.0, 1.7, 1.5]
    max: [5.0, 2.0, 1.8]
"""))
        out = tmp_path / "saved.yaml"
        save_config(cfg, out)
        again = load_config(out)
        assert config_to_dict(again) == config_to_dict(cfg)
        assert config_fingerprint(again) == config_fingerprint(cfg)


class TestFingerprint:
    def test_stable_for_equal_configs(self):
        assert config_fingerprint(PipelineConfig()) == config_fingerprint(PipelineConfig())

    def test_sensitive_to_any_parameter(self):
        base = config_fingerprint(PipelineConfig())
        assert config_fingerprint(PipelineConfig(seed=1)) != base
        assert config_fingerprint(PipelineConfig(nms_iou=0.4)) != base

    def test_is_hex_sha256(self):
        fp = config_fingerprint(PipelineConfig())
        assert len(fp) == 64
        int(fp, 16)
