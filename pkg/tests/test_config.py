import json

import numpy as np
import pytest

from flowmap_ensemble.config import (PRESETS, ExperimentConfig, eval_window, exact_trajectory, lift,
                                     make_config, save_config_file, stream_seed)
from flowmap_ensemble.errors import ConfigError
from flowmap_ensemble.nncore import param_count
from flowmap_ensemble.systems import chaotic4d, integrate, pendulum


class TestPresets:
    def test_pendulum(self):
        c = PRESETS["pendulum"]
        assert c.system == "pendulum" and c.hidden == (40, 40) and c.memory_len == 0
        assert (c.optimizer, c.learning_rate) == ("sgd", 1e-3)
        assert c.eval_point == (-1.193, -3.876)
        assert param_count(c.architecture()) == 1842

    def test_chaotic(self):
        c = PRESETS["chaotic"]
        assert c.system == "chaotic4d" and c.hidden == (30, 30, 30) and c.memory_len == 60
        assert (c.optimizer, c.learning_rate, c.epochs) == ("adam", 1e-3, 100)
        assert c.eval_point == (-3.7634, 7.1463, 13.1806)
        assert param_count(c.architecture()) == 7473

    def test_paper_scale(self):
        assert make_config("pendulum", paper_scale=True).pool_size == 1000
        assert make_config("chaotic", paper_scale=True).n_ensembles == 500


class TestResolution:
    def test_flags_beat_file_beat_preset(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "chaotic", "epochs": 7, "M": 321}))
        c = make_config(None, path, {"epochs": 3, "M": None})
        assert c.system == "chaotic4d" and c.epochs == 3 and c.M == 321

    def test_saved_file_reproduces_config(self, tmp_path):
        c = make_config("chaotic", overrides={"pool_size": 4})
        save_config_file(c, tmp_path / "c.json")
        assert make_config(None, tmp_path / "c.json") == c

    @pytest.mark.parametrize("doc", ['{"bogus": 1}', '{"nested": {"a": 1}}', "[1, 2]", "{not json"])
    def test_bad_files(self, tmp_path, doc):
        (tmp_path / "c.json").write_text(doc)
        with pytest.raises(ConfigError):
            make_config(None, tmp_path / "c.json")

    @pytest.mark.parametrize("kw", [
        dict(system="lorenz"), dict(dt=0.0), dict(K_list=()), dict(K_list=(0, 5)),
        dict(eval_point=(1.0,)), dict(alpha=1.5), dict(learning_rate=-1.0), dict(hidden=()),
        dict(n_ensembles=1),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            make_config("lorenz")


class TestSeeds:
    def test_streams_distinct(self):
        c = ExperimentConfig()
        assert len({c.data_seed, c.bootstrap_seed, c.train_config().seed}) == 3

    def test_stable(self):
        assert stream_seed(2024, 1) == stream_seed(2024, 1) != stream_seed(2025, 1)

    def test_hash_changes_with_content(self):
        a = ExperimentConfig()
        assert a.content_hash() == ExperimentConfig().content_hash()
        assert a.content_hash() != ExperimentConfig(epochs=10).content_hash()


class TestEvalWindow:
    def test_pendulum(self):
        c = PRESETS["pendulum"]
        w, u = eval_window(c)
        np.testing.assert_array_equal(w, [[-1.193, -3.876]])
        np.testing.assert_array_equal(u, integrate(pendulum(), np.array(c.eval_point), 0.02, 1)[1])

    def test_chaotic_lift_and_window(self):
        c = make_config("chaotic", overrides={"memory_len": 3})
        x = lift("chaotic4d", c.eval_point)
        assert x[3] == pytest.approx(-3.7634 * 7.1463)
        w, u = eval_window(c)
        assert w.shape == (4, 3)
        traj = chaotic4d().observe(integrate(chaotic4d(), x, 0.02, 4, c.substeps))
        np.testing.assert_array_equal(w[-1], c.eval_point)  # oldest entry is the eval point
        np.testing.assert_array_equal(w, traj[3::-1])
        np.testing.assert_array_equal(u, traj[4])

    def test_trajectory_length(self):
        c = make_config("chaotic", overrides={"memory_len": 2})
        assert exact_trajectory(c, 5).shape == (8, 3)
