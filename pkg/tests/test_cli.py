import os
from pathlib import Path

import numpy as np
import pytest

from hse3s.cli import main, write_pgm
from hse3s.config import (ConfigError, RunConfig, canonical_text, config_hash,
                          parse_config)

SMOKE_CONFIG = """
[run]
task = blocks
seed = 3
out_dir = {out}

[rounds]
rounds = 1
episodes_per_round = 4
sgd_iters_per_round = 2

[world]
min_objects = 1
max_objects = 2
render_resolution = 100

[sampler]
n_samples = 8

[approximator]
batch_size = 4

[exploration]
eps_zero_tail = 0
eps_decay_rounds = 1
"""


def read_pgm(path):
    data = Path(path).read_bytes()
    # P5, comment, dims, maxval, then raw bytes
    parts = data.split(b"\n", 4)
    assert parts[0] == b"P5"
    w, h = map(int, parts[2].split())
    return np.frombuffer(parts[4], dtype=np.uint8).reshape(h, w)


class TestConfig:
    def test_parse_round_trip(self):
        cfg = parse_config(SMOKE_CONFIG.format(out="x"))
        assert cfg.task == "blocks"
        assert cfg.rounds == 1
        again = parse_config(canonical_text(cfg))
        assert again == cfg
        assert config_hash(again) == config_hash(cfg)

    def test_missing_task(self):
        with pytest.raises(ConfigError, match="task"):
            parse_config("[run]\nseed = 1\n")

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_config("[run]\ntask = blocks\nbogus = 1\n")

    def test_bad_value_naming_field(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config("[run]\ntask = blocks\nseed = banana\n")

    def test_bad_task(self):
        with pytest.raises(ConfigError, match="task"):
            parse_config("[run]\ntask = spoons\n")


class TestTrainCommand:
    def _write_config(self, tmp_path, out):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(SMOKE_CONFIG.format(out=out))
        return cfg

    def test_smoke(self, tmp_path):
        out = tmp_path / "run1"
        cfg = self._write_config(tmp_path, out)
        assert main(["train", "--config", str(cfg)]) == 0
        curve = (out / "learning_curve.csv").read_text()
        lines = curve.strip().split("\n")
        assert lines[0].startswith("# config=")
        assert lines[1] == ("round,episodes,mean_grasp_reward,"
                            "mean_place_reward,epsilon_grasp,epsilon_place,"
                            "wall_seconds")
        assert len(lines) == 3
        assert (out / "round_0" / "step_11.weights").exists()
        assert (out / "manifest.txt").exists()

    def test_determinism_modulo_wall(self, tmp_path, monkeypatch):
        # identical config, relocated via the output-root override
        cfg = self._write_config(tmp_path, "run")
        monkeypatch.setenv("HSE3S_OUT", str(tmp_path / "A"))
        main(["train", "--config", str(cfg)])
        monkeypatch.setenv("HSE3S_OUT", str(tmp_path / "B"))
        main(["train", "--config", str(cfg)])
        out_a = tmp_path / "A" / "run"
        out_b = tmp_path / "B" / "run"

        def strip_wall(path):
            rows = Path(path).read_text().strip().split("\n")
            return ["\n".join(r.split(",")[:-1]) for r in rows]

        assert (strip_wall(out_a / "learning_curve.csv")
                == strip_wall(out_b / "learning_curve.csv"))
        assert ((out_a / "round_stats.csv").read_bytes()
                == (out_b / "round_stats.csv").read_bytes())
        for t in range(12):
            assert ((out_a / "round_0" / f"step_{t}.weights").read_bytes()
                    == (out_b / "round_0" / f"step_{t}.weights").read_bytes())

    def test_missing_task_field_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[run]\nseed = 1\n")
        assert main(["train", "--config", str(cfg)]) == 2

    def test_out_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HSE3S_OUT", str(tmp_path / "root"))
        cfg = self._write_config(tmp_path, "rel_out")
        assert main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "root" / "rel_out" / "learning_curve.csv").exists()


class TestEvalCommand:
    def test_eval_on_untrained_checkpoint(self, tmp_path, capsys):
        out = tmp_path / "run"
        cfg = tmp_path / "run.cfg"
        cfg.write_text(SMOKE_CONFIG.format(out=out))
        assert main(["train", "--config", str(cfg)]) == 0
        code = main(["eval", "--ckpt", str(out / "round_0"),
                     "--task", "blocks", "--episodes", "5", "--trials", "1",
                     "--conditions", "acf", "--samples", "8",
                     "--min-objects", "1", "--max-objects", "2",
                     "--out", str(tmp_path / "eval")])
        assert code == 0
        shown = capsys.readouterr().out
        assert "grasp_A" in shown and "grasp_ACF" in shown
        csv = (tmp_path / "eval" / "eval.csv").read_text()
        assert "failure_DF" in csv

    def test_zero_episodes_usage_error(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path), "--task", "blocks",
                     "--episodes", "0"]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path), "--task", "blocks",
                     "--episodes", "1"]) == 1


class TestInspectCommand:
    def test_writes_graymaps(self, tmp_path):
        out = tmp_path / "maps"
        assert main(["inspect", "--task", "blocks", "--seed", "4",
                     "--out", str(out)]) == 0
        assert (out / "scene.txt").exists()
        img = read_pgm(out / "level1_z.pgm")
        assert img.shape == (64, 64)
        assert img.any()

    def test_zoom_shrinks_physical_area(self, tmp_path):
        out = tmp_path / "maps"
        main(["inspect", "--task", "blocks", "--seed", "4",
              "--out", str(out)])
        sched_sides = [0.36, 0.09, 0.09, 0.09, 0.09, 0.105]
        areas = []
        for lv, side in ((1, sched_sides[0]), (3, sched_sides[2])):
            img = read_pgm(out / f"level{lv}_z.pgm")
            count = int((img > 0).sum())
            areas.append(count * (side / 64) ** 2)
        assert areas[1] <= areas[0]

    def test_single_level(self, tmp_path):
        out = tmp_path / "one"
        assert main(["inspect", "--task", "mugs", "--seed", "2",
                     "--level", "2", "--out", str(out)]) == 0
        assert (out / "level2_z.pgm").exists()
        assert not (out / "level1_z.pgm").exists()

    def test_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["inspect", "--task", "blocks", "--seed", "9", "--out", str(a)])
        main(["inspect", "--task", "blocks", "--seed", "9", "--out", str(b)])
        for name in ("level1_z.pgm", "scene.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
