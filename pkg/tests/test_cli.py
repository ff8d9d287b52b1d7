import csv
import os

import pytest

from crowdloss import evalkit
from crowdloss.cli import main
from crowdloss.config import NmsSweepConfig, RunConfig, load_run_config
from crowdloss.errors import ConfigError
from crowdloss.geometry import BBox
from crowdloss.simulator import SimConfig, generate_scene, save_scene


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(path, text):
    path.write_text(text)
    return str(path)


class TestConfigFile:
    def test_defaults_without_file(self):
        cfg = load_run_config(None)
        assert isinstance(cfg, RunConfig)
        assert cfg.sim.pedestrian_count == 2
        assert cfg.seeds == tuple(range(20))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_run_config("/nonexistent/run.cfg")

    def test_sections_parsed(self, tmp_path):
        path = write_config(
            tmp_path / "run.cfg",
            "[sim]\npedestrian_count = 3\nheight_range = 0.25, 0.4\n"
            "[couloss]\naggregation_mode = triplet-literal\n"
            "[composite]\nalpha = 0.5\ninclude_repulsion = false\n"
            "[run]\nseeds = 4, 5\nout = results\n",
        )
        cfg = load_run_config(path)
        assert cfg.sim.pedestrian_count == 3
        assert cfg.sim.height_range == (0.25, 0.4)
        assert cfg.couloss.aggregation_mode == "triplet-literal"
        assert cfg.composite.alpha == 0.5
        assert cfg.composite.include_repulsion is False
        assert cfg.seeds == (4, 5)
        assert cfg.out_dir == "results"

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "[sim]\nwalrus = 1\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "[sim]\npedestrian_count = lots\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_nms_threshold_grid(self):
        grid = NmsSweepConfig().thresholds()
        assert len(grid) == 11
        assert grid[0] == 0.3 and grid[-1] == 0.8


class TestExitCodes:
    def test_missing_config_exits_one(self, tmp_path, capsys):
        code = main(["simulate", "--config", "/nope.cfg", "--out", str(tmp_path)])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_bad_seeds_exits_one(self, tmp_path, capsys):
        assert main(["simulate", "--seeds", "a,b", "--out", str(tmp_path)]) == 1

    def test_bad_variant_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "run.cfg", "[run]\nvariants = bogus\n")
        assert main(["simulate", "--config", cfg, "--seeds", "1", "--out", str(tmp_path)]) == 1


def fast_sim_section(**over):
    base = {
        "descent_steps": 40,
        "proposals_per_gt": 3,
        "distractor_count": 2,
    }
    base.update(over)
    return "[sim]\n" + "\n".join(f"{k} = {v}" for k, v in base.items()) + "\n"


class TestSimulate:
    def test_rows_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path / "run.cfg", fast_sim_section())
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["simulate", "--config", cfg, "--seeds", "1,2", "--out", str(out1)]) == 0
        assert main(["simulate", "--config", cfg, "--seeds", "1,2", "--out", str(out2)]) == 0
        data1 = (out1 / "simulate.csv").read_bytes()
        data2 = (out2 / "simulate.csv").read_bytes()
        assert data1 == data2
        rows = read_csv(out1 / "simulate.csv")
        assert rows[0] == ["seed", "variant", "drift_rate", "mean_final_iou",
                           "overlap_occupancy", "final_loss"]
        assert len(rows) == 1 + 2 * 4  # header + 2 seeds x 4 variants
        assert {r[1] for r in rows[1:]} == {"baseline", "couloss", "only_att", "only_rep"}

    def test_zero_weight_couloss_matches_baseline(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section() + "[composite]\nalpha = 0.0\n[run]\nvariants = baseline, couloss\n",
        )
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--seeds", "3", "--out", str(out)]) == 0
        rows = read_csv(out / "simulate.csv")[1:]
        base = next(r for r in rows if r[1] == "baseline")
        cou = next(r for r in rows if r[1] == "couloss")
        assert base[2:] == cou[2:]

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "run.cfg", fast_sim_section())
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        assert main(["simulate", "--config", cfg, "--seeds", "1,2,3", "--out", str(serial)]) == 0
        monkeypatch.setenv("CROWDLOSS_THREADS", "3")
        assert main(["simulate", "--config", cfg, "--seeds", "1,2,3", "--out", str(parallel)]) == 0
        assert (serial / "simulate.csv").read_bytes() == (parallel / "simulate.csv").read_bytes()

    def test_divergence_exits_three_with_partial_rows(self, tmp_path, capsys):
        # oversized step diverges on seed 1 but not seed 2: the completed
        # seed's rows must be flushed before the abort
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section(step_size=0.05) + "[run]\nvariants = couloss\n",
        )
        out = tmp_path / "out"
        code = main(["simulate", "--config", cfg, "--seeds", "2,1", "--out", str(out)])
        assert code == 3
        assert "abort" in capsys.readouterr().err
        rows = read_csv(out / "simulate.csv")
        assert len(rows) == 2  # header + the completed seed-2 row
        assert rows[1][0] == "2"

    def test_default_twenty_seed_suite_within_budget(self, tmp_path):
        import time

        out = tmp_path / "out"
        start = time.time()
        assert main(["simulate", "--out", str(out)]) == 0
        elapsed = time.time() - start
        rows = read_csv(out / "simulate.csv")
        assert len(rows) == 1 + 20 * 4  # default seeds x default variants
        assert elapsed < 300.0


class TestNmsSweep:
    def test_rows_and_svg(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section() + "[nms]\nthreshold_min = 0.3\nthreshold_max = 0.8\n"
            "threshold_step = 0.05\n",
        )
        out = tmp_path / "out"
        assert main(
            ["nms-sweep", "--config", cfg, "--seeds", "1,2", "--out", str(out), "--svg"]
        ) == 0
        rows = read_csv(out / "nms_sweep.csv")
        assert rows[0] == ["variant", "threshold", "kept", "false_positives", "misses", "miss_rate"]
        assert len(rows) == 1 + 2 * 11  # two variants x eleven thresholds
        summary = read_csv(out / "nms_summary.csv")
        assert summary[0] == ["variant", "min_misses", "max_misses", "spread", "variance"]
        assert len(summary) == 3
        svg = (out / "nms_sweep.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_deterministic(self, tmp_path):
        cfg = write_config(tmp_path / "run.cfg", fast_sim_section())
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["nms-sweep", "--config", cfg, "--seeds", "4", "--out", str(a)]) == 0
        assert main(["nms-sweep", "--config", cfg, "--seeds", "4", "--out", str(b)]) == 0
        assert (a / "nms_sweep.csv").read_bytes() == (b / "nms_sweep.csv").read_bytes()


class TestAnchorDemo:
    def test_flat_map_sets_fallback_flag(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg", fast_sim_section() + "[anchors]\nmap_kind = flat\n"
        )
        out = tmp_path / "out"
        assert main(["anchor-demo", "--config", cfg, "--seeds", "1", "--out", str(out)]) == 0
        rows = read_csv(out / "anchor_stats.csv")
        assert rows[0][4] == "fallback"
        assert rows[1][4] == "true"

    def test_indicator_map_counts(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section() + "[anchors]\nmap_kind = indicator\nstride = 2.0\n",
        )
        out = tmp_path / "out"
        assert main(["anchor-demo", "--config", cfg, "--seeds", "1", "--out", str(out)]) == 0
        rows = read_csv(out / "anchor_stats.csv")
        retained = int(rows[1][2])
        total = int(rows[1][3])
        assert 0 < retained < total
        assert (out / "probability_map.txt").exists()
        assert (out / "target_map.txt").exists()

    def test_bump_demo_writes_stats(self, tmp_path):
        cfg = write_config(tmp_path / "run.cfg", fast_sim_section())
        out = tmp_path / "out"
        assert main(["anchor-demo", "--config", cfg, "--seeds", "1,2,3", "--out", str(out)]) == 0
        rows = read_csv(out / "anchor_stats.csv")
        assert len(rows) == 4
        for row in rows[1:]:
            assert float(row[5]) >= 0.0  # selected fraction present

    def test_deterministic(self, tmp_path):
        cfg = write_config(tmp_path / "run.cfg", fast_sim_section())
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["anchor-demo", "--config", cfg, "--seeds", "2", "--out", str(a)]) == 0
        assert main(["anchor-demo", "--config", cfg, "--seeds", "2", "--out", str(b)]) == 0
        for name in ("anchor_stats.csv", "probability_map.txt", "target_map.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestEval:
    def test_end_to_end(self, tmp_path):
        scenes_dir = tmp_path / "scenes"
        scenes_dir.mkdir()
        sim = SimConfig(distractor_count=0)
        dets = []
        for seed in (1, 2):
            scene = generate_scene(sim, seed)
            sid = f"scene{seed}"
            save_scene(scene, scenes_dir / f"{sid}.txt")
            for g in scene.gt_boxes:
                dets.append(evalkit.Detection(g, 0.9, sid))
        det_path = tmp_path / "dets.csv"
        evalkit.save_detections(dets, det_path)
        cfg = write_config(
            tmp_path / "run.cfg",
            f"[eval]\ndetections = {det_path}\nscenes_dir = {scenes_dir}\n",
        )
        out = tmp_path / "out"
        assert main(["eval", "--config", cfg, "--out", str(out)]) == 0
        summary = (out / "eval_summary.txt").read_text()
        assert "log_average_miss_rate" in summary
        # perfect detections: MR^-2 equals the floor value
        assert "0.0001" in summary.splitlines()[0]
        assert (out / "curve.csv").exists()

    def test_missing_inputs_exit_one(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg", "[eval]\ndetections = /nope.csv\nscenes_dir = /nope\n"
        )
        assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == 1


class TestGradcheckCommand:
    def test_small_run_passes(self, tmp_path):
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section() + "[gradcheck]\nnum_scenes = 25\n",
        )
        out = tmp_path / "out"
        assert main(["gradcheck", "--config", cfg, "--out", str(out)]) == 0
        report = (out / "gradcheck_report.txt").read_text()
        assert "result PASS" in report
        assert "term couloss " in report

    def test_kink_fixture_writes_warnings(self, tmp_path):
        # zero jitter puts every proposal exactly on its ground truth: all kinks
        cfg = write_config(
            tmp_path / "run.cfg",
            fast_sim_section(proposals_per_gt=2) + "proposal_jitter = 0.0\n"
            "[gradcheck]\nnum_scenes = 3\nmax_perturb_retries = 2\n",
        )
        out = tmp_path / "out"
        code = main(["gradcheck", "--config", cfg, "--out", str(out)])
        report = (out / "gradcheck_report.txt").read_text()
        assert "kink_warning" in report
        assert code == 2  # nothing checkable -> acceptance failure
