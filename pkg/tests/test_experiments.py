import copy
import csv
import json
import math

import pytest

from htdsm.experiments import (
    ExperimentConfig,
    run_beta_sweep,
    run_convergence_demo,
    run_imbalance_grid,
    standard_member_alpha,
    write_grid_outputs,
    _seed_int,
    _STREAM_SAMPLE,
)
from htdsm.sampler import SamplerConfig, particle_rng
from htdsm.schedule import geometric_schedule
from htdsm.scorenet import MixtureSpec, TrainConfig


def tiny_config(**overrides):
    base = dict(
        mixture=MixtureSpec.two_mode(10.0),
        train=TrainConfig(schedule=geometric_schedule(1.0, 0.25, 2), steps=300),
        sampler=SamplerConfig(
            schedule=geometric_schedule(1.0, 0.25, 2),
            steps_per_level=50,
            step_size=0.1,
        ),
        particles=60,
        seeds=(0, 1),
        data_count=2000,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def strip_wall_times(grid):
    grid = copy.deepcopy(grid)
    for cell in grid["cells"].values():
        for rec in cell["per_seed"]:
            rec["wall_time"] = 0.0
    return grid


@pytest.fixture(scope="module")
def small_grid():
    return run_imbalance_grid(tiny_config())


class TestImbalanceGrid:
    def test_table_shape(self, small_grid):
        assert small_grid["rows"] == ["dsm", "htdsm"]
        assert small_grid["cols"] == ["gaussian", "laplace"]
        assert set(small_grid["cells"]) == {
            "dsm_gaussian",
            "dsm_laplace",
            "htdsm_gaussian",
            "htdsm_laplace",
        }
        for cell in small_grid["cells"].values():
            assert len(cell["per_seed"]) == 2
            assert isinstance(cell["divergent"], bool)

    def test_records_have_imbalance_iff_survivors(self, small_grid):
        for cell in small_grid["cells"].values():
            for rec in cell["per_seed"]:
                if rec["diverged"] < 60:
                    assert rec["imbalance"] is not None
                    assert 0.0 <= rec["imbalance"] <= 100.0

    def test_ci_brackets_mean(self, small_grid):
        for cell in small_grid["cells"].values():
            if cell["mean"] is not None:
                assert cell["ci_lo"] <= cell["mean"] <= cell["ci_hi"]

    def test_deterministic_rerun(self, small_grid):
        again = run_imbalance_grid(tiny_config())
        assert strip_wall_times(again) == strip_wall_times(small_grid)

    def test_workers_do_not_change_results(self, small_grid):
        parallel = run_imbalance_grid(tiny_config(), workers=2)
        assert strip_wall_times(parallel) == strip_wall_times(small_grid)

    def test_sweep_endpoints_coincide_with_grid_cells(self, small_grid):
        sweep = run_beta_sweep(tiny_config(), [1.0, 2.0])
        by_beta = {row["beta"]: row for row in sweep["rows"]}
        # beta = 2 is dsm_gaussian, beta = 1 is htdsm_laplace: identical
        # configuration and streams, so identical records.
        want_b2 = [r["imbalance"] for r in small_grid["cells"]["dsm_gaussian"]["per_seed"]]
        got_b2 = [r["imbalance"] for r in by_beta[2.0]["per_seed"]]
        assert got_b2 == want_b2
        want_b1 = [r["imbalance"] for r in small_grid["cells"]["htdsm_laplace"]["per_seed"]]
        got_b1 = [r["imbalance"] for r in by_beta[1.0]["per_seed"]]
        assert got_b1 == want_b1

    def test_sweep_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            run_beta_sweep(tiny_config(), [2.5])

    def test_metric_selection_fills_report(self):
        grid = run_imbalance_grid(
            tiny_config(metric_names=("prdc", "kid", "fid"), seeds=(0,))
        )
        rec = grid["cells"]["dsm_gaussian"]["per_seed"][0]
        assert rec["metrics"] is not None
        assert rec["metrics"]["feature_map"] == "identity"
        for key in ("precision", "recall", "density", "coverage", "kid", "fid"):
            assert rec["metrics"][key] is not None

    def test_grid_outputs_written(self, small_grid, tmp_path):
        write_grid_outputs(tmp_path, small_grid, run_beta_sweep(tiny_config(), [2.0]))
        assert json.loads((tmp_path / "grid.json").read_text())["rows"] == ["dsm", "htdsm"]
        with open(tmp_path / "per_seed.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert {r["cell"] for r in rows} == set(small_grid["cells"])
        with open(tmp_path / "sweep.csv") as fh:
            srows = list(csv.DictReader(fh))
        assert srows[0]["beta"] == "2.0"


class TestStandardMemberAlpha:
    def test_anchors(self):
        assert standard_member_alpha(2.0) == pytest.approx(math.sqrt(2.0), rel=1e-12)
        assert standard_member_alpha(1.0) == pytest.approx(1.0, rel=1e-12)


class TestConvergenceDemo:
    def test_zero_step_endpoints_equal_init(self, tmp_path):
        cfg = tiny_config(
            mixture=MixtureSpec.two_mode(1.0),
            sampler=SamplerConfig(
                schedule=geometric_schedule(1.0, 0.25, 2),
                steps_per_level=5,
                step_size=0.0,
            ),
            particles=30,
        )
        record = run_convergence_demo(2, 2.0, tmp_path, cfg=cfg)
        with open(tmp_path / "endpoints.csv") as fh:
            rows = list(csv.DictReader(fh))
        sampler_seed = _seed_int(cfg.master_seed, cfg.seeds[0], _STREAM_SAMPLE)
        for pid, row in enumerate(rows):
            want = particle_rng(sampler_seed, pid).uniform(-6.0, 6.0, 2)
            assert float(row["x0"]) == want[0]
            assert float(row["x1"]) == want[1]
        assert record.diverged == 0

    def test_demo_outputs(self, tmp_path):
        cfg = tiny_config(mixture=MixtureSpec.two_mode(1.0), particles=40)
        record = run_convergence_demo(2, 1.0, tmp_path, cfg=cfg, path_particles=3)
        assert (tmp_path / "record.json").exists()
        with open(tmp_path / "paths.csv") as fh:
            rows = list(csv.DictReader(fh))
        # 3 particles, 100 steps plus the initial position each.
        assert len(rows) == 3 * 101
        assert {r["particle_id"] for r in rows} == {"0", "1", "2"}
        assert {r["level"] for r in rows} == {"0", "1"}
        assert record.loss_first_decile > 0

    def test_single_level_schedule(self, tmp_path):
        cfg = tiny_config(mixture=MixtureSpec.two_mode(1.0), particles=10)
        record = run_convergence_demo(1, 2.0, tmp_path, cfg=cfg, path_particles=2)
        with open(tmp_path / "paths.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["level"] for r in rows} == {"0"}
        assert record.imbalance is not None

    def test_invalid_levels(self, tmp_path):
        with pytest.raises(ValueError):
            run_convergence_demo(3, 2.0, tmp_path)


class TestFullScaleDemo:
    """The demo at its real protocol (20k steps, 1,000 particles)."""

    def test_gaussian_two_level_mode_capture(self, tmp_path):
        record = run_convergence_demo(2, 2.0, tmp_path / "g")
        assert record.mode_capture >= 0.95
        assert record.loss_last_decile < record.loss_first_decile

    def test_laplace_two_level_all_converge(self, tmp_path):
        # Laplace training noise with matched Laplace diffusion: every
        # particle converges and the loss decreases.
        record = run_convergence_demo(2, 1.0, tmp_path / "l")
        assert record.diverged == 0
        assert record.loss_last_decile < record.loss_first_decile


class TestConfigRoundtrip:
    def test_json_roundtrip(self):
        cfg = tiny_config()
        clone = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert clone == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(seeds=())
        with pytest.raises(ValueError):
            tiny_config(particles=0)
