"""Scenario runners for the 2D mixture experiments: convergence demos,
the 10:1 imbalance grid over {training noise shape} x {diffusion shape},
and the matched noise/diffusion shape sweep.

Every run is a pure function of (config, master seed): data, training and
sampling streams are derived from named substreams, seeds fan out across
workers without changing results, and aggregation is a deterministic fold
in seed order. Wall times are the only unreproducible fields.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from htdsm.metrics import MetricReport, bootstrap_ci, fid, kid, mode_imbalance, prdc
from htdsm.sampler import DIVERGED, SamplerConfig, ald_run
from htdsm.schedule import NoiseSchedule, geometric_schedule
from htdsm.scorenet import MixtureSpec, TrainConfig, train

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "standard_member_alpha",
    "run_convergence_demo",
    "run_imbalance_grid",
    "run_beta_sweep",
    "write_endpoints_csv",
    "write_paths_csv",
    "GRID_CELLS",
]

# Substream tags for deriving independent generators from the master seed.
_STREAM_DATA = 0
_STREAM_TRAIN = 1
_STREAM_SAMPLE = 2

# Table-shaped grid: training objective rows x diffusion columns.
GRID_CELLS = (
    ("dsm", "gaussian"),
    ("dsm", "laplace"),
    ("htdsm", "gaussian"),
    ("htdsm", "laplace"),
)
_TRAIN_BETA = {"dsm": 2.0, "htdsm": 1.0}
_DIFF_BETA = {"gaussian": 2.0, "laplace": 1.0}


def standard_member_alpha(beta: float) -> float:
    """Base noise scale 2^(1 - 1/beta): the density kernel becomes
    exp(-|x|^beta / 2^(beta-1)), which is the standard normal at beta = 2
    and the standard Laplace at beta = 1. The experiments scale noise as
    sigma times this standard family member, so heavier-tailed training
    noise also carries more power, matching the noising recipe the sweep
    and grid compare."""
    return 2.0 ** (1.0 - 1.0 / beta)


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(key))
    )


def _seed_int(master_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """One imbalance experiment: mixture, shared training/sampling settings,
    particle count and the seed list."""

    mixture: MixtureSpec = field(default_factory=lambda: MixtureSpec.two_mode(10.0))
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            schedule=geometric_schedule(1.0, 0.25, 2), learning_rate=1e-3
        )
    )
    # 1500 steps per level: the same step size as the single-level demo but
    # with enough level-1 tail events for the diffusion-shape contrast to
    # show over 10 seeds.
    sampler: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(
            schedule=geometric_schedule(1.0, 0.25, 2),
            steps_per_level=1500,
            step_size=0.1,
        )
    )
    particles: int = 1000
    seeds: tuple = tuple(range(10))
    metric_names: tuple = ()
    data_count: int = 20_000
    master_seed: int = 0
    bootstrap_resamples: int = 10_000
    bootstrap_level: float = 0.95

    def __post_init__(self) -> None:
        if len(self.seeds) == 0:
            raise ValueError("seeds must be nonempty")
        if self.particles < 1:
            raise ValueError(f"particles must be >= 1, got {self.particles}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "metric_names", tuple(self.metric_names))

    def to_dict(self) -> dict:
        return {
            "mixture": self.mixture.to_dict(),
            "train": self.train.to_dict(),
            "sampler": self.sampler.to_dict(),
            "particles": self.particles,
            "seeds": list(self.seeds),
            "metric_names": list(self.metric_names),
            "data_count": self.data_count,
            "master_seed": self.master_seed,
            "bootstrap_resamples": self.bootstrap_resamples,
            "bootstrap_level": self.bootstrap_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = {}
        if "mixture" in d:
            kwargs["mixture"] = MixtureSpec.from_dict(d["mixture"])
        if "train" in d:
            kwargs["train"] = TrainConfig.from_dict(d["train"])
        if "sampler" in d:
            kwargs["sampler"] = SamplerConfig.from_dict(d["sampler"])
        for k in (
            "particles",
            "data_count",
            "master_seed",
            "bootstrap_resamples",
            "bootstrap_level",
        ):
            if k in d:
                kwargs[k] = d[k]
        if "seeds" in d:
            kwargs["seeds"] = tuple(d["seeds"])
        if "metric_names" in d:
            kwargs["metric_names"] = tuple(d["metric_names"])
        return cls(**kwargs)


@dataclass
class RunRecord:
    """Per-run summary; imbalance is None when every particle diverged."""

    seed: int
    imbalance: float | None
    diverged: int
    loss_first_decile: float
    loss_last_decile: float
    metrics: MetricReport | None = None
    wall_time: float = 0.0
    mode_capture: float | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "imbalance": self.imbalance,
            "diverged": self.diverged,
            "loss_first_decile": self.loss_first_decile,
            "loss_last_decile": self.loss_last_decile,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "wall_time": self.wall_time,
            "mode_capture": self.mode_capture,
        }


def _loss_deciles(losses: np.ndarray) -> tuple:
    n10 = max(1, len(losses) // 10)
    return float(losses[:n10].mean()), float(losses[-n10:].mean())


def _endpoint_metrics(endpoints, statuses, data, names) -> MetricReport | None:
    if not names:
        return None
    keep = np.asarray([s != DIVERGED for s in statuses], dtype=bool)
    pts = np.asarray(endpoints, dtype=float)[keep]
    report = MetricReport()
    if "prdc" in names and pts.shape[0] > 5:
        ref = data[: max(pts.shape[0], 6)]
        p, r, d, c = prdc(ref, pts, 5)
        report.precision, report.recall, report.density, report.coverage = p, r, d, c
    if "kid" in names and pts.shape[0] >= 2:
        report.kid = kid(data[: pts.shape[0]], pts)
    if "fid" in names and pts.shape[0] > data.shape[1]:
        report.fid = fid(data[: pts.shape[0]], pts)
    return report


def _train_for_seed(cfg: ExperimentConfig, seed: int, beta_noise: float,
                    alpha_unit: float):
    """Deterministic (data, net, losses) for one seed and training shape."""
    data = cfg.mixture.sample(
        _rng(cfg.master_seed, seed, _STREAM_DATA), cfg.data_count
    )
    train_cfg = TrainConfig(
        schedule=cfg.train.schedule,
        beta_noise=beta_noise,
        alpha_unit=alpha_unit,
        batch_size=cfg.train.batch_size,
        steps=cfg.train.steps,
        learning_rate=cfg.train.learning_rate,
        loss_weight_exponent=cfg.train.loss_weight_exponent,
        hidden=cfg.train.hidden,
        seed=seed,
    )
    beta_key = int(round(beta_noise * 1_000_000))
    net, losses = train(
        data, train_cfg, _rng(cfg.master_seed, seed, _STREAM_TRAIN, beta_key)
    )
    return data, net, losses


def _sample_cell(cfg: ExperimentConfig, seed: int, net, beta_diff: float):
    sampler_cfg = SamplerConfig(
        schedule=cfg.sampler.schedule,
        steps_per_level=cfg.sampler.steps_per_level,
        step_size=cfg.sampler.step_size,
        beta_diff=beta_diff,
        init_half_width=cfg.sampler.init_half_width,
        divergence_radius=cfg.sampler.divergence_radius,
        record_paths=False,
        seed=_seed_int(cfg.master_seed, seed, _STREAM_SAMPLE),
    )
    paths = ald_run(lambda x, ls: net.forward(x, ls), sampler_cfg, cfg.particles)
    endpoints = np.array([p.final for p in paths])
    statuses = [p.status for p in paths]
    return endpoints, statuses


def _seed_records(args) -> dict:
    """All requested (training shape, diffusion shape) records for one seed.

    Module-level so worker processes can pickle it; trains each distinct
    training shape once and reuses it across diffusion columns.
    """
    cfg_dict, seed, shapes = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    trained = {}
    out = {}
    for name, beta_noise, alpha_unit, beta_diff in shapes:
        t0 = time.perf_counter()
        train_key = (beta_noise, alpha_unit)
        if train_key not in trained:
            trained[train_key] = _train_for_seed(cfg, seed, beta_noise, alpha_unit)
        data, net, losses = trained[train_key]
        endpoints, statuses = _sample_cell(cfg, seed, net, beta_diff)
        diverged = sum(s == DIVERGED for s in statuses)
        first, last = _loss_deciles(losses)
        try:
            imbalance = mode_imbalance(endpoints, cfg.mixture, statuses)
        except ValueError:
            imbalance = None
        report = _endpoint_metrics(endpoints, statuses, data, cfg.metric_names)
        out[name] = RunRecord(
            seed=seed,
            imbalance=imbalance,
            diverged=diverged,
            loss_first_decile=first,
            loss_last_decile=last,
            metrics=report,
            wall_time=time.perf_counter() - t0,
        ).to_dict()
    return out


def _run_shapes(cfg: ExperimentConfig, shapes, workers: int = 1) -> dict:
    """Records per shape name, seed-ordered. Seeds fan across workers."""
    tasks = [(cfg.to_dict(), seed, shapes) for seed in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_seed_records, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_seed_records(task))
            log.debug("seed %d done (%d shapes)", task[1], len(shapes))
    per_shape = {name: [] for name, *_ in shapes}
    for res in results:
        for name, record in res.items():
            per_shape[name].append(record)
    return per_shape


def _aggregate_cell(cfg: ExperimentConfig, records: list) -> dict:
    imbalances = [r["imbalance"] for r in records if r["imbalance"] is not None]
    diverged_fracs = [r["diverged"] / cfg.particles for r in records]
    divergent = (
        sum(f > 0.5 for f in diverged_fracs) > 0.5 * len(records)
    )
    cell = {
        "divergent": divergent,
        "per_seed": records,
        "mean": None,
        "ci_lo": None,
        "ci_hi": None,
    }
    if imbalances:
        mean, lo, hi = bootstrap_ci(
            imbalances,
            cfg.bootstrap_resamples,
            cfg.bootstrap_level,
            _rng(cfg.master_seed, _STREAM_SAMPLE, 999),
        )
        cell.update(mean=mean, ci_lo=lo, ci_hi=hi)
    return cell


def run_imbalance_grid(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """The {DSM, HTDSM} x {Gaussian, Laplace} table.

    Per cell and seed the model is retrained with the cell's noise shape,
    1,000 (cfg.particles) particles are annealed, and non-diverged
    endpoints are assigned to modes; per-seed imbalances aggregate through
    a percentile bootstrap. A cell is Divergent when more than half the
    seeds lose more than half their particles; divergence is an outcome,
    never an error.
    """
    shapes = []
    for row, col in GRID_CELLS:
        beta_noise = _TRAIN_BETA[row]
        shapes.append(
            (
                f"{row}_{col}",
                beta_noise,
                standard_member_alpha(beta_noise),
                _DIFF_BETA[col],
            )
        )
    per_shape = _run_shapes(cfg, shapes, workers)
    cells = {name: _aggregate_cell(cfg, recs) for name, recs in per_shape.items()}
    return {
        "rows": ["dsm", "htdsm"],
        "cols": ["gaussian", "laplace"],
        "cells": cells,
        "seeds": list(cfg.seeds),
        "particles": cfg.particles,
        "bootstrap": {
            "resamples": cfg.bootstrap_resamples,
            "level": cfg.bootstrap_level,
        },
    }


def run_beta_sweep(cfg: ExperimentConfig, betas, workers: int = 1) -> dict:
    """Matched noise/diffusion sweep: each beta trains and samples with the
    same shape. beta = 2 coincides with the dsm_gaussian grid cell and
    beta = 1 with htdsm_laplace."""
    betas = [float(b) for b in betas]
    if any(not 0.0 < b <= 2.0 for b in betas):
        raise ValueError(f"sweep betas must lie in (0, 2], got {betas}")
    shapes = [
        (f"beta_{b:g}", b, standard_member_alpha(b), b) for b in betas
    ]
    per_shape = _run_shapes(cfg, shapes, workers)
    rows = []
    for b, (name, *_rest) in zip(betas, shapes):
        cell = _aggregate_cell(cfg, per_shape[name])
        rows.append(
            {
                "beta": b,
                "mean": cell["mean"],
                "ci_lo": cell["ci_lo"],
                "ci_hi": cell["ci_hi"],
                "divergent": cell["divergent"],
                "per_seed": cell["per_seed"],
            }
        )
    return {"rows": rows, "seeds": list(cfg.seeds), "particles": cfg.particles}


def run_convergence_demo(
    levels: int,
    beta_noise: float,
    out_dir,
    *,
    cfg: ExperimentConfig | None = None,
    path_particles: int = 10,
) -> RunRecord:
    """Balanced-mixture demo: train, anneal 1,000 particles, write CSVs.

    levels = 1 uses the single sigma = 1.0 level; levels = 2 the
    [1.0, 0.25] pair. Endpoints for every particle and full paths for the
    first path_particles particles (bitwise the same particles, by the
    per-particle stream construction) land in out_dir.
    """
    if levels not in (1, 2):
        raise ValueError(f"levels must be 1 or 2, got {levels}")
    schedule = (
        NoiseSchedule(sigmas=(1.0,), beta=2.0, n=2, delta=None, kind="geometric")
        if levels == 1
        else geometric_schedule(1.0, 0.25, 2)
    )
    if cfg is None:
        # The demo protocol: 1,000 Langevin steps per level at step size 0.1,
        # diffusion shape matched to the training noise, and a learning rate
        # high enough for the fixed 20k-step budget to reach the smoothed
        # score (the imbalance grid deliberately stays at the slower
        # default, where the mode-collapse contrast lives).
        cfg = ExperimentConfig(
            mixture=MixtureSpec.two_mode(1.0),
            train=TrainConfig(
                schedule=geometric_schedule(1.0, 0.25, 2), learning_rate=0.02
            ),
            sampler=SamplerConfig(
                schedule=geometric_schedule(1.0, 0.25, 2),
                steps_per_level=1000,
                step_size=0.1,
                beta_diff=beta_noise,
            ),
        )
    steps = cfg.sampler.steps_per_level
    if len(set(steps)) == 1:
        steps = steps[0]
    elif len(steps) != len(schedule):
        raise ValueError(
            f"steps_per_level {steps} does not fit a {len(schedule)}-level demo"
        )
    cfg = ExperimentConfig(
        mixture=cfg.mixture,
        train=TrainConfig(
            schedule=schedule,
            beta_noise=beta_noise,
            alpha_unit=cfg.train.alpha_unit,
            batch_size=cfg.train.batch_size,
            steps=cfg.train.steps,
            learning_rate=cfg.train.learning_rate,
            loss_weight_exponent=cfg.train.loss_weight_exponent,
            hidden=cfg.train.hidden,
            seed=cfg.train.seed,
        ),
        sampler=SamplerConfig(
            schedule=schedule,
            steps_per_level=steps,
            step_size=cfg.sampler.step_size,
            beta_diff=cfg.sampler.beta_diff,
            init_half_width=cfg.sampler.init_half_width,
            divergence_radius=cfg.sampler.divergence_radius,
            seed=cfg.sampler.seed,
        ),
        particles=cfg.particles,
        seeds=cfg.seeds[:1],
        metric_names=cfg.metric_names,
        data_count=cfg.data_count,
        master_seed=cfg.master_seed,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    alpha_unit = (
        cfg.train.alpha_unit
        if cfg.train.alpha_unit is not None
        else standard_member_alpha(beta_noise)
    )
    data, net, losses = _train_for_seed(cfg, seed, beta_noise, alpha_unit)
    endpoints, statuses = _sample_cell(cfg, seed, net, cfg.sampler.beta_diff)
    write_endpoints_csv(out_dir / "endpoints.csv", endpoints, statuses)

    paths_cfg = SamplerConfig(
        schedule=cfg.sampler.schedule,
        steps_per_level=cfg.sampler.steps_per_level,
        step_size=cfg.sampler.step_size,
        beta_diff=cfg.sampler.beta_diff,
        init_half_width=cfg.sampler.init_half_width,
        divergence_radius=cfg.sampler.divergence_radius,
        record_paths=True,
        seed=_seed_int(cfg.master_seed, seed, _STREAM_SAMPLE),
    )
    paths = ald_run(
        lambda x, ls: net.forward(x, ls),
        paths_cfg,
        min(path_particles, cfg.particles),
    )
    write_paths_csv(out_dir / "paths.csv", paths)

    keep = np.asarray([s != DIVERGED for s in statuses], dtype=bool)
    capture = None
    if keep.any():
        pts = endpoints[keep]
        dists = np.linalg.norm(
            pts[:, None, :] - cfg.mixture.mean_array()[None], axis=2
        ).min(axis=1)
        capture = float((dists <= 3.0 * max(cfg.mixture.stds)).mean())
    try:
        imbalance = mode_imbalance(endpoints, cfg.mixture, statuses)
    except ValueError:
        imbalance = None
    first, last = _loss_deciles(losses)
    record = RunRecord(
        seed=seed,
        imbalance=imbalance,
        diverged=sum(s == DIVERGED for s in statuses),
        loss_first_decile=first,
        loss_last_decile=last,
        metrics=_endpoint_metrics(endpoints, statuses, data, cfg.metric_names),
        wall_time=time.perf_counter() - t0,
        mode_capture=capture,
    )
    with open(out_dir / "record.json", "w") as fh:
        json.dump(record.to_dict(), fh, indent=2)
        fh.write("\n")
    return record


def _fmt(x: float) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(x))


def write_endpoints_csv(path, endpoints, statuses) -> None:
    endpoints = np.asarray(endpoints, dtype=float)
    dim = endpoints.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["particle_id", "status"] + [f"x{i}" for i in range(dim)])
        for pid, (point, status) in enumerate(zip(endpoints, statuses)):
            writer.writerow([pid, status] + [_fmt(v) for v in point])


def write_paths_csv(path, particle_paths) -> None:
    """Per-step positions: particle_id, level, step, x0..xd-1.

    Step 0 is the initial position (level of the first schedule level).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = particle_paths[0].positions.shape[1]
        writer.writerow(
            ["particle_id", "level", "step", *(f"x{i}" for i in range(dim))]
        )
        for pid, p in enumerate(particle_paths):
            if p.positions is None:
                raise ValueError("paths were not recorded for this run")
            levels = np.concatenate([[p.levels[0]], p.levels])
            for step, (lvl, pos) in enumerate(zip(levels, p.positions)):
                writer.writerow([pid, int(lvl), step] + [_fmt(v) for v in pos])


def write_grid_outputs(out_dir, grid: dict, sweep: dict | None = None) -> None:
    """grid.json, per-seed CSV and (when a sweep is present) sweep.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "grid.json", "w") as fh:
        json.dump(grid, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "per_seed.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "seed", "imbalance", "diverged"])
        for name, cell in grid["cells"].items():
            for rec in cell["per_seed"]:
                writer.writerow(
                    [
                        name,
                        rec["seed"],
                        "" if rec["imbalance"] is None else _fmt(rec["imbalance"]),
                        rec["diverged"],
                    ]
                )
    if sweep is not None:
        with open(out_dir / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "mean", "ci_lo", "ci_hi", "divergent"])
            for row in sweep["rows"]:
                writer.writerow(
                    [
                        _fmt(row["beta"]),
                        "" if row["mean"] is None else _fmt(row["mean"]),
                        "" if row["ci_lo"] is None else _fmt(row["ci_lo"]),
                        "" if row["ci_hi"] is None else _fmt(row["ci_hi"]),
                        row["divergent"],
                    ]
                )
