"""Experiment drivers shared by the command line and the acceptance suite.

Every driver takes an :class:`~subdiff.config.ExperimentConfig`, runs its
replicas (in a process pool when ``threads > 1``) and returns a
:class:`RunResult`.  :func:`write_outputs` turns a result into files:

``msd.csv``      ``time,msd,stderr``
``fit.json``     fits, windowed slopes, Gaussianity p-values, experiment summaries
``table.csv``    telescoping rows ``N,energy,alpha_bound,n_samples,rejects``,
                 or ``dt,discrepancy,discrepancy_over_dt`` for env_consistency
``msd.svg``      log-log MSD plot with fit overlays
``manifest.json`` config snapshot, build, wall time, replica seeds, thread count

Replica ``r`` draws from ``numpy.random.SeedSequence(seed, spawn_key=(r,))``.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corrector as cr
from . import estimators as est
from .config import ExperimentConfig
from .configspace import EnvironmentState, label_ordered
from .dynamics import (
    IntegratorSpec,
    environment_paths,
    integrate_labeled,
    simulate_dyson,
    simulate_hard_rod_exact,
    simulate_pairwise,
)
from .io import build_id, dump_json, write_csv
from .models import PotentialSpec, draw, palm_samples

log = logging.getLogger(__name__)


def replica_seed(seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(r,))


def replica_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(replica_seed(seed, r))


def default_threads() -> int:
    env = os.environ.get("SUBDIFF_THREADS")
    if env:
        return max(1, int(env))
    return 1


def map_replicas(fn, cfg: ExperimentConfig, threads: int = 1):
    idx = range(cfg.replicas)
    if threads <= 1 or cfg.replicas == 1:
        return [fn(cfg, r) for r in idx]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, [cfg] * cfg.replicas, idx, chunksize=max(1, cfg.replicas // (4 * threads))))


@dataclass
class RunResult:
    experiment: str
    curve: est.MsdCurve | None = None
    fits: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    table: tuple | None = None  # (header, columns)
    extra_json: dict = field(default_factory=dict)
    wall_time: float = 0.0
    threads: int = 1


# --- replica workers (module level so they pickle) -------------------------

@dataclass
class ReplicaOut:
    times: np.ndarray
    sq: np.ndarray          # squared displacement per time
    disp: np.ndarray        # tagged displacement per time
    rejections: int = 0


def _reduce(rec, cfg):
    a = cfg.analysis
    paths = a["paths"] if rec.all_paths is not None else "tagged"
    return ReplicaOut(rec.times, est.squared_displacement(rec, paths, a["frame"]),
                      rec.tagged_path - rec.tagged_path[0], rec.collision_count)


def _pairwise_replica(cfg: ExperimentConfig, r: int):
    rng = replica_rng(cfg.seed, r)
    pot = cfg.potential
    if cfg.experiment == "free_baseline":
        pot = PotentialSpec("free")
    config = draw(cfg.sampler, pot, rng)
    state = label_ordered(config, 0.5 * config.box_length)
    recorded = "all" if cfg.analysis["paths"] == "all" else None
    rec = simulate_pairwise(state, pot, cfg.integrator, rng, recorded=recorded)
    return _reduce(rec, cfg)


def _hardrod_tags(n, k):
    if k <= 1:
        return [0]
    lab = np.unique(np.round(np.linspace(-n / 4, n / 4, k)).astype(int))
    return sorted(set(lab.tolist()) | {0}) if k % 2 else lab.tolist()


def _hardrod_replica(cfg: ExperimentConfig, r: int):
    rng = replica_rng(cfg.seed, r)
    s, ig = cfg.sampler, cfg.integrator
    tags = _hardrod_tags(s.n_particles, cfg.analysis["tags_per_replica"])
    rec = simulate_hard_rod_exact(s.n_particles, s.intensity, ig.t_end, ig.dt, rng,
                                  rod_length=s.rod_length, recorded=tags)
    return _reduce(rec, cfg)


def _dyson_replica(cfg: ExperimentConfig, r: int):
    rng = replica_rng(cfg.seed, r)
    s = cfg.sampler
    recorded = "all" if cfg.analysis["paths"] == "all" else None
    rec = simulate_dyson(s.n_particles, cfg.potential.beta, cfg.integrator, rng, intensity=s.intensity,
                         periodic=cfg.analysis["periodic"], recorded=recorded)
    return _reduce(rec, cfg)


def _env_replica(cfg: ExperimentConfig, r: int):
    """Sup-norm gap between the environment process and the labeled reference at each dt level."""
    rng = replica_rng(cfg.seed, r)
    a, ig = cfg.analysis, cfg.integrator
    n = a["n_env"]
    levels = sorted(a["dt_levels"], reverse=True)
    ratio = a["reference_ratio"]
    h = levels[-1] / ratio
    n_fine = int(round(ig.t_end / h))
    x0 = np.sort(rng.uniform(0.0, n / cfg.sampler.intensity, n))
    tag = n // 2
    fine = rng.standard_normal((n_fine, n))
    ref = integrate_labeled(x0, cfg.potential, IntegratorSpec(dt=h, t_end=ig.t_end,
                                                             drift_cutoff=ig.drift_cutoff), fine)
    others = np.delete(np.arange(n), tag)
    env0 = EnvironmentState(x0[tag], x0[others] - x0[tag])
    out = []
    for dt in levels:
        k = int(round(dt / h))
        coarse = fine.reshape(-1, k, n).sum(axis=1) / math.sqrt(k)
        noises = np.column_stack([coarse[:, tag], coarse[:, others]])
        xs, ys = environment_paths(env0, cfg.potential, IntegratorSpec(dt=dt, t_end=ig.t_end,
                                                                      drift_cutoff=ig.drift_cutoff), noises)
        lab = ref[::k]
        dy = np.max(np.abs(ys - (lab[:, others] - lab[:, [tag]])))
        dx = np.max(np.abs(xs - lab[:, tag]))
        out.append(max(dx, dy))
    return np.array(out)


# --- experiment drivers ------------------------------------------------------

def _msd_result(cfg, outs, threads, variance=None):
    a = cfg.analysis
    times = outs[0].times
    curve = est.msd_from_replicas(times, [o.sq for o in outs])
    fits = []
    lo, hi = a["fit_window"]
    nlp = a["n_log_points"] or None
    fits.append(est.fit_scaling(curve, a["fit_model"], (lo, hi), n_log_points=nlp))
    summary = {"n_replicas": curve.n_replicas, "rejected_steps": int(sum(o.rejections for o in outs))}
    if a["slope_centers"]:
        summary["slope_centers"] = list(a["slope_centers"])
        summary["windowed_slopes"] = est.windowed_slopes(curve, a["slope_centers"]).tolist()
    gauss = []
    for t in a["gaussianity_times"]:
        k = curve.at(t)
        var = variance if variance is not None else curve.msd[k] / curve.times[k]
        disp = np.array([o.disp[k] for o in outs])
        stat, p = est.gaussianity_from_displacements(disp, curve.times[k], var)
        gauss.append({"t": float(curve.times[k]), "variance_hypothesis": float(var), "ks": stat, "p_value": p})
    if gauss:
        summary["gaussianity"] = gauss
    return RunResult(cfg.experiment, curve, fits, summary, threads=threads)


def run_free_baseline(cfg, threads=1):
    outs = map_replicas(_pairwise_replica, cfg, threads)
    res = _msd_result(cfg, outs, threads, variance=1.0)
    res.summary["self_diffusion"] = est.self_diffusion_msd(res.curve, cfg.analysis["fit_window"])
    return res


def run_msd_scan(cfg, threads=1):
    return _msd_result(cfg, map_replicas(_pairwise_replica, cfg, threads), threads)


def run_hardrod(cfg, threads=1):
    return _msd_result(cfg, map_replicas(_hardrod_replica, cfg, threads), threads)


def run_dyson(cfg, threads=1):
    return _msd_result(cfg, map_replicas(_dyson_replica, cfg, threads), threads)


def run_env_consistency(cfg, threads=1):
    disc = np.array(map_replicas(_env_replica, cfg, threads))
    levels = np.array(sorted(cfg.analysis["dt_levels"], reverse=True))
    # the pathwise prefactor fluctuates between levels; the first-order check is on the replica mean
    mean = disc.mean(axis=0)
    err = disc.std(axis=0, ddof=1) / math.sqrt(len(disc)) if len(disc) > 1 else np.zeros_like(mean)
    worst = disc.max(axis=0)
    ratios = (mean[:-1] / mean[1:]).tolist()
    log.info("environment discrepancy %s (worst %s) at dt %s", mean, worst, levels)
    summary = {"dt": levels.tolist(), "discrepancy": mean.tolist(), "discrepancy_stderr": err.tolist(),
               "constant": (mean / levels).tolist(), "worst_constant": (worst / levels).tolist(),
               "halving_ratios": ratios, "reference_dt": float(levels[-1] / cfg.analysis["reference_ratio"])}
    table = (["dt", "discrepancy", "stderr", "worst", "discrepancy_over_dt"],
             [levels, mean, err, worst, mean / levels])
    return RunResult(cfg.experiment, None, [], summary, table, threads=threads)


def _palm(cfg):
    pot = cfg.potential if cfg.sampler.kind in ("gibbs_mcmc", "beta_ensemble") else None
    return palm_samples(cfg.sampler, pot, cfg.analysis["n_samples"], replica_rng(cfg.seed, 0))


def run_corrector(cfg, threads=1):
    a = cfg.analysis
    basis = cr.bump_basis(a["basis_centers"], a["basis_width"], a["basis_parity"])
    form = cr.assemble_forms(basis, _palm(cfg), min_samples=min(1000, a["n_samples"]))
    sol = cr.solve_corrector(form, a["ridge"])
    summary = {"alpha_estimate": sol.alpha_estimate, "shift_part": sol.energy_parts[0],
               "interaction_part": sol.energy_parts[1], "n_samples": form.n_samples, "n_skipped": form.n_skipped,
               "rhs": form.rhs.tolist(), "rhs_stderr": form.rhs_stderr.tolist()}
    return RunResult(cfg.experiment, summary=summary, extra_json={"form.json": form.to_dict(),
                                                                   "solution.json": sol.to_dict()},
                     threads=threads)


def run_telescoping(cfg, threads=1):
    res = cr.telescoping_experiment(_palm(cfg), cfg.analysis["n_list"])
    summary = {"rows": res.rows, "energy_bound_violations": res.energy_bound_violations,
               "cauchy_violations": res.cauchy_violations, "cauchy_checks": res.cauchy_checks}
    cols = [list(c) for c in zip(*res.rows)]
    return RunResult(cfg.experiment, summary=summary,
                     table=(["N", "energy", "alpha_bound", "n_samples", "rejects"], cols), threads=threads)


DRIVERS = {
    "free_baseline": run_free_baseline,
    "msd_scan": run_msd_scan,
    "hardrod_msd": run_hardrod,
    "dyson_msd": run_dyson,
    "env_consistency": run_env_consistency,
    "corrector_solve": run_corrector,
    "telescoping": run_telescoping,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    t0 = time.perf_counter()
    res = DRIVERS[cfg.experiment](cfg, threads)
    res.wall_time = time.perf_counter() - t0
    res.threads = threads
    return res


def write_outputs(cfg: ExperimentConfig, res: RunResult, out_dir=None) -> list:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if res.curve is not None:
        res.curve.to_csv(out / "msd.csv")
        files.append("msd.csv")
        ref = ("t", lambda t: t) if cfg.experiment != "free_baseline" else None
        est.plot_loglog(res.curve, out / "msd.svg", res.fits, title=cfg.experiment, reference=ref)
        files.append("msd.svg")
    fit = {"experiment": cfg.experiment, "fits": [f.to_dict() for f in res.fits], **res.summary}
    dump_json(fit, out / "fit.json")
    files.append("fit.json")
    if res.table is not None:
        header, cols = res.table
        write_csv(out / "table.csv", header, cols)
        files.append("table.csv")
    for name, obj in res.extra_json.items():
        dump_json(obj, out / name)
        files.append(name)
    manifest = {
        "config": cfg.to_dict(),
        "build": build_id(),
        "wall_time_s": res.wall_time,
        "threads": res.threads,
        "cpu_count": os.cpu_count(),
        "replica_seeds": [{"replica": r, "entropy": cfg.seed, "spawn_key": [r]} for r in range(cfg.replicas)],
        "outputs": files,
    }
    dump_json(manifest, out / "manifest.json")
    files.append("manifest.json")
    return files
