"""Multi-realization filtering experiments: per-step NLL and step timing."""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import repeat
from pathlib import Path
from time import perf_counter_ns

import numpy as np

from ..errors import ConfigError, EmptyReport, HGMError
from ..filters import HgmFilterAssets, make_runner, nll
from ..models import GaussianDensity, StateSpaceModel, Trajectory, get_model, simulate
from ..oracle import default_grid, initial_table
from ..pfaffian import InitialPointTable, load_pfaffian
from .config import ExperimentConfig, resolve_path

DEFAULT_PFAFFIAN = {"linear": "linear_q1.pfn"}


def fmt(x) -> str:
    """Shortest round-tripping text of a float; shared by the CSV writers and the plots."""
    return repr(float(x))


@lru_cache(maxsize=8)
def load_model(name: str) -> StateSpaceModel:
    try:
        return get_model(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def initial_density(cfg: ExperimentConfig, model: StateSpaceModel) -> GaussianDensity:
    if len(cfg.init_mean) != model.n:
        raise ConfigError(f"init.mean has {len(cfg.init_mean)} entries, model state has {model.n}")
    return GaussianDensity(np.array(cfg.init_mean), np.diag(cfg.init_var))


@lru_cache(maxsize=4)
def build_assets(cfg: ExperimentConfig) -> HgmFilterAssets:
    model = load_model(cfg.model)
    source = cfg.hgm_pfaffian_file or DEFAULT_PFAFFIAN.get(cfg.model)
    if not source:
        raise ConfigError(f"the hgm filter needs hgm.pfaffian_file for model {cfg.model!r}")
    system = load_pfaffian(resolve_path(source))
    if cfg.hgm_init_table_file:
        table = InitialPointTable.load(resolve_path(cfg.hgm_init_table_file))
    else:
        table = initial_table(model, system, default_grid(model), cfg.quadrature())
    return HgmFilterAssets.build(system, table, cfg.solver())


def runner_for(cfg: ExperimentConfig, name: str):
    model = load_model(cfg.model)
    return make_runner(
        name, model, quad=cfg.quadrature(), ukf=cfg.ukf(), particles=cfg.pf_particles,
        assets=build_assets(cfg) if name == "hgm" else None,
    )


@dataclass
class FilterRun:
    """One filter over one trajectory. Failed steps carry NaN and time -1."""

    name: str
    means: np.ndarray  # (K, n)
    covs: np.ndarray  # (K, n, n)
    nll: np.ndarray  # (K,)
    time_ns: np.ndarray  # (K,) int64
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.errors)


def run_filter(cfg: ExperimentConfig, name: str, traj: Trajectory, seed: int) -> FilterRun:
    model = load_model(cfg.model)
    init = initial_density(cfg, model)
    runner = runner_for(cfg, name)
    runner.start(init, seed)
    K, n = traj.K, model.n
    run = FilterRun(name, np.full((K, n), np.nan), np.full((K, n, n), np.nan), np.full(K, np.nan), np.full(K, -1, dtype=np.int64))
    for k in range(1, K + 1):
        y, u = traj.outputs[k - 1], traj.inputs[k - 1]
        t0 = perf_counter_ns()
        try:
            belief = runner.step(k, y, u)
        except HGMError as exc:
            run.errors.append((k, exc.kind))
            continue
        t1 = perf_counter_ns()
        run.time_ns[k - 1] = t1 - t0
        run.means[k - 1] = belief.mean
        run.covs[k - 1] = belief.cov
        try:
            run.nll[k - 1] = nll(belief, traj.states[k])
        except HGMError as exc:
            run.errors.append((k, exc.kind))
    return run


def run_realization(cfg: ExperimentConfig, index: int) -> list[FilterRun]:
    seed = cfg.seed + index
    model = load_model(cfg.model)
    traj = simulate(model, cfg.steps, initial_density(cfg, model), seed)
    return [run_filter(cfg, name, traj, seed) for name in cfg.filters]


@dataclass
class ExperimentReport:
    filters: tuple[str, ...]
    steps: int
    realizations: int
    mean_nll: dict[str, np.ndarray]
    nll_count: dict[str, np.ndarray]
    time_summary: dict[str, tuple[float, float, float, float, float]]
    time_count: dict[str, int]
    failures: dict[str, dict[str, int]]
    failed_realizations: dict[str, int]
    runs: list[list[FilterRun]] | None = None

    def succeeded_realizations(self, name: str) -> int:
        return self.realizations - self.failed_realizations[name]

    # CSV views

    def nll_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "k", "mean_nll", "count"])
        for f in self.filters:
            for k in range(self.steps):
                w.writerow([f, k + 1, fmt(self.mean_nll[f][k]), int(self.nll_count[f][k])])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "min_ns", "q1_ns", "median_ns", "q3_ns", "max_ns", "count"])
        for f in self.filters:
            w.writerow([f] + [fmt(v) for v in self.time_summary[f]] + [self.time_count[f]])
        return buf.getvalue()

    def failures_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "realizations", "succeeded", "failed", "kind", "failed_steps"])
        for f in self.filters:
            base = [f, self.realizations, self.succeeded_realizations(f), self.failed_realizations[f]]
            kinds = self.failures[f]
            if not kinds:
                w.writerow(base + ["", 0])
            for kind in sorted(kinds):
                w.writerow(base + [kind, kinds[kind]])
        return buf.getvalue()

    def results_csv(self) -> str:
        if self.runs is None:
            raise EmptyReport("per-step results were not kept")
        buf = io.StringIO()
        write_results(buf, [(i, run) for i, runs in enumerate(self.runs) for run in runs])
        return buf.getvalue()

    def write(self, out_dir: str | os.PathLike) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "nll": out / "nll.csv",
            "timing": out / "timing.csv",
            "failures": out / "failures.csv",
        }
        paths["nll"].write_text(self.nll_csv())
        paths["timing"].write_text(self.timing_csv())
        paths["failures"].write_text(self.failures_csv())
        if self.runs is not None:
            paths["results"] = out / "results.csv"
            paths["results"].write_text(self.results_csv())
        return paths

    @classmethod
    def read(cls, out_dir: str | os.PathLike) -> "ExperimentReport":
        out = Path(out_dir)
        try:
            nll_rows = list(csv.DictReader(io.StringIO((out / "nll.csv").read_text())))
            time_rows = list(csv.DictReader(io.StringIO((out / "timing.csv").read_text())))
            fail_rows = list(csv.DictReader(io.StringIO((out / "failures.csv").read_text())))
        except FileNotFoundError as exc:
            raise EmptyReport(f"missing report file {exc.filename}") from None
        if not nll_rows:
            raise EmptyReport("report has no NLL rows")
        filters = tuple(dict.fromkeys(r["filter"] for r in nll_rows))
        steps = max(int(r["k"]) for r in nll_rows)
        mean_nll = {f: np.full(steps, np.nan) for f in filters}
        count = {f: np.zeros(steps, dtype=np.int64) for f in filters}
        for r in nll_rows:
            mean_nll[r["filter"]][int(r["k"]) - 1] = float(r["mean_nll"])
            count[r["filter"]][int(r["k"]) - 1] = int(r["count"])
        keys = ("min_ns", "q1_ns", "median_ns", "q3_ns", "max_ns")
        summary = {r["filter"]: tuple(float(r[k]) for k in keys) for r in time_rows}
        tcount = {r["filter"]: int(r["count"]) for r in time_rows}
        failures = {f: {} for f in filters}
        failed = {f: 0 for f in filters}
        realizations = 0
        for r in fail_rows:
            realizations = int(r["realizations"])
            failed[r["filter"]] = int(r["failed"])
            if r["kind"]:
                failures[r["filter"]][r["kind"]] = int(r["failed_steps"])
        return cls(filters, steps, realizations, mean_nll, count, summary, tcount, failures, failed)


def write_results(stream, runs: list[tuple[int | None, FilterRun]]) -> None:
    """Per-step rows ``k, mu.., Sigma.., nll, step_time_ns, filter_name``, optionally led by a realization index."""
    w = csv.writer(stream, lineterminator="\n")
    first = runs[0][1]
    n = first.means.shape[1]
    lead = ["realization"] if runs[0][0] is not None else []
    w.writerow(lead + ["k"] + [f"mu{i + 1}" for i in range(n)]
               + [f"Sigma{i + 1}{j + 1}" for i in range(n) for j in range(n)]
               + ["nll", "step_time_ns", "filter_name"])
    for idx, run in runs:
        for k in range(run.nll.size):
            w.writerow(
                ([idx] if idx is not None else []) + [k + 1]
                + [fmt(v) for v in run.means[k]] + [fmt(v) for v in run.covs[k].ravel()]
                + [fmt(run.nll[k]), int(run.time_ns[k]), run.name]
            )


def aggregate(cfg: ExperimentConfig, results: list[list[FilterRun]], keep_runs: bool = True) -> ExperimentReport:
    if not results:
        raise EmptyReport("no realizations")
    mean_nll, counts, summary, tcount, failures, failed = {}, {}, {}, {}, {}, {}
    for j, name in enumerate(cfg.filters):
        table = np.array([runs[j].nll for runs in results])  # (R, K)
        ok = np.isfinite(table)
        counts[name] = ok.sum(axis=0)
        with np.errstate(invalid="ignore"):
            mean_nll[name] = np.where(ok, table, 0.0).sum(axis=0) / counts[name]
        times = np.concatenate([runs[j].time_ns for runs in results])
        times = times[times >= 0]
        if times.size:
            q = np.percentile(times.astype(float), [0, 25, 50, 75, 100])
            summary[name] = tuple(float(v) for v in q)
        else:
            summary[name] = (np.nan,) * 5
        tcount[name] = int(times.size)
        failures[name] = dict(Counter(kind for runs in results for _, kind in runs[j].errors))
        failed[name] = sum(runs[j].failed for runs in results)
    return ExperimentReport(
        tuple(cfg.filters), cfg.steps, len(results), mean_nll, counts, summary, tcount,
        failures, failed, results if keep_runs else None,
    )


def run_experiment(cfg: ExperimentConfig, workers: int = 1, keep_runs: bool = True) -> ExperimentReport:
    """Simulate ``cfg.realizations`` trajectories with seeds ``seed + i`` and run every filter on each."""
    if "hgm" in cfg.filters:
        build_assets(cfg)  # fail fast on bad fixtures
    indices = range(cfg.realizations)
    if workers <= 1:
        results = [run_realization(cfg, i) for i in indices]
    else:
        chunk = max(1, cfg.realizations // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_realization, repeat(cfg), indices, chunksize=chunk))
    return aggregate(cfg, results, keep_runs)
