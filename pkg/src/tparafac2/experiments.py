"""Batch harness: dataset generation, multi-start fits, selection, summaries.

A plan names a dataset group, the methods to fit, and the grid sizes; running
it produces slab dataset directories, one record per (dataset, method,
lambda_B, init), and deterministic CSV summaries. Output files avoid wall
times except in runs.csv, so summary artifacts are byte-stable across
repeated runs with the same seed.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation, slab, synth
from .cmf import fit_cmf, fms_cmf
from .core import RegularizationConfig, TensorSlices
from .evaluation import detect_degenerate, select_best
from .solver import SolverConfig, fit

__all__ = [
    "ExperimentPlan",
    "RunRecord",
    "PlanResult",
    "NumericalFailureError",
    "default_plan",
    "dataset_config",
    "run_fit",
    "fit_dataset",
    "run_plan",
    "summarize",
    "write_csv",
    "METHODS",
    "GROUPS",
]

METHODS = ("parafac2", "tparafac2", "tcmf", "nntcmf")
SMOOTHED_METHODS = ("tparafac2", "tcmf", "nntcmf")
GROUPS = ("easy", "almostzero", "overlap")

DESK_SCALE = {"I": 60, "J": 40, "K": 15, "n_datasets": 10, "n_inits": 10}
PAPER_SCALE = {"I": 150, "J": 100, "K": 20, "n_datasets": 20, "n_inits": 20}

SUMMARY_COLUMNS = [
    "group", "method", "lambda_b", "eta", "fraction", "n_datasets",
    "n_discarded", "fms_min", "fms_q1", "fms_median", "fms_q3", "fms_max",
]
BEST_COLUMNS = [
    "group", "method", "lambda_b", "eta", "fraction", "dataset_id",
    "init_seed", "final_loss", "outer_iters", "exit_reason", "degenerate",
    "discarded_reason", "fms",
]
RUN_COLUMNS = [
    "dataset_id", "group", "method", "lambda_b", "eta", "fraction",
    "init_seed", "final_loss", "outer_iters", "exit_reason", "degenerate",
    "fms", "feas_gap_b_z", "feas_gap_b_y", "feas_gap_d", "feas_gap_a",
    "wall_time_seconds",
]


class NumericalFailureError(RuntimeError):
    """Raised when every run of a fit batch diverged."""


@dataclass(frozen=True)
class ExperimentPlan:
    """One benchmark group at a given scale."""

    group: str = "easy"
    n_datasets: int = 10
    n_inits: int = 10
    noise_levels: tuple[float, ...] = (0.5,)
    overlap_fractions: tuple[float, ...] = ()
    methods: tuple[str, ...] = ("parafac2", "tparafac2")
    lambda_B_grid: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    base_seed: int = 0
    I: int = 60
    J: int = 40
    K: int = 15
    R: int = 3
    ridge: float = 1e-3
    max_outer: int = 2000
    # batch protocol stops on successive-loss change below this relative
    # tolerance; looser than the solver default so multi-start sweeps exit
    # through the loss criterion instead of the iteration cap
    rel_tol_loss: float = 1e-5
    # almostzero datasets alternate through these low-concept counts
    n_low_concepts: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")
        object.__setattr__(self, "noise_levels", tuple(float(e) for e in self.noise_levels))
        object.__setattr__(self, "overlap_fractions",
                           tuple(float(f) for f in self.overlap_fractions))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "lambda_B_grid",
                           tuple(float(l) for l in self.lambda_B_grid))
        object.__setattr__(self, "n_low_concepts", tuple(self.n_low_concepts))
        if not self.methods:
            raise ValueError("plan needs at least one method")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.n_inits < 1 or self.n_datasets < 1:
            raise ValueError("n_inits and n_datasets must be at least 1")
        if not self.noise_levels:
            raise ValueError("plan needs at least one noise level")
        if self.group == "overlap" and not self.overlap_fractions:
            raise ValueError("overlap plans need at least one overlap fraction")
        if any(m in SMOOTHED_METHODS for m in self.methods) and not self.lambda_B_grid:
            raise ValueError("smoothed methods need a non-empty lambda_B grid")


def default_plan(group: str, paper_scale: bool = False, **overrides) -> ExperimentPlan:
    """Stock plan for one group; ``paper_scale`` switches dims and counts."""
    scale = PAPER_SCALE if paper_scale else DESK_SCALE
    base = dict(group=group, I=scale["I"], J=scale["J"], K=scale["K"],
                n_datasets=scale["n_datasets"], n_inits=scale["n_inits"])
    if group == "easy":
        base.update(noise_levels=(0.5,), methods=("parafac2", "tparafac2"))
    elif group == "almostzero":
        base.update(noise_levels=(0.25,), methods=("parafac2", "tparafac2"))
    elif group == "overlap":
        base.update(noise_levels=(0.5,), overlap_fractions=(0.1, 0.2, 0.4),
                    methods=("parafac2", "tparafac2", "tcmf", "nntcmf"))
    else:
        raise ValueError(f"unknown group {group!r}")
    base.update(overrides)
    return ExperimentPlan(**base)


@dataclass(frozen=True)
class RunRecord:
    """One fit of one method on one dataset from one initialization."""

    dataset_id: str
    group: str
    method: str
    lambda_B: float
    eta: float
    fraction: float | None
    init_seed: int
    final_loss: float
    outer_iters: int
    exit_reason: str
    degenerate: bool
    fms: float | None
    feas_gap_B_Z: float
    feas_gap_B_Y: float | None
    feas_gap_D: float | None
    feas_gap_A: float | None
    wall_time_seconds: float
    discarded_reason: str | None = None

    def as_row(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "group": self.group,
            "method": self.method,
            "lambda_b": self.lambda_B,
            "eta": self.eta,
            "fraction": self.fraction,
            "init_seed": self.init_seed,
            "final_loss": self.final_loss,
            "outer_iters": self.outer_iters,
            "exit_reason": self.exit_reason,
            "degenerate": self.degenerate,
            "fms": self.fms,
            "feas_gap_b_z": self.feas_gap_B_Z,
            "feas_gap_b_y": self.feas_gap_B_Y,
            "feas_gap_d": self.feas_gap_D,
            "feas_gap_a": self.feas_gap_A,
            "wall_time_seconds": self.wall_time_seconds,
        }


def dataset_config(plan: ExperimentPlan, eta: float, fraction: float | None,
                   index: int) -> synth.SyntheticConfig:
    """Generator config for dataset ``index`` of a plan cell."""
    seed = plan.base_seed + index
    dims = dict(I=plan.I, J=plan.J, K=plan.K, R=plan.R)
    if plan.group == "easy":
        return synth.easy_preset(seed, eta=eta, **dims)
    if plan.group == "almostzero":
        n_low = plan.n_low_concepts[index % len(plan.n_low_concepts)]
        return synth.almostzero_preset(seed, n_low, eta=eta, **dims)
    return synth.overlap_preset(seed, fraction, eta=eta, **dims)


def run_fit(data: TensorSlices, truth, *, method: str, lambda_B: float, R: int,
            ridge: float = 1e-3, max_outer: int = 2000,
            rel_tol_loss: float = 1e-5, seed: int = 0,
            dataset_id: str = "", group: str = "", eta: float = float("nan"),
            fraction: float | None = None, lambda_A: float | None = None,
            lambda_D: float | None = None):
    """Fit one method once; returns ``(RunRecord, factors)``.

    ``lambda_A`` and ``lambda_D`` default to ``ridge`` when not given;
    ``rel_tol_loss`` defaults to the batch-protocol tolerance.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    lam_A = ridge if lambda_A is None else lambda_A
    lam_D = ridge if lambda_D is None else lambda_D
    start = time.perf_counter()
    if method in ("parafac2", "tparafac2"):
        lam = lambda_B if method == "tparafac2" else 0.0
        cfg = SolverConfig(
            R=R,
            reg=RegularizationConfig(lambda_A=lam_A, lambda_B=lam, lambda_D=lam_D),
            max_outer=max_outer,
            rel_tol_loss=rel_tol_loss,
            seed=seed,
        )
        res = fit(data, cfg)
        factors = res.factors
        fms_val = None
        if truth is not None and truth.R == R:
            fms_val = evaluation.fms(factors, truth).fms
        gaps = (res.feas_gap_B_Z, res.feas_gap_B_Y, res.feas_gap_D, None)
    else:
        lam = lambda_B
        cfg = SolverConfig(
            R=R, reg=RegularizationConfig(lambda_A=lam_A),
            max_outer=max_outer, rel_tol_loss=rel_tol_loss, seed=seed,
        )
        res = fit_cmf(data, R, lam, nonneg_A=(method == "nntcmf"), config=cfg)
        factors = res.factors
        fms_val = None
        if truth is not None and truth.R == R:
            fms_val = fms_cmf(factors, truth)
        gaps = (res.feas_gap_B_Z, None, None, res.feas_gap_A)
    wall = time.perf_counter() - start
    record = RunRecord(
        dataset_id=dataset_id,
        group=group,
        method=method,
        lambda_B=lam,
        eta=eta,
        fraction=fraction,
        init_seed=seed,
        final_loss=res.final_loss,
        outer_iters=res.outer_iters,
        exit_reason=res.exit_reason,
        degenerate=detect_degenerate(factors),
        fms=fms_val,
        feas_gap_B_Z=gaps[0],
        feas_gap_B_Y=gaps[1],
        feas_gap_D=gaps[2],
        feas_gap_A=gaps[3],
        wall_time_seconds=wall,
    )
    return record, factors


def fit_dataset(dataset_dir, *, method: str, lambda_B: float, n_inits: int,
                base_seed: int, R: int | None = None, ridge: float = 1e-3,
                max_outer: int = 2000, rel_tol_loss: float = 1e-5,
                group: str = "", eta: float | None = None,
                fraction: float | None = None, dataset_id: str | None = None,
                keep_factors: bool = False, lambda_A: float | None = None,
                lambda_D: float | None = None):
    """Fit one dataset with ``n_inits`` seeds ``base_seed..base_seed+n_inits-1``.

    Returns ``(records, factors_by_seed)``; the factors dict is empty unless
    ``keep_factors`` is set.
    """
    ds = slab.read_dataset(dataset_dir)
    if R is None:
        R = ds.meta.get("R_true")
        if R is None:
            raise ValueError("dataset has no R_true; pass an explicit rank")
        R = int(R)
    if eta is None:
        gc = ds.meta.get("generator_config") or {}
        eta = float(gc.get("eta", float("nan")))
    ds_id = dataset_id if dataset_id is not None else Path(dataset_dir).name
    records = []
    factors_by_seed = {}
    for j in range(n_inits):
        seed = base_seed + j
        record, factors = run_fit(
            ds.data, ds.truth, method=method, lambda_B=lambda_B, R=R,
            ridge=ridge, max_outer=max_outer, rel_tol_loss=rel_tol_loss,
            seed=seed, dataset_id=ds_id, group=group, eta=eta,
            fraction=fraction, lambda_A=lambda_A, lambda_D=lambda_D,
        )
        records.append(record)
        if keep_factors:
            factors_by_seed[seed] = factors
    return records, factors_by_seed


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> None:
    """Deterministic CSV: repr-formatted floats, empty string for missing."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def _cell_key(record: RunRecord):
    frac = -1.0 if record.fraction is None else record.fraction
    return (record.group, record.method, record.lambda_B, record.eta, frac)


def summarize(records):
    """Collapse run records to per-dataset best rows and per-cell quantiles.

    A cell is one (group, method, lambda_B, eta, fraction) combination. Per
    dataset the run to report is chosen by :func:`select_best`; datasets whose
    pick carries a ``discarded_reason`` count toward ``n_discarded`` and stay
    out of the quantiles.
    """
    cells: dict = {}
    for r in records:
        cells.setdefault(_cell_key(r), {}).setdefault(r.dataset_id, []).append(r)
    summary_rows = []
    best_rows = []
    for key in sorted(cells):
        group, method, lam, eta, frac = key
        fraction = None if frac < 0 else frac
        picks = []
        for ds_id in sorted(cells[key]):
            runs = sorted(cells[key][ds_id], key=lambda r: r.init_seed)
            picks.append(select_best(runs))
        for p in picks:
            best_rows.append({
                "group": group, "method": method, "lambda_b": lam, "eta": eta,
                "fraction": fraction, "dataset_id": p.dataset_id,
                "init_seed": p.init_seed, "final_loss": p.final_loss,
                "outer_iters": p.outer_iters, "exit_reason": p.exit_reason,
                "degenerate": p.degenerate,
                "discarded_reason": p.discarded_reason, "fms": p.fms,
            })
        kept = [p.fms for p in picks if p.discarded_reason is None and p.fms is not None]
        row = {
            "group": group, "method": method, "lambda_b": lam, "eta": eta,
            "fraction": fraction, "n_datasets": len(picks),
            "n_discarded": len(picks) - len(kept),
        }
        if kept:
            qs = np.quantile(np.asarray(kept, dtype=np.float64),
                             [0.0, 0.25, 0.5, 0.75, 1.0])
            row.update(fms_min=float(qs[0]), fms_q1=float(qs[1]),
                       fms_median=float(qs[2]), fms_q3=float(qs[3]),
                       fms_max=float(qs[4]))
        else:
            row.update(fms_min=None, fms_q1=None, fms_median=None,
                       fms_q3=None, fms_max=None)
        summary_rows.append(row)
    return summary_rows, best_rows


@dataclass
class PlanResult:
    records: list
    summary_rows: list
    best_rows: list
    out_dir: Path
    dataset_dirs: list


def _plan_tasks(plan: ExperimentPlan):
    """Deterministic (eta, fraction, index) grid for a plan."""
    fractions = plan.overlap_fractions if plan.group == "overlap" else (None,)
    for eta in plan.noise_levels:
        for fraction in fractions:
            for i in range(plan.n_datasets):
                yield eta, fraction, i


def _dataset_id(plan: ExperimentPlan, eta: float, fraction: float | None,
                index: int) -> str:
    tag = f"{plan.group}-eta{eta:g}"
    if fraction is not None:
        tag += f"-frac{fraction:g}"
    return f"{tag}-d{index:03d}"


def _method_lambdas(plan: ExperimentPlan, method: str):
    return plan.lambda_B_grid if method in SMOOTHED_METHODS else (0.0,)


def _run_task(task):
    records, factors = fit_dataset(
        task["dir"], method=task["method"], lambda_B=task["lambda_B"],
        n_inits=task["n_inits"], base_seed=task["base_seed"], R=task["R"],
        ridge=task["ridge"], max_outer=task["max_outer"],
        rel_tol_loss=task["rel_tol_loss"], group=task["group"],
        eta=task["eta"], fraction=task["fraction"], dataset_id=task["id"],
        keep_factors=task["keep_factors"],
    )
    return task["index"], records, factors


def run_plan(plan: ExperimentPlan, out_dir, threads: int = 1,
             save_factors: bool = False, progress=None) -> PlanResult:
    """Generate the plan's datasets, fit every method, write all artifacts.

    Writes ``datasets/``, ``runs.csv``, ``runs.jsonl``, ``summary.csv`` and
    ``best_per_dataset.csv`` under ``out_dir`` (plus ``factors/`` for the
    selected runs when ``save_factors`` is set). Results are deterministic
    for a fixed plan; ``threads`` only distributes the work.
    """
    out = Path(out_dir)
    (out / "datasets").mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(
        json.dumps(dataclasses.asdict(plan), indent=2, sort_keys=True) + "\n")

    datasets = []
    for eta, fraction, i in _plan_tasks(plan):
        cfg = dataset_config(plan, eta, fraction, i)
        ds_id = _dataset_id(plan, eta, fraction, i)
        ds_dir = out / "datasets" / ds_id
        synth.generate_to_dir(cfg, ds_dir, overwrite=True)
        datasets.append({"id": ds_id, "dir": ds_dir, "eta": eta,
                         "fraction": fraction, "seed": cfg.seed})
    manifest = [{"id": d["id"], "path": str(d["dir"]), "eta": d["eta"],
                 "fraction": d["fraction"], "seed": d["seed"]} for d in datasets]
    (out / "datasets" / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    tasks = []
    for d in datasets:
        for method in plan.methods:
            for lam in _method_lambdas(plan, method):
                tasks.append({
                    "index": len(tasks), "id": d["id"], "dir": str(d["dir"]),
                    "eta": d["eta"], "fraction": d["fraction"],
                    "method": method, "lambda_B": lam, "n_inits": plan.n_inits,
                    "base_seed": plan.base_seed, "R": plan.R,
                    "ridge": plan.ridge, "max_outer": plan.max_outer,
                    "rel_tol_loss": plan.rel_tol_loss,
                    "group": plan.group, "keep_factors": save_factors,
                })

    results = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for item in pool.map(_run_task, tasks):
                results.append(item)
                if progress is not None:
                    progress(len(results), len(tasks))
    else:
        for task in tasks:
            results.append(_run_task(task))
            if progress is not None:
                progress(len(results), len(tasks))
    results.sort(key=lambda item: item[0])

    records = []
    all_factors = {}
    for index, recs, factors in results:
        records.extend(recs)
        task = tasks[index]
        for seed, f in factors.items():
            all_factors[(task["id"], task["method"], task["lambda_B"], seed)] = f

    summary_rows, best_rows = summarize(records)
    write_csv(out / "runs.csv", RUN_COLUMNS, [r.as_row() for r in records])
    with (out / "runs.jsonl").open("w") as fh:
        for r in records:
            fh.write(json.dumps(r.as_row(), sort_keys=True) + "\n")
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows)
    write_csv(out / "best_per_dataset.csv", BEST_COLUMNS, best_rows)

    if save_factors:
        for row in best_rows:
            key = (row["dataset_id"], row["method"], row["lambda_b"],
                   row["init_seed"])
            factors = all_factors.get(key)
            if factors is None:
                continue
            tag = row["method"]
            if row["method"] in SMOOTHED_METHODS:
                tag += f"-lam{row['lambda_b']:g}"
            slab.write_factor_dir(out / "factors" / row["dataset_id"] / tag, factors)

    return PlanResult(records=records, summary_rows=summary_rows,
                      best_rows=best_rows, out_dir=out,
                      dataset_dirs=[d["dir"] for d in datasets])
