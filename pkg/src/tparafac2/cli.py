"""Command-line front end; thin orchestration over the library.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure
(every run of a fit batch diverged).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import experiments, slab, synth
from .cmf import CmfFactors, fms_cmf
from .core import Parafac2Factors
from .evaluation import fms as fms_report
from .evaluation import select_best
from .experiments import (
    BEST_COLUMNS,
    GROUPS,
    METHODS,
    RUN_COLUMNS,
    SUMMARY_COLUMNS,
    NumericalFailureError,
    RunRecord,
    default_plan,
    summarize,
    write_csv,
)

_GROUP = click.Choice(GROUPS)
_METHOD = click.Choice(METHODS)


@click.group()
def cli():
    """Temporally regularized evolving-factor models: data, fits, scoring."""


@cli.command()
@click.argument("group", type=_GROUP)
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rank", type=int, default=3, show_default=True)
@click.option("--datasets", type=int, default=None, help="Datasets per cell.")
@click.option("--noise", type=float, multiple=True, help="Noise level(s) eta.")
@click.option("--fraction", type=float, multiple=True,
              help="Overlap fraction(s); overlap group only.")
@click.option("--paper-scale", is_flag=True, help="Full-size tensors and counts.")
def generate(group, out, seed, rank, datasets, noise, fraction, paper_scale):
    """Generate a group's synthetic datasets as slab directories."""
    overrides = {"base_seed": seed, "R": rank}
    if datasets is not None:
        overrides["n_datasets"] = datasets
    if noise:
        overrides["noise_levels"] = noise
    if fraction:
        overrides["overlap_fractions"] = fraction
    plan = default_plan(group, paper_scale=paper_scale, **overrides)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for eta, frac, i in experiments._plan_tasks(plan):
        cfg = experiments.dataset_config(plan, eta, frac, i)
        ds_id = experiments._dataset_id(plan, eta, frac, i)
        synth.generate_to_dir(cfg, out / ds_id, overwrite=True)
        manifest.append({"id": ds_id, "path": str(out / ds_id), "eta": eta,
                         "fraction": frac, "seed": cfg.seed})
        click.echo(f"wrote {out / ds_id}")
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--method", type=_METHOD, default="tparafac2", show_default=True)
@click.option("--rank", type=int, default=None, help="Defaults to the dataset's R_true.")
@click.option("--lambda-b", type=float, default=1.0, show_default=True,
              help="Temporal smoothness weight.")
@click.option("--lambda-a", type=float, default=1e-3, show_default=True,
              help="Ridge weight on the shared factor.")
@click.option("--lambda-d", type=float, default=1e-3, show_default=True,
              help="Ridge weight on the strengths.")
@click.option("--inits", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Base init seed; runs use seed..seed+inits-1.")
@click.option("--max-outer", type=int, default=2000, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Directory for run records (and factors).")
@click.option("--save-factors", is_flag=True,
              help="Write the selected run's factors under OUT/factors.")
def fit(dataset_dir, method, rank, lambda_b, lambda_a, lambda_d, inits, seed,
        max_outer, out, save_factors):
    """Fit one method on one dataset with multiple initializations."""
    records, factors_by_seed = experiments.fit_dataset(
        dataset_dir, method=method, lambda_B=lambda_b, n_inits=inits,
        base_seed=seed, R=rank, max_outer=max_outer,
        lambda_A=lambda_a, lambda_D=lambda_d,
        keep_factors=save_factors,
    )
    if all(r.exit_reason == "diverged" for r in records):
        raise NumericalFailureError(
            f"all {len(records)} runs diverged on {dataset_dir}")
    best = select_best(records)
    click.echo(json.dumps({
        "dataset": str(dataset_dir),
        "method": method,
        "lambda_b": best.lambda_B,
        "best_init_seed": best.init_seed,
        "final_loss": best.final_loss,
        "outer_iters": best.outer_iters,
        "exit_reason": best.exit_reason,
        "degenerate": best.degenerate,
        "discarded_reason": best.discarded_reason,
        "fms": best.fms,
    }, sort_keys=True))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "runs.csv", RUN_COLUMNS, [r.as_row() for r in records])
        with (out / "runs.jsonl").open("w") as fh:
            for r in records:
                fh.write(json.dumps(r.as_row(), sort_keys=True) + "\n")
        if save_factors:
            slab.write_factor_dir(out / "factors",
                                  factors_by_seed[best.init_seed])


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("estimate_dir", type=click.Path(exists=True, file_okay=False))
def evaluate(dataset_dir, estimate_dir):
    """Score a saved factor estimate against a dataset's ground truth."""
    ds = slab.read_dataset(dataset_dir)
    if ds.truth is None:
        raise click.UsageError(f"{dataset_dir} carries no ground-truth factors")
    est = slab.read_factor_dir(estimate_dir, ds.data.I, ds.data.J, ds.data.K)
    if "D" in est:
        report = fms_report(Parafac2Factors(est["A"], est["B"], est["D"]), ds.truth)
        payload = {
            "fms": report.fms,
            "permutation": list(report.permutation),
            "per_component_scores": list(report.per_component_scores),
            "degenerate": report.degenerate,
            "mode": "three-factor",
        }
    else:
        score = fms_cmf(CmfFactors(est["A"], est["B"]), ds.truth)
        payload = {"fms": score, "mode": "two-factor"}
    click.echo(json.dumps(payload, sort_keys=True))


def _parse_runs_csv(path) -> list[RunRecord]:
    import csv

    def _f(v):
        return None if v == "" else float(v)

    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(RunRecord(
                dataset_id=row["dataset_id"],
                group=row["group"],
                method=row["method"],
                lambda_B=float(row["lambda_b"]),
                eta=float(row["eta"]),
                fraction=_f(row["fraction"]),
                init_seed=int(row["init_seed"]),
                final_loss=float(row["final_loss"]),
                outer_iters=int(row["outer_iters"]),
                exit_reason=row["exit_reason"],
                degenerate=row["degenerate"] == "true",
                fms=_f(row["fms"]),
                feas_gap_B_Z=_f(row["feas_gap_b_z"]),
                feas_gap_B_Y=_f(row["feas_gap_b_y"]),
                feas_gap_D=_f(row["feas_gap_d"]),
                feas_gap_A=_f(row["feas_gap_a"]),
                wall_time_seconds=float(row["wall_time_seconds"]),
            ))
    return records


@cli.command(name="summarize")
@click.argument("run_files", type=click.Path(exists=True, dir_okay=False), nargs=-1,
                required=True)
@click.option("--out", type=click.Path(), default=".", show_default=True,
              help="Directory for summary.csv and best_per_dataset.csv.")
def summarize_cmd(run_files, out):
    """Collapse run records into per-cell quantiles and per-dataset bests."""
    records = []
    for path in run_files:
        records.extend(_parse_runs_csv(path))
    summary_rows, best_rows = summarize(records)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows)
    write_csv(out / "best_per_dataset.csv", BEST_COLUMNS, best_rows)
    click.echo(f"wrote {out / 'summary.csv'} and {out / 'best_per_dataset.csv'}")


@cli.command()
@click.argument("group", type=_GROUP)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rank", type=int, default=3, show_default=True)
@click.option("--datasets", type=int, default=None)
@click.option("--inits", type=int, default=None)
@click.option("--noise", type=float, multiple=True)
@click.option("--fraction", type=float, multiple=True)
@click.option("--lambda-b", "lambda_b", type=float, multiple=True,
              help="Override the smoothness grid.")
@click.option("--max-outer", type=int, default=None)
@click.option("--paper-scale", is_flag=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--save-factors", is_flag=True)
def reproduce(group, out, seed, rank, datasets, inits, noise, fraction,
              lambda_b, max_outer, paper_scale, threads, save_factors):
    """Run a whole benchmark group end to end and write its summaries."""
    overrides = {"base_seed": seed, "R": rank}
    if datasets is not None:
        overrides["n_datasets"] = datasets
    if inits is not None:
        overrides["n_inits"] = inits
    if noise:
        overrides["noise_levels"] = noise
    if fraction:
        overrides["overlap_fractions"] = fraction
    if lambda_b:
        overrides["lambda_B_grid"] = lambda_b
    if max_outer is not None:
        overrides["max_outer"] = max_outer
    plan = default_plan(group, paper_scale=paper_scale, **overrides)

    def progress(done, total):
        click.echo(f"[{done}/{total}] fit batches complete", err=True)

    result = experiments.run_plan(plan, out, threads=threads,
                                  save_factors=save_factors, progress=progress)
    if result.records and all(r.exit_reason == "diverged" for r in result.records):
        raise NumericalFailureError("every run in the plan diverged")
    click.echo(f"wrote {result.out_dir / 'summary.csv'}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--workspace", type=click.Path(), default=None,
              help="Directory for datasets and fits created over the API.")
def serve(host, port, workspace):
    """Serve the HTTP API."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(workspace), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="tparafac2", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except NumericalFailureError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
