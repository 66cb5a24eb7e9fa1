import json

import numpy as np
import pytest

from tparafac2.experiments import (
    BEST_COLUMNS,
    DESK_SCALE,
    GROUPS,
    METHODS,
    PAPER_SCALE,
    RUN_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentPlan,
    NumericalFailureError,
    RunRecord,
    dataset_config,
    default_plan,
    fit_dataset,
    run_fit,
    run_plan,
    summarize,
    write_csv,
)
from tparafac2.slab import read_factor_dir, write_dataset
from tparafac2.synth import generate, generate_to_dir

TINY = dict(I=24, J=18, K=8, n_datasets=2, n_inits=2, max_outer=60,
            lambda_B_grid=(0.1, 1.0), R=2)


def _tiny_plan(**overrides):
    kw = dict(TINY)
    kw.update(overrides)
    return default_plan(kw.pop("group", "easy"), **kw)


def _tiny_dataset(tmp_path, seed=0, eta=0.5):
    cfg = dataset_config(_tiny_plan(base_seed=seed), eta, None, 0)
    return generate_to_dir(cfg, tmp_path / f"ds{seed}"), cfg


class TestExperimentPlan:
    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentPlan(group="hard")
        with pytest.raises(ValueError):
            ExperimentPlan(methods=("parafac2", "mystery"))
        with pytest.raises(ValueError):
            ExperimentPlan(methods=())
        with pytest.raises(ValueError):
            ExperimentPlan(group="overlap", overlap_fractions=())
        with pytest.raises(ValueError):
            ExperimentPlan(methods=("tparafac2",), lambda_B_grid=())
        with pytest.raises(ValueError):
            ExperimentPlan(n_inits=0)
        with pytest.raises(ValueError):
            ExperimentPlan(noise_levels=())

    def test_catalogues(self):
        assert GROUPS == ("easy", "almostzero", "overlap")
        assert METHODS == ("parafac2", "tparafac2", "tcmf", "nntcmf")


class TestDefaultPlan:
    def test_group_defaults(self):
        easy = default_plan("easy")
        assert easy.methods == ("parafac2", "tparafac2")
        assert easy.noise_levels == (0.5,)
        az = default_plan("almostzero")
        assert az.noise_levels == (0.25,)
        ov = default_plan("overlap")
        assert ov.methods == METHODS
        assert ov.overlap_fractions == (0.1, 0.2, 0.4)

    def test_scales(self):
        desk = default_plan("easy")
        assert (desk.I, desk.J, desk.K) == (DESK_SCALE["I"], DESK_SCALE["J"], DESK_SCALE["K"])
        paper = default_plan("easy", paper_scale=True)
        assert (paper.I, paper.J, paper.K) == (150, 100, 20)
        assert paper.n_datasets == PAPER_SCALE["n_datasets"]
        assert paper.n_inits == PAPER_SCALE["n_inits"]

    def test_overrides(self):
        plan = default_plan("easy", n_datasets=3, base_seed=11, lambda_B_grid=(1.0,))
        assert plan.n_datasets == 3 and plan.base_seed == 11
        assert plan.lambda_B_grid == (1.0,)

    def test_unknown_group(self):
        with pytest.raises(ValueError):
            default_plan("misc")


class TestDatasetConfig:
    def test_seeds_offset_by_index(self):
        plan = _tiny_plan(base_seed=40)
        cfg0 = dataset_config(plan, 0.5, None, 0)
        cfg3 = dataset_config(plan, 0.5, None, 3)
        assert cfg0.seed == 40 and cfg3.seed == 43
        assert (cfg0.I, cfg0.J, cfg0.K, cfg0.R) == (24, 18, 8, 2)
        assert cfg0.eta == 0.5

    def test_almostzero_alternates_low_concept_counts(self):
        plan = _tiny_plan(group="almostzero", noise_levels=(0.25,))
        for index, want in [(0, 1), (1, 2), (2, 1), (3, 2)]:
            cfg = dataset_config(plan, 0.25, None, index)
            lows = [p for p in cfg.strengths if p.low_window is not None]
            assert len(lows) == want

    def test_overlap_uses_fraction(self):
        plan = _tiny_plan(group="overlap", overlap_fractions=(0.2,),
                          methods=METHODS)
        cfg = dataset_config(plan, 0.5, 0.2, 0)
        assert cfg.overlap_fraction == 0.2
        assert all(d.kind == "incremental" for d in cfg.drifts)


class TestRunFit:
    def test_parafac2_is_tparafac2_at_zero_smoothing(self, tmp_path):
        cfg = dataset_config(_tiny_plan(), 0.5, None, 0)
        noisy, _, truth = generate(cfg)
        rec_p, fac_p = run_fit(noisy, truth, method="parafac2", lambda_B=7.0,
                               R=2, max_outer=30, seed=1)
        rec_t, fac_t = run_fit(noisy, truth, method="tparafac2", lambda_B=0.0,
                               R=2, max_outer=30, seed=1)
        assert rec_p.lambda_B == 0.0
        assert rec_p.final_loss == rec_t.final_loss
        np.testing.assert_array_equal(fac_p.A, fac_t.A)
        np.testing.assert_array_equal(fac_p.B_array, fac_t.B_array)

    def test_record_fields_and_fms(self):
        cfg = dataset_config(_tiny_plan(), 0.5, None, 0)
        noisy, _, truth = generate(cfg)
        rec, factors = run_fit(noisy, truth, method="tparafac2", lambda_B=1.0,
                               R=2, max_outer=30, seed=2, dataset_id="dsX",
                               group="easy", eta=0.5)
        assert rec.dataset_id == "dsX" and rec.group == "easy"
        assert rec.method == "tparafac2" and rec.lambda_B == 1.0
        assert rec.init_seed == 2 and rec.eta == 0.5
        assert rec.fms is not None and 0.0 <= rec.fms <= 1.0
        assert rec.feas_gap_B_Y is not None and rec.feas_gap_A is None
        assert rec.wall_time_seconds > 0
        assert set(rec.as_row()) == set(RUN_COLUMNS)

    def test_no_truth_means_no_score(self):
        cfg = dataset_config(_tiny_plan(), 0.5, None, 0)
        noisy, _, _ = generate(cfg)
        rec, _ = run_fit(noisy, None, method="parafac2", lambda_B=0.0, R=2,
                         max_outer=10)
        assert rec.fms is None

    def test_baseline_methods(self):
        cfg = dataset_config(_tiny_plan(), 0.5, None, 0)
        noisy, _, truth = generate(cfg)
        rec_c, fac_c = run_fit(noisy, truth, method="tcmf", lambda_B=1.0, R=2,
                               max_outer=30, seed=0)
        assert rec_c.feas_gap_D is None and rec_c.feas_gap_B_Y is None
        assert rec_c.feas_gap_A is not None
        rec_n, fac_n = run_fit(noisy, truth, method="nntcmf", lambda_B=1.0, R=2,
                               max_outer=30, seed=0)
        assert (fac_n.A >= 0).all()
        assert rec_n.fms is not None

    def test_unknown_method(self):
        cfg = dataset_config(_tiny_plan(), 0.5, None, 0)
        noisy, _, _ = generate(cfg)
        with pytest.raises(ValueError):
            run_fit(noisy, None, method="svd", lambda_B=0.0, R=2)


class TestFitDataset:
    def test_reads_meta_and_runs_all_inits(self, tmp_path):
        ds_dir, cfg = _tiny_dataset(tmp_path)
        records, factors = fit_dataset(ds_dir, method="tparafac2", lambda_B=1.0,
                                       n_inits=3, base_seed=5, max_outer=20,
                                       keep_factors=True)
        assert [r.init_seed for r in records] == [5, 6, 7]
        assert all(r.eta == cfg.eta for r in records)
        assert sorted(factors) == [5, 6, 7]
        assert records[0].dataset_id == ds_dir.name

    def test_factors_not_kept_by_default(self, tmp_path):
        ds_dir, _ = _tiny_dataset(tmp_path)
        records, factors = fit_dataset(ds_dir, method="parafac2", lambda_B=0.0,
                                       n_inits=1, base_seed=0, max_outer=10)
        assert factors == {}

    def test_missing_rank_requires_explicit_R(self, tmp_path):
        rng = np.random.default_rng(0)
        from tparafac2.core import TensorSlices

        ds_dir = write_dataset(tmp_path / "anon", TensorSlices(rng.random((4, 10, 8))),
                               seed=0)
        with pytest.raises(ValueError):
            fit_dataset(ds_dir, method="parafac2", lambda_B=0.0, n_inits=1,
                        base_seed=0)
        records, _ = fit_dataset(ds_dir, method="parafac2", lambda_B=0.0,
                                 n_inits=1, base_seed=0, R=2, max_outer=10)
        assert records[0].fms is None


class TestWriteCsv:
    def test_formatting_rules(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b", "c", "d"], [
            {"a": 0.1, "b": None, "c": True, "d": "x"},
            {"a": 2, "b": float("nan"), "c": False, "d": ""},
        ])
        lines = path.read_text().splitlines()
        assert lines[0] == "a,b,c,d"
        assert lines[1] == "0.1,,true,x"
        assert lines[2] == "2,nan,false,"


def _fake_record(ds, seed, loss, fms_val, exit_reason="loss-tolerance",
                 degenerate=False):
    return RunRecord(
        dataset_id=ds, group="easy", method="tparafac2", lambda_B=1.0, eta=0.5,
        fraction=None, init_seed=seed, final_loss=loss, outer_iters=10,
        exit_reason=exit_reason, degenerate=degenerate, fms=fms_val,
        feas_gap_B_Z=0.0, feas_gap_B_Y=0.0, feas_gap_D=0.0, feas_gap_A=None,
        wall_time_seconds=0.1,
    )


class TestSummarize:
    def test_selection_discards_and_quantiles(self):
        records = [
            _fake_record("d0", 0, loss=2.0, fms_val=0.8),
            _fake_record("d0", 1, loss=1.0, fms_val=0.9),
            _fake_record("d0", 2, loss=0.5, fms_val=0.99, exit_reason="max-iterations"),
            _fake_record("d1", 0, loss=3.0, fms_val=0.7),
            _fake_record("d1", 1, loss=4.0, fms_val=0.6),
            _fake_record("d2", 0, loss=1.0, fms_val=0.95, degenerate=True),
            _fake_record("d2", 1, loss=2.0, fms_val=0.95, exit_reason="max-iterations"),
        ]
        summary_rows, best_rows = summarize(records)
        assert len(summary_rows) == 1
        row = summary_rows[0]
        assert row["n_datasets"] == 3
        assert row["n_discarded"] == 1  # d2 has no survivor
        kept = [0.9, 0.7]
        qs = np.quantile(kept, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert row["fms_median"] == pytest.approx(qs[2])
        assert row["fms_min"] == pytest.approx(qs[0])
        by_ds = {r["dataset_id"]: r for r in best_rows}
        assert by_ds["d0"]["init_seed"] == 1  # lowest-loss survivor
        assert by_ds["d1"]["init_seed"] == 0
        assert by_ds["d2"]["discarded_reason"] == "degenerate"

    def test_all_discarded_cell_has_empty_quantiles(self):
        records = [_fake_record("d0", 0, 1.0, 0.5, exit_reason="max-iterations")]
        summary_rows, _ = summarize(records)
        assert summary_rows[0]["fms_median"] is None
        assert summary_rows[0]["n_discarded"] == 1


class TestRunPlan:
    def test_end_to_end_artifacts(self, tmp_path):
        plan = _tiny_plan(base_seed=3)
        result = run_plan(plan, tmp_path / "out", save_factors=True)
        out = tmp_path / "out"
        for name in ("plan.json", "runs.csv", "runs.jsonl", "summary.csv",
                     "best_per_dataset.csv"):
            assert (out / name).is_file()
        manifest = json.loads((out / "datasets" / "manifest.json").read_text())
        assert len(manifest) == 2
        # 2 datasets x (parafac2 + 2 smoothing weights) x 2 inits
        assert len(result.records) == 12
        lines = (out / "runs.csv").read_text().splitlines()
        assert lines[0] == ",".join(RUN_COLUMNS)
        assert len(lines) == 13
        assert len((out / "runs.jsonl").read_text().splitlines()) == 12
        head = (out / "summary.csv").read_text().splitlines()[0]
        assert head == ",".join(SUMMARY_COLUMNS)
        assert (out / "best_per_dataset.csv").read_text().splitlines()[0] == ",".join(BEST_COLUMNS)
        # one summary row per (method, lambda) cell
        assert len(result.summary_rows) == 3
        assert len(result.best_rows) == 6
        assert len(result.dataset_dirs) == 2

    def test_saved_factors_are_loadable(self, tmp_path):
        plan = _tiny_plan(base_seed=3, methods=("parafac2", "tcmf"))
        result = run_plan(plan, tmp_path / "out", save_factors=True)
        for row in result.best_rows:
            tag = row["method"]
            if row["method"] != "parafac2":
                tag += f"-lam{row['lambda_b']:g}"
            fdir = tmp_path / "out" / "factors" / row["dataset_id"] / tag
            assert fdir.is_dir()
            got = read_factor_dir(fdir, plan.I, plan.J, plan.K)
            assert got["A"].shape == (plan.I, plan.R)
            if row["method"] == "parafac2":
                assert "D" in got
            else:
                assert "D" not in got

    def test_summaries_are_byte_stable(self, tmp_path):
        plan = _tiny_plan(base_seed=9)
        run_plan(plan, tmp_path / "a")
        run_plan(plan, tmp_path / "b")
        for name in ("summary.csv", "best_per_dataset.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        # runs.csv differs only in the wall-time column
        for la, lb in zip((tmp_path / "a" / "runs.csv").read_text().splitlines(),
                          (tmp_path / "b" / "runs.csv").read_text().splitlines()):
            assert la.rsplit(",", 1)[0] == lb.rsplit(",", 1)[0]

    def test_worker_pool_matches_serial(self, tmp_path):
        plan = _tiny_plan(base_seed=5, n_datasets=2, n_inits=1, max_outer=25)
        run_plan(plan, tmp_path / "serial", threads=1)
        run_plan(plan, tmp_path / "pool", threads=2)
        for name in ("summary.csv", "best_per_dataset.csv"):
            assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()

    def test_progress_callback(self, tmp_path):
        plan = _tiny_plan(base_seed=1, n_datasets=1, n_inits=1, max_outer=10)
        seen = []
        run_plan(plan, tmp_path / "out", progress=lambda done, total: seen.append((done, total)))
        assert seen == [(1, 3), (2, 3), (3, 3)]

    def test_plan_json_round_trips(self, tmp_path):
        plan = _tiny_plan(base_seed=2, n_datasets=1, n_inits=1, max_outer=10)
        run_plan(plan, tmp_path / "out")
        stored = json.loads((tmp_path / "out" / "plan.json").read_text())
        assert stored["group"] == "easy"
        assert stored["base_seed"] == 2
        assert tuple(stored["lambda_B_grid"]) == plan.lambda_B_grid


def test_numerical_failure_error_is_runtime_error():
    assert issubclass(NumericalFailureError, RuntimeError)
