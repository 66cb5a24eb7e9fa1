import numpy as np
import pytest
from fastapi.testclient import TestClient

import tparafac2
from tparafac2.core import TensorSlices
from tparafac2.service.app import create_app
from tparafac2.slab import write_dataset


@pytest.fixture()
def workspace(tmp_path):
    return tmp_path / "ws"


@pytest.fixture()
def client(workspace):
    with TestClient(create_app(workspace)) as c:
        yield c


def _make_dataset(client, seed=1, group="easy", **extra):
    resp = client.post("/datasets", json={"group": group, "seed": seed, **extra})
    assert resp.status_code == 201, resp.text
    return resp.json()


def _run_fit(client, dataset_id, method="tparafac2", **extra):
    body = {"dataset_id": dataset_id, "method": method, "n_inits": 1,
            "max_outer": 20, **extra}
    resp = client.post("/fits", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["version"] == tparafac2.__version__


class TestDatasets:
    def test_empty_workspace_lists_nothing(self, client):
        assert client.get("/datasets").json() == []

    def test_generate_and_fetch(self, client):
        info = _make_dataset(client, seed=1)
        assert info["id"] == "easy-seed1-eta0.5"
        assert (info["I"], info["J"], info["K"]) == (60, 40, 15)
        assert info["R_true"] == 3 and info["has_truth"]
        listing = client.get("/datasets").json()
        assert [d["id"] for d in listing] == [info["id"]]
        got = client.get(f"/datasets/{info['id']}")
        assert got.status_code == 200
        assert got.json() == info

    def test_overlap_id_carries_fraction(self, client):
        info = _make_dataset(client, seed=2, group="overlap", fraction=0.4)
        assert info["id"] == "overlap-seed2-eta0.5-frac0.4"

    def test_custom_id_and_conflict(self, client):
        info = _make_dataset(client, seed=3, dataset_id="mine")
        assert info["id"] == "mine"
        dup = client.post("/datasets", json={"group": "easy", "seed": 3,
                                             "dataset_id": "mine"})
        assert dup.status_code == 409

    def test_missing_dataset_404(self, client):
        assert client.get("/datasets/ghost").status_code == 404

    def test_invalid_request_422(self, client):
        assert client.post("/datasets", json={"eta": -1.0}).status_code == 422
        assert client.post("/datasets", json={"group": "weird"}).status_code == 422


class TestFits:
    def test_fit_persists_records_and_factors(self, client, workspace):
        ds = _make_dataset(client, seed=4)
        fit = _run_fit(client, ds["id"], method="tparafac2", lambda_b=1.0)
        assert fit["fit_id"] == f"{ds['id']}--tparafac2-lam1-s0x1"
        assert len(fit["records"]) == 1
        rec = fit["records"][0]
        assert rec["method"] == "tparafac2" and rec["init_seed"] == 0
        assert fit["best_init_seed"] == 0
        assert fit["best_fms"] is not None
        fdir = workspace / "fits" / fit["fit_id"]
        assert (fdir / "records.json").is_file()
        for name in ("A.bin", "B.bin", "D.bin"):
            assert (fdir / "factors" / name).is_file()

    def test_parafac2_fit_id_has_no_lambda(self, client):
        ds = _make_dataset(client, seed=5)
        fit = _run_fit(client, ds["id"], method="parafac2")
        assert fit["fit_id"] == f"{ds['id']}--parafac2-s0x1"

    def test_list_and_get_round_trip(self, client):
        ds = _make_dataset(client, seed=6)
        fit = _run_fit(client, ds["id"])
        listing = client.get("/fits").json()
        assert [f["fit_id"] for f in listing] == [fit["fit_id"]]
        got = client.get(f"/fits/{fit['fit_id']}")
        assert got.status_code == 200
        assert got.json()["best_final_loss"] == fit["best_final_loss"]

    def test_fit_on_missing_dataset_404(self, client):
        resp = client.post("/fits", json={"dataset_id": "ghost"})
        assert resp.status_code == 404

    def test_missing_fit_404(self, client):
        assert client.get("/fits/ghost").status_code == 404

    def test_invalid_method_422(self, client):
        ds = _make_dataset(client, seed=7)
        resp = client.post("/fits", json={"dataset_id": ds["id"], "method": "pca"})
        assert resp.status_code == 422


class TestEvaluate:
    def test_three_factor_mode(self, client):
        ds = _make_dataset(client, seed=8)
        fit = _run_fit(client, ds["id"], method="tparafac2", max_outer=40)
        resp = client.post(f"/fits/{fit['fit_id']}/evaluate")
        assert resp.status_code == 200
        body = resp.json()
        assert body["mode"] == "three-factor"
        assert 0.0 <= body["fms"] <= 1.0
        assert len(body["permutation"]) == 3

    def test_two_factor_mode_for_baselines(self, client):
        ds = _make_dataset(client, seed=9)
        fit = _run_fit(client, ds["id"], method="tcmf", lambda_b=1.0)
        body = client.post(f"/fits/{fit['fit_id']}/evaluate").json()
        assert body["mode"] == "two-factor"
        assert body["permutation"] is None

    def test_missing_fit_404(self, client):
        assert client.post("/fits/ghost/evaluate").status_code == 404

    def test_truthless_dataset_409(self, client, workspace):
        rng = np.random.default_rng(0)
        write_dataset(workspace / "datasets" / "plain",
                      TensorSlices(rng.random((4, 10, 8))), seed=0)
        fit = _run_fit(client, "plain", method="tparafac2", rank=2)
        resp = client.post(f"/fits/{fit['fit_id']}/evaluate")
        assert resp.status_code == 409


class TestSummarize:
    def test_quantiles_over_posted_records(self, client):
        def rec(ds, fms_val):
            return {
                "dataset_id": ds, "group": "easy", "method": "tparafac2",
                "lambda_b": 1.0, "eta": 0.5, "init_seed": 0,
                "final_loss": 1.0, "outer_iters": 5,
                "exit_reason": "loss-tolerance", "degenerate": False,
                "fms": fms_val, "wall_time_seconds": 0.1,
            }

        resp = client.post("/summarize", json={
            "records": [rec("d0", 0.8), rec("d1", 0.9), rec("d2", 1.0)]})
        assert resp.status_code == 200
        rows = resp.json()["rows"]
        assert len(rows) == 1
        assert rows[0]["n_datasets"] == 3
        assert rows[0]["n_discarded"] == 0
        assert rows[0]["fms_median"] == pytest.approx(0.9)
