"""
ShellRig API Tests
"""

import pytest
from fastapi.testclient import TestClient

from app.main import app
from shellrig.errors import GeodesicError


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json() == {"status": "healthy", "service": "ShellRig API"}


def test_catalog_lists_metrics_and_families(client):
    body = client.get("/api/scenarios/catalog").json()
    assert "flat" in body["metrics"]
    assert "cylinder" in body["families"]
    assert body["schema_version"] == 1


def test_check_a_cylinder(client):
    response = client.post("/api/scenarios/check", json={"config": {"family": {"name": "cylinder"}}})
    assert response.status_code == 200
    body = response.json()
    assert body["valid"]
    assert body["grid_nodes"] == 17 * 17
    assert body["comparability"] == pytest.approx(1.0)


def test_unknown_key_is_unprocessable(client):
    response = client.post("/api/scenarios/check", json={"config": {"domain": {"bogus": 1}}})
    assert response.status_code == 422
    assert response.json()["detail"]["path"] == "domain.bogus"


def test_run_energies(client):
    response = client.post("/api/experiments/run", json={"overrides": ["family.name=plane"]})
    assert response.status_code == 200
    body = response.json()
    assert body["kind"] == "energies"
    assert body["rows"][0]["E_s"] == pytest.approx(0.0, abs=1e-24)
    assert body["files"] == []


def test_run_convergence_keeps_json_valid(client):
    config = {
        "domain": {"d": 1, "m_per_side": 33},
        "family": {"name": "curve-wrinkle"},
        "experiment": {"kind": "convergence", "values": [1, 2]},
    }
    response = client.post("/api/experiments/run", json={"config": config})
    assert response.status_code == 200
    assert response.json()["rows"][0]["cauchy_increment"] is None


def test_violated_hypothesis_is_a_conflict(client):
    config = {"chart": {"radius": 0.4, "r": 0.2}, "experiment": {"kind": "rigidity"}}
    response = client.post("/api/experiments/run", json={"config": config})
    assert response.status_code == 409
    assert response.json()["detail"]["hypothesis"] == "good-set fraction"


def test_evaluation_errors_are_structured(client, monkeypatch):
    def failing_run(config, n_jobs=None):
        raise GeodesicError("geodesic left the patch")

    monkeypatch.setattr("app.routes.experiments.run_experiment", failing_run)
    response = client.post("/api/experiments/run", json={})
    assert response.status_code == 500
    assert response.json()["detail"] == {"error": "GeodesicError", "message": "geodesic left the patch"}


def test_written_reports_follow_the_environment(client, tmp_path, monkeypatch):
    monkeypatch.setenv("SHELLRIG_OUTPUT_DIR", str(tmp_path))
    body = {"config": {"scenario": {"name": "api"}}, "write_reports": True}
    response = client.post("/api/experiments/run", json=body)
    assert response.status_code == 200
    assert response.json()["files"] == [str(tmp_path / "api.csv"), str(tmp_path / "api.json")]
