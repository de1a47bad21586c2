import time

import pytest
from fastapi.testclient import TestClient

from seqmem import __version__, checkpoint
from seqmem.service.app import create_app
from seqmem.temporal_memory import LearningParams, TemporalMemory

QUICK = {
    "learning": {"n_columns": 256, "cells_per_column": 4},
    "protocol": {"learn_epochs": 1, "rehearsal_epochs": 1, "i_fatigue": 1},
}


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


def wait(client, job_id, timeout=120):
    t0 = time.monotonic()
    while time.monotonic() - t0 < timeout:
        job = client.get(f"/runs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.1)
    raise TimeoutError(job_id)


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "version": __version__}


def test_validate_ok_returns_resolved_config(client):
    r = client.post("/validate-config", json={"config": {"protocol": {"q": 0.5}}})
    body = r.json()
    assert r.status_code == 200 and body["valid"]
    assert body["resolved"]["protocol"]["q"] == 0.5
    assert body["resolved"]["learning"]["theta"] == 3


def test_validate_reports_every_error(client):
    body = client.post("/validate-config",
                       json={"config": {"protocol": {"q": 3}, "bogus": 1}}).json()
    assert not body["valid"]
    assert any(e.startswith("protocol.q") for e in body["errors"])
    assert any(e.startswith("bogus") for e in body["errors"])


def test_run_job_lifecycle(client, tmp_path):
    req = {"experiment": "E4", "out_dir": str(tmp_path), "config": QUICK, "seeds": [0],
           "arms": ["poems"]}
    r = client.post("/runs", json=req)
    assert r.status_code == 202
    job = wait(client, r.json()["id"])
    assert job["state"] == "done", job["error"]
    res = job["result"]
    assert not res["partial"]
    assert "E4_poems_0.csv" in res["files"] and "summary.json" in res["files"]
    assert res["arms"][0]["file"] == "E4_poems_0.csv"
    assert (tmp_path / "E4_poems_0.csv").exists()
    assert [j["id"] for j in client.get("/runs").json()] == [job["id"]]


def test_run_with_bad_config_rejected_up_front(client, tmp_path):
    r = client.post("/runs", json={"experiment": "E2", "out_dir": str(tmp_path),
                                   "config": {"protocol": {"q": -1}}})
    assert r.status_code == 422
    assert client.get("/runs").json() == []


def test_run_with_unknown_arm_fails_as_job(client, tmp_path):
    r = client.post("/runs", json={"experiment": "E2", "out_dir": str(tmp_path), "arms": ["x"]})
    job = wait(client, r.json()["id"])
    assert job["state"] == "failed" and "unknown arm" in job["error"]


def test_unknown_experiment_is_a_schema_error(client, tmp_path):
    assert client.post("/runs", json={"experiment": "E7", "out_dir": str(tmp_path)}).status_code == 422


def test_unknown_job(client):
    assert client.get("/runs/nope").status_code == 404


def test_inspect(client, tmp_path):
    path = checkpoint.save(tmp_path / "c.json.gz", TemporalMemory(LearningParams(n_columns=32)))
    body = client.post("/inspect", json={"path": str(path)}).json()
    assert body["summary"]["segments"] == 0
    assert body["summary"]["params"]["n_columns"] == 32


def test_inspect_bad_file(client, tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    assert client.post("/inspect", json={"path": str(p)}).status_code == 400
    assert client.post("/inspect", json={"path": str(tmp_path / "none")}).status_code == 400
