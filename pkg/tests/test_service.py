from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from twingraph.registry import load_registry
from twingraph.service import create_app

from conftest import fixture_json, fixture_text


@pytest.fixture
def client(tmp_path):
    registry = load_registry(fixture_text("prostate.json"))
    app = create_app(str(tmp_path / "store"), registry)
    with TestClient(app) as c:
        yield c


CLINICAL_OBSERVATIONS = [
    ("age", {"kind": "continuous", "value": 65}),
    ("psa", {"kind": "continuous", "value": 8.0}),
    ("dre", {"kind": "categorical", "probs": {"abnormal": 1.0}}),
    ("family_history", {"kind": "boolean", "value": True}),
    ("prior_negative_biopsy", {"kind": "boolean", "value": False}),
]


def create_patient(client, patient="p1"):
    response = client.post("/patients", json={"id": patient})
    assert response.status_code == 200, response.text
    return response.json()


def observe(client, patient, attr, value, t="t1", source="test"):
    response = client.post(f"/patients/{patient}/observations",
                           json={"attribute": attr, "value": value,
                                 "timestamp": t, "source": source})
    assert response.status_code == 200, response.text
    return response.json()


class TestRegistryEndpoints:
    def test_get_registry_roster(self, client):
        body = client.get("/registry").json()
        assert body["version"] == 1
        assert len(body["attributes"]) == 9
        assert len(body["models"]) == 5

    def test_neighborhood(self, client):
        body = client.get("/registry/neighborhoods/pirads").json()
        assert set(body["informing"]) == {"radiologist", "image_analysis"}
        assert set(body["informed"]) == {"radiomics_model", "mixed_risk_calculator"}

    def test_unknown_neighborhood_is_problem_document(self, client):
        response = client.get("/registry/neighborhoods/ghost")
        assert response.status_code == 404
        body = response.json()
        assert body["code"] == "unknown_attribute"
        assert "message" in body

    def test_replace_registry(self, client):
        document = fixture_json("glioma.json")
        document["version"] = 7
        assert client.post("/registry", json=document).json() == {"version": 7}
        assert client.get("/registry").json()["version"] == 7


class TestPatientFlow:
    def test_observation_pins_attribute(self, client):
        create_patient(client)
        report = observe(client, "p1", "age", {"kind": "continuous", "value": 65})
        assert report["event_seq"] == 1
        assert "wall_time" in report
        body = client.get("/patients/p1/attributes/age").json()
        assert body["state"]["status"] == "measured"
        assert body["provenance"] == ["fusion:age"]
        assert body["impact"]["pinned"] is True

    def test_graph_snapshot(self, client):
        create_patient(client)
        body = client.get("/patients/p1/graph").json()
        assert body["cycles"] == []
        kinds = {n["kind"] for n in body["nodes"]}
        assert kinds == {"attribute", "model"}

    def test_duplicate_patient_conflict(self, client):
        create_patient(client)
        response = client.post("/patients", json={"id": "p1"})
        assert response.status_code == 409
        assert response.json()["code"] == "duplicate_patient"

    def test_unknown_patient(self, client):
        response = client.get("/patients/ghost/graph")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_patient"

    def test_out_of_range_observation(self, client):
        create_patient(client)
        response = client.post("/patients/p1/observations", json={
            "attribute": "psa", "value": {"kind": "continuous", "value": -4},
            "timestamp": "t", "source": "test"})
        assert response.status_code == 422
        assert response.json()["code"] == "out_of_plausible_range"

    def test_impact_bars_after_imaging(self, client):
        create_patient(client)
        for attr, value in CLINICAL_OBSERVATIONS:
            observe(client, "p1", attr, value)
        observe(client, "p1", "pirads", {"kind": "continuous", "value": 4.0}, t="t2")
        body = client.get("/patients/p1/attributes/high_gleason_score").json()
        assert len(body["impact"]["entries"]) == 3
        assert len(body["state"]["history"]) == 2

    def test_model_toggle(self, client):
        create_patient(client)
        response = client.post("/patients/p1/models/radiomics_model/enabled",
                               json={"enabled": False})
        assert response.json() == {"model": "radiomics_model", "enabled": False}
        nodes = {n["id"]: n for n in client.get("/patients/p1/graph").json()["nodes"]}
        assert nodes["radiomics_model"]["enabled"] is False
        response = client.post("/patients/p1/models/ghost/enabled",
                               json={"enabled": False})
        assert response.status_code == 404

    def test_whatif_leaves_state_unchanged(self, client, tmp_path):
        create_patient(client)
        for attr, value in CLINICAL_OBSERVATIONS:
            observe(client, "p1", attr, value)
        before = client.get("/patients/p1/graph").json()
        record_path = tmp_path / "store" / "patients" / "p1.json"
        persisted_before = record_path.read_bytes()
        response = client.post("/patients/p1/whatif", json={
            "overrides": [{"attribute": "age",
                           "value": {"kind": "continuous", "value": 75}}]})
        assert response.status_code == 200
        body = response.json()
        assert body["report"]["ephemeral"] is True
        assert client.get("/patients/p1/graph").json() == before
        assert record_path.read_bytes() == persisted_before

    def test_completion_and_retrain_roundtrip(self, client):
        create_patient(client)
        for attr, value in CLINICAL_OBSERVATIONS:
            observe(client, "p1", attr, value)
        response = client.post("/patients/p1/complete", json={
            "labels": {"high_gleason_score": {"kind": "boolean", "value": True}}})
        assert response.json()["journey_status"] == "completed"
        response = client.post("/admin/retrain")
        assert response.status_code == 200
        body = response.json()
        assert body["new_version"] == 2
        assert "high_gleason_score" in body["weight_diffs"]
        response = client.post("/patients/p1/observations", json={
            "attribute": "psa", "value": {"kind": "continuous", "value": 9.0},
            "timestamp": "t9", "source": "test"})
        assert response.status_code == 409  # journey frozen

    def test_retrain_without_cohort_is_conflict(self, client):
        response = client.post("/admin/retrain")
        assert response.status_code == 409
        assert response.json()["code"] == "insufficient_data"


class TestReadIdempotence:
    def test_request_storm_leaves_store_untouched(self, client, tmp_path):
        create_patient(client)
        for attr, value in CLINICAL_OBSERVATIONS:
            observe(client, "p1", attr, value)
        store_root = tmp_path / "store"
        record_bytes = (store_root / "patients" / "p1.json").read_bytes()
        for _ in range(25):
            client.get("/patients/p1/graph")
            client.get("/patients/p1/attributes/high_gleason_score")
            client.get("/registry")
            client.get("/registry/neighborhoods/pirads")
        assert (store_root / "patients" / "p1.json").read_bytes() == record_bytes


class TestAuth:
    def test_bearer_token_enforced(self, tmp_path):
        registry = load_registry(fixture_text("prostate.json"))
        app = create_app(str(tmp_path / "store"), registry, token="sesame")
        with TestClient(app) as client:
            assert client.get("/registry").status_code == 401
            ok = client.get("/registry",
                            headers={"Authorization": "Bearer sesame"})
            assert ok.status_code == 200

    def test_default_is_open(self, client):
        assert client.get("/registry").status_code == 200


class TestServiceRestart:
    def test_twins_rehydrate_from_store(self, tmp_path):
        registry = load_registry(fixture_text("prostate.json"))
        store_root = str(tmp_path / "store")
        with TestClient(create_app(store_root, registry)) as client:
            create_patient(client)
            for attr, value in CLINICAL_OBSERVATIONS:
                observe(client, "p1", attr, value)
            before = client.get("/patients/p1/attributes/high_gleason_score").json()
        with TestClient(create_app(store_root, registry)) as client:
            after = client.get("/patients/p1/attributes/high_gleason_score").json()
        assert after == before


class TestConcurrency:
    def test_parallel_patients_and_serialized_writes(self, tmp_path):
        # Distinct twins proceed independently; concurrent writes to one twin
        # serialize without gaps in its event sequence.
        import concurrent.futures

        registry = load_registry(fixture_text("prostate.json"))
        app = create_app(str(tmp_path / "store"), registry)
        with TestClient(app) as client:
            for pid in ("c1", "c2", "c3", "c4"):
                assert client.post("/patients", json={"id": pid}).status_code == 200

            def journey(pid: str) -> int:
                done = 0
                for attr, value in CLINICAL_OBSERVATIONS:
                    response = client.post(
                        f"/patients/{pid}/observations",
                        json={"attribute": attr, "value": value,
                              "timestamp": f"t-{done}", "source": "load"})
                    assert response.status_code == 200, response.text
                    done += 1
                return done

            with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
                totals = list(pool.map(journey, ["c1", "c2", "c3", "c4",
                                                 "c1", "c2", "c3", "c4"]))
            assert all(t == 5 for t in totals)
            for pid in ("c1", "c2", "c3", "c4"):
                record = json.loads(
                    (tmp_path / "store" / "patients" / f"{pid}.json").read_text())
                seqs = [run["event_seq"] for run in record["runs"]]
                assert seqs == list(range(1, 11))  # two journeys, no gaps
