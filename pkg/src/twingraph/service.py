"""HTTP decision-support service.

A thin JSON layer over the engine and the backbone: one in-memory twin per
patient (rehydrated from the store on demand), per-patient writes serialized
behind a lock, reads served from snapshots.  Errors come back as structured
problem documents ``{code, message, detail}`` with stable codes so clients
can render conflicts without string matching.  An optional static bearer
token guards every endpoint; real authentication is a deployment concern.
"""

from __future__ import annotations

import threading
from dataclasses import replace
from typing import Any

from fastapi import Body, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .backbone import Store, complete_journey, retrain
from .builder import (
    build_graph,
    graph_snapshot,
    restore_twin,
    set_model_enabled,
    state_snapshot,
)
from .engine import (
    ExternalEvent,
    WhatIfQuery,
    attribute_report,
    ingest,
    what_if,
)
from .errors import (
    AlreadyCompleted,
    DuplicatePatient,
    EventSequenceGap,
    InsufficientData,
    JourneyCompleted,
    MalformedValue,
    OutOfPlausibleRange,
    RegistryValidationError,
    TwinError,
    TypeMismatch,
    UnknownAttribute,
    UnknownModel,
    UnknownPatient,
)
from .registry import Registry, load_registry, neighborhood, serialize_registry
from .serialize import (
    decode_value,
    encode_attribute_state,
    encode_chain,
)

_STATUS = {
    UnknownAttribute: 404,
    UnknownModel: 404,
    UnknownPatient: 404,
    DuplicatePatient: 409,
    TypeMismatch: 422,
    OutOfPlausibleRange: 422,
    MalformedValue: 422,
    RegistryValidationError: 422,
    JourneyCompleted: 409,
    AlreadyCompleted: 409,
    EventSequenceGap: 409,
    InsufficientData: 409,
}


def _status_for(exc: TwinError) -> int:
    for klass, status in _STATUS.items():
        if isinstance(exc, klass):
            return status
    return 400


class TwinService:
    """Owns the store, the current registry, and the per-patient twins.

    Writes are serialized per patient, so one twin's long-running evaluation
    (a command model at its timeout, say) never blocks another's events;
    registry swaps and cohort updates take their own narrow locks.  Reads are
    served from snapshots without locking.
    """

    def __init__(self, store_root: str, registry: Registry | None = None,
                 token: str | None = None):
        self.store = Store(store_root)
        self.token = token or None
        self.registry_lock = threading.Lock()
        self.cohort_lock = threading.Lock()
        self._locks_guard = threading.Lock()
        self._patient_locks: dict[str, threading.Lock] = {}
        self.twins: dict[str, Any] = {}
        self.records: dict[str, Any] = {}
        if registry is None:
            latest = self.store.latest_registry_version()
            if latest is None:
                raise RegistryValidationError(
                    [{"code": "missing_registry", "where": "$",
                      "message": "no registry provided and none stored"}])
            registry = self.store.load_registry_version(latest)
        self.registry = registry
        self.store.save_registry(registry)

    def patient_lock(self, patient: str) -> threading.Lock:
        with self._locks_guard:
            if patient not in self._patient_locks:
                self._patient_locks[patient] = threading.Lock()
            return self._patient_locks[patient]

    def twin_for(self, patient: str):
        if patient in self.twins:
            return self.twins[patient], self.records[patient]
        if not self.store.has_record(patient):
            raise UnknownPatient(f"unknown patient {patient!r}")
        record = self.store.load_record(patient)
        registry = (self.registry if record.registry_version == self.registry.version
                    else self.store.load_registry_version(record.registry_version))
        twin = restore_twin(record.state, registry)
        self.twins[patient] = twin
        self.records[patient] = record
        return twin, record


def create_app(store_root: str, registry: Registry | None = None,
               token: str | None = None) -> FastAPI:
    service = TwinService(store_root, registry, token)
    app = FastAPI(title="twingraph", docs_url=None, redoc_url=None)
    app.state.service = service
    # The dashboard is a statically served single-page app on another origin.
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(TwinError)
    async def _twin_error(_request: Request, exc: TwinError):
        return JSONResponse(status_code=_status_for(exc), content=exc.problem())

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if service.token:
            header = request.headers.get("authorization", "")
            if header != f"Bearer {service.token}":
                return JSONResponse(status_code=401, content={
                    "code": "unauthorized", "message": "missing or wrong bearer token",
                    "detail": None})
        return await call_next(request)

    # -- registry ---------------------------------------------------------

    @app.post("/registry")
    def replace_registry(document: dict = Body(...)):
        registry = load_registry(document)
        with service.registry_lock:
            service.registry = registry
            service.store.save_registry(registry)
        return {"version": registry.version}

    @app.get("/registry")
    def get_registry():
        return serialize_registry(service.registry)

    @app.get("/registry/neighborhoods/{attr}")
    def get_neighborhood(attr: str):
        hood = neighborhood(service.registry, attr)
        return {"attribute": hood.attribute,
                "informing": list(hood.informing),
                "informed": list(hood.informed)}

    # -- patients -----------------------------------------------------------

    @app.post("/patients")
    def create_patient(payload: dict = Body(...)):
        patient = str(payload.get("id", "")).strip()
        if not patient:
            raise MalformedValue("patient id must be non-empty")
        with service.patient_lock(patient):
            if service.store.has_record(patient):
                raise DuplicatePatient(f"patient {patient!r} already exists")
            twin = build_graph(service.registry,
                               set(payload.get("initially_available", ())),
                               patient_id=patient)
            record = service.store.create_record(twin)
            service.twins[patient] = twin
            service.records[patient] = record
        return graph_snapshot(twin)

    @app.get("/patients/{patient}/graph")
    def get_graph(patient: str):
        twin, _record = service.twin_for(patient)
        return graph_snapshot(twin)

    @app.post("/patients/{patient}/observations")
    def post_observation(patient: str, payload: dict = Body(...)):
        required = {"attribute", "value"}
        if required - set(payload):
            raise MalformedValue(f"observation needs keys {sorted(required)}")
        event = ExternalEvent(
            attribute=str(payload["attribute"]),
            value=decode_value(payload["value"]),
            timestamp=str(payload.get("timestamp", "")),
            source_label=str(payload.get("source", "")))
        with service.patient_lock(patient):
            twin, record = service.twin_for(patient)
            if not record.active:
                raise JourneyCompleted(f"patient {patient} journey already completed")
            report = ingest(twin, event)
            record = service.store.commit(record, report, twin)
            service.records[patient] = record
        return report.to_dict()

    @app.post("/patients/{patient}/whatif")
    def post_whatif(patient: str, payload: dict = Body(...)):
        twin, _record = service.twin_for(patient)
        overrides = []
        for raw in payload.get("overrides", []):
            overrides.append(ExternalEvent(
                attribute=str(raw["attribute"]),
                value=decode_value(raw["value"]),
                timestamp=str(raw.get("timestamp", "what-if")),
                source_label=str(raw.get("source", "what-if"))))
        query = None
        if payload.get("query"):
            query = WhatIfQuery(attribute=str(payload["query"]["attribute"]),
                                horizon_days=int(payload["query"]["horizon_days"]))
        result = what_if(twin, overrides, query)
        return {"snapshot": result.snapshot,
                "report": result.report.to_dict(),
                "query_result": result.query_result}

    @app.get("/patients/{patient}/attributes/{attr}")
    def get_attribute(patient: str, attr: str):
        twin, _record = service.twin_for(patient)
        rep = attribute_report(twin, attr)
        return {"attribute": attr,
                "state": encode_attribute_state(rep.state),
                "impact": rep.impact,
                "provenance": encode_chain(rep.provenance)}

    @app.post("/patients/{patient}/models/{model}/enabled")
    def post_enabled(patient: str, model: str, payload: dict = Body(...)):
        enabled = bool(payload.get("enabled", True))
        with service.patient_lock(patient):
            twin, record = service.twin_for(patient)
            set_model_enabled(twin, model, enabled)
            record = replace(record, state=state_snapshot(twin))
            service.store.save_record(record)
            service.records[patient] = record
        return {"model": model, "enabled": enabled}

    @app.post("/patients/{patient}/complete")
    def post_complete(patient: str, payload: dict = Body(...)):
        labels = {attr: decode_value(raw)
                  for attr, raw in (payload.get("labels") or {}).items()}
        with service.patient_lock(patient), service.cohort_lock:
            twin, record = service.twin_for(patient)
            registry = twin.graph.registry
            cohort = service.store.load_cohort()
            cohort, record = complete_journey(cohort, record, labels, registry)
            service.store.save_record(record)
            service.store.save_cohort(cohort)
            service.records[patient] = record
        return {"patient": patient, "journey_status": record.journey_status}

    @app.post("/admin/retrain")
    def post_retrain():
        with service.cohort_lock, service.registry_lock:
            cohort = service.store.load_cohort()
            old = service.registry
            new = retrain(cohort, old)
            service.store.save_registry(new)
            service.registry = new
        diffs = {}
        for attr, desc in new.attributes.items():
            before = old.attributes[attr].fusion
            after = desc.fusion
            if before.weights != after.weights or before.trained != after.trained:
                diffs[attr] = {
                    "weights_before": dict(before.weights or ()),
                    "weights_after": dict(after.weights or ()),
                    "trained_before": None if before.trained is None else {
                        "bias": before.trained.bias,
                        "weights": dict(before.trained.weights)},
                    "trained_after": None if after.trained is None else {
                        "bias": after.trained.bias,
                        "weights": dict(after.trained.weights)},
                }
        return {"new_version": new.version, "weight_diffs": diffs}

    return app
