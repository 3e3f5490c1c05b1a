"""Batch CLI: registry validation, journal replay, service, retraining.

Exit codes: 0 success, 2 validation failure, 3 replay terminated by a
survival-fusion conflict (outputs are still written so the conflict can be
inspected).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backbone import Store
from .builder import build_graph, graph_snapshot, state_snapshot
from .engine import ingest
from .errors import TwinError
from .journal import load_journal, replay_order
from .registry import FusionMode, load_registry
from .serialize import canonical_json


def _read_registry(path: str):
    return load_registry(Path(path).read_text(encoding="utf-8"))


@click.group()
def main():
    """Knowledge-graph twin toolkit."""


@main.command()
@click.argument("registry_file", type=click.Path(exists=True, dir_okay=False))
def validate(registry_file: str):
    """Validate a registry document, printing every issue."""
    try:
        registry = _read_registry(registry_file)
    except TwinError as exc:
        for issue in (exc.detail or [{"code": exc.code, "message": str(exc)}]):
            click.echo(f"ERROR {issue['code']}: {issue['message']}")
        sys.exit(2)
    click.echo(f"OK: {len(registry.attributes)} attributes, "
               f"{len(registry.models)} models, version {registry.version}")


@main.command()
@click.option("--registry", "registry_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--journal", "journal_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def replay(registry_file: str, journal_file: str, out_dir: str):
    """Replay a journal into a fresh store and write snapshot + reports."""
    try:
        registry = _read_registry(registry_file)
        journal = load_journal(journal_file, registry)
    except TwinError as exc:
        click.echo(f"ERROR {exc.code}: {exc}", err=True)
        sys.exit(2)

    store = Store(out_dir)
    store.save_registry(registry)
    twin = build_graph(registry, patient_id=journal.patient)
    record = store.create_record(twin)
    reports = []
    survival_conflict = False
    for event in replay_order(journal):
        try:
            report = ingest(twin, event)
        except TwinError as exc:
            click.echo(f"ERROR {exc.code}: {exc}", err=True)
            sys.exit(2)
        record = store.commit(record, report, twin)
        reports.append(report.to_dict(include_wall_time=False))
        for attr, outcome in report.fusion_outcomes.items():
            config = registry.attributes[attr].fusion
            if (outcome.status.value == "conflict"
                    and config.mode is FusionMode.SURVIVAL_AGGREGATE):
                survival_conflict = True
    if journal.completion:
        cohort = store.load_cohort()
        from .backbone import complete_journey
        cohort, record = complete_journey(cohort, record, journal.completion, registry)
        store.save_record(record)
        store.save_cohort(cohort)

    out = Path(out_dir)
    (out / "snapshot.json").write_text(canonical_json(state_snapshot(twin)),
                                       encoding="utf-8")
    (out / "graph.json").write_text(canonical_json(graph_snapshot(twin)),
                                    encoding="utf-8")
    (out / "reports.json").write_text(canonical_json(reports), encoding="utf-8")
    conflicts = sum(len(r["conflicts"]) for r in reports)
    click.echo(f"replayed {len(reports)} event(s) for {journal.patient}; "
               f"{conflicts} conflict(s)")
    if survival_conflict:
        click.echo("survival fusion conflict: all values passed back", err=True)
        sys.exit(3)


@main.command()
@click.option("--registry", "registry_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_dir", required=True, type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--token", default=None, help="Static bearer token (default: auth off)")
def serve(registry_file: str, store_dir: str, host: str, port: int, token: str | None):
    """Run the HTTP decision-support service."""
    import uvicorn

    from .service import create_app

    try:
        registry = _read_registry(registry_file)
    except TwinError as exc:
        click.echo(f"ERROR {exc.code}: {exc}", err=True)
        sys.exit(2)
    app = create_app(store_dir, registry, token)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--store", "store_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
def retrain(store_dir: str):
    """Refit fusion weights from the stored cohort; writes a new registry version."""
    from .backbone import retrain as retrain_cohort

    store = Store(store_dir)
    latest = store.latest_registry_version()
    if latest is None:
        click.echo("ERROR missing_registry: store holds no registry", err=True)
        sys.exit(2)
    registry = store.load_registry_version(latest)
    cohort = store.load_cohort()
    try:
        updated = retrain_cohort(cohort, registry)
    except TwinError as exc:
        click.echo(f"ERROR {exc.code}: {exc}", err=True)
        sys.exit(2)
    store.save_registry(updated)
    changed = [attr for attr in updated.attributes
               if updated.attributes[attr].fusion != registry.attributes[attr].fusion]
    click.echo(f"registry v{registry.version} -> v{updated.version}; "
               f"updated fusions: {', '.join(changed) or 'none'}")


if __name__ == "__main__":
    main()
