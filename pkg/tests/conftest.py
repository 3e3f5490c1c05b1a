from __future__ import annotations

import json
from importlib import resources

import pytest

from twingraph.registry import Registry, load_registry

FIXTURES = resources.files("twingraph") / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def fixture_json(name: str) -> dict:
    return json.loads(fixture_text(name))


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


@pytest.fixture
def prostate_registry() -> Registry:
    return load_registry(fixture_text("prostate.json"))


@pytest.fixture
def glioma_registry() -> Registry:
    return load_registry(fixture_text("glioma.json"))
