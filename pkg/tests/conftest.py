from __future__ import annotations

from pathlib import Path

import pytest

from anonpsy.config import RunConfig
from anonpsy.gateway import LlmGateway, MockBackend

DATA_DIR = Path(__file__).parent / "data"
CORPUS_DIR = DATA_DIR / "corpus"
FIXTURES_DIR = DATA_DIR / "fixtures"
GOLDEN_DIR = DATA_DIR / "golden"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture()
def run_config() -> RunConfig:
    return RunConfig(seed=42, jobs=1, backend="mock", fixtures_dir=str(FIXTURES_DIR))


@pytest.fixture()
def mock_gateway(run_config) -> LlmGateway:
    return LlmGateway(MockBackend(run_config.fixtures_dir), model=run_config.model)


def golden_text(name: str) -> str:
    return (GOLDEN_DIR / name).read_text(encoding="utf-8")
