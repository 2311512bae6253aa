from importlib import resources
from pathlib import Path

import pytest

from smartfuzz.format_spec import load_spec

import wavbuild

FIXTURES = Path(__file__).parent / "fixtures"
DATA = Path(str(resources.files("smartfuzz") / "data"))


@pytest.fixture(scope="session")
def wav_spec():
    return load_spec(DATA / "wav.json")


@pytest.fixture
def minimal():
    return wavbuild.minimal()


@pytest.fixture(scope="session")
def fixture_files():
    return {p.name: p.read_bytes() for p in sorted((FIXTURES / "corpus").iterdir())}
