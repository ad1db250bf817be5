import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from aag.oracle import MemoryDataset
from aag.ring import derive_attributes, load_ring

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"
GOLDENS = Path(__file__).resolve().parent / "goldens"

RING_PATH = FIXTURES / "wildfire" / "wildfire_ring.json"


@pytest.fixture(scope="session")
def db_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("db") / "wildfire.db"
    subprocess.run(
        [sys.executable, str(REPO / "scripts" / "build_wildfire_db.py"),
         str(path)],
        check=True, capture_output=True,
    )
    return path


@pytest.fixture(scope="session")
def base_ring():
    """The seed ring as written, without derived attributes."""
    return load_ring(RING_PATH)


@pytest.fixture(scope="session")
def ring(base_ring):
    """The seed ring with derived aggregate attributes."""
    return derive_attributes(base_ring)


@pytest.fixture(scope="session")
def dataset() -> MemoryDataset:
    return MemoryDataset.from_csv(FIXTURES / "wildfire")


@pytest.fixture(scope="session")
def ring_db(ring, db_path):
    """Convenience pair used by most execution tests."""
    return ring, db_path


@pytest.fixture(scope="session")
def cli_ring_path(tmp_path_factory, db_path) -> Path:
    """A ring document with its database sitting next to it, as the CLI
    resolves relative ``sqlite://`` paths against the ring's directory."""
    d = tmp_path_factory.mktemp("cli")
    ring_file = d / "wildfire_ring.json"
    ring_file.write_text(RING_PATH.read_text())
    shutil.copy(db_path, d / "wildfire.db")
    return ring_file


def load_fixture_plan(name: str):
    from aag.plans import load_plan

    return load_plan(FIXTURES / "plans" / f"{name}.json")


def load_fixture_request(name: str) -> str:
    return (FIXTURES / "requests" / f"{name}.json").read_text()
