import json
from pathlib import Path

import numpy as np
import pytest

from berrytrack import hamiltonian as hml

FIXTURES = Path(__file__).parent / "fixtures"

# Where the ingest exporter drops real molecular loops (secondary component).
INGEST_DATA = Path(__file__).parent.parent / "data"


def random_symmetric(rng, n, scale=1.0):
    a = rng.normal(size=(n, n), scale=scale)
    return 0.5 * (a + a.T)


def random_bundle(rng, n, with_overlap=True, e_nuc=0.3):
    """Random integral bundle with all required symmetries."""
    h = random_symmetric(rng, n)
    g = rng.normal(size=(n, n, n, n), scale=0.25)
    g = g + g.transpose(1, 0, 2, 3)
    g = g + g.transpose(0, 1, 3, 2)
    g = g + g.transpose(2, 3, 0, 1)
    S = None
    if with_overlap:
        a = rng.normal(size=(n, n), scale=0.2)
        S = np.eye(n) + a @ a.T
    b = hml.IntegralBundle(n_orb=n, e_nuc_core=e_nuc, h=h, g=g, S=S)
    b.validate()
    return b


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


@pytest.fixture(scope="session")
def cas22_pi_loop():
    return hml.load_loop(FIXTURES / "cas22_pi" / "loop.json")


@pytest.fixture(scope="session")
def cas22_zero_loop():
    return hml.load_loop(FIXTURES / "cas22_zero" / "loop.json")


@pytest.fixture(scope="session")
def padded_pi_loop():
    return hml.load_loop(FIXTURES / "padded_pi" / "loop.json")


def ingest_loop_path(name: str):
    """Path of an ingest-produced loop manifest, or None when not generated."""
    p = INGEST_DATA / name / "loop.json"
    return p if p.exists() else None


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
