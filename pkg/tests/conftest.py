import sys
from pathlib import Path

import pytest

from sparsetuck import _backend
from sparsetuck.model import TuckerModel
from sparsetuck.tensor import SparseTensor, _sample_coordinates

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


def random_model(dims, ranks, rng, signed=True, mask_frac=0.0):
    core = rng.standard_normal(ranks) if signed else rng.random(ranks)
    factors = [rng.standard_normal((d, r)) if signed else rng.random((d, r)) for d, r in zip(dims, ranks)]
    cm = rng.random(ranks) < mask_frac
    fms = [rng.random((d, r)) < mask_frac for d, r in zip(dims, ranks)]
    return TuckerModel.from_arrays(core, factors, cm, fms)


def random_tensor(dims, nnz, rng):
    idx = _sample_coordinates(dims, nnz, rng)
    return SparseTensor(dims, idx, rng.standard_normal(nnz))


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
