"""Shared meshes and cached Sneddon phase-field states."""
import time

import numpy as np
import pytest

from pfcrack.mesh import SizeField, generate_graded_mesh, rectangle_mesh
from pfcrack.phasefield import PffParams, run_loading_steps

DOMAIN = (0.0, 4.0, 0.0, 4.0)
_STATES = {}
RUNTIMES = {}


def sneddon_slit(h):
    return [(1.8, 2.2, 2 - h, 2 + h)]


def sneddon_state(level: int, h0: float = 0.02):
    """Final state of the five-step Sneddon run on mesh level ``level`` (cached per session)."""
    if level not in _STATES:
        t0 = time.perf_counter()
        h = h0 * 2.0**-level
        mesh = generate_graded_mesh(DOMAIN, sneddon_slit(h), SizeField(h, min(100 * h, 2.0)))
        params = PffParams.for_mesh_size(h)
        _STATES[level] = (params, run_loading_steps(params, mesh, sneddon_slit(h)))
        RUNTIMES[level] = time.perf_counter() - t0
    return _STATES[level]


@pytest.fixture(scope="session")
def unit_mesh():
    return rectangle_mesh((0.0, 1.0, 0.0, 1.0), 0.1)


@pytest.fixture(scope="session")
def sneddon0():
    return sneddon_state(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
