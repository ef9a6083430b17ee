import numpy as np
import pytest
import torch

from linereg.plucker import RigidTransform, axis_angle_to_rotation


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    return axis_angle_to_rotation(axis, rng.uniform(0.0, max_angle))


def random_pose(rng, max_angle=np.pi, max_t=3.0):
    return RigidTransform(random_rotation(rng, max_angle), rng.uniform(-max_t, max_t, size=3))


def random_lines(rng, n, extent=3.0):
    """Raw (non-canonical) lines through random points with random directions."""
    P = rng.uniform(-extent, extent, size=(n, 3))
    V = rng.normal(size=(n, 3))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return np.hstack([V, np.cross(P, V)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
