import numpy as np
import pytest

from isswalk.walker import make_pinned_chain, make_walker


@pytest.fixture(scope="session")
def walker():
    return make_walker()


@pytest.fixture(scope="session")
def pinned():
    return make_pinned_chain()


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


# a mildly bent, generic configuration away from kinematic singularities
Q0 = np.array([0.05, 0.70, 0.06, -0.32, 0.24, 0.41, -0.12])
QD0 = np.array([0.55, -0.08, 0.20, -0.35, 0.50, 0.15, -0.60])


@pytest.fixture()
def q0():
    return Q0.copy()


@pytest.fixture()
def qd0():
    return QD0.copy()


@pytest.fixture(scope="session")
def artifact():
    from isswalk.cli import _BUILTIN_GAIT
    from isswalk.gait import GaitArtifact

    return GaitArtifact.load(_BUILTIN_GAIT)


@pytest.fixture(scope="session")
def hybrid_system(artifact, walker):
    from isswalk.gait import build_hybrid_system

    return build_hybrid_system(artifact, model=walker)
