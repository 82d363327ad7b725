import numpy as np
import pytest

from ctrlsched.dynamics import PlantModel, pendulum_model


@pytest.fixture
def scalar_model():
    # A=2, B=1, K=-1.5 gives Ac=0.5
    return PlantModel(A=[[2.0]], B=[[1.0]], K=[[-1.5]], W=[[1.0]], P=[[1.0]])


@pytest.fixture(scope="session")
def pendulum():
    return pendulum_model()


def random_stable_model(rng, p=3, q=1):
    """Random plant whose feedback gain comes from a small LQR problem."""
    from ctrlsched.dynamics import lqr_synthesize

    A = rng.normal(scale=0.6, size=(p, p))
    B = rng.normal(size=(p, q))
    K, _ = lqr_synthesize(A, B, np.eye(p), np.eye(q))
    G = rng.normal(size=(p, p))
    W = G @ G.T * 0.1
    H = rng.normal(size=(p, p))
    P = H @ H.T + np.eye(p)
    return PlantModel(A=A, B=B, K=K, W=W, P=P)
