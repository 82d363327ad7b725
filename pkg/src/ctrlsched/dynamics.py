"""Plant models, switched closed-loop evolution and control weights.

Every plant follows ``x+ = A x + B u + w`` with a linear feedback ``u = K x``.
When the uplink drops, the base station applies ``K`` to a propagated
estimate instead of the true state, which gives the switched dynamics
implemented by :func:`step_plant`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

COUNTER_CAP = 200


class SynthesisError(RuntimeError):
    """Riccati iteration failed to converge."""


def _as_matrix(value, name):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class PlantModel:
    """Dynamics, gain, noise and cost matrices for one plant.

    Parameters
    ----------
    A : (p, p) array
        Per-cycle state transition.
    B : (p, q) array
        Input map.
    K : (q, p) array
        Feedback gain, ``u = K x``.
    W : (p, p) array
        Per-cycle process noise covariance.
    P : (p, p) array
        Weight of the quadratic cost ``L(x) = x' P x``.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    W: np.ndarray
    P: np.ndarray
    Ac: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        K = _as_matrix(self.K, "K")
        W = _as_matrix(self.W, "W")
        P = _as_matrix(self.P, "P")
        p = A.shape[0]
        if A.shape != (p, p):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != p:
            raise ValueError(f"B has {B.shape[0]} rows, expected {p}")
        if K.shape != (B.shape[1], p):
            raise ValueError(f"K must be {(B.shape[1], p)}, got {K.shape}")
        for name, M in (("W", W), ("P", P)):
            if M.shape != (p, p):
                raise ValueError(f"{name} must be {(p, p)}, got {M.shape}")
            if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        tol = 1e-12 * max(1.0, np.abs(W).max())
        if np.linalg.eigvalsh(W).min() < -tol:
            raise ValueError("W must be positive semidefinite")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("P must be positive definite")
        for name, M in (("A", A), ("B", B), ("K", K), ("W", W), ("P", P)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        Ac = A + B @ K
        Ac.setflags(write=False)
        object.__setattr__(self, "Ac", Ac)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def lyapunov_cost(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class LinkState:
    """Base-station view of one uplink.

    ``counter`` is the number of cycles since the last successful uplink
    and ``last_rx`` the state carried by that uplink.
    """

    last_rx: np.ndarray
    counter: int = 1
    fallen: bool = False

    def __post_init__(self):
        if self.counter < 1:
            raise ValueError(f"counter must be >= 1, got {self.counter}")


@dataclass(frozen=True)
class PendulumParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5
    gravity: float = 9.81
    sample_period: float = 0.01

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_length", "gravity", "sample_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def _check_vec(model: PlantModel, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (model.dim,):
        raise ValueError(f"{name} must have shape ({model.dim},), got {v.shape}")
    return v


def estimate_state(model: PlantModel, link: LinkState) -> np.ndarray:
    """Propagate the last received state ``counter`` cycles through ``Ac``."""
    x = _check_vec(model, link.last_rx, "last_rx")
    if link.counter < 1:
        raise ValueError("counter must be >= 1")
    return np.linalg.matrix_power(model.Ac, link.counter) @ x


def step_plant(model: PlantModel, state: PlantState, received: bool,
               estimate, noise) -> PlantState:
    x = _check_vec(model, state.x, "state")
    w = _check_vec(model, noise, "noise")
    if received:
        x_next = model.Ac @ x + w
    else:
        xhat = _check_vec(model, estimate, "estimate")
        x_next = model.A @ x + model.B @ (model.K @ xhat) + w
    return PlantState(x=x_next, k=state.k + 1)


def update_counter(link: LinkState, received: bool, x_now=None) -> LinkState:
    """Reset the counter on success (storing ``x_now``), else increment it."""
    if received:
        if x_now is None:
            raise ValueError("x_now is required on a successful uplink")
        return replace(link, last_rx=np.asarray(x_now, dtype=float), counter=1)
    return replace(link, counter=link.counter + 1)


def error_covariance(model: PlantModel, l: int) -> np.ndarray:
    """Covariance of ``sum_{j<l} Ac^j w_j``."""
    if l < 1:
        raise ValueError(f"l must be >= 1, got {l}")
    return error_covariances(model, l)[l - 1]


def error_covariances(model: PlantModel, l_max: int) -> np.ndarray:
    """Stack of error covariances for ``l = 1 .. l_max``."""
    p = model.dim
    out = np.empty((l_max, p, p))
    acc = np.zeros((p, p))
    Ak = np.eye(p)
    for j in range(l_max):
        acc = acc + Ak @ model.W @ Ak.T
        out[j] = acc
        Ak = model.Ac @ Ak
    return out


def drop_penalty_matrix(model: PlantModel) -> np.ndarray:
    return model.A.T @ model.P @ model.A - model.Ac.T @ model.P @ model.Ac


def control_weight(model: PlantModel, l: int) -> float:
    """Expected next-cycle cost increase of a drop over a success.

    Equals ``Tr[(A'PA - Ac'PAc) Se(l)]`` with ``Se(l)`` from
    :func:`error_covariance`. The estimate itself cancels out.
    """
    return float(np.trace(drop_penalty_matrix(model) @ error_covariance(model, l)))


def control_weight_table(model: PlantModel, cap: int = COUNTER_CAP) -> np.ndarray:
    """``c(l)`` for ``l = 1 .. cap``; index with ``min(l, cap) - 1``."""
    D = drop_penalty_matrix(model)
    covs = error_covariances(model, cap)
    return np.einsum("ij,lji->l", D, covs)


def expected_cost(model: PlantModel, estimate, l: int, q: float) -> float:
    """Closed-form expected next-cycle cost under packet error rate ``q``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    xhat = _check_vec(model, estimate, "estimate")
    Se = error_covariance(model, l)
    AcPAc = model.Ac.T @ model.P @ model.Ac
    success = (model.lyapunov_cost(model.Ac @ xhat)
               + np.trace(model.P @ model.W)
               + np.trace(AcPAc @ Se))
    return float(success + q * control_weight(model, l))


def linearize_pendulum(params: PendulumParams):
    """Continuous-time cart-pole model about the upright equilibrium.

    State ordering is ``[x, x_dot, theta, theta_dot]`` with the pole treated
    as a point mass at ``pole_length`` from the pivot; no friction.
    """
    M, m = params.cart_mass, params.pole_mass
    ell, g = params.pole_length, params.gravity
    A_c = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, -m * g / M, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, (M + m) * g / (M * ell), 0.0],
    ])
    B_c = np.array([[0.0], [1.0 / M], [0.0], [-1.0 / (M * ell)]])
    return A_c, B_c


def discretize_zoh(A_c, B_c, T: float):
    """Exact zero-order-hold discretization via the augmented exponential."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    A_c = _as_matrix(A_c, "A_c")
    B_c = _as_matrix(B_c, "B_c")
    p, q = B_c.shape
    aug = np.zeros((p + q, p + q))
    aug[:p, :p] = A_c
    aug[:p, p:] = B_c
    E = expm(aug * T)
    return E[:p, :p], E[:p, p:]


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 200_000):
    """Riccati fixed-point iteration from ``P = Q``.

    Stops once the largest entry change, relative to the largest entry,
    drops below ``tol``.
    """
    A, B, Q, R = (_as_matrix(M, n) for M, n in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")))
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        P_next = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise SynthesisError("Riccati iteration diverged; is (A, B) stabilizable?")
        diff = np.abs(P_next - P).max()
        P = P_next
        if diff <= tol * np.abs(P).max():
            return P
    raise SynthesisError(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_synthesize(A, B, Q, R, tol: float = 1e-10, max_iter: int = 200_000):
    """Return ``(K, P)`` with ``u = K x`` stabilizing ``(A, B)``."""
    A, B, Q, R = (_as_matrix(M, n) for M, n in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")))
    P = solve_dare(A, B, Q, R, tol=tol, max_iter=max_iter)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = np.abs(np.linalg.eigvals(A + B @ K)).max()
    if rho >= 1.0 and np.any(Q):
        raise SynthesisError(f"closed loop not stable (spectral radius {rho:.6f})")
    return K, P


def pendulum_model(params: PendulumParams | None = None, Q=None, R=None,
                   W=None, P=None) -> PlantModel:
    """Discretized, LQR-controlled cart-pole.

    ``P`` defaults to the Riccati solution of the LQR design, which makes
    ``A'PA - Ac'PAc`` positive semidefinite.
    """
    params = params or PendulumParams()
    A_c, B_c = linearize_pendulum(params)
    A, B = discretize_zoh(A_c, B_c, params.sample_period)
    Q = np.eye(4) if Q is None else Q
    R = np.eye(1) if R is None else R
    K, S = lqr_synthesize(A, B, Q, R)
    W = 1e-6 * np.eye(4) if W is None else W
    return PlantModel(A=A, B=B, K=K, W=W, P=S if P is None else P)
