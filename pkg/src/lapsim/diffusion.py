"""Limiting Ornstein-Uhlenbeck diffusion around the LAP equilibrium.

Work is done in class coordinates: ``x_i`` is the centred number of class-i
customers.  With queues and idleness in every pool but the last at zero, the
edge occupancies are a linear function of ``x`` (the lifting operator
``L_prime``).  Completions then give the drift

    dx = A x dt + D^{1/2} dB,    A = -M L_prime,

where ``M[i, (ij)] = mu_ij``.  Note the minus sign: completions remove
customers.  Each class sees arrival noise of rate ``lam_i`` and completion
noise of rate ``sum_j mu_ij psi*_ij = lam_i``, so ``D = diag(2 lam_i)``.

The edge-coordinate drift ``L2_edge = -L_prime M`` is singular off the range
of ``L_prime``, hence the Lyapunov equation is solved for ``x`` and lifted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import EigenFailure, SingularLyapunov, SingularSystem
from .lap import EquilibriumPoint, PriorityAssignment
from .model import SystemSpec

STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class DiffusionModel:
    L_prime: np.ndarray  # |E| x I
    M: np.ndarray  # I x |E|
    A: np.ndarray  # I x I
    L2_edge: np.ndarray  # |E| x |E|
    D: np.ndarray  # I x I
    Sigma_X: np.ndarray
    Sigma_Psi: np.ndarray
    eigenvalues: np.ndarray

    def to_dict(self, spec: SystemSpec) -> dict:
        return {
            "edges": [[i + 1, j + 1] for i, j in spec.edges],
            "L_prime": self.L_prime.tolist(),
            "A": self.A.tolist(),
            "D": self.D.tolist(),
            "eigenvalues": {
                "real": self.eigenvalues.real.tolist(),
                "imag": self.eigenvalues.imag.tolist(),
            },
            "Sigma_X": self.Sigma_X.tolist(),
            "Sigma_Psi": self.Sigma_Psi.tolist(),
        }


def build_lift_operator(spec: SystemSpec, pa: PriorityAssignment | None = None,
                        eq: EquilibriumPoint | None = None, *, last_pool: int | None = None):
    """Matrix sending centred class counts to centred edge occupancies.

    Solves, for each unit vector ``x``: per-class edge sums equal ``x_i`` and
    per-pool sums vanish for every pool but ``last_pool``.  On a tree this
    is ``|E|`` equations in ``|E|`` unknowns.
    """
    if last_pool is None:
        last_pool = (eq or pa).last_pool
    n_cls, n_edge = spec.num_classes, spec.num_edges
    rows = []
    for i in range(n_cls):
        rows.append([1.0 if e[0] == i else 0.0 for e in spec.edges])
    for j in range(spec.num_pools):
        if j != last_pool:
            rows.append([1.0 if e[1] == j else 0.0 for e in spec.edges])
    K = np.array(rows).reshape(-1, n_edge)
    if K.shape != (n_edge, n_edge):
        raise SingularSystem(f"constraint system is {K.shape[0]}x{n_edge}, not square")
    rhs = np.zeros((n_edge, n_cls))
    rhs[:n_cls] = np.eye(n_cls)
    try:
        L = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    L[np.abs(L) < 1e-15] = 0.0
    return L


def service_matrix(spec: SystemSpec) -> np.ndarray:
    M = np.zeros((spec.num_classes, spec.num_edges))
    for k, ((i, _), mu) in enumerate(zip(spec.edges, spec.mu)):
        M[i, k] = mu
    return M


def build_drift(spec: SystemSpec, L_prime: np.ndarray, eq: EquilibriumPoint):
    """``(A, L2_edge, D)``; see the module docstring for the sign convention."""
    M = service_matrix(spec)
    A = -M @ L_prime
    L2 = -L_prime @ M
    noise = np.array(spec.lam) + M @ np.asarray(eq.occupancy)
    return A, L2, np.diag(noise)


class StabilityReport(NamedTuple):
    eigenvalues: np.ndarray
    max_real: float
    passed: bool


def check_local_stability(A: np.ndarray, margin: float = STABILITY_MARGIN) -> StabilityReport:
    try:
        ev = np.linalg.eigvals(np.asarray(A, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from None
    if not np.all(np.isfinite(ev)):
        raise EigenFailure("non-finite eigenvalues")
    ev = ev[np.lexsort((ev.imag, -ev.real))]
    top = float(ev.real.max())
    return StabilityReport(ev, top, top < -margin)


def solve_lyapunov(A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Solve ``A S + S A^T + D = 0`` via ``(I (x) A + A (x) I) vec(S) = -vec(D)``."""
    n = A.shape[0]
    eye = np.eye(n)
    kron_sum = np.kron(eye, A) + np.kron(A, eye)
    try:
        vec = np.linalg.solve(kron_sum, -D.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularLyapunov(str(exc)) from None
    S = vec.reshape(n, n, order="F")
    return 0.5 * (S + S.T)


def lyapunov_residual(A, S, D) -> float:
    return float(np.abs(A @ S + S @ A.T + D).max())


def stationary_covariance(A: np.ndarray, D: np.ndarray, L_prime: np.ndarray):
    """``(Sigma_X, Sigma_Psi)`` of the stationary Gaussian law."""
    S = solve_lyapunov(A, D)
    scale = max(1.0, float(np.abs(D).max()))
    if lyapunov_residual(A, S, D) > 1e-10 * scale:
        raise SingularLyapunov("Lyapunov residual too large")
    return S, L_prime @ S @ L_prime.T


def build_model(spec: SystemSpec, pa: PriorityAssignment, eq: EquilibriumPoint) -> DiffusionModel:
    L = build_lift_operator(spec, pa, eq)
    A, L2, D = build_drift(spec, L, eq)
    stab = check_local_stability(A)
    if not stab.passed:
        raise EigenFailure(f"drift is not stable: max real part {stab.max_real:.3g}")
    Sx, Sp = stationary_covariance(A, D, L)
    return DiffusionModel(L, service_matrix(spec), A, L2, D, Sx, Sp, stab.eigenvalues)


@njit(cache=True)
def _euler_maruyama(x0, A, B, noise, dt):
    n_steps, dim = noise.shape
    out = np.empty((n_steps + 1, dim))
    out[0] = x0
    sq = math.sqrt(dt)
    x = x0.copy()
    nxt = np.empty(dim)
    for k in range(n_steps):
        for a in range(dim):
            acc = 0.0
            for b in range(dim):
                acc += A[a, b] * x[b] * dt + B[a, b] * noise[k, b] * sq
            nxt[a] = x[a] + acc
        x[:] = nxt
        out[k + 1] = x
    return out


class OUPath(NamedTuple):
    t: np.ndarray
    X: np.ndarray
    Psi: np.ndarray | None


def simulate_ou(A, D, x0, horizon: float, dt: float, seed: int = 0,
                L_prime: np.ndarray | None = None) -> OUPath:
    """Euler-Maruyama path of ``dX = A X dt + D^{1/2} dB`` on ``[0, horizon]``.

    ``Psi = X @ L_prime.T`` is returned as well when ``L_prime`` is given.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (A.shape[0],)).copy()
    B = np.linalg.cholesky(D)
    n = int(round(horizon / dt))
    rng = np.random.Generator(np.random.PCG64(seed))
    X = _euler_maruyama(x0, A, B, rng.standard_normal((n, A.shape[0])), dt)
    t = np.arange(n + 1) * dt
    return OUPath(t, X, None if L_prime is None else X @ np.asarray(L_prime).T)


def path_moments(path: OUPath, burn_in: float = 0.0):
    """Time-averaged mean and covariance of ``X`` after ``burn_in``."""
    x = path.X[path.t >= burn_in]
    return x.mean(axis=0), np.cov(x, rowvar=False, bias=True).reshape(x.shape[1], x.shape[1])
