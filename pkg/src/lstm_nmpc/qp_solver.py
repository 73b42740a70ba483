"""
Dense Interior-Point QP.

Solves

    minimise   1/2 z' H z + g' z + constant
    subject to G z <= h

with Mehrotra's predictor-corrector primal-dual method. Each iteration factors
the reduced normal matrix H + G' diag(lambda / t) G once with a Cholesky
decomposition and reuses it for the predictor and the corrector directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
# fraction of the distance to the boundary taken by each step
STEP_FRACTION = 0.995
# residuals cannot fall below a few hundred ulps of the largest problem datum
ROUNDOFF = 64 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """Dense QP with inequality rows G z <= h; `constant` is the objective at z = 0."""

    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    h: np.ndarray
    constant: float = 0.0
    n_du: int = 0
    n_slack: int = 0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        n = g.size
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape != (n, n):
            raise ValueError(f"Hessian shape {H.shape} does not match {n} variables")
        if h.size != G.shape[0]:
            raise ValueError("constraint matrix and bound vector disagree")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(H).max(initial=0.0))):
            raise ValueError("Hessian must be symmetric")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        if self.n_du == 0 and self.n_slack == 0:
            object.__setattr__(self, "n_du", n)

    @property
    def n_variables(self) -> int:
        return self.g.size

    @property
    def n_constraints(self) -> int:
        return self.h.size

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.g @ z + self.constant)


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Primal/dual iterate with status and the KKT residual norms at exit."""

    z: np.ndarray
    duals: np.ndarray
    slacks: np.ndarray
    status: str
    iterations: int
    stationarity: float
    primal_residual: float
    complementarity: float
    objective: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def kkt_norm(self) -> float:
        return max(self.stationarity, self.primal_residual, self.complementarity)


def _max_step(values: np.ndarray, direction: np.ndarray) -> float:
    shrinking = direction < 0
    if not np.any(shrinking):
        return 1.0
    return float(min(1.0, np.min(-values[shrinking] / direction[shrinking])))


def _factor(matrix: np.ndarray):
    try:
        return cho_factor(matrix, lower=True, check_finite=True)
    except LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.abs(np.diag(matrix)).max()))
        logger.debug("Normal matrix not positive definite, adding %.1e to the diagonal", jitter)
        return cho_factor(matrix + jitter * np.eye(matrix.shape[0]), lower=True)


def solve_qp(qp: CondensedQp, max_iters: int = 50, tolerance: float = 1e-10) -> QpSolution:
    """
    Solve a convex QP with a primal-dual interior-point method.

    Parameters:
        qp (CondensedQp): Problem data; H must be positive definite.
        max_iters (int): Iteration limit.
        tolerance (float): Bound on the absolute stationarity, primal residual
            and mean complementarity at convergence, raised only to the
            rounding level of the problem data when that is larger.

    Returns:
        QpSolution: Status is "converged", or "max_iter" when the limit was hit
        first; the residual norms are reported either way.
    """
    n, m = qp.n_variables, qp.n_constraints
    H, g, G, h = qp.H, qp.g, qp.G, qp.h

    if m == 0:
        z = cho_solve(_factor(H), -g)
        stationarity = float(np.abs(H @ z + g).max(initial=0.0))
        return QpSolution(
            z, np.zeros(0), np.zeros(0), CONVERGED, 0, stationarity, 0.0, 0.0, qp.objective(z)
        )

    data_scale = max(np.abs(g).max(initial=0.0), np.abs(h).max(initial=0.0), np.abs(H).max())
    threshold = max(tolerance, ROUNDOFF * data_scale)
    z = np.zeros(n)
    t = np.maximum(h - G @ z, 1.0)
    lam = np.ones(m)
    status = MAX_ITER
    iteration = 0
    r_d = H @ z + g + G.T @ lam
    r_p = G @ z + t - h
    mu = float(t @ lam) / m

    for iteration in range(1, max_iters + 1):
        weight = lam / t
        factor = _factor(H + G.T @ (weight[:, None] * G))

        def direction(r_c: np.ndarray):
            rhs = -r_d + G.T @ ((r_c - lam * r_p) / t)
            dz = cho_solve(factor, rhs)
            dt = -r_p - G @ dz
            dlam = -(r_c + lam * dt) / t
            return dz, dt, dlam

        # predictor
        dz, dt, dlam = direction(t * lam)
        alpha = min(_max_step(t, dt), _max_step(lam, dlam))
        mu_affine = float((t + alpha * dt) @ (lam + alpha * dlam)) / m
        sigma = (mu_affine / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dz, dt, dlam = direction(t * lam + dt * dlam - sigma * mu)
        alpha = STEP_FRACTION * min(_max_step(t, dt), _max_step(lam, dlam))
        alpha = min(alpha, 1.0)
        z = z + alpha * dz
        t = np.maximum(t + alpha * dt, np.finfo(float).tiny)
        lam = np.maximum(lam + alpha * dlam, np.finfo(float).tiny)

        r_d = H @ z + g + G.T @ lam
        r_p = G @ z + t - h
        mu = float(t @ lam) / m
        if (
            np.abs(r_d).max() <= threshold
            and np.abs(r_p).max() <= threshold
            and mu <= threshold
        ):
            status = CONVERGED
            break

    if status != CONVERGED:
        logger.warning(
            "QP stopped at the %d-iteration limit (stationarity %.2e, primal %.2e, gap %.2e)",
            max_iters,
            np.abs(r_d).max(),
            np.abs(r_p).max(),
            mu,
        )
    return QpSolution(
        z=z,
        duals=lam,
        slacks=t,
        status=status,
        iterations=iteration,
        stationarity=float(np.abs(r_d).max()),
        primal_residual=float(np.abs(r_p).max()),
        complementarity=mu,
        objective=qp.objective(z),
    )
