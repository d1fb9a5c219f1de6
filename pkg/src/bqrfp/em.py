"""Stage 1: EM iterations for the posterior modes of (beta, sigma).

Each iteration reweights rows by the inverse absolute residual, which makes
the beta-update a majorise-minimise step for the check loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ald import check_loss, theta_constants
from .fp_basis import DesignMatrix, rank_deficient_columns
from .samplers import RngStream, as_generator

log = logging.getLogger(__name__)


class EMError(RuntimeError):
    pass


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 1000
    replications: int = 2
    tol: float = 1e-6
    residual_floor: float = 1e-6
    sigma_update: str = "paper"  # "paper" or "fixed"
    drift: str = "consistent"  # "consistent" uses 1 - 2 tau, "theta1" the literal constant

    def __post_init__(self):
        if self.max_iters < 1 or self.replications < 1:
            raise ValueError("max_iters and replications must be positive")
        if not (self.tol > 0 and self.residual_floor > 0):
            raise ValueError("tol and residual_floor must be positive")
        if self.sigma_update not in ("paper", "fixed"):
            raise ValueError(f"unknown sigma_update {self.sigma_update!r}")
        if self.drift not in ("consistent", "theta1"):
            raise ValueError(f"unknown drift {self.drift!r}")


@dataclass
class EMState:
    beta: np.ndarray
    sigma: float
    iteration: int
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    pseudo_inverse: bool = False


def drift_coefficient(tau: float, mode: str) -> float:
    k = theta_constants(tau)
    return k.drift if mode == "consistent" else k.theta1


def _as_matrix(B) -> np.ndarray:
    return B.values if isinstance(B, DesignMatrix) else np.asarray(B, dtype=float)


def _weighted_solve(B, w, rhs, pinv_ok):
    A = B.T @ (w[:, None] * B)
    b = B.T @ (w * rhs)
    try:
        return np.linalg.solve(A, b), False
    except np.linalg.LinAlgError:
        if not pinv_ok:
            raise
        return np.linalg.pinv(A) @ b, True


def em_iterate(y, B, tau, beta0, sigma0, config: EMConfig, pinv_ok: bool = False) -> EMState:
    """Run EM from a given start. Objective trace holds the check loss after each beta-step."""
    c = drift_coefficient(tau, config.drift)
    n = y.shape[0]
    beta = np.array(beta0, dtype=float)
    sigma = float(sigma0)
    trace = [float(np.sum(check_loss(y - B @ beta, tau)))]
    state = EMState(beta, sigma, 0, trace)
    for q in range(1, config.max_iters + 1):
        r_old = y - B @ beta
        delta3 = np.maximum(np.abs(r_old), config.residual_floor)
        new_beta, used_pinv = _weighted_solve(B, 1.0 / delta3, y - c * delta3, pinv_ok)
        state.pseudo_inverse |= used_pinv
        if not np.all(np.isfinite(new_beta)):
            raise EMError(f"non-finite beta update at iteration {q}")
        r_new = y - B @ new_beta
        if config.sigma_update == "paper":
            delta2 = np.abs(r_old) + 2.0 * sigma
            num = delta2.sum() + np.sum(r_new**2 / delta3) - 2.0 * c * r_new.sum()
            new_sigma = num / (2.0 * (3 * n + 2))
            if not np.isfinite(new_sigma):
                raise EMError(f"non-finite sigma update at iteration {q}")
            if new_sigma <= 0:
                log.warning("EM sigma update %.3g <= 0 at iteration %d; keeping previous value", new_sigma, q)
                new_sigma = sigma
            sigma = float(new_sigma)
        step = np.max(np.abs(new_beta - beta)) if beta.size else 0.0
        beta = new_beta
        trace.append(float(np.sum(check_loss(r_new, tau))))
        state.iteration = q
        if step < config.tol:
            state.converged = True
            break
    state.beta, state.sigma = beta, sigma
    return state


def initial_values(y, B, tau):
    """Least-squares start and the mean check loss of that fit."""
    beta0, *_ = np.linalg.lstsq(B, y, rcond=None)
    sigma0 = float(np.mean(check_loss(y - B @ beta0, tau)))
    return beta0, max(sigma0, 1e-12)


def em_fit(y, B, tau, config: EMConfig | None = None, rng=None) -> EMState:
    """Posterior modes of (beta, sigma) by EM with perturbed restarts.

    The first replication starts from the least-squares fit; each further one
    multiplies that start componentwise by ``1 + U(-0.1, 0.1)``. The run with
    the lowest final check loss is returned.
    """
    config = config or EMConfig()
    y = np.asarray(y, dtype=float)
    Bm = _as_matrix(B)
    n, D = Bm.shape
    if n <= D:
        raise EMError(f"need more rows than columns, got n={n}, D={D}")
    bad = rank_deficient_columns(Bm)
    pinv_ok = False
    if bad:
        labels = B.labels if isinstance(B, DesignMatrix) else [str(j) for j in range(D)]
        log.warning("design is rank deficient (collinear columns: %s); using pseudo-inverse",
                    [labels[j] for j in bad])
        pinv_ok = True
    gen = as_generator(rng if rng is not None else RngStream(0))
    beta0, sigma0 = initial_values(y, Bm, tau)
    best = None
    for rep in range(config.replications):
        start = beta0 if rep == 0 else beta0 * (1.0 + gen.uniform(-0.1, 0.1, size=D))
        try:
            state = em_iterate(y, Bm, tau, start, sigma0, config, pinv_ok=pinv_ok)
        except np.linalg.LinAlgError as exc:
            raise EMError(f"singular weighted normal equations: {exc}") from exc
        if best is None or state.objective_trace[-1] < best.objective_trace[-1]:
            best = state
    return best
