"""Frequentist quantile regression with percentile-bootstrap intervals.

The point estimate minimises the check loss through iteratively reweighted
least squares on the smoothed loss

    f_delta(r) = sqrt(r^2 + delta^2) / 2 + (tau - 1/2) r,

with delta annealed towards zero, followed by a polish step that snaps to a
basic solution (one that interpolates D observations) when that lowers the
check loss.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ald import check_loss, validate_tau
from .fp_basis import DesignMatrix, rank_deficient_columns
from .samplers import RngStream, as_generator

log = logging.getLogger(__name__)

DELTA_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


class QRError(ValueError):
    pass


@dataclass
class FreqFit:
    beta_hat: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_boot: int
    objective: float
    column_labels: list[str] | None = None
    boot_draws: np.ndarray | None = None


def smoothed_objective(r, tau, delta) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.sum(0.5 * np.sqrt(r * r + delta * delta) + (tau - 0.5) * r))


def irls_step(y, B, beta, tau, delta):
    """One majorise-minimise step for the smoothed loss at fixed delta."""
    r = y - B @ beta
    s = np.sqrt(r * r + delta * delta)
    w = 1.0 / s
    A = B.T @ (w[:, None] * B)
    b = B.T @ (w * (y - (1.0 - 2.0 * tau) * s))
    return np.linalg.solve(A, b)


def _irls(y, B, tau, beta, max_iter=50, trace=None):
    for delta in DELTA_SCHEDULE:
        # no point resolving beta more finely than the current smoothing scale
        tol = 1e-10 if delta == DELTA_SCHEDULE[-1] else 0.1 * delta
        for _ in range(max_iter):
            new = irls_step(y, B, beta, tau, delta)
            if trace is not None:
                trace.append((delta, smoothed_objective(y - B @ new, tau, delta)))
            step = np.max(np.abs(new - beta))
            beta = new
            if step <= tol * (1.0 + np.max(np.abs(beta))):
                break
    return beta


def _basic_solution(y, B, rows):
    try:
        return np.linalg.solve(B[rows], y[rows])
    except np.linalg.LinAlgError:
        return None


def _polish(y, B, tau, beta, extra=0, rounds=5):
    """Try basic solutions through the rows with the smallest residuals.

    Repeats from the improved point until no candidate lowers the check loss.
    """
    D = B.shape[1]
    best, best_obj = beta, float(np.sum(check_loss(y - B @ beta, tau)))
    for _ in range(rounds):
        improved = False
        order = np.argsort(np.abs(y - B @ best), kind="stable")
        pool = order[: min(D + extra, y.shape[0])]
        for rows in itertools.combinations(pool, D):
            cand = _basic_solution(y, B, list(rows))
            if cand is None:
                continue
            obj = float(np.sum(check_loss(y - B @ cand, tau)))
            if obj < best_obj * (1.0 - 1e-15):
                best, best_obj, improved = cand, obj, True
        if not improved:
            break
    return best, best_obj


def _start(y, B):
    beta, *_ = np.linalg.lstsq(B, y, rcond=None)
    return beta


def _fit_point(y, B, tau, beta0=None, extra=0, max_iter=500):
    beta = _start(y, B) if beta0 is None else np.array(beta0, dtype=float)
    try:
        beta = _irls(y, B, tau, beta, max_iter)
    except np.linalg.LinAlgError:
        beta = _irls(y, B, tau, _start(y, B), max_iter)
    return _polish(y, B, tau, beta, extra)


def _boot_streams(rng, n_boot):
    if isinstance(rng, RngStream):
        return [rng.child(b).generator for b in range(n_boot)]
    seeds = as_generator(rng).integers(0, 2**63, size=n_boot)
    return [np.random.Generator(np.random.Philox(int(s))) for s in seeds]


def qr_fit(y, B, tau, n_boot: int = 1000, rng=None, jobs: int = 1) -> FreqFit:
    """Check-loss estimate with 95% percentile-bootstrap intervals.

    Each bootstrap replicate resamples rows with replacement on its own
    stream and is warm-started at the full-data estimate, so results do not
    depend on ``jobs``.
    """
    tau = validate_tau(tau)
    labels = list(B.labels) if isinstance(B, DesignMatrix) else None
    Bm = B.values if isinstance(B, DesignMatrix) else np.asarray(B, dtype=float)
    y = np.asarray(y, dtype=float)
    n, D = Bm.shape
    if n <= D:
        raise QRError(f"need more rows than columns, got n={n}, D={D}")
    bad = rank_deficient_columns(Bm)
    if bad:
        names = [labels[j] if labels else str(j) for j in bad]
        raise QRError(f"design is rank deficient; collinear columns: {names}")
    beta_hat, obj = _fit_point(y, Bm, tau, extra=2)

    draws = np.empty((0, D))
    if n_boot > 0:
        streams = _boot_streams(rng if rng is not None else RngStream(0), n_boot)

        def one(gen):
            idx = gen.integers(0, n, size=n)
            yb, Bb = y[idx], Bm[idx]
            try:
                return _fit_point(yb, Bb, tau, beta_hat, max_iter=50)[0]
            except np.linalg.LinAlgError:
                return np.full(D, np.nan)

        if jobs > 1:
            with ThreadPoolExecutor(jobs) as ex:
                draws = np.array(list(ex.map(one, streams)))
        else:
            draws = np.array([one(g) for g in streams])
        failed = int(np.sum(~np.all(np.isfinite(draws), axis=1)))
        if failed:
            log.warning("%d of %d bootstrap replicates had a singular design and were dropped", failed, n_boot)
            draws = draws[np.all(np.isfinite(draws), axis=1)]
    if draws.shape[0]:
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    else:
        lo = hi = np.full(D, math.nan)
    return FreqFit(beta_hat, lo, hi, int(n_boot), obj, labels, draws)

