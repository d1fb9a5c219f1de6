"""Stage 2: Gibbs sampling of (v, sigma, beta) under the quantile-specific g-prior.

Model, for one quantile level tau and w = tau (1 - tau)::

    y_i | beta, sigma, v_i ~ N(B_i beta + (1 - 2 tau) v_i, 2 sigma v_i)
    v_i | sigma           ~ Exp(rate = w / sigma)
    beta | sigma, v       ~ N(0, 2 sigma g Sigma_v^-1),   Sigma_v = B' V B,  V = diag(1 / v)
    p(sigma)              ~ 1 / sigma

Each sweep draws v | beta, sigma, then sigma | v with beta integrated out,
then beta | sigma, v. The g-prior enters the v-update through its quadratic
form only; the determinant |Sigma_v|^(1/2) is left out so the v-update
factorises over observations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .ald import theta_constants, validate_tau
from .em import EMState
from .fp_basis import DesignMatrix
from .samplers import as_generator, sample_gig, sample_gig_half

log = logging.getLogger(__name__)

_GIG_D_FLOOR = 1e-300


class GibbsError(RuntimeError):
    pass


@dataclass(frozen=True)
class GPriorSpec:
    g: float = 1000.0

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("g must be positive")

    @property
    def shrink(self) -> float:
        return self.g / (self.g + 1.0)


@dataclass(frozen=True)
class GibbsConfig:
    """Run lengths and update variant.

    ``variant="exact"`` uses the exact full conditionals of the model in the
    module docstring: GIG(1/2) latent scales and drift ``1 - 2 tau``.
    ``variant="paper"`` uses GIG(0) latent scales and drift ``theta1``.
    """

    iters: int = 5000
    burn_in: int = 2500
    thin: int = 1
    variant: str = "exact"
    keep_v: bool = True
    ridge: float = 1e-10

    def __post_init__(self):
        if self.iters < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("iters and thin must be positive, burn_in nonnegative")
        if self.burn_in >= self.iters:
            raise ValueError("burn_in must be smaller than iters")
        if self.variant not in ("exact", "paper"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def kept(self) -> int:
        return len(range(self.burn_in, self.iters, self.thin))


@dataclass
class PosteriorDraws:
    beta: np.ndarray
    sigma: np.ndarray
    v: np.ndarray | None
    log_weights: np.ndarray
    tau: float
    column_labels: list[str]
    excluded_weights: int = 0
    jitter_events: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return self.beta.shape[0]

    def normalized_weights(self) -> np.ndarray:
        lw = np.asarray(self.log_weights, dtype=float)
        finite = np.isfinite(lw)
        out = np.zeros_like(lw)
        if finite.any():
            z = lw[finite] - lw[finite].max()
            w = np.exp(z)
            out[finite] = w / w.sum()
        return out

    def weight_ess(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / np.sum(w**2))


def _as_matrix(B):
    return B.values if isinstance(B, DesignMatrix) else np.asarray(B, dtype=float)


def _labels(B, D):
    return list(B.labels) if isinstance(B, DesignMatrix) else [f"x{j}" for j in range(D)]


def _drift(tau, variant):
    k = theta_constants(tau)
    return k.drift if variant == "exact" else k.theta1


def _chol(S, ridge):
    """Cholesky of Sigma_v with a diagonal jitter fallback. Returns (L, jittered)."""
    try:
        return np.linalg.cholesky(S), False
    except np.linalg.LinAlgError:
        pass
    eps = ridge * max(float(np.mean(np.diag(S))), 1.0)
    for _ in range(6):
        try:
            L = np.linalg.cholesky(S + eps * np.eye(S.shape[0]))
            log.warning("Sigma_v numerically singular; added ridge %.1e", eps)
            return L, True
        except np.linalg.LinAlgError:
            eps *= 100.0
    raise GibbsError("Sigma_v is singular even after ridge jitter; check for collinear columns")


@dataclass
class _Blocks:
    """Quantities of the sigma and beta conditionals given v."""

    L: np.ndarray
    u: np.ndarray  # L^-1 B'V e
    quad: float  # e' V e - shrink * u'u
    sum_v: float
    jittered: bool

    def ig_scale(self, w):
        return 0.25 * self.quad + w * self.sum_v

    def beta_mean(self, shrink):
        return shrink * solve_triangular(self.L.T, self.u, lower=False)


def conditional_blocks(y, B, v, drift, shrink, ridge=1e-10) -> _Blocks:
    inv_v = 1.0 / v
    e = y - drift * v
    S = B.T @ (inv_v[:, None] * B)
    b = B.T @ (inv_v * e)
    L, jittered = _chol(S, ridge)
    u = solve_triangular(L, b, lower=True)
    quad = float(e @ (inv_v * e) - shrink * (u @ u))
    return _Blocks(L, u, quad, float(v.sum()), jittered)


def beta_conditional_mean(y, B, v, tau, prior: GPriorSpec, variant="exact"):
    """Mean of beta | sigma, v, y: shrink * Sigma_v^-1 B'V (y - drift v)."""
    B = _as_matrix(B)
    blk = conditional_blocks(np.asarray(y, float), B, np.asarray(v, float), _drift(tau, variant), prior.shrink)
    return blk.beta_mean(prior.shrink)


def log_importance_weight(beta, sigma, v, y, B, tau, prior: GPriorSpec, variant="exact") -> float:
    """log p(beta, sigma, v | y) - log p(beta | sigma, v, y) - log p(sigma | v, y) - log p(v).

    Defined up to an additive constant shared by all draws. p(v) is the
    product of exponential priors at rate tau (1 - tau) / sigma.
    """
    tau = validate_tau(tau)
    B = _as_matrix(B)
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    beta = np.atleast_1d(np.asarray(beta, float))
    n, D = B.shape
    w = tau * (1.0 - tau)
    drift = _drift(tau, variant)
    shrink = prior.shrink
    g = prior.g
    lam = w / sigma

    r = y - B @ beta
    loglik = np.sum(-0.5 * np.log(4.0 * math.pi * sigma * v) - (r - drift * v) ** 2 / (4.0 * sigma * v))
    log_pv = np.sum(math.log(lam) - lam * v)
    fit = B @ beta
    quad_prior = float(np.sum(fit**2 / v))
    log_pbeta = -0.5 * D * math.log(4.0 * math.pi * sigma * g) - quad_prior / (4.0 * sigma * g)
    log_joint = loglik + log_pv + log_pbeta - math.log(sigma)

    blk = conditional_blocks(y, B, v, drift, shrink)
    mean = blk.beta_mean(shrink)
    cov_scale = 2.0 * sigma * shrink
    z = blk.L.T @ (beta - mean) / math.sqrt(cov_scale)
    log_det_cov = D * math.log(cov_scale) - 2.0 * np.sum(np.log(np.diag(blk.L)))
    log_cond_beta = -0.5 * (D * math.log(2.0 * math.pi) + log_det_cov + z @ z)

    a = 1.5 * n
    scale = blk.ig_scale(w)
    log_cond_sigma = a * math.log(scale) - gammaln(a) - (a + 1.0) * math.log(sigma) - scale / sigma
    out = float(log_joint - log_cond_beta - log_cond_sigma - log_pv)
    return out


def gibbs_run(y, B, tau, prior: GPriorSpec | None = None, init: EMState | None = None,
              config: GibbsConfig | None = None, rng=None) -> PosteriorDraws:
    """Run the stage-2 sampler from the EM modes and return the kept draws."""
    prior = prior or GPriorSpec()
    config = config or GibbsConfig()
    tau = validate_tau(tau)
    labels = _labels(B, _as_matrix(B).shape[1])
    B = _as_matrix(B)
    y = np.asarray(y, dtype=float)
    n, D = B.shape
    if init is None:
        raise ValueError("gibbs_run needs the stage-1 EM state as its starting point")
    gen = as_generator(rng)
    w = tau * (1.0 - tau)
    drift = _drift(tau, config.variant)
    shrink = prior.shrink
    g = prior.g
    a_sigma = 1.5 * n

    beta = np.array(init.beta, dtype=float)
    sigma = float(init.sigma)
    R = config.kept
    out_beta = np.empty((R, D))
    out_sigma = np.empty(R)
    out_v = np.empty((R, n)) if config.keep_v else None
    out_lw = np.empty(R)
    excluded = 0
    jitters = 0
    k = 0
    for it in range(config.iters):
        fit = B @ beta
        r = y - fit
        d = (r**2 + fit**2 / g) / (2.0 * sigma)
        if config.variant == "exact":
            c = (drift**2 + 4.0 * w) / (2.0 * sigma)
            v = sample_gig_half(c, d, gen)
        else:
            v = sample_gig(1.0 / (2.0 * sigma), np.maximum(d, _GIG_D_FLOOR), gen)
        v = np.maximum(v, 1e-300)

        blk = conditional_blocks(y, B, v, drift, shrink, config.ridge)
        jitters += blk.jittered
        scale = blk.ig_scale(w)
        if not scale > 0:
            log.warning("non-positive inverse-gamma scale %.3g at iteration %d; clamped", scale, it)
            scale = max(w * blk.sum_v, 1e-300)
        sigma = scale / gen.gamma(a_sigma)
        mean = blk.beta_mean(shrink)
        z = gen.standard_normal(D)
        beta = mean + math.sqrt(2.0 * sigma * shrink) * solve_triangular(blk.L.T, z, lower=False)
        if not (np.all(np.isfinite(beta)) and math.isfinite(sigma)):
            raise GibbsError(f"non-finite state at iteration {it}")

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            out_beta[k] = beta
            out_sigma[k] = sigma
            if out_v is not None:
                out_v[k] = v
            try:
                lw = log_importance_weight(beta, sigma, v, y, B, tau, prior, config.variant)
            except (np.linalg.LinAlgError, GibbsError, ValueError):
                lw = float("nan")
            if not math.isfinite(lw):
                excluded += 1
                lw = -math.inf
            out_lw[k] = lw
            k += 1
    return PosteriorDraws(out_beta, out_sigma, out_v, out_lw, tau, labels, excluded, jitters)


def draws_to_csv(draws: PosteriorDraws, path) -> None:
    """One row per kept iteration: iteration, beta columns, sigma, log_weight."""
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["draw", *draws.column_labels, "sigma", "log_weight"])
        for i in range(draws.R):
            wr.writerow([i, *map(repr, draws.beta[i].tolist()), repr(float(draws.sigma[i])),
                         repr(float(draws.log_weights[i]))])


def save_draws_cache(draws: PosteriorDraws, path) -> None:
    arrays = dict(beta=draws.beta, sigma=draws.sigma, log_weights=draws.log_weights,
                  tau=np.array(draws.tau), labels=np.array(draws.column_labels),
                  counters=np.array([draws.excluded_weights, draws.jitter_events]))
    if draws.v is not None:
        arrays["v"] = draws.v
    np.savez_compressed(path, **arrays)


def load_draws_cache(path) -> PosteriorDraws:
    with np.load(path, allow_pickle=False) as z:
        v = z["v"] if "v" in z.files else None
        counters = z["counters"]
        return PosteriorDraws(z["beta"], z["sigma"], v, z["log_weights"], float(z["tau"]),
                              [str(s) for s in z["labels"]], int(counters[0]), int(counters[1]))
