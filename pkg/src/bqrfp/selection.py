"""Stage 3: importance re-weighting over inclusion indicators.

Given a latent-scale draw v, the marginal likelihood of a submodel gamma
(beta and sigma integrated out under the g-prior and p(sigma) ~ 1/sigma) is a
multivariate t with 2n degrees of freedom, location (1 - 2 tau) v and scale

    c * (V - g/(g+1) V B_g Sigma_v(gamma)^-1 B_g' V)^-1,   c = 4 sum(v) / (n theta2).

The prior over gamma is Beta-Bernoulli with a Beta(1/2, 1/2) inclusion rate.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from .ald import theta_constants, validate_tau
from .fp_basis import DesignMatrix
from .gibbs import GPriorSpec, PosteriorDraws, conditional_blocks
from .samplers import as_generator, sample_gig_half

log = logging.getLogger(__name__)

MAX_ENUMERATION_D = 20


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    steps: int = 1250
    burn_in: int = 500
    cutoff: float = 0.9
    restart_per_step: bool = False
    refresh_latent: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.burn_in < 0:
            raise ValueError("steps must be positive and burn_in nonnegative")
        if self.burn_in >= self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if not 0.0 <= self.cutoff <= 1.0:
            raise ValueError("cutoff must lie in [0, 1]")


@dataclass
class SelectionResult:
    mip: np.ndarray
    gamma_samples: np.ndarray
    model_posterior_table: dict[str, float]
    selected: list[str]
    column_labels: list[str]
    cutoff: float
    subsample: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def top_models(self, k: int = 10) -> list[tuple[str, float]]:
        return sorted(self.model_posterior_table.items(), key=lambda kv: (-kv[1], kv[0]))[:k]

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "mip": {lab: float(m) for lab, m in zip(self.column_labels, self.mip)},
            "selected": list(self.selected),
            "top_models": [
                {"gamma": pat, "included": [lab for lab, bit in zip(self.column_labels, pat) if bit == "1"],
                 "frequency": freq}
                for pat, freq in self.top_models(10)
            ],
            "n_samples": int(self.gamma_samples.shape[0]),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("column,mip,selected\n")
            for lab, m in zip(self.column_labels, self.mip):
                fh.write(f"{lab},{float(m)!r},{int(m >= self.cutoff)}\n")


def gamma_log_prior(gamma) -> float:
    """log p(gamma) after integrating a Beta(1/2, 1/2) inclusion probability (unnormalised)."""
    gamma = np.asarray(gamma, dtype=bool)
    k = int(gamma.sum())
    return float(betaln(k + 0.5, gamma.size - k + 0.5))


class _LatentStats:
    """Sufficient statistics of one latent-scale draw, shared by all submodels."""

    def __init__(self, y, B, v, tau, prior: GPriorSpec, sigma=None):
        tau = validate_tau(tau)
        v = np.asarray(v, dtype=float)
        if np.any(~(v > 0)):
            raise ValueError("latent scales must be positive")
        n = y.shape[0]
        inv_v = 1.0 / v
        e = y - (1.0 - 2.0 * tau) * v
        self.n = n
        self.S = B.T @ (inv_v[:, None] * B)
        self.b = B.T @ (inv_v * e)
        self.eVe = float(e @ (inv_v * e))
        self.shrink = prior.shrink
        self.log_g1 = math.log1p(prior.g)
        theta2 = theta_constants(tau).theta2
        denom = n if sigma is None else float(sigma)
        self.c = 4.0 * float(v.sum()) / (denom * theta2)
        self.sum_log_v = float(np.log(v).sum())
        self.zero_cols = np.diag(self.S) == 0.0
        nu = 2.0 * n
        self.nu = nu
        self.const = gammaln((nu + n) / 2.0) - gammaln(nu / 2.0) - 0.5 * n * math.log(nu * math.pi)

    def loglik(self, gamma) -> float:
        idx = np.flatnonzero(np.asarray(gamma, dtype=bool) & ~self.zero_cols)
        quad = self.eVe
        if idx.size:
            S = self.S[np.ix_(idx, idx)]
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                eps = 1e-10 * max(float(np.mean(np.diag(S))), 1.0)
                log.warning("submodel Sigma_v not positive definite; added ridge %.1e", eps)
                L = np.linalg.cholesky(S + eps * np.eye(idx.size))
            u = np.linalg.solve(L, self.b[idx])
            quad -= self.shrink * float(u @ u)
        log_det_scale = self.n * math.log(self.c) + self.sum_log_v + idx.size * self.log_g1
        n, nu = self.n, self.nu
        return float(self.const - 0.5 * log_det_scale - 0.5 * (nu + n) * math.log1p(quad / (self.c * nu)))


def _matrix(B):
    return B.values if isinstance(B, DesignMatrix) else np.asarray(B, dtype=float)


def marginal_loglik(y, v, gamma, B, tau, prior: GPriorSpec | None = None, sigma=None) -> float:
    """log p(y | gamma, v) under the 2n-df multivariate t.

    Columns of B_gamma that are identically zero are dropped first. Passing
    ``sigma`` replaces n by sigma in the scale constant (literal form).
    """
    prior = prior or GPriorSpec()
    y = np.asarray(y, dtype=float)
    stats = _LatentStats(y, _matrix(B), v, tau, prior, sigma)
    return stats.loglik(gamma)


def exact_enumeration(y, v, B, tau, prior: GPriorSpec | None = None) -> dict[tuple[int, ...], float]:
    """Normalised p(gamma | y, v) over all 2^D submodels."""
    prior = prior or GPriorSpec()
    Bm = _matrix(B)
    D = Bm.shape[1]
    if D > MAX_ENUMERATION_D:
        raise SelectionError(f"enumeration over 2^{D} models refused (limit D <= {MAX_ENUMERATION_D})")
    stats = _LatentStats(np.asarray(y, float), Bm, v, tau, prior)
    patterns = list(itertools.product((0, 1), repeat=D))
    logp = np.array([stats.loglik(p) + gamma_log_prior(p) for p in patterns])
    logp -= logp.max()
    prob = np.exp(logp)
    prob /= prob.sum()
    return dict(zip(patterns, prob.tolist()))


def enumeration_mip(probs: dict[tuple[int, ...], float]) -> np.ndarray:
    pats = np.array(list(probs.keys()), dtype=float)
    p = np.array(list(probs.values()))
    return p @ pats


def weighted_subsample(log_weights, size: int, rng) -> np.ndarray:
    """Indices drawn without replacement with probability proportional to the weights.

    Gumbel top-k keys; the returned order is the sequential draw order.
    """
    lw = np.asarray(log_weights, dtype=float)
    keys = lw + as_generator(rng).gumbel(size=lw.size)
    keys[~np.isfinite(lw)] = -np.inf
    order = np.argsort(-keys, kind="stable")
    return order[:size]


def _gibbs_scan(gamma, stats: _LatentStats, gen, cache):
    D = gamma.size
    for d in range(D):
        lp = []
        for bit in (0, 1):
            gamma[d] = bit
            key = gamma.tobytes()
            if key not in cache:
                cache[key] = stats.loglik(gamma) + gamma_log_prior(gamma)
            lp.append(cache[key])
        p1 = 1.0 / (1.0 + math.exp(min(lp[0] - lp[1], 700.0)))
        gamma[d] = gen.random() < p1
    return gamma


def refresh_latent(y, B, gamma, v, sigma, tau, prior: GPriorSpec, gen) -> np.ndarray:
    """One data-augmentation step for v under submodel ``gamma``.

    Draws beta_gamma | sigma, v, y and then v | beta_gamma, sigma, y, so the
    latent scales no longer carry the fit of excluded columns.
    """
    drift = 1.0 - 2.0 * tau
    w = tau * (1.0 - tau)
    cols = np.flatnonzero(gamma)
    if cols.size:
        Bg = B[:, cols]
        blk = conditional_blocks(y, Bg, v, drift, prior.shrink)
        beta = blk.beta_mean(prior.shrink) + math.sqrt(2.0 * sigma * prior.shrink) * np.linalg.solve(
            blk.L.T, gen.standard_normal(cols.size))
        fit = Bg @ beta
    else:
        fit = np.zeros_like(y)
    d = ((y - fit) ** 2 + fit**2 / prior.g) / (2.0 * sigma)
    return np.maximum(sample_gig_half((drift**2 + 4.0 * w) / (2.0 * sigma), d, gen), 1e-300)


def select(y, B, tau, draws: PosteriorDraws, prior: GPriorSpec | None = None,
           config: SelectionConfig | None = None, rng=None, t_scale: str = "derived") -> SelectionResult:
    """Marginal inclusion probabilities from importance-subsampled latent scales.

    ``steps`` latent draws are taken without replacement with probability
    proportional to the stage-2 importance weights. Each step performs one
    systematic single-site Gibbs scan over gamma given that draw; scans after
    ``burn_in`` are recorded. The gamma chain starts at the full model.

    With ``config.refresh_latent`` (default) the subsampled v is first
    refreshed under the current submodel, see :func:`refresh_latent`;
    otherwise the stage-2 v is used as is.
    """
    prior = prior or GPriorSpec()
    config = config or SelectionConfig()
    if t_scale not in ("derived", "paper"):
        raise ValueError(f"unknown t_scale {t_scale!r}")
    if draws.v is None:
        raise SelectionError("stage-2 draws were run without keeping latent scales")
    R = draws.R
    if config.steps > R:
        raise SelectionError(
            f"{config.steps} re-weighting steps requested but only {R} stage-2 draws kept; "
            "run a longer stage-2 chain or reduce the steps")
    Bm = _matrix(B)
    y = np.asarray(y, dtype=float)
    D = Bm.shape[1]
    labels = list(B.labels) if isinstance(B, DesignMatrix) else list(draws.column_labels)
    gen = as_generator(rng)
    idx = weighted_subsample(draws.log_weights, config.steps, gen)

    gamma = np.ones(D, dtype=np.int8)
    kept = []
    for s, r in enumerate(idx):
        if config.restart_per_step:
            gamma = np.ones(D, dtype=np.int8)
        v = draws.v[r]
        if config.refresh_latent:
            v = refresh_latent(y, Bm, gamma, v, float(draws.sigma[r]), tau, prior, gen)
        sigma = float(draws.sigma[r]) if t_scale == "paper" else None
        stats = _LatentStats(y, Bm, v, tau, prior, sigma)
        gamma = _gibbs_scan(gamma, stats, gen, {})
        if s >= config.burn_in:
            kept.append(gamma.copy())
    samples = np.array(kept, dtype=np.int8).reshape(-1, D)
    mip = samples.mean(axis=0)
    counts = Counter("".join(map(str, row)) for row in samples.tolist())
    table = {pat: cnt / samples.shape[0] for pat, cnt in counts.items()}
    selected = [lab for lab, m in zip(labels, mip) if m >= config.cutoff]
    return SelectionResult(mip, samples, table, selected, labels, config.cutoff, np.asarray(idx))
