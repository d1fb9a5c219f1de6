"""Posterior summaries and single-chain MCMC diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ChainSummary:
    mean: float
    ci95: tuple[float, float]
    ess: float
    acf: np.ndarray
    constant: bool = False


def _chain(x, min_len=1):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < min_len:
        raise ValueError(f"chain needs at least {min_len} draws, got {x.size}")
    return x


def acf(chain, max_lag: int = 50) -> np.ndarray:
    """Biased sample autocorrelations at lags 0..max_lag.

    Sums are formed with ``math.fsum`` so the result is the correctly rounded
    value and does not depend on summation order. A constant chain returns
    1 at lag 0 and zeros elsewhere.
    """
    x = _chain(chain, 2)
    R = x.size
    if not 0 <= max_lag < R:
        raise ValueError(f"max_lag must be in [0, {R - 1}]")
    d = x - math.fsum(x) / R
    c0 = math.fsum(d * d)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if c0 == 0.0:
        return out
    for k in range(1, max_lag + 1):
        out[k] = math.fsum(d[:-k] * d[k:]) / c0
    return out


def _acf_fft(x):
    R = x.size
    d = x - x.mean()
    nfft = 1 << (2 * R - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[:R]
    if not ac[0] > 0:  # variance underflowed
        return None
    return ac / ac[0]


def effective_sample_size(chain) -> float:
    """R / (1 + 2 sum_k rho_k), truncating at the first negative pair sum."""
    x = _chain(chain, 2)
    R = x.size
    if np.ptp(x) == 0:
        return float(R)
    rho = _acf_fft(x)
    if rho is None:
        return float(R)
    total = 1.0
    for m in range(1, (R - 1) // 2 + 1):
        pair = rho[2 * m - 1] + rho[2 * m]
        if pair < 0:
            break
        total += 2.0 * pair
    total = total if total > 0 else 1.0
    return float(min(R, R / total))


def summarize(chain, max_lag: int = 50) -> ChainSummary:
    x = _chain(chain, 10)
    lo, hi = np.quantile(x, [0.025, 0.975])
    constant = bool(np.ptp(x) == 0)
    return ChainSummary(
        mean=float(np.mean(x)),
        ci95=(float(lo), float(hi)),
        ess=effective_sample_size(x),
        acf=acf(x, min(max_lag, x.size - 1)),
        constant=constant,
    )


def mc_standard_error(chain) -> float:
    x = _chain(chain, 10)
    return float(np.std(x, ddof=1) / math.sqrt(effective_sample_size(x)))


def silverman_bandwidth(x) -> float:
    x = _chain(x, 1)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.quantile(x, [0.75, 0.25])
    iqr = (q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


@dataclass
class KDEResult:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    degenerate: bool


def kde(chain, grid) -> KDEResult:
    """Gaussian kernel density estimate at ``grid`` with Silverman's bandwidth.

    A zero-variance chain is flagged as degenerate and yields a zero density.
    """
    x = _chain(chain, 1)
    grid = np.asarray(grid, dtype=float)
    h = silverman_bandwidth(x)
    if not h > 0:
        return KDEResult(grid, np.zeros_like(grid), 0.0, True)
    dens = np.zeros_like(grid)
    # chunk over the chain to bound memory for long chains
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    return KDEResult(grid, dens, h, False)


def default_grid(chain, points: int = 256) -> np.ndarray:
    x = _chain(chain, 1)
    h = silverman_bandwidth(x) or 1.0
    return np.linspace(x.min() - 3 * h, x.max() + 3 * h, points)
