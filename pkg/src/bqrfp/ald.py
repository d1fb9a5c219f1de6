"""Check loss, asymmetric Laplace densities and the normal scale-mixture form.

The ALD used throughout has location 0, scale ``sigma`` and skewness ``tau``::

    f(eps) = tau (1 - tau) / sigma * exp(-rho_tau(eps) / sigma)

and admits the mixture representation

    eps | v ~ N((1 - 2 tau) v, 2 sigma v),    v ~ Exp(rate = tau (1 - tau) / sigma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def validate_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


@dataclass(frozen=True)
class ALDConstants:
    """Quantile-level constants of the mixture representation.

    ``drift`` is the coefficient on the latent scale in the conditional mean of
    the response, ``1 - 2 tau``; ``theta1`` is the same quantity divided by
    ``tau (1 - tau)`` and is kept for the literal parameterisation.
    """

    tau: float
    theta1: float
    theta2: float
    drift: float

    def v_rate(self, sigma: float) -> float:
        """Rate of the exponential prior on each latent scale."""
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        return self.tau * (1.0 - self.tau) / sigma


def theta_constants(tau: float) -> ALDConstants:
    tau = validate_tau(tau)
    w = tau * (1.0 - tau)
    return ALDConstants(
        tau=tau,
        theta1=(1.0 - 2.0 * tau) / w,
        theta2=2.0 / w,
        drift=1.0 - 2.0 * tau,
    )


def check_loss(r, tau: float):
    """Koenker-Bassett check function, elementwise.

    Positive residuals are weighted by ``tau`` and negative ones by ``1 - tau``.
    """
    tau = validate_tau(tau)
    r = np.asarray(r, dtype=float)
    out = r * np.where(r >= 0, tau, tau - 1.0)
    return out if out.ndim else float(out)


def ald_logpdf(eps, sigma: float, tau: float):
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    tau = validate_tau(tau)
    return np.log(tau * (1.0 - tau) / sigma) - check_loss(eps, tau) / sigma


def smn_integrand_logpdf(eps, v, sigma: float, tau: float):
    """Log joint density of (eps, v) in the scale-mixture representation.

    Integrating ``exp`` of this over ``v in (0, inf)`` returns the ALD density.
    The ``tau (1 - tau)`` factor is the normalising constant of the
    exponential mixing law and is required for that identity to hold.
    """
    sigma = float(sigma)
    tau = validate_tau(tau)
    v = np.asarray(v, dtype=float)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if np.any(v <= 0):
        raise ValueError("latent scale v must be positive")
    w = tau * (1.0 - tau)
    out = (
        np.log(w)
        - 0.5 * np.log(4.0 * np.pi * sigma**3 * v)
        - (eps - (1.0 - 2.0 * tau) * v) ** 2 / (4.0 * sigma * v)
        - w * v / sigma
    )
    return out if np.ndim(out) else float(out)


def sample_ald(n: int, sigma: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ALD(0, sigma, tau) errors through the mixture representation."""
    tau = validate_tau(tau)
    rate = tau * (1.0 - tau) / sigma
    v = rng.exponential(1.0 / rate, size=n)
    z = rng.standard_normal(n)
    return (1.0 - 2.0 * tau) * v + np.sqrt(2.0 * sigma * v) * z
