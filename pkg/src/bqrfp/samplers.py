"""Seeded random-variate generation for the Gibbs stages.

Streams are Philox generators keyed by ``(seed, stream_id)`` through
``numpy.random.SeedSequence``, so independent chains can be created without
coordinating state.
"""

from __future__ import annotations

import math

import numpy as np


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int | tuple[int, ...] = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream_id = stream_id
        key = stream_id if isinstance(stream_id, tuple) else (int(stream_id),)
        self._key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "RngStream":
        """Deterministic sub-stream; distinct keys give independent streams."""
        return RngStream(self.seed, self._key + tuple(int(k) for k in key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self._key})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{name} must be positive and finite")
    if np.any(~np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def _maybe_scalar(out, *params):
    return float(out) if all(np.ndim(p) == 0 for p in params) and np.ndim(out) == 0 else out


def _devroye_log_gig0(alpha: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Draw ``x`` with density proportional to ``exp(-alpha (cosh x - 1))``.

    This is the log of a GIG(0, alpha, alpha) variate. Devroye (2014),
    "Random variate generation for the generalized inverse Gaussian
    distribution", specialised to index zero where the target is symmetric.
    """

    def psi(x):
        return -alpha * (np.cosh(x) - 1.0)

    def dpsi(x):
        return -alpha * np.sinh(x)

    # psi is even at index zero, so the left and right breakpoints share one test value
    x1 = -psi(1.0)
    mid = (x1 >= 0.5) & (x1 <= 2.0)
    big = x1 > 2.0
    with np.errstate(divide="ignore"):
        t = np.where(mid, 1.0, np.where(big, np.sqrt(2.0 / alpha), np.log(4.0 / alpha)))
        s = np.where(
            mid,
            1.0,
            np.where(
                big,
                np.sqrt(4.0 / (alpha * math.cosh(1.0))),
                np.log(1.0 + 1.0 / alpha + np.sqrt(1.0 / alpha**2 + 2.0 / alpha)),
            ),
        )
    eta = -psi(t)
    zeta = -dpsi(t)
    theta = -psi(-s)
    xi = dpsi(-s)
    p = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd
    total = p + q + r

    out = np.empty_like(alpha)
    todo = np.arange(alpha.size)
    while todo.size:
        k = todo.size
        u, v, w = gen.random(k), gen.random(k), gen.random(k)
        a_q, a_r = q[todo] / total[todo], (q[todo] + r[todo]) / total[todo]
        with np.errstate(divide="ignore"):
            x = np.where(
                u < a_q,
                -sd[todo] + q[todo] * v,
                np.where(u < a_r, td[todo] - r[todo] * np.log(v), -sd[todo] + p[todo] * np.log(v)),
            )
        with np.errstate(over="ignore"):
            f1 = np.exp(-eta[todo] - zeta[todo] * (x - t[todo]))
            f2 = np.exp(-theta[todo] + xi[todo] * (x + s[todo]))
            env = np.where(x > td[todo], f1, np.where(x < -sd[todo], f2, 1.0))
            ok = w * env <= np.exp(-alpha[todo] * (np.cosh(x) - 1.0))
        ok &= np.isfinite(x)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def sample_gig(c, d, rng, size=None):
    """Draw from GIG(0, c, d), density proportional to ``v^-1 exp(-(c v + d / v) / 2)``.

    Uses ``V = sqrt(d / c) W`` with ``W ~ GIG(0, sqrt(cd), sqrt(cd))``.
    """
    c = _positive("c", c)
    d = _positive("d", d)
    gen = as_generator(rng)
    shape = np.broadcast_shapes(c.shape, d.shape) if size is None else tuple(np.atleast_1d(size))
    cb = np.broadcast_to(c, shape).ravel()
    db = np.broadcast_to(d, shape).ravel()
    omega = np.sqrt(cb * db)
    x = _devroye_log_gig0(omega, gen)
    out = (np.exp(x) * np.sqrt(db / cb)).reshape(shape)
    return _maybe_scalar(out, c, d) if size is None else out


def sample_gig_half(c, d, rng):
    """Draw from GIG(1/2, c, d), density proportional to ``v^-1/2 exp(-(c v + d / v) / 2)``.

    The reciprocal is inverse Gaussian with mean ``sqrt(c / d)`` and shape
    ``c``. When ``c d`` is negligible the law is Gamma(1/2, rate c/2).
    """
    c = _positive("c", c)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(~np.isfinite(d)):
        raise ValueError("d must be nonnegative and finite")
    gen = as_generator(rng)
    cb, db = np.broadcast_arrays(c, d)
    cb, db = cb.ravel(), db.ravel()
    out = np.empty(cb.shape)
    tiny = cb * db < 1e-14
    if np.any(tiny):
        out[tiny] = gen.gamma(0.5, 2.0 / cb[tiny])
    rest = ~tiny
    if np.any(rest):
        out[rest] = 1.0 / gen.wald(np.sqrt(cb[rest] / db[rest]), cb[rest])
    out = out.reshape(np.broadcast_shapes(np.shape(c), np.shape(d)))
    return _maybe_scalar(out, c, d)


def sample_inverse_gamma(shape, scale, rng, size=None):
    """Draw with density proportional to ``x^(-shape-1) exp(-scale / x)``."""
    shape = _positive("shape", shape)
    scale = _positive("scale", scale)
    gen = as_generator(rng)
    out = scale / gen.gamma(shape, 1.0, size=size)
    return _maybe_scalar(out, shape, scale) if size is None else out


def sample_exponential(rate, rng, size=None):
    rate = _positive("rate", rate)
    out = as_generator(rng).exponential(1.0 / rate, size=size)
    return _maybe_scalar(out, rate) if size is None else out


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def cholesky_or_raise(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # re-run the factorisation by hand to report where it breaks down
    n = cov.shape[0]
    L = np.zeros_like(cov)
    for j in range(n):
        piv = cov[j, j] - L[j, :j] @ L[j, :j]
        if not piv > 0:
            raise NotPositiveDefiniteError(f"matrix is not positive definite: pivot {j} is {piv:.3e}")
        L[j, j] = math.sqrt(piv)
        L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    raise NotPositiveDefiniteError("matrix is not positive definite")


def sample_mvn(mean, cov, rng, chol: np.ndarray | None = None) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = chol if chol is not None else cholesky_or_raise(np.atleast_2d(cov))
    z = as_generator(rng).standard_normal(mean.shape[0])
    return mean + L @ z
