"""Observation models for daily death counts under a log link.

Three count families are supported: Poisson, negative binomial in the
mean/size parameterisation (variance ``mu * (1 + mu / size)``) and the
type-1 zero-inflated negative binomial, which mixes a point mass at zero
with weight ``1 - pi`` and a negative binomial with weight ``pi``.

A Gaussian identity-link family is also provided. It is not a model for
counts; the inference engine uses it as an exactly solvable sanity case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

FAMILIES = ("poisson", "negbin", "zinb1", "gaussian")

#: curvature floor applied where the zero-inflated mixture is locally convex
CURVATURE_FLOOR = -1e-8


class LikelihoodError(ValueError):
    """Invalid observation-model parameters or data."""


@dataclass(frozen=True)
class ObservationModel:
    """Observation family plus its hyperparameters.

    ``size`` is the negative-binomial dispersion (required for ``negbin`` and
    ``zinb1``), ``zero_weight`` is the global mixing weight ``pi`` of the
    zero-inflated family and ``precision`` is the noise precision of the
    Gaussian sanity family.
    """

    family: str
    size: float | None = None
    zero_weight: float | None = None
    precision: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LikelihoodError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family in ("negbin", "zinb1"):
            if self.size is None or not np.isfinite(self.size) or self.size <= 0:
                raise LikelihoodError(f"{self.family} needs size > 0, got {self.size!r}")
        if self.family == "zinb1":
            pi = self.zero_weight
            if pi is None or not (0.0 < pi <= 1.0):
                raise LikelihoodError(f"zinb1 needs zero_weight in (0, 1], got {pi!r}")
        if self.family == "gaussian":
            if self.precision is None or self.precision <= 0:
                raise LikelihoodError("gaussian family needs precision > 0")


def _check_counts(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise LikelihoodError("counts must be non-negative integers")
    return y


def _nb_logpmf(y, mu, size):
    # s*log(s/(s+mu)) written via log1p so the size -> inf limit stays accurate
    return (
        gammaln(y + size)
        - gammaln(size)
        - gammaln(y + 1.0)
        - size * np.log1p(mu / size)
        + y * (np.log(mu) - np.log(size + mu))
    )


def log_pmf(y, mu, model: ObservationModel):
    """Log probability of ``y`` given mean ``mu`` (vectorised).

    For the Gaussian family ``mu`` is the mean and ``y`` may be real.
    """
    mu = np.asarray(mu, dtype=float)
    if model.family == "gaussian":
        y = np.asarray(y, dtype=float)
        tau = model.precision
        return 0.5 * np.log(tau / (2 * np.pi)) - 0.5 * tau * (y - mu) ** 2
    y = _check_counts(y)
    if np.any(~(mu > 0)) or np.any(~np.isfinite(mu)):
        raise LikelihoodError("mean must be finite and > 0")
    if model.family == "poisson":
        return y * np.log(mu) - mu - gammaln(y + 1.0)
    nb = _nb_logpmf(y, mu, model.size)
    if model.family == "negbin":
        return nb
    pi = model.zero_weight
    if pi == 1.0:
        return nb
    out = np.log(pi) + nb
    zero = y == 0
    if np.any(zero):
        # log[(1 - pi) + pi * NB(0)]
        out = np.where(zero, np.logaddexp(np.log1p(-pi), out), out)
    return out


def dloglik_deta(y, eta, offset, model: ObservationModel, clamp: bool = True):
    """First and second derivative of the log-likelihood in the linear predictor.

    The mean is ``mu = exp(eta + offset)``. With ``clamp`` the second
    derivative is capped at ``CURVATURE_FLOOR`` so Newton steps always see a
    negative-definite data term; the zero-inflated family can be locally
    convex at ``y = 0``.
    """
    y = np.asarray(y, dtype=float)
    lin = np.asarray(eta, dtype=float) + np.asarray(offset, dtype=float)
    if model.family == "gaussian":
        tau = model.precision
        d1 = tau * (y - lin)
        d2 = np.full_like(d1, -tau)
        return d1, d2
    mu = np.exp(lin)
    if model.family == "poisson":
        d1, d2 = y - mu, -mu
    else:
        s = model.size
        frac = mu / (s + mu)
        d1 = s * (y - mu) / (s + mu)
        d2 = -(y + s) * s * mu / (s + mu) ** 2
        if model.family == "zinb1" and model.zero_weight < 1.0:
            pi = model.zero_weight
            zero = y == 0
            # y = 0 branch: L = log(1 - pi + pi * p0), p0 = (s / (s + mu))**s
            g0 = -s * frac
            h0 = -s * s * mu / (s + mu) ** 2
            log_p0 = -s * np.log1p(mu / s)
            log_num = np.log(pi) + log_p0
            w = np.exp(log_num - np.logaddexp(np.log1p(-pi), log_num))
            d1 = np.where(zero, w * g0, d1)
            d2 = np.where(zero, w * h0 + w * (1.0 - w) * g0 * g0, d2)
    if clamp:
        d2 = np.minimum(d2, CURVATURE_FLOOR)
    return d1, d2


def nb_tail_bound(k: int, mu: float, size: float) -> float:
    """Upper bound on P(Y > k) for a negative binomial.

    Uses the ratio of consecutive probabilities, ``(j + size) / (j + 1) * q``
    with ``q = mu / (size + mu)``, bounded for all ``j >= k`` by a geometric
    series.
    """
    q = mu / (size + mu)
    r = q * max(1.0, (k + size) / (k + 1.0))
    if r >= 1.0:
        return np.inf
    pk = np.exp(_nb_logpmf(np.array(float(k)), np.array(mu), size))
    return float(pk * r / (1.0 - r))
