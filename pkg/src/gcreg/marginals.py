"""Marginal response families for the Gaussian copula.

Each family maps observations to and from the latent standard-normal scale:
continuous responses through the normal-score transform, discrete responses
through the interval (lo, hi] of latent values compatible with the observed
category. Families are immutable; all operations are vectorized over `y` and
`eta` and safe for concurrent use.

Conventions: Gaussian has mean eta and variance theta; Bernoulli succeeds with
probability Phi(eta); ordinal categories are 1..C with cut-points theta and
P(y <= c) = Phi(theta_c - eta); binomial trials succeed with probability
{1+exp(eta)}^-1; the negative binomial has dispersion theta and mean
theta * {1+exp(eta)}^-1 (note: decreasing in eta, kept exactly as stated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DataError

__all__ = [
    "Family",
    "Gaussian",
    "BernoulliProbit",
    "OrdinalProbit",
    "BinomialLogit",
    "NegBinomialLogit",
    "make_family",
    "cdf",
    "log_density",
    "normal_score",
    "latent_bounds",
    "inverse_cdf",
    "phi_interval_prob",
    "log_phi_interval_prob",
    "cuts_to_log_increments",
    "log_increments_to_cuts",
]


def phi_interval_prob(lo, hi):
    """P(lo < Z <= hi) for standard normal Z, stable in both tails.

    When the interval sits in the right tail the difference is computed on
    survival functions so that near-1 cdf values never cancel.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    right = special.ndtr(np.where(np.isneginf(-lo), np.inf, -lo)) - special.ndtr(-hi)
    left = special.ndtr(hi) - special.ndtr(lo)
    return np.where(lo > 0.0, right, left)


def log_phi_interval_prob(lo, hi):
    """log P(lo < Z <= hi), usable even when the probability underflows.

    Works on log survival functions: with a = min tail bound in survival
    orientation, log(p) = log_ndtr(big) + log1p(-exp(log_ndtr(small) -
    log_ndtr(big))). Falls back to the direct difference in the bulk.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = phi_interval_prob(lo, hi)
    out = np.full(np.broadcast(lo, hi).shape, -np.inf)
    ok = p > 0.0
    np.log(p, out=out, where=ok)
    # Underflowed intervals: both endpoints deep in one tail. Reduce to the
    # right tail by symmetry and use log survival functions.
    bad = ~ok & (lo < hi)
    if np.any(bad):
        lo_b = np.where(bad, lo, 0.0)
        hi_b = np.where(bad, hi, 1.0)
        flip = lo_b + hi_b < 0.0
        a = np.where(flip, -hi_b, lo_b)  # lower bound in the right tail
        b = np.where(flip, -lo_b, hi_b)
        la = special.log_ndtr(-a)
        lb = special.log_ndtr(-b)
        with np.errstate(invalid="ignore"):
            val = la + np.log1p(-np.exp(np.minimum(lb - la, 0.0)))
        out = np.where(bad, val, out)
    return out


def _z_from_cdf_pair(prob, surv):
    """Standard-normal quantile of a probability supplied with its complement.

    Picks whichever representation keeps full relative precision, so latent
    bounds stay accurate arbitrarily deep in either tail.
    """
    prob = np.asarray(prob, dtype=float)
    surv = np.asarray(surv, dtype=float)
    with np.errstate(invalid="ignore"):
        z = np.where(prob <= 0.5, special.ndtri(prob), -special.ndtri(surv))
    z = np.where(prob <= 0.0, -np.inf, z)
    z = np.where(surv <= 0.0, np.inf, z)
    return z


def cuts_to_log_increments(cuts):
    """Map ordinal cut-points (theta_1, ..., theta_{C-1}) to the unconstrained
    vector (log(theta_2-theta_1), ..., log(theta_{C-1}-theta_{C-2}))."""
    cuts = np.asarray(cuts, dtype=float)
    return np.log(np.diff(cuts))


def log_increments_to_cuts(first_cut, log_increments):
    """Inverse of :func:`cuts_to_log_increments` given the fixed first cut."""
    incs = np.exp(np.asarray(log_increments, dtype=float))
    return np.concatenate([[first_cut], first_cut + np.cumsum(incs)])


@dataclass(frozen=True)
class Family:
    """Base class; concrete families implement the five operations below."""

    is_discrete: bool = field(init=False, default=True)

    def cdf(self, y, eta):
        raise NotImplementedError

    def log_density(self, y, eta):
        raise NotImplementedError

    def normal_score(self, y, eta):
        raise ValueError(f"normal_score is defined for continuous families, not {type(self).__name__}")

    def latent_bounds(self, y, eta):
        raise ValueError(f"latent_bounds is defined for discrete families, not {type(self).__name__}")

    def inverse_cdf(self, u, eta):
        raise NotImplementedError

    def _check_support(self, y):
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(Family):
    """Gaussian margin with mean eta and variance `variance`."""

    variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "is_discrete", False)
        if not self.variance > 0.0:
            raise ValueError(f"Gaussian variance must be positive, got {self.variance}")

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))

    def cdf(self, y, eta):
        return special.ndtr((np.asarray(y, dtype=float) - eta) / self.sd)

    def log_density(self, y, eta):
        r = (np.asarray(y, dtype=float) - eta) / self.sd
        return -0.5 * r * r - 0.5 * np.log(2.0 * np.pi) - np.log(self.sd)

    def normal_score(self, y, eta):
        return (np.asarray(y, dtype=float) - eta) / self.sd

    def inverse_cdf(self, u, eta):
        return eta + self.sd * special.ndtri(np.asarray(u, dtype=float))

    def _check_support(self, y):
        if not np.all(np.isfinite(y)):
            raise DataError("Gaussian response contains non-finite values")


@dataclass(frozen=True)
class BernoulliProbit(Family):
    """Bernoulli margin, success probability Phi(eta), support {0, 1}."""

    def cdf(self, y, eta):
        y = np.asarray(y)
        eta = np.asarray(eta, dtype=float)
        out = np.where(y >= 1, 1.0, special.ndtr(-eta))
        return np.where(y < 0, 0.0, out)

    def log_density(self, y, eta):
        y = np.asarray(y)
        eta = np.asarray(eta, dtype=float)
        return np.where(y >= 1, special.log_ndtr(eta), special.log_ndtr(-eta))

    def latent_bounds(self, y, eta):
        y = np.asarray(y)
        self._check_support(y)
        eta = np.broadcast_to(np.asarray(eta, dtype=float), y.shape)
        lo = np.where(y == 0, -np.inf, -eta)
        hi = np.where(y == 0, -eta, np.inf)
        return lo, hi

    def inverse_cdf(self, u, eta):
        z = special.ndtri(np.asarray(u, dtype=float))
        return (z > -np.asarray(eta, dtype=float)).astype(np.int64)

    def _check_support(self, y):
        if not np.all((y == 0) | (y == 1)):
            raise DataError("Bernoulli response must be 0/1")


@dataclass(frozen=True)
class OrdinalProbit(Family):
    """Ordinal margin with categories 1..C and P(y <= c) = Phi(theta_c - eta).

    `cuts` holds (theta_1, ..., theta_{C-1}), strictly increasing. The model
    fixes theta_1 = 0 for identifiability but the family itself accepts any
    first cut so the simulation generator can shift it.
    """

    cuts: tuple = ()

    def __post_init__(self):
        cuts = tuple(float(c) for c in np.atleast_1d(self.cuts))
        if len(cuts) < 1:
            raise ValueError("ordinal family needs at least one cut-point")
        if np.any(np.diff(cuts) <= 0.0):
            raise ValueError(f"ordinal cut-points must be strictly increasing, got {cuts}")
        object.__setattr__(self, "cuts", cuts)

    @property
    def n_categories(self) -> int:
        return len(self.cuts) + 1

    def _edges(self, eta):
        ## (..., C+1) array of latent tile edges -inf, theta_1-eta, ..., +inf
        eta = np.asarray(eta, dtype=float)
        cuts = np.array(self.cuts)
        edges = cuts - eta[..., None]
        pad = np.full(eta.shape + (1,), np.inf)
        return np.concatenate([-pad, edges, pad], axis=-1)

    def cdf(self, y, eta):
        lo, hi = self.latent_bounds(np.asarray(y), eta)
        return special.ndtr(hi)

    def log_density(self, y, eta):
        lo, hi = self.latent_bounds(np.asarray(y), eta)
        return log_phi_interval_prob(lo, hi)

    def latent_bounds(self, y, eta):
        y = np.asarray(y)
        self._check_support(y)
        edges = self._edges(np.broadcast_to(np.asarray(eta, dtype=float), y.shape))
        idx = y.astype(np.int64)
        lo = np.take_along_axis(edges, (idx - 1)[..., None], axis=-1)[..., 0]
        hi = np.take_along_axis(edges, idx[..., None], axis=-1)[..., 0]
        return lo, hi

    def inverse_cdf(self, u, eta):
        z = special.ndtri(np.asarray(u, dtype=float))
        eta = np.asarray(eta, dtype=float)
        cuts = np.array(self.cuts)
        return 1 + np.sum(z[..., None] > cuts - eta[..., None], axis=-1)

    def _check_support(self, y):
        if not np.all((y >= 1) & (y <= self.n_categories) & (y == np.floor(y))):
            raise DataError(f"ordinal response must lie in 1..{self.n_categories}")


@dataclass(frozen=True)
class BinomialLogit(Family):
    """Binomial margin with `trials` draws and success probability {1+e^eta}^-1."""

    trials: int = 1

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ValueError(f"binomial trial count must be >= 1, got {self.trials}")
        object.__setattr__(self, "trials", int(self.trials))

    def _p(self, eta):
        return special.expit(-np.asarray(eta, dtype=float))

    def _cdf_sf(self, y, eta):
        """cdf and survival function at integer y, both to full precision."""
        n = self.trials
        y = np.asarray(y, dtype=np.int64)
        p = np.broadcast_to(self._p(eta), y.shape)
        yc = np.clip(y, 0, n - 1)
        # F(y) = I_{1-p}(n-y, y+1), 1 - F(y) = I_p(y+1, n-y) for 0 <= y < n
        prob = special.betainc(n - yc, yc + 1.0, 1.0 - p)
        surv = special.betainc(yc + 1.0, n - yc, p)
        prob = np.where(y >= n, 1.0, np.where(y < 0, 0.0, prob))
        surv = np.where(y >= n, 0.0, np.where(y < 0, 1.0, surv))
        return prob, surv

    def cdf(self, y, eta):
        return self._cdf_sf(y, eta)[0]

    def log_density(self, y, eta):
        y = np.asarray(y, dtype=np.int64)
        n = self.trials
        eta = np.asarray(eta, dtype=float)
        # log C(n,y) + y log p + (n-y) log(1-p), with the log-probabilities
        # taken from the logistic form directly: log p = -softplus(eta).
        logcomb = special.gammaln(n + 1.0) - special.gammaln(y + 1.0) - special.gammaln(n - y + 1.0)
        log_p = -np.logaddexp(0.0, eta)
        log_q = -np.logaddexp(0.0, -eta)
        return logcomb + y * log_p + (n - y) * log_q

    def latent_bounds(self, y, eta):
        y = np.asarray(y)
        self._check_support(y)
        y = y.astype(np.int64)
        lo = _z_from_cdf_pair(*self._cdf_sf(y - 1, eta))
        hi = _z_from_cdf_pair(*self._cdf_sf(y, eta))
        return lo, hi

    def inverse_cdf(self, u, eta):
        from scipy import stats

        u = np.asarray(u, dtype=float)
        p = np.broadcast_to(self._p(eta), u.shape)
        y = stats.binom.ppf(u, self.trials, p).astype(np.int64)
        # enforce the "smallest y with cdf >= u" contract against our own cdf
        y = np.where(self.cdf(y, eta) < u, y + 1, y)
        too_far = (y > 0) & (self.cdf(y - 1, eta) >= u)
        y = np.where(too_far, y - 1, y)
        return np.clip(y, 0, self.trials)

    def _check_support(self, y):
        if not np.all((y >= 0) & (y <= self.trials) & (y == np.floor(y))):
            raise DataError(f"binomial response must lie in 0..{self.trials}")


@dataclass(frozen=True)
class NegBinomialLogit(Family):
    """Negative binomial margin with dispersion theta and mean theta*{1+e^eta}^-1.

    Equivalently a size-theta NB whose success probability is
    theta/(theta + mean); the cdf is evaluated through the regularized
    incomplete beta function rather than by summation.
    """

    dispersion: float = 1.0

    def __post_init__(self):
        if not self.dispersion > 0.0:
            raise ValueError(f"negative-binomial dispersion must be positive, got {self.dispersion}")

    def _q(self, eta):
        mu_over_theta = special.expit(-np.asarray(eta, dtype=float))
        return 1.0 / (1.0 + mu_over_theta)

    def _cdf_sf(self, y, eta):
        r = self.dispersion
        y = np.asarray(y, dtype=np.int64)
        q = np.broadcast_to(self._q(eta), y.shape)
        yc = np.maximum(y, 0)
        prob = special.betainc(r, yc + 1.0, q)
        surv = special.betainc(yc + 1.0, r, 1.0 - q)
        prob = np.where(y < 0, 0.0, prob)
        surv = np.where(y < 0, 1.0, surv)
        return prob, surv

    def cdf(self, y, eta):
        return self._cdf_sf(y, eta)[0]

    def log_density(self, y, eta):
        r = self.dispersion
        y = np.asarray(y, dtype=np.int64)
        q = np.broadcast_to(self._q(eta), y.shape)
        return (
            special.gammaln(y + r)
            - special.gammaln(r)
            - special.gammaln(y + 1.0)
            + r * np.log(q)
            + y * np.log1p(-q)
        )

    def latent_bounds(self, y, eta):
        y = np.asarray(y)
        self._check_support(y)
        y = y.astype(np.int64)
        lo = _z_from_cdf_pair(*self._cdf_sf(y - 1, eta))
        hi = _z_from_cdf_pair(*self._cdf_sf(y, eta))
        return lo, hi

    def inverse_cdf(self, u, eta):
        from scipy import stats

        u = np.asarray(u, dtype=float)
        q = np.broadcast_to(self._q(eta), u.shape)
        y = stats.nbinom.ppf(u, self.dispersion, q).astype(np.int64)
        y = np.where(self.cdf(y, eta) < u, y + 1, y)
        too_far = (y > 0) & (self.cdf(y - 1, eta) >= u)
        y = np.where(too_far, y - 1, y)
        return np.maximum(y, 0)

    def _check_support(self, y):
        if not np.all((y >= 0) & (y == np.floor(y))):
            raise DataError("negative-binomial response must be a non-negative integer")


_REGISTRY = {
    "gaussian": Gaussian,
    "bernoulli-probit": BernoulliProbit,
    "ordinal-probit": OrdinalProbit,
    "binomial-logit": BinomialLogit,
    "negbinomial-logit": NegBinomialLogit,
}

FAMILY_KINDS = tuple(_REGISTRY)


def make_family(kind: str, **params) -> Family:
    """Build a family from its registry name.

    Parameters
    ----------
    kind : str
        One of ``gaussian``, ``bernoulli-probit``, ``ordinal-probit``,
        ``binomial-logit``, ``negbinomial-logit``.
    **params
        Family parameters (``variance``, ``cuts``, ``trials``, ``dispersion``).
    """
    try:
        cls = _REGISTRY[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown family kind {kind!r}; known: {sorted(_REGISTRY)}") from None
    return cls(**params)


def cdf(family: Family, y, eta):
    """F(y; eta) for the given family, vectorized, exact 0/1 at support edges."""
    return family.cdf(y, eta)


def log_density(family: Family, y, eta):
    """Log density (continuous) or log mass (discrete) at y."""
    return family.log_density(y, eta)


def normal_score(family: Family, y, eta):
    """Latent value Phi^-1{F(y)}; continuous families only."""
    return family.normal_score(y, eta)


def latent_bounds(family: Family, y, eta):
    """Interval (lo, hi] of latent values compatible with discrete y."""
    return family.latent_bounds(y, eta)


def inverse_cdf(family: Family, u, eta):
    """Smallest support value with cdf >= u (exact quantile when continuous)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("inverse_cdf needs u strictly inside (0, 1)")
    return family.inverse_cdf(u, eta)
