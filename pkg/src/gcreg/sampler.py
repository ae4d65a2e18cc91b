"""MCMC kernel over (B, Gamma, Theta, Ztilde, Sigma, R, G).

One sweep updates, for each response k: the (beta_k, gamma_k) pair through a
fixed-dimensional add/delete/swap proposal, the family parameters theta_k,
and the latent column ztilde_k; then the graph and the expanded covariance.

Two covariance update modes exist. The default ("mh") runs two
Metropolis-Hastings moves on an extended target whose marginal is the exact
posterior: a joint (graph, Sigma) edge-flip move followed by a Sigma refresh
under the accepted graph. Auxiliary inverse-gamma scale draws only shape the
hyper-inverse-Wishart proposals and cancel from the acceptance ratio, so both
moves stay exactly invariant with discrete margins, and in the fully
continuous case their acceptance probability collapses to 1 and the edge-flip
ratio to the marginalized-latent form. The alternative ("gibbs") is the
always-accept parameter-expanded draw; with discrete responses it carries a
small stationary bias (measurable under joint-distribution testing), which is
why it is not the default.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import special, stats

from .errors import ConfigError, NumericError
from . import marginals
from .graphs import (
    DecomposableGraph,
    HiwParams,
    hiw_log_density,
    log_graph_prior,
    log_marginal_latents,
    markov_logdet,
    markov_precision,
    propose_edge_flip,
    sample_hiw,
)
from .model import (
    Dataset,
    Hyperparams,
    ModelState,
    draw_latents_and_responses,
    init_state,
    log_prior_gamma,
    sample_prior_state,
    with_responses,
)

MARGINALIZABLE = (marginals.Gaussian, marginals.BernoulliProbit, marginals.OrdinalProbit)


def _log_uniform(rng: np.random.Generator) -> float:
    """log of a uniform draw, without the log(0) edge case."""
    return -rng.exponential()


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ChainConfig:
    """Run-length and tuning knobs for one chain.

    `cov_update` selects the covariance kernel: "mh" (exactly invariant,
    default) or "gibbs" (always-accept parameter expansion). Random-walk step
    sizes for theta updates start at `rw_step` and adapt toward `rw_target`
    acceptance during burn-in only, so the post-burn-in kernel is fixed.
    `check_every` controls how often state invariants are verified; it
    defaults to every sweep under __debug__ and every 100 sweeps otherwise.
    """

    iterations: int
    burnin: int
    thin: int = 1
    seed: int = 0
    cov_update: str = "mh"
    rw_step: float = 0.2
    rw_target: float = 0.35
    check_every: int = 0
    store_loglik: bool = True

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")
        # burn-in equal to the iteration count is allowed and yields an
        # empty trace (useful for adaptation-only runs)
        if not 0 <= self.burnin <= self.iterations:
            raise ConfigError(f"burn-in must lie in [0, iterations], got {self.burnin}")
        if self.thin < 1:
            raise ConfigError(f"thinning stride must be >= 1, got {self.thin}")
        if self.cov_update not in ("mh", "gibbs"):
            raise ConfigError(f"cov_update must be 'mh' or 'gibbs', got {self.cov_update!r}")
        if self.check_every < 0:
            raise ConfigError("check_every must be >= 0")

    def resolved_check_every(self) -> int:
        if self.check_every:
            return self.check_every
        return 1 if __debug__ else 100


# ---------------------------------------------------------------------------
# conditional moments


@dataclass(frozen=True)
class ConditionalMoments:
    """Moments of ztilde_k given the other latent columns.

    mu_cond is the n-vector of conditional means, sigma2_cond the common
    conditional variance 1/r^{kk}, and zeta the weighted cross-column sums
    sum_{l != k} r^{kl} ztilde_il so that mu_cond = -zeta * sigma2_cond.
    """

    mu_cond: np.ndarray
    sigma2_cond: float
    zeta: np.ndarray


def conditional_moments(R, Ztilde, k: int) -> ConditionalMoments:
    """Row-wise conditional moments of latent column k under correlation R."""
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    ek = np.zeros(m)
    ek[k] = 1.0
    try:
        col = np.linalg.solve(R, ek)  # k-th column of R^{-1}
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"correlation matrix is singular in column {k}") from exc
    rkk = col[k]
    if not rkk > 0:
        raise NumericError(f"nonpositive conditional precision {rkk} in column {k}")
    zeta = Ztilde @ col - rkk * Ztilde[:, k]
    s2 = 1.0 / rkk
    return ConditionalMoments(mu_cond=-zeta * s2, sigma2_cond=float(s2), zeta=zeta)


# ---------------------------------------------------------------------------
# predictor ranking


def _working_response(dataset: Dataset, k: int) -> np.ndarray:
    """Gaussian working response on observed rows: the response itself for
    continuous families, jittered normal scores for discrete ones."""
    obs = ~dataset.missing[:, k]
    y = dataset.Y[obs, k]
    if not dataset.families[k].is_discrete:
        return y
    jit = np.random.default_rng(900_000 + k)  # deterministic per column
    key = y + jit.uniform(0.0, 0.5, y.size)
    ranks = np.argsort(np.argsort(key))
    return special.ndtri((ranks + 0.5) / y.size)


def rank_predictors(dataset: Dataset, k: int) -> np.ndarray:
    """Selectable predictors ordered by marginal association, best first.

    Returns positions into the selectable-column subspace (confounders are
    excluded). Each predictor is scored by the two-sided p-value of its
    simple-regression slope against the working response; ties break by
    column index.
    """
    free_cols = np.flatnonzero(~dataset.confounders[k])
    obs = ~dataset.missing[:, k]
    w = _working_response(dataset, k)
    n = w.size
    pvals = np.ones(free_cols.size)
    if n > 2:
        wc = w - w.mean()
        ssw = float(wc @ wc)
        for t, j in enumerate(free_cols):
            x = dataset.X[k][obs, j]
            xc = x - x.mean()
            ssx = float(xc @ xc)
            if ssx <= 0.0 or ssw <= 0.0:
                continue
            slope = float(xc @ wc) / ssx
            rss = ssw - slope * slope * ssx
            if rss <= 0.0:
                pvals[t] = 0.0
                continue
            se = math.sqrt(rss / (n - 2) / ssx)
            pvals[t] = 2.0 * stats.t.sf(abs(slope) / se, n - 2)
    return np.lexsort((np.arange(free_cols.size), pvals))


# ---------------------------------------------------------------------------
# gamma proposal


def _add_pmf(n_excluded: int, q: float, rank_weights) -> np.ndarray:
    """Mixture pmf over excluded predictors listed in rank order."""
    t = np.arange(n_excluded, dtype=float)
    geo = np.power(1.0 - q, t) * q
    total = geo.sum()
    w_geo, w_unif = rank_weights
    return w_geo * geo / total + w_unif / n_excluded


def _move_probs_at(size: int, p: int, move_probs):
    """Renormalize (add, delete, swap) mass over the moves available at a
    model of `size` included predictors out of p."""
    can_add = size < p
    can_del = size > 0
    probs = np.array(move_probs, dtype=float)
    avail = np.array([can_add, can_del, can_add and can_del])
    probs = probs * avail
    tot = probs.sum()
    if tot <= 0.0:
        raise ConfigError("no gamma move is possible (p = 0?)")
    return probs / tot


def propose_gamma(gamma_free, ranking, a_k: float, b_k: float, move_probs,
                  rank_weights, rng: np.random.Generator):
    """Add/delete/swap proposal over the selectable predictors.

    gamma_free is a boolean vector over the selectable subspace; ranking is
    the best-first permutation from :func:`rank_predictors`. Returns
    (gamma_star, log_q_forward, log_q_reverse), where the proposal masses
    include the move-type probability (renormalized over the moves available
    at each endpoint) and, for add moves, the rank-mixture pmf.
    """
    g = np.asarray(gamma_free, dtype=bool)
    p = g.size
    if p == 0:
        raise ConfigError("propose_gamma needs at least one selectable predictor")
    size = int(g.sum())
    expected = p * a_k / (a_k + b_k)
    q = 1.0 / max(expected, 1.0)
    probs = _move_probs_at(size, p, move_probs)
    move = rng.choice(3, p=probs)

    rank_of = np.empty(p, dtype=int)
    rank_of[ranking] = np.arange(p)

    def excluded_in_rank_order(vec):
        ex = np.flatnonzero(~vec)
        return ex[np.argsort(rank_of[ex])]

    g_star = g.copy()
    if move == 0:  # add
        ex = excluded_in_rank_order(g)
        pmf = _add_pmf(ex.size, q, rank_weights)
        pick = rng.choice(ex.size, p=pmf)
        j = ex[pick]
        g_star[j] = True
        log_fwd = math.log(probs[0]) + math.log(pmf[pick])
        rev_probs = _move_probs_at(size + 1, p, move_probs)
        log_rev = math.log(rev_probs[1]) - math.log(size + 1)
    elif move == 1:  # delete
        inc = np.flatnonzero(g)
        j = inc[rng.integers(inc.size)]
        g_star[j] = False
        log_fwd = math.log(probs[1]) - math.log(inc.size)
        rev_probs = _move_probs_at(size - 1, p, move_probs)
        ex_star = excluded_in_rank_order(g_star)
        pmf = _add_pmf(ex_star.size, q, rank_weights)
        pos = int(np.flatnonzero(ex_star == j)[0])
        log_rev = math.log(rev_probs[0]) + math.log(pmf[pos])
    else:  # swap
        inc = np.flatnonzero(g)
        ex = np.flatnonzero(~g)
        j_out = inc[rng.integers(inc.size)]
        j_in = ex[rng.integers(ex.size)]
        g_star[j_out] = False
        g_star[j_in] = True
        log_fwd = math.log(probs[2]) - math.log(inc.size) - math.log(ex.size)
        log_rev = log_fwd  # counts match, availability unchanged
    return g_star, float(log_fwd), float(log_rev)


# ---------------------------------------------------------------------------
# conjugate coefficient machinery


class _ConjugateFit:
    """Gaussian conditional of the active coefficients given a working
    response: precision A = X'X/s2 + diag(1/prior_var), mean A^{-1} X'z/s2."""

    __slots__ = ("mean", "chol", "quad", "logdet", "log_pv_sum", "d")

    def __init__(self, X_act: np.ndarray, prior_var: np.ndarray,
                 z_center: np.ndarray, s2: float):
        d = X_act.shape[1]
        self.d = d
        self.log_pv_sum = float(np.log(prior_var).sum()) if d else 0.0
        if d == 0:
            self.mean = np.zeros(0)
            self.chol = np.zeros((0, 0))
            self.quad = 0.0
            self.logdet = 0.0
            return
        A = X_act.T @ X_act / s2 + np.diag(1.0 / prior_var)
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NumericError("conjugate precision is not positive definite") from exc
        b = X_act.T @ z_center / s2
        w = sla.solve_triangular(L, b, lower=True)
        self.quad = float(w @ w)
        self.mean = sla.solve_triangular(L.T, w, lower=False)
        self.chol = L
        self.logdet = 2.0 * float(np.log(np.diag(L)).sum())

    def score(self) -> float:
        """Coefficient-integrated model score; differences of these give the
        marginal-likelihood ratio between inclusion configurations."""
        return -0.5 * self.logdet - 0.5 * self.log_pv_sum + 0.5 * self.quad

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.d == 0:
            return np.zeros(0)
        eps = rng.standard_normal(self.d)
        return self.mean + sla.solve_triangular(self.chol.T, eps, lower=False)

    def logpdf(self, beta_act: np.ndarray) -> float:
        if self.d == 0:
            return 0.0
        r = self.chol.T @ (beta_act - self.mean)
        return float(0.5 * self.logdet - 0.5 * self.d * np.log(2.0 * np.pi)
                     - 0.5 * r @ r)


def _active_columns(dataset: Dataset, hyper: Hyperparams, k: int,
                    gamma_free: np.ndarray):
    """Active design columns (confounders plus selected predictors) and
    their prior variances, in design-column order."""
    conf = dataset.confounders[k]
    full = conf.copy()
    full[~conf] = gamma_free
    idx = np.flatnonzero(full)
    pv = np.where(conf[idx], hyper.confounder_prior_variance, hyper.v)
    return idx, pv


def propose_beta(dataset: Dataset, hyper: Hyperparams, k: int,
                 gamma_free: np.ndarray, z_k: np.ndarray,
                 moments: ConditionalMoments, sigma_k: float,
                 rng: np.random.Generator):
    """Draw active coefficients from their working-model conditional.

    z_k is the centered latent vector on the response scale (eta plus
    sigma_k times ztilde). Returns (beta_full, log_q_density) with zeros in
    the inactive positions.
    """
    fit = _conjugate_fit(dataset, hyper, k, gamma_free, z_k, moments, sigma_k)
    idx, _ = _active_columns(dataset, hyper, k, gamma_free)
    beta_act = fit.draw(rng)
    beta_full = np.zeros(dataset.p(k))
    beta_full[idx] = beta_act
    return beta_full, fit.logpdf(beta_act)


def _conjugate_fit(dataset, hyper, k, gamma_free, z_k, moments, sigma_k):
    idx, pv = _active_columns(dataset, hyper, k, gamma_free)
    z_center = z_k - sigma_k * moments.mu_cond
    s2 = sigma_k * sigma_k * moments.sigma2_cond
    return _ConjugateFit(dataset.X[k][:, idx], pv, z_center, s2)


def accept_marginalized(dataset: Dataset, hyper: Hyperparams, k: int,
                        gamma_free, gamma_star_free, z_k, moments,
                        sigma_k: float, log_q_fwd: float, log_q_rev: float) -> float:
    """Log acceptance ratio of a gamma move with coefficients integrated out.

    Valid only for families whose latent-scale truncation region is free of
    the linear predictor (Gaussian, binary probit, ordinal probit).
    """
    if not isinstance(dataset.families[k], MARGINALIZABLE):
        raise ValueError(
            f"implicit marginalization is not available for {type(dataset.families[k]).__name__}")
    cur = _conjugate_fit(dataset, hyper, k, gamma_free, z_k, moments, sigma_k)
    new = _conjugate_fit(dataset, hyper, k, gamma_star_free, z_k, moments, sigma_k)
    lp = log_prior_gamma(gamma_star_free, hyper.a[k], hyper.b[k]) \
        - log_prior_gamma(gamma_free, hyper.a[k], hyper.b[k])
    return float(new.score() - cur.score() + lp + log_q_rev - log_q_fwd)


# ---------------------------------------------------------------------------
# general-family acceptance


def _beta_log_prior_full(dataset, hyper, k, gamma_free, beta_full) -> float:
    idx, pv = _active_columns(dataset, hyper, k, gamma_free)
    act = beta_full[idx]
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * pv))
                 - 0.5 * np.sum(act * act / pv))


def _mass_working_rows(fam, dataset: Dataset, k: int, moments,
                       eta: np.ndarray):
    """Newton working response and weights for the interval-mass likelihood.

    Each observed cell contributes log P(ztilde in its bound interval) as a
    function of the linear predictor. Differencing that log mass gives a
    per-row gradient g and curvature H, so the move eta -> eta + g/H with
    weight H is one scored step toward the mass optimum. Rows whose mass is
    locally flat (missing cells, saturated tails) get a floor weight and a
    zero step, contributing nothing to the fit.

    Returns (r, w): working responses and positive weights, both length n.
    """
    r = eta.copy()
    w = np.full(dataset.n, 1e-4)
    obs = ~dataset.missing[:, k]
    if not obs.any():
        return r, w
    y = dataset.Y[obs, k]
    e = eta[obs]
    mu = moments.mu_cond[obs]
    sd = math.sqrt(moments.sigma2_cond)

    def logmass(shift):
        lo, hi = fam.latent_bounds(y, e + shift)
        return marginals.log_phi_interval_prob((lo - mu) / sd, (hi - mu) / sd)

    h = 1e-3
    l0 = logmass(0.0)
    lp = logmass(h)
    lm = logmass(-h)
    ok = np.isfinite(l0) & np.isfinite(lp) & np.isfinite(lm)
    grad = np.where(ok, (lp - lm) / (2.0 * h), 0.0)
    curv = np.where(ok, -(lp - 2.0 * l0 + lm) / (h * h), 0.0)
    curv = np.clip(curv, 1e-4, 1e4)
    step = np.clip(grad / curv, -8.0, 8.0)
    r[obs] = e + step
    w[obs] = curv
    return r, w


def _interval_loglik(dataset, k, family, eta, moments) -> float:
    """Sum over observed cells of log P(ztilde_k in its bound interval),
    with ztilde_k integrated against its row conditional."""
    obs = ~dataset.missing[:, k]
    if not obs.any():
        return 0.0
    lo, hi = family.latent_bounds(dataset.Y[obs, k], eta[obs])
    sd = math.sqrt(moments.sigma2_cond)
    mu = moments.mu_cond[obs]
    vals = marginals.log_phi_interval_prob((lo - mu) / sd, (hi - mu) / sd)
    return float(vals.sum())


def accept_general(dataset: Dataset, hyper: Hyperparams, state: ModelState, k: int,
                   gamma_star_free, beta_star_full, moments,
                   log_q_gamma: float, log_q_beta: float) -> float:
    """Log acceptance ratio of a joint (gamma, beta) move for any family.

    The latent column k is integrated against its row conditional, so the
    likelihood is a product of interval masses (discrete) or scaled normal
    densities (continuous). log_q_gamma and log_q_beta are the reverse minus
    forward proposal log densities. Returns -inf (auto-reject) when the
    proposal empties an observation's interval.
    """
    fam = state.families[k]
    gamma_free = state.free_gamma(dataset, k)
    eta_cur = state.linear_predictor(dataset, k)
    eta_new = dataset.X[k] @ beta_star_full
    if fam.is_discrete:
        ll_cur = _interval_loglik(dataset, k, fam, eta_cur, moments)
        ll_new = _interval_loglik(dataset, k, fam, eta_new, moments)
    else:
        obs = ~dataset.missing[:, k]
        sd2 = moments.sigma2_cond
        zc = fam.normal_score(dataset.Y[obs, k], eta_cur[obs])
        zn = fam.normal_score(dataset.Y[obs, k], eta_new[obs])
        mu = moments.mu_cond[obs]
        ll_cur = float(-0.5 * np.sum((zc - mu) ** 2) / sd2)
        ll_new = float(-0.5 * np.sum((zn - mu) ** 2) / sd2)
    if not np.isfinite(ll_new):
        return -np.inf
    lp_gamma = log_prior_gamma(gamma_star_free, hyper.a[k], hyper.b[k]) \
        - log_prior_gamma(gamma_free, hyper.a[k], hyper.b[k])
    lp_beta = _beta_log_prior_full(dataset, hyper, k, gamma_star_free, beta_star_full) \
        - _beta_log_prior_full(dataset, hyper, k, gamma_free, state.beta[k])
    return float(ll_new - ll_cur + lp_gamma + lp_beta + log_q_gamma + log_q_beta)


# ---------------------------------------------------------------------------
# family parameter updates


class _StepAdapter:
    """Robbins-Monro scale adaptation toward a target acceptance rate."""

    def __init__(self, step: float, target: float):
        self.step = step
        self.target = target
        self.t = 0

    def update(self, accepted: bool):
        self.t += 1
        gain = self.t ** -0.6
        self.step *= math.exp(gain * ((1.0 if accepted else 0.0) - self.target))
        self.step = min(max(self.step, 1e-3), 50.0)


def update_theta(state: ModelState, dataset: Dataset, hyper: Hyperparams, k: int,
                 moments: ConditionalMoments, rng: np.random.Generator,
                 step: float):
    """Random-walk update of the free family parameters of response k.

    Gaussian responses are a no-op (their variance moves with the
    covariance); so are binary and binomial families. Ordinal cut-point
    increments move on the log scale under a normal prior; the negative
    binomial dispersion moves on the log scale under its gamma prior. The
    latent column is integrated against its row conditional. Returns None
    for no-ops, else True/False for accept/reject.
    """
    fam = state.families[k]
    eta = state.linear_predictor(dataset, k)
    if isinstance(fam, marginals.OrdinalProbit):
        if fam.n_categories <= 2:
            return None
        cur = marginals.cuts_to_log_increments(fam.cuts)
        prop = cur + step * rng.standard_normal(cur.size)
        fam_new = marginals.OrdinalProbit(
            cuts=tuple(marginals.log_increments_to_cuts(fam.cuts[0], prop)))
        s2 = hyper.cut_prior_std ** 2
        log_prior = -0.5 * float(prop @ prop - cur @ cur) / s2
        ll = _interval_loglik(dataset, k, fam_new, eta, moments) \
            - _interval_loglik(dataset, k, fam, eta, moments)
        if _log_uniform(rng) < ll + log_prior:
            state.families[k] = fam_new
            return True
        return False
    if isinstance(fam, marginals.NegBinomialLogit):
        lam = math.log(fam.dispersion)
        lam_new = lam + step * rng.standard_normal()
        fam_new = marginals.NegBinomialLogit(dispersion=math.exp(lam_new))
        a, r = hyper.dispersion_prior_shape, hyper.dispersion_prior_rate
        log_prior = a * (lam_new - lam) - r * (math.exp(lam_new) - math.exp(lam))
        ll = _interval_loglik(dataset, k, fam_new, eta, moments) \
            - _interval_loglik(dataset, k, fam, eta, moments)
        if _log_uniform(rng) < ll + log_prior:
            state.families[k] = fam_new
            return True
        return False
    return None


# ---------------------------------------------------------------------------
# truncated normal sampling


def _upper_interval_draw(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-cdf draws from N(0,1) on (a, b] with 0 <= a < b, computed in
    log-survival space so arbitrarily remote intervals keep full precision."""
    la = special.log_ndtr(-a)
    lb = special.log_ndtr(-np.where(np.isfinite(b), b, np.inf))
    # survival mass fraction 1 - q(b)/q(a), stable even when the interval
    # carries almost all or almost none of the tail
    frac = -np.expm1(lb - la)
    s = la + np.log1p((u - 1.0) * frac)
    return -special.ndtri_exp(s)


def sample_truncated_normal(mu, sigma, lo, hi, rng: np.random.Generator):
    """Draws from N(mu, sigma^2) truncated to (lo, hi].

    Vectorized over broadcastable inputs. Intervals lying in a tail are
    inverted in log-survival space, which stays exact for intervals as
    remote as (10, 11) or far beyond; straddling intervals use plain
    cdf-space inversion.
    """
    mu, sigma, lo, hi = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (mu, sigma, lo, hi)))
    if np.any(lo >= hi):
        raise ValueError("truncation interval must satisfy lo < hi")
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    u = rng.random(a.shape)
    out = np.empty(a.shape)
    hi_tail = a >= 0.0
    lo_tail = (b <= 0.0) & ~hi_tail
    mid = ~(hi_tail | lo_tail)
    if hi_tail.any():
        out[hi_tail] = _upper_interval_draw(a[hi_tail], b[hi_tail], u[hi_tail])
    if lo_tail.any():
        out[lo_tail] = -_upper_interval_draw(-b[lo_tail], -a[lo_tail], 1.0 - u[lo_tail])
    if mid.any():
        pa = special.ndtr(a[mid])
        pb = special.ndtr(b[mid])
        p = pa + u[mid] * (pb - pa)
        out[mid] = special.ndtri(np.clip(p, 1e-300, 1.0 - 1e-16))
    y = mu + sigma * out
    lo_open = np.where(np.isfinite(lo), np.nextafter(lo, np.inf), lo)
    return np.minimum(np.maximum(y, lo_open), hi)


def update_latents(state: ModelState, dataset: Dataset, k: int,
                   moments: ConditionalMoments, rng: np.random.Generator) -> None:
    """Refresh latent column k: truncated row-conditional draws for observed
    discrete cells, untruncated draws for missing cells, exact normal scores
    for observed continuous cells."""
    fam = state.families[k]
    obs = ~dataset.missing[:, k]
    sd = math.sqrt(moments.sigma2_cond)
    col = state.Ztilde[:, k]
    miss = ~obs
    if miss.any():
        col[miss] = moments.mu_cond[miss] + sd * rng.standard_normal(int(miss.sum()))
    if obs.any():
        eta = state.linear_predictor(dataset, k)
        if fam.is_discrete:
            lo, hi = fam.latent_bounds(dataset.Y[obs, k], eta[obs])
            col[obs] = sample_truncated_normal(moments.mu_cond[obs], sd, lo, hi, rng)
        else:
            col[obs] = fam.normal_score(dataset.Y[obs, k], eta[obs])


# ---------------------------------------------------------------------------
# covariance and graph updates


def _free_cell_counts(dataset: Dataset) -> np.ndarray:
    """Number of latent cells per column that are free coordinates: all of a
    discrete column, only the missing cells of a continuous one."""
    out = np.empty(dataset.m)
    for k, fam in enumerate(dataset.families):
        out[k] = dataset.n if fam.is_discrete else int(dataset.missing[:, k].sum())
    return out


def _gaussian_residuals(state: ModelState, dataset: Dataset):
    """(y - eta) for observed continuous cells, keyed by column."""
    res = {}
    for k, fam in enumerate(state.families):
        if fam.is_discrete:
            continue
        obs = ~dataset.missing[:, k]
        res[k] = (obs, dataset.Y[obs, k] - state.linear_predictor(dataset, k)[obs])
    return res


def _expanded_latents(state: ModelState, dataset: Dataset, scales,
                      gauss_res) -> np.ndarray:
    """W matrix whose free cells are scaled latents and whose observed
    continuous cells are the fixed residuals y - eta."""
    W = state.Ztilde * np.asarray(scales)[None, :]
    for k, (obs, r) in gauss_res.items():
        W[obs, k] = r
    return W


def _aux_scale_draw(graph, R, m, rng) -> np.ndarray:
    """Auxiliary variances from the inverse-gamma refresh at the current
    graph-constrained precision diagonal."""
    rkk = np.diag(markov_precision(graph, R))
    return 0.5 * rkk / rng.gamma(0.5 * (m + 1.0), 1.0, m)


def _cov_log_kernel(graph, Sigma, W, ck, n) -> float:
    """Log extended-target kernel: HIW(2, I) density of Sigma, the Gaussian
    likelihood of the W rows, and the free-cell scale powers."""
    prior = hiw_log_density(graph, Sigma, HiwParams(2.0, np.eye(Sigma.shape[0])))
    K = markov_precision(graph, Sigma)
    lik = -0.5 * n * markov_logdet(graph, Sigma) - 0.5 * float(np.sum(K * (W.T @ W)))
    scales = 0.5 * float(ck @ np.log(np.diag(Sigma)))
    return prior + lik + scales


def _corr_from_cov(Sigma):
    d = np.sqrt(np.diag(Sigma))
    R = Sigma / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R, d


def _set_covariance(state: ModelState, dataset: Dataset, Sigma) -> None:
    """Install a new expanded covariance: sync R, continuous variances, and
    the deterministic continuous latents."""
    Sigma = 0.5 * (Sigma + Sigma.T)
    R, d = _corr_from_cov(Sigma)
    state.Sigma = Sigma
    state.R = R
    for k, fam in enumerate(state.families):
        if fam.is_discrete:
            continue
        state.families[k] = marginals.Gaussian(variance=float(Sigma[k, k]))
        obs = ~dataset.missing[:, k]
        eta = state.linear_predictor(dataset, k)
        state.Ztilde[obs, k] = state.families[k].normal_score(dataset.Y[obs, k], eta[obs])


def _cov_move_log_alpha(dataset, state, g0, s0, g1, s1, lam_u, lam_rev,
                        with_graph_prior: bool) -> float:
    """Pure acceptance log ratio of the extended-target covariance move.

    lam_u is the hyper-inverse-Wishart scale the proposal s1 was drawn with;
    lam_rev the scale of the mirrored proposal built at s1. With every
    response continuous and fully observed this reduces algebraically to 0
    when g1 == g0 and to the marginalized-latent graph ratio otherwise.
    """
    n = dataset.n
    ck = _free_cell_counts(dataset)
    gauss_res = _gaussian_residuals(state, dataset)
    W0 = _expanded_latents(state, dataset, np.sqrt(np.diag(s0)), gauss_res)
    W1 = _expanded_latents(state, dataset, np.sqrt(np.diag(s1)), gauss_res)
    log_alpha = (
        _cov_log_kernel(g1, s1, W1, ck, n)
        + hiw_log_density(g0, s0, HiwParams(2.0 + n, lam_rev))
        - _cov_log_kernel(g0, s0, W0, ck, n)
        - hiw_log_density(g1, s1, HiwParams(2.0 + n, lam_u))
    )
    if with_graph_prior:
        log_alpha += log_graph_prior(g1) - log_graph_prior(g0)
    return float(log_alpha)


def _exact_cov_move(state: ModelState, dataset: Dataset, rng, graph_star=None) -> bool:
    """One extended-target MH move; refreshes Sigma, optionally jointly with
    a graph flip. Exactly invariant for any mix of margins."""
    n, m = dataset.n, dataset.m
    gauss_res = _gaussian_residuals(state, dataset)
    g0, s0 = state.graph, state.Sigma
    g1 = graph_star if graph_star is not None else g0

    u = _aux_scale_draw(g0, state.R, m, rng)
    V = _expanded_latents(state, dataset, np.sqrt(u), gauss_res)
    lam_u = np.eye(m) + V.T @ V
    try:
        s1 = sample_hiw(g1, 2.0 + n, lam_u, rng)
    except np.linalg.LinAlgError as exc:
        raise NumericError("degenerate covariance proposal") from exc
    s1 = 0.5 * (s1 + s1.T)

    r1, _ = _corr_from_cov(s1)
    u_rev = _aux_scale_draw(g1, r1, m, rng)
    V_rev = _expanded_latents(state, dataset, np.sqrt(u_rev), gauss_res)
    lam_rev = np.eye(m) + V_rev.T @ V_rev

    log_alpha = _cov_move_log_alpha(dataset, state, g0, s0, g1, s1, lam_u,
                                    lam_rev, graph_star is not None)
    if _log_uniform(rng) < log_alpha:
        state.graph = g1
        _set_covariance(state, dataset, s1)
        return True
    return False


def update_graph(state: ModelState, dataset: Dataset, rng: np.random.Generator,
                 mode: str = "mh", wtilde=None) -> bool:
    """Single-edge graph move.

    In "mh" mode this is a joint (graph, Sigma) flip on the extended target;
    in "gibbs" mode it is the marginalized-latent flip that needs the W
    matrix built from this sweep's auxiliary scales. Proposals that break
    decomposability are rejected outright.
    """
    if state.graph.m < 2:
        return False
    adj_star, ok = propose_edge_flip(state.graph, rng)
    if not ok:
        return False
    g_star = DecomposableGraph.from_adjacency(adj_star)
    if mode == "mh":
        return _exact_cov_move(state, dataset, rng, graph_star=g_star)
    log_alpha = (
        log_graph_prior(g_star) + log_marginal_latents(g_star, wtilde)
        - log_graph_prior(state.graph) - log_marginal_latents(state.graph, wtilde)
    )
    if _log_uniform(rng) < log_alpha:
        state.graph = g_star
        return True
    return False


def update_covariance(state: ModelState, dataset: Dataset, rng: np.random.Generator,
                      mode: str = "mh", wtilde=None) -> bool:
    """Refresh the expanded covariance under the current graph.

    "mh" runs the exactly invariant refresh move. "gibbs" draws Sigma from
    its expanded-model conditional given the W matrix computed this sweep
    and always accepts; with discrete margins that approximation is biased,
    see the module docstring.
    """
    if mode == "mh":
        return _exact_cov_move(state, dataset, rng, graph_star=None)
    n, m = dataset.n, dataset.m
    try:
        Sigma = sample_hiw(state.graph, 2.0 + n, np.eye(m) + wtilde.T @ wtilde, rng)
    except np.linalg.LinAlgError as exc:
        raise NumericError("degenerate covariance scale") from exc
    _set_covariance(state, dataset, Sigma)
    return True


def update_covariance_block(state: ModelState, dataset: Dataset,
                            rng: np.random.Generator, mode: str = "mh"):
    """Graph update followed by covariance refresh, sharing auxiliary scales
    in gibbs mode. Returns (graph_accepted, cov_accepted)."""
    if mode == "mh":
        acc_g = update_graph(state, dataset, rng, mode="mh")
        acc_s = update_covariance(state, dataset, rng, mode="mh")
        return acc_g, acc_s
    scales = np.sqrt(_aux_scale_draw(state.graph, state.R, dataset.m, rng))
    for k, fam in enumerate(state.families):
        # continuous columns expand at their current model scale, not at an
        # auxiliary draw: their variance is a parameter, not a working one
        if not fam.is_discrete:
            scales[k] = math.sqrt(state.Sigma[k, k])
    W = _expanded_latents(state, dataset, scales,
                          _gaussian_residuals(state, dataset))
    acc_g = update_graph(state, dataset, rng, mode="gibbs", wtilde=W)
    update_covariance(state, dataset, rng, mode="gibbs", wtilde=W)
    # invert the expansion at the drawn covariance so the free latent cells
    # return to the unit scale of the new correlation matrix; without this
    # the working scales compound across sweeps and push R to singularity
    d_new = np.sqrt(np.diag(state.Sigma))
    for k, fam in enumerate(state.families):
        if fam.is_discrete:
            state.Ztilde[:, k] = W[:, k] / d_new[k]
        else:
            miss = dataset.missing[:, k]
            if miss.any():
                state.Ztilde[miss, k] = W[miss, k] / d_new[k]
    # the rescale can leave a discrete latent outside its truncation
    # interval, so refresh those columns from their full conditionals
    for k, fam in enumerate(state.families):
        if fam.is_discrete:
            update_latents(state, dataset, k,
                           conditional_moments(state.R, state.Ztilde, k), rng)
    return acc_g, True


# ---------------------------------------------------------------------------
# the sweep


class Kernel:
    """One chain's transition kernel with its frozen tuning state.

    Owns the predictor rankings (deterministic per dataset), the
    random-walk step adapters, and the acceptance counters. `adapt` is
    switched on during burn-in by :func:`run_chain` and must stay off when
    the exact kernel is required (it is off by default).
    """

    def __init__(self, dataset: Dataset, hyper: Hyperparams, config: ChainConfig):
        self.dataset = dataset
        self.hyper = hyper
        self.config = config
        self.rankings = [rank_predictors(dataset, k) for k in range(dataset.m)]
        self.steps = {k: _StepAdapter(config.rw_step, config.rw_target)
                      for k in range(dataset.m)}
        self.adapt = False
        self.counters = {
            "gamma_accept": np.zeros(dataset.m), "gamma_total": np.zeros(dataset.m),
            "theta_accept": np.zeros(dataset.m), "theta_total": np.zeros(dataset.m),
            "graph_accept": 0, "graph_total": 0,
            "cov_accept": 0, "cov_total": 0,
            "empty_interval_rejects": 0,
        }

    def _update_coefficients(self, state: ModelState, k: int,
                             moments: ConditionalMoments, rng) -> None:
        dataset, hyper = self.dataset, self.hyper
        conf = dataset.confounders[k]
        fam = state.families[k]
        gamma_free = state.free_gamma(dataset, k)
        has_free = gamma_free.size > 0
        sigma_k = 1.0 if fam.is_discrete else fam.sd

        if isinstance(fam, MARGINALIZABLE):
            # location-scale coordinates: hold z = eta + sigma * ztilde fixed
            eta = state.linear_predictor(dataset, k)
            z = eta + sigma_k * state.Ztilde[:, k]
            if has_free:
                g_star, lqf, lqr = propose_gamma(
                    gamma_free, self.rankings[k], hyper.a[k], hyper.b[k],
                    hyper.move_probs, hyper.rank_weights, rng)
                log_alpha = accept_marginalized(
                    dataset, hyper, k, gamma_free, g_star, z, moments, sigma_k,
                    lqf, lqr)
                self.counters["gamma_total"][k] += 1
                if _log_uniform(rng) < log_alpha:
                    gamma_free = g_star
                    self.counters["gamma_accept"][k] += 1
            # coefficient refresh from the exact conditional at the accepted
            # configuration
            beta_full, _ = propose_beta(dataset, hyper, k, gamma_free, z,
                                        moments, sigma_k, rng)
            state.gamma[k][~conf] = gamma_free
            state.beta[k] = beta_full
            eta_new = dataset.X[k] @ beta_full
            state.Ztilde[:, k] = (z - eta_new) / sigma_k
            return

        # general families: the latent column is integrated out, so the
        # target seen by this move is the interval-mass likelihood. The
        # proposal takes one Newton step on that likelihood: per-row working
        # responses and weights from the log-mass gradient and curvature
        # feed a conjugate Gaussian fit. Forward and reverse fits both
        # approximate the same optimum, so their densities largely cancel.
        eta = state.linear_predictor(dataset, k)
        r_fwd, w_rows = _mass_working_rows(fam, dataset, k, moments, eta)
        sw = np.sqrt(w_rows)
        if has_free:
            g_star, lqf_g, lqr_g = propose_gamma(
                gamma_free, self.rankings[k], hyper.a[k], hyper.b[k],
                hyper.move_probs, hyper.rank_weights, rng)
        else:
            g_star, lqf_g, lqr_g = gamma_free, 0.0, 0.0
        idx_new, pv_new = _active_columns(dataset, hyper, k, g_star)
        fit_fwd = _ConjugateFit(sw[:, None] * dataset.X[k][:, idx_new],
                                pv_new, sw * r_fwd, 1.0)
        beta_act = fit_fwd.draw(rng)
        lqf_b = fit_fwd.logpdf(beta_act)
        beta_star = np.zeros(dataset.p(k))
        beta_star[idx_new] = beta_act
        # reverse proposal rebuilds the Newton step at the proposal point
        eta_star = dataset.X[k] @ beta_star
        r_rev, w_rev = _mass_working_rows(fam, dataset, k, moments, eta_star)
        sw_rev = np.sqrt(w_rev)
        idx_cur, pv_cur = _active_columns(dataset, hyper, k, gamma_free)
        fit_rev = _ConjugateFit(sw_rev[:, None] * dataset.X[k][:, idx_cur],
                                pv_cur, sw_rev * r_rev, 1.0)
        lqr_b = fit_rev.logpdf(state.beta[k][idx_cur])
        log_alpha = accept_general(dataset, hyper, state, k, g_star, beta_star,
                                   moments, lqr_g - lqf_g, lqr_b - lqf_b)
        self.counters["gamma_total"][k] += 1
        if log_alpha == -np.inf:
            self.counters["empty_interval_rejects"] += 1
        if _log_uniform(rng) < log_alpha:
            state.gamma[k][~conf] = g_star
            state.beta[k] = beta_star
            self.counters["gamma_accept"][k] += 1

    def sweep(self, state: ModelState, rng: np.random.Generator) -> None:
        dataset, hyper = self.dataset, self.hyper
        for k in range(dataset.m):
            moments = conditional_moments(state.R, state.Ztilde, k)
            self._update_coefficients(state, k, moments, rng)
            fam = state.families[k]
            needs_theta = (isinstance(fam, marginals.OrdinalProbit) and fam.n_categories > 2) \
                or isinstance(fam, marginals.NegBinomialLogit)
            if needs_theta:
                acc = update_theta(state, dataset, hyper, k, moments, rng,
                                   self.steps[k].step)
                self.counters["theta_total"][k] += 1
                self.counters["theta_accept"][k] += acc
                if self.adapt:
                    self.steps[k].update(acc)
            update_latents(state, dataset, k, moments, rng)
        acc_g, acc_s = update_covariance_block(state, dataset, rng,
                                               mode=self.config.cov_update)
        self.counters["graph_total"] += 1
        self.counters["graph_accept"] += acc_g
        self.counters["cov_total"] += 1
        self.counters["cov_accept"] += acc_s

    def acceptance_rates(self) -> dict:
        """Acceptance fractions per move block; None where nothing was tried
        (keeps manifests valid strict JSON)."""
        c = self.counters

        def ratio(acc, total):
            return float(acc) / total if total > 0 else None

        return {
            "gamma": [ratio(a, t) for a, t in zip(c["gamma_accept"], c["gamma_total"])],
            "theta": [ratio(a, t) for a, t in zip(c["theta_accept"], c["theta_total"])],
            "graph": c["graph_accept"] / max(c["graph_total"], 1),
            "covariance": c["cov_accept"] / max(c["cov_total"], 1),
            "empty_interval_rejects": int(c["empty_interval_rejects"]),
        }


# ---------------------------------------------------------------------------
# pointwise log-likelihood


def pointwise_loglik(state: ModelState, dataset: Dataset) -> np.ndarray:
    """Per-observation log density of the observed cells given the rest of
    the state, latent column integrated against its row conditional. Missing
    cells contribute nothing."""
    out = np.zeros(dataset.n)
    for k in range(dataset.m):
        fam = state.families[k]
        obs = ~dataset.missing[:, k]
        if not obs.any():
            continue
        moments = conditional_moments(state.R, state.Ztilde, k)
        mu = moments.mu_cond[obs]
        sd = math.sqrt(moments.sigma2_cond)
        eta = state.linear_predictor(dataset, k)
        if fam.is_discrete:
            lo, hi = fam.latent_bounds(dataset.Y[obs, k], eta[obs])
            out[obs] += marginals.log_phi_interval_prob((lo - mu) / sd, (hi - mu) / sd)
        else:
            z = state.Ztilde[obs, k]
            out[obs] += (-0.5 * np.log(2.0 * np.pi * moments.sigma2_cond)
                         - 0.5 * (z - mu) ** 2 / moments.sigma2_cond
                         - np.log(fam.sd))
    return out


# ---------------------------------------------------------------------------
# trace


def _pair_order(m: int):
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


@dataclass
class Trace:
    """Thinned post-burn-in draws plus run metadata.

    beta/gamma/theta are per-response lists of (draws, width) arrays; corr
    and edges hold the off-diagonal entries of R and the graph adjacency in
    row-major pair order; delta holds sqrt(diag(Sigma)).
    """

    gamma: list
    beta: list
    theta: list
    corr: np.ndarray
    delta: np.ndarray
    edges: np.ndarray
    loglik: np.ndarray
    pairs: list
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.corr.shape[0]

    def save(self, out_dir) -> None:
        """One CSV per parameter block plus a JSON manifest."""
        import os

        os.makedirs(out_dir, exist_ok=True)

        def dump(name, mat, header):
            path = os.path.join(out_dir, name)
            np.savetxt(path, np.asarray(mat, dtype=float), delimiter=",",
                       header=",".join(header), comments="")

        m = len(self.gamma)
        g_cols = [f"g{k}_{j}" for k in range(m) for j in range(self.gamma[k].shape[1])]
        dump("gamma.csv", np.hstack(self.gamma), g_cols)
        b_cols = [f"b{k}_{j}" for k in range(m) for j in range(self.beta[k].shape[1])]
        dump("beta.csv", np.hstack(self.beta), b_cols)
        t_cols = [f"t{k}_{j}" for k in range(m) for j in range(self.theta[k].shape[1])]
        if t_cols:
            dump("theta.csv", np.hstack([t for t in self.theta if t.shape[1]]), t_cols)
        dump("corr.csv", self.corr, [f"r{i}_{j}" for i, j in self.pairs])
        dump("delta.csv", self.delta, [f"d{k}" for k in range(m)])
        dump("edges.csv", self.edges, [f"e{i}_{j}" for i, j in self.pairs])
        if self.loglik.size:
            dump("loglik.csv", self.loglik, [f"i{r}" for r in range(self.loglik.shape[1])])
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, default=str)


def config_hash(dataset: Dataset, hyper: Hyperparams, config: ChainConfig) -> str:
    payload = {
        "n": dataset.n, "m": dataset.m,
        "p": [dataset.p(k) for k in range(dataset.m)],
        "families": [type(f).__name__ for f in dataset.families],
        "hyper": {
            "a": hyper.a, "b": hyper.b, "v": hyper.v,
            "confounder_prior_variance": hyper.confounder_prior_variance,
            "cut_prior_std": hyper.cut_prior_std,
            "dispersion_prior": [hyper.dispersion_prior_shape, hyper.dispersion_prior_rate],
            "move_probs": hyper.move_probs, "rank_weights": hyper.rank_weights,
        },
        "chain": {
            "iterations": config.iterations, "burnin": config.burnin,
            "thin": config.thin, "seed": config.seed,
            "cov_update": config.cov_update, "rw_step": config.rw_step,
        },
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _read_trace_block(path):
    """(header names, data matrix) of one trace CSV, empty-safe."""
    import warnings

    with open(path, "r", encoding="utf-8") as fh:
        cols = fh.readline().strip().split(",")
    with warnings.catch_warnings():
        ## zero-width blocks (m = 1 has no correlation entries) save as
        ## blank lines that loadtxt reports as "no data"
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(cols)))
    return cols, data


def _split_by_response(cols, data, prefix, m):
    """Regroup a flat (draws, total) block into per-response arrays."""
    widths = [0] * m
    for name in cols:
        k = int(name[len(prefix):].split("_")[0])
        widths[k] += 1
    out, start = [], 0
    for k in range(m):
        out.append(data[:, start:start + widths[k]])
        start += widths[k]
    return out


def load_trace(trace_dir) -> Trace:
    """Rebuild a Trace from a directory written by :meth:`Trace.save`."""
    import os

    with open(os.path.join(trace_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)

    g_cols, g_data = _read_trace_block(os.path.join(trace_dir, "gamma.csv"))
    m = 1 + max(int(c[1:].split("_")[0]) for c in g_cols)
    gamma = _split_by_response(g_cols, g_data, "g", m)
    b_cols, b_data = _read_trace_block(os.path.join(trace_dir, "beta.csv"))
    beta = _split_by_response(b_cols, b_data, "b", m)

    draws = g_data.shape[0]
    theta_path = os.path.join(trace_dir, "theta.csv")
    if os.path.exists(theta_path):
        t_cols, t_data = _read_trace_block(theta_path)
        theta = _split_by_response(t_cols, t_data, "t", m)
    else:
        theta = [np.empty((draws, 0)) for _ in range(m)]

    c_cols, corr = _read_trace_block(os.path.join(trace_dir, "corr.csv"))
    pairs = [tuple(int(x) for x in c[1:].split("_")) for c in c_cols] if c_cols[0] else []
    if not pairs:
        corr = np.empty((draws, 0))
    _, delta = _read_trace_block(os.path.join(trace_dir, "delta.csv"))
    _, edges = _read_trace_block(os.path.join(trace_dir, "edges.csv"))
    if not pairs:
        edges = np.empty((draws, 0))

    ll_path = os.path.join(trace_dir, "loglik.csv")
    if os.path.exists(ll_path):
        _, loglik = _read_trace_block(ll_path)
    else:
        loglik = np.empty((draws, 0))

    return Trace(gamma=gamma, beta=beta, theta=theta, corr=corr, delta=delta,
                 edges=edges, loglik=loglik, pairs=pairs, meta=meta)


def run_chain(dataset: Dataset, hyper: Hyperparams, config: ChainConfig,
              dump_dir=None) -> Trace:
    """Run one chain and return its thinned trace.

    Deterministic given the seed. A numeric failure raises NumericError
    carrying the iteration index; when `dump_dir` is given the offending
    state is saved there first.
    """
    rng = np.random.default_rng(config.seed)
    state = init_state(dataset, hyper, rng)
    kernel = Kernel(dataset, hyper, config)
    m = dataset.m
    pairs = _pair_order(m)
    check_every = config.resolved_check_every()

    gamma_d, beta_d, theta_d = [[] for _ in range(m)], [[] for _ in range(m)], [[] for _ in range(m)]
    corr_d, delta_d, edge_d, loglik_d = [], [], [], []
    t0 = time.time()
    t = 0
    try:
        for t in range(config.iterations):
            kernel.adapt = t < config.burnin
            kernel.sweep(state, rng)
            if (t + 1) % check_every == 0:
                state.check_invariants(dataset)
            if t >= config.burnin and (t - config.burnin) % config.thin == 0:
                for k in range(m):
                    gamma_d[k].append(state.gamma[k].copy())
                    beta_d[k].append(state.beta[k].copy())
                    theta_d[k].append(_theta_vector(state.families[k]))
                corr_d.append([state.R[i, j] for i, j in pairs])
                delta_d.append(np.sqrt(np.diag(state.Sigma)))
                edge_d.append([state.graph.adjacency[i, j] for i, j in pairs])
                if config.store_loglik:
                    loglik_d.append(pointwise_loglik(state, dataset))
    except (NumericError, np.linalg.LinAlgError, AssertionError, ValueError) as exc:
        if dump_dir is not None:
            import os

            os.makedirs(dump_dir, exist_ok=True)
            np.savez(os.path.join(dump_dir, f"abort_state_iter{t}.npz"),
                     Ztilde=state.Ztilde, Sigma=state.Sigma, R=state.R,
                     adjacency=state.graph.adjacency,
                     **{f"beta{k}": state.beta[k] for k in range(m)},
                     **{f"gamma{k}": state.gamma[k] for k in range(m)})
        raise NumericError(f"chain aborted at iteration {t}: {exc}") from exc

    meta = {
        "seed": config.seed,
        "config_hash": config_hash(dataset, hyper, config),
        "iterations": config.iterations,
        "burnin": config.burnin,
        "thin": config.thin,
        "cov_update": config.cov_update,
        "n_draws": len(corr_d),
        "runtime_seconds": round(time.time() - t0, 3),
        "acceptance": kernel.acceptance_rates(),
        "families": [type(f).__name__ for f in dataset.families],
        "rw_steps": [kernel.steps[k].step for k in range(m)],
    }

    def stack(rows, width, dtype=float):
        if rows:
            return np.asarray(rows, dtype=dtype)
        return np.zeros((0, width), dtype=dtype)

    theta_width = [len(_theta_vector(f)) for f in state.families]
    return Trace(
        gamma=[stack(gamma_d[k], dataset.p(k), np.int8) for k in range(m)],
        beta=[stack(beta_d[k], dataset.p(k)) for k in range(m)],
        theta=[stack(theta_d[k], theta_width[k]) for k in range(m)],
        corr=stack(corr_d, len(pairs)),
        delta=stack(delta_d, m),
        edges=stack(edge_d, len(pairs), np.int8),
        loglik=stack(loglik_d, dataset.n),
        pairs=pairs,
        meta=meta,
    )


def _theta_vector(fam) -> np.ndarray:
    if isinstance(fam, marginals.Gaussian):
        return np.array([fam.variance])
    if isinstance(fam, marginals.OrdinalProbit):
        return np.array(fam.cuts)
    if isinstance(fam, marginals.NegBinomialLogit):
        return np.array([fam.dispersion])
    return np.zeros(0)


# ---------------------------------------------------------------------------
# joint-distribution (successive-conditional) testing harness


GEWEKE_STATS = ("size0", "size1", "beta", "r12", "edges")


def _geweke_stats(state: ModelState, dataset: Dataset) -> dict:
    free0 = state.free_gamma(dataset, 0)
    out = {
        "size0": float(free0.sum()),
        "size1": float(state.free_gamma(dataset, min(1, dataset.m - 1)).sum()),
        "edges": float(state.graph.edge_count),
        "r12": float(state.R[0, 1]) if dataset.m > 1 else 0.0,
    }
    free_cols = np.flatnonzero(~dataset.confounders[0])
    out["beta"] = float(state.beta[0][free_cols[0]]) if free_cols.size else 0.0
    return out


def geweke_streams(dataset: Dataset, hyper: Hyperparams, config: ChainConfig,
                   rounds: int, rng: np.random.Generator, record_every: int = 5):
    """Prior stream versus successive-conditional stream of model statistics.

    The successive-conditional sampler alternates one kernel sweep with a
    joint redraw of (latents, responses) given the parameters; if the kernel
    leaves the posterior invariant, both streams share the marginal law of
    every statistic. Returns (prior, chain) dicts of arrays; the chain
    stream is recorded every `record_every` rounds to blunt autocorrelation.
    """
    prior = {s: [] for s in GEWEKE_STATS}
    for _ in range(rounds):
        _, st = sample_prior_state(dataset, hyper, rng)
        snap = _geweke_stats(st, dataset)
        for s in GEWEKE_STATS:
            prior[s].append(snap[s])

    chain = {s: [] for s in GEWEKE_STATS}
    ds, state = sample_prior_state(dataset, hyper, rng)
    kernel = Kernel(ds, hyper, config)
    for r in range(rounds):
        kernel.sweep(state, rng)
        if (r + 1) % record_every == 0:
            snap = _geweke_stats(state, ds)
            for s in GEWEKE_STATS:
                chain[s].append(snap[s])
        ztil, Y = draw_latents_and_responses(ds, state.families, state.beta,
                                             state.R, rng)
        ds = with_responses(ds, Y)
        state.Ztilde = ztil
        # the proposal ranking is a deterministic function of the data, so
        # the kernel must track the redrawn responses
        kernel.dataset = ds
        kernel.rankings = [rank_predictors(ds, k) for k in range(ds.m)]
    return ({s: np.array(v) for s, v in prior.items()},
            {s: np.array(v) for s, v in chain.items()})


def geweke_pvalues(prior: dict, chain: dict) -> dict:
    """Two-sample rank-test p-values per statistic."""
    out = {}
    for s in GEWEKE_STATS:
        a, b = prior[s], chain[s]
        if np.ptp(a) == 0 and np.ptp(b) == 0 and (a[0] == b[0] if b.size else True):
            out[s] = 1.0
            continue
        out[s] = float(stats.mannwhitneyu(a, b, alternative="two-sided").pvalue)
    return out
