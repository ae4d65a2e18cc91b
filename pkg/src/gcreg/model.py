"""Data model, prior configuration, and chain state for the copula regression
sampler.

The sampler treats each response column through its marginal family
(:mod:`gcreg.marginals`) and couples columns through a correlation matrix that
is Markov with respect to a decomposable graph (:mod:`gcreg.graphs`). This
module holds everything that is not the MCMC kernel itself: the immutable
:class:`Dataset`, the prior knobs in :class:`Hyperparams`, the mutable
:class:`ModelState`, prior evaluations, and state construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DataError
from . import marginals
from .graphs import (
    DecomposableGraph,
    HiwParams,
    enumerate_decomposable,
    log_graph_prior,
    markov_precision,
    sample_hiw,
)


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class Dataset:
    """Immutable container for one regression problem.

    Parameters
    ----------
    Y : ndarray, shape (n, m)
        Responses as floats; missing cells are NaN.
    families : tuple of Family
        Marginal family per response column. Variable parameters (variances,
        cut-points, dispersions) stored here are placeholders only; the live
        values belong to :class:`ModelState`.
    X : tuple of ndarray
        Design matrix per response, shape (n, p_k). Entries may alias the
        same array when all responses share one design.
    confounders : tuple of ndarray
        Boolean mask per response marking columns that are always included
        (intercept and adjustment covariates). These columns never enter the
        selection prior or the ranking.
    missing : ndarray of bool, shape (n, m)
        Precomputed ``isnan(Y)``.

    Use :func:`build_dataset` rather than the raw constructor; it validates,
    imputes predictor gaps, and attaches the intercept.
    """

    Y: np.ndarray
    families: tuple
    X: tuple
    confounders: tuple
    missing: np.ndarray

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def p(self, k: int) -> int:
        """Total number of design columns for response k."""
        return self.X[k].shape[1]

    def n_free(self, k: int) -> int:
        """Number of selectable (non-confounder) columns for response k."""
        return int((~self.confounders[k]).sum())

    def observed(self, k: int) -> np.ndarray:
        """Observed values of response column k (1-d, NaNs dropped)."""
        col = self.Y[:, k]
        return col[~self.missing[:, k]]

    def intercept_index(self, k: int):
        """Index of an all-ones confounder column, or None."""
        xk = self.X[k]
        for j in np.flatnonzero(self.confounders[k]):
            if np.all(xk[:, j] == 1.0):
                return int(j)
        return None


def _as_matrix(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {out.shape}")
    return out


def _impute_columns(x: np.ndarray, name: str) -> np.ndarray:
    """Replace NaNs by the column median of the observed entries."""
    if not np.isnan(x).any():
        return x
    x = x.copy()
    for j in range(x.shape[1]):
        col = x[:, j]
        bad = np.isnan(col)
        if bad.all():
            raise DataError(f"column {j} of {name} has no observed values")
        col[bad] = np.median(col[~bad])
    return x


def build_dataset(Y, families, X, confounder_cols=(), add_intercept=True,
                  standardize=False) -> Dataset:
    """Assemble and validate a :class:`Dataset`.

    Parameters
    ----------
    Y : array_like, shape (n, m)
        Responses; NaN marks a missing cell.
    families : sequence of Family
        One marginal family per response column.
    X : array_like or sequence of array_like
        Either a single (n, p) design shared by every response or one design
        per response. NaN predictor cells are imputed by the column median.
    confounder_cols : sequence of int, or sequence of sequences
        Indices (into the supplied designs, before the intercept is added)
        of columns that are always included. A flat sequence applies to all
        responses.
    add_intercept : bool
        Prepend an all-ones confounder column to every design.
    standardize : bool
        Center and scale every non-confounder column to zero mean and unit
        variance. Never applied implicitly; generated designs are already
        standardized in distribution.
    """
    Y = _as_matrix(Y, "Y")
    families = tuple(f if isinstance(f, marginals.Family) else marginals.make_family(f)
                     for f in families)
    n, m = Y.shape
    if len(families) != m:
        raise DataError(f"{m} response columns but {len(families)} families")

    # one shared design (anything 2-d) versus one design per response
    try:
        arr = np.asarray(X, dtype=float)
        shared = arr.ndim <= 2
    except (ValueError, TypeError):
        shared = False
    designs = [X] * m if shared else list(X)
    if len(designs) != m:
        raise DataError(f"{m} response columns but {len(designs)} designs")

    # per-response confounder index lists
    if len(confounder_cols) > 0 and isinstance(confounder_cols[0], (list, tuple, np.ndarray)):
        conf_lists = [list(c) for c in confounder_cols]
        if len(conf_lists) != m:
            raise DataError("per-response confounder_cols must have one entry per response")
    else:
        conf_lists = [list(confounder_cols)] * m

    out_X, out_conf = [], []
    seen = {}
    for k in range(m):
        key = id(designs[k])
        if key in seen and conf_lists[k] == conf_lists[seen[key][0]]:
            # shared design object: reuse the processed array
            k0 = seen[key][0]
            out_X.append(out_X[k0])
            out_conf.append(out_conf[k0])
            continue
        xk = _impute_columns(_as_matrix(designs[k], f"X[{k}]"), f"X[{k}]")
        if xk.shape[0] != n:
            raise DataError(f"X[{k}] has {xk.shape[0]} rows, expected {n}")
        conf = np.zeros(xk.shape[1], dtype=bool)
        if conf_lists[k]:
            idx = np.asarray(conf_lists[k], dtype=int)
            if idx.min() < 0 or idx.max() >= xk.shape[1]:
                raise DataError(f"confounder index out of range for X[{k}]")
            conf[idx] = True
        if standardize:
            xk = xk.copy()
            for j in range(xk.shape[1]):
                sd = xk[:, j].std()
                if sd == 0.0:
                    if conf[j]:
                        continue
                    raise DataError(f"X[{k}] column {j} is constant and cannot be standardized")
                xk[:, j] = (xk[:, j] - xk[:, j].mean()) / sd
        if add_intercept:
            xk = np.hstack([np.ones((n, 1)), xk])
            conf = np.concatenate([[True], conf])
        xk.setflags(write=False)
        out_X.append(xk)
        out_conf.append(conf)
        seen[key] = (k,)

    missing = np.isnan(Y)
    if missing.all(axis=0).any():
        raise DataError("a response column is entirely missing")
    for k, fam in enumerate(families):
        obs = Y[~missing[:, k], k]
        fam._check_support(obs)

    Y = Y.copy()
    Y.setflags(write=False)
    missing.setflags(write=False)
    return Dataset(Y=Y, families=families, X=tuple(out_X),
                   confounders=tuple(out_conf), missing=missing)


def with_responses(dataset: Dataset, Y) -> Dataset:
    """New Dataset sharing designs with `dataset` but holding responses Y."""
    Y = np.asarray(Y, dtype=float).copy()
    if Y.shape != dataset.Y.shape:
        raise DataError(f"replacement Y has shape {Y.shape}, expected {dataset.Y.shape}")
    missing = np.isnan(Y)
    Y.setflags(write=False)
    missing.setflags(write=False)
    return dataclasses.replace(dataset, Y=Y, missing=missing)


def _read_csv_matrix(path) -> np.ndarray:
    """Read a CSV of floats; empty fields become NaN, one header row allowed."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    skip = 0
    for tok in first.strip().split(","):
        tok = tok.strip()
        if tok == "":
            continue
        try:
            float(tok)
        except ValueError:
            skip = 1
            break
    out = np.genfromtxt(path, delimiter=",", skip_header=skip, dtype=float)
    return _as_matrix(out, str(path))


def load_dataset(responses_path, predictor_paths, families, confounder_cols=(),
                 add_intercept=True, standardize=False) -> Dataset:
    """Build a Dataset from CSV files.

    `predictor_paths` is one path (shared design) or one per response.
    Missing cells are empty fields.
    """
    Y = _read_csv_matrix(responses_path)
    if isinstance(predictor_paths, (str, bytes)) or hasattr(predictor_paths, "__fspath__"):
        X = _read_csv_matrix(predictor_paths)
    else:
        X = [_read_csv_matrix(p) for p in predictor_paths]
    return build_dataset(Y, families, X, confounder_cols=confounder_cols,
                         add_intercept=add_intercept, standardize=standardize)


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class Hyperparams:
    """Prior configuration shared by all responses.

    Parameters
    ----------
    a, b : tuple of float
        Beta hyperparameters of the inclusion propensity, one pair per
        response; the propensity itself is integrated out.
    v : float
        Slab variance of active regression coefficients.
    confounder_prior_variance : float
        Prior variance of intercept and confounder coefficients (diffuse).
    cut_prior_std : float
        Prior standard deviation of the log cut-point increments for ordinal
        responses.
    dispersion_prior_shape, dispersion_prior_rate : float
        Gamma prior on the negative binomial dispersion.
    move_probs : tuple
        (add, delete, swap) proposal probabilities; mass is renormalized at
        boundary states over the moves that remain possible.
    rank_weights : tuple
        Mixture weights (truncated geometric, uniform) for add proposals.
    """

    a: tuple
    b: tuple
    v: float = 1.0
    confounder_prior_variance: float = 100.0
    cut_prior_std: float = 10.0
    dispersion_prior_shape: float = 2.0
    dispersion_prior_rate: float = 1.0
    move_probs: tuple = (0.45, 0.45, 0.10)
    rank_weights: tuple = (0.7, 0.3)

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in np.atleast_1d(self.a)))
        object.__setattr__(self, "b", tuple(float(x) for x in np.atleast_1d(self.b)))
        if len(self.a) != len(self.b):
            raise ConfigError("a and b must have equal length")
        if any(x <= 0 for x in self.a) or any(x <= 0 for x in self.b):
            raise ConfigError("beta hyperparameters must be positive")
        if not self.v > 0:
            raise ConfigError(f"slab variance must be positive, got {self.v}")
        if not self.confounder_prior_variance > 0:
            raise ConfigError("confounder prior variance must be positive")
        if not self.cut_prior_std > 0:
            raise ConfigError("cut prior std must be positive")
        if self.dispersion_prior_shape <= 0 or self.dispersion_prior_rate <= 0:
            raise ConfigError("dispersion prior parameters must be positive")
        mp = tuple(float(x) for x in self.move_probs)
        if len(mp) != 3 or min(mp) < 0 or abs(sum(mp) - 1.0) > 1e-12:
            raise ConfigError(f"move probabilities must be 3 nonnegative values summing to 1, got {mp}")
        object.__setattr__(self, "move_probs", mp)
        rw = tuple(float(x) for x in self.rank_weights)
        if len(rw) != 2 or min(rw) < 0 or abs(sum(rw) - 1.0) > 1e-12:
            raise ConfigError(f"rank weights must be 2 nonnegative values summing to 1, got {rw}")
        object.__setattr__(self, "rank_weights", rw)


def beta_binomial_moments(p: int, a: float, b: float):
    """Mean and variance of the beta-binomial model-size distribution."""
    s = a + b
    pi = a / s
    mean = p * pi
    var = p * pi * (1.0 - pi) * (1.0 + (p - 1.0) / (s + 1.0))
    return mean, var


def elicit_beta_hyperparams(expected_size: float, variance: float, p_k: int):
    """Invert beta-binomial moments to hyperparameters (a, b).

    Matches the prior mean and variance of the model size |gamma_k| over p_k
    selectable predictors. The variance of a beta-binomial strictly exceeds
    the binomial variance at the same mean, so `variance` must lie in the
    open interval (E(1 - E/p), p E(1 - E/p)); anything else (including the
    degenerate a = b -> infinity boundary) raises ConfigError reporting the
    feasible range.
    """
    p = int(p_k)
    if p < 2:
        raise ConfigError(f"elicitation needs at least 2 selectable predictors, got {p}")
    if not 0.0 < expected_size < p:
        raise ConfigError(f"expected model size must lie in (0, {p}), got {expected_size}")
    pi = expected_size / p
    floor = p * pi * (1.0 - pi)
    ceil = p * floor
    if not floor < variance < ceil:
        raise ConfigError(
            f"model-size variance {variance} is infeasible for mean {expected_size} "
            f"over {p} predictors; feasible range is ({floor:.6g}, {ceil:.6g}) exclusive"
        )
    over = variance / floor
    s = (p - over) / (over - 1.0)
    a = pi * s
    b = (1.0 - pi) * s
    mean_chk, var_chk = beta_binomial_moments(p, a, b)
    if abs(mean_chk - expected_size) > 1e-8 or abs(var_chk - variance) > 1e-8:
        raise ConfigError("moment matching failed to converge")  # pragma: no cover
    return float(a), float(b)


def elicited_hyperparams(dataset: Dataset, expected_size: float, variance: float,
                         **kwargs) -> Hyperparams:
    """Hyperparams with every response's (a_k, b_k) matched to the same
    model-size mean and variance."""
    pairs = [elicit_beta_hyperparams(expected_size, variance, dataset.n_free(k))
             for k in range(dataset.m)]
    return Hyperparams(a=tuple(x[0] for x in pairs), b=tuple(x[1] for x in pairs), **kwargs)


# ---------------------------------------------------------------------------
# priors


def log_prior_gamma(gamma_k, a_k: float, b_k: float) -> float:
    """Log prior mass of one inclusion configuration over the selectable
    predictors, with the Beta(a, b) propensity integrated out.

    Depends on gamma_k only through its size, so it is exchangeable across
    predictor labels. `gamma_k` must cover selectable columns only.
    """
    g = np.asarray(gamma_k, dtype=bool)
    p = g.size
    s = int(g.sum())
    return float(special.betaln(a_k + s, b_k + p - s) - special.betaln(a_k, b_k))


def log_prior_beta(beta_k, gamma_k, v: float) -> float:
    """Log density of the active coefficients under the N(0, v) slab.

    beta_k and gamma_k cover the selectable columns; coefficients must be
    exactly zero wherever gamma is off.
    """
    beta_k = np.asarray(beta_k, dtype=float)
    g = np.asarray(gamma_k, dtype=bool)
    if beta_k.shape != g.shape:
        raise ValueError(f"beta shape {beta_k.shape} does not match gamma shape {g.shape}")
    if np.any(beta_k[~g] != 0.0):
        raise ValueError("nonzero coefficient outside the support of gamma")
    act = beta_k[g]
    return float(-0.5 * act.size * np.log(2.0 * np.pi * v) - 0.5 * np.dot(act, act) / v)


# ---------------------------------------------------------------------------
# model state


@dataclass
class ModelState:
    """Mutable state of one chain.

    Attributes
    ----------
    beta : list of ndarray
        Full-length coefficient vector per response (confounders included,
        exact zeros where gamma is off).
    gamma : list of ndarray
        Boolean inclusion vector per response; confounder entries stay True.
    families : list of Family
        Live marginal families carrying the current variance, cut-point, and
        dispersion values.
    Ztilde : ndarray, shape (n, m)
        Latent normal scores, marginally N(0, 1).
    Sigma : ndarray, shape (m, m)
        Expanded covariance; its diagonal carries the Gaussian variances and
        the auxiliary scales of the discrete columns.
    R : ndarray
        Correlation matrix of Sigma; Markov with respect to `graph`.
    graph : DecomposableGraph
    """

    beta: list
    gamma: list
    families: list
    Ztilde: np.ndarray
    Sigma: np.ndarray
    R: np.ndarray
    graph: DecomposableGraph

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def delta(self) -> np.ndarray:
        """Scales delta_k = sqrt(Sigma_kk) of the expanded covariance."""
        return np.sqrt(np.diag(self.Sigma))

    def margin_scales(self) -> np.ndarray:
        """Marginal latent scales sigma_k: sqrt(theta_k) for continuous
        responses, 1 for discrete ones."""
        out = np.ones(self.m)
        for k, fam in enumerate(self.families):
            if not fam.is_discrete:
                out[k] = fam.sd
        return out

    def linear_predictor(self, dataset: Dataset, k: int) -> np.ndarray:
        return dataset.X[k] @ self.beta[k]

    def free_gamma(self, dataset: Dataset, k: int) -> np.ndarray:
        return self.gamma[k][~dataset.confounders[k]]

    def copy(self) -> "ModelState":
        return ModelState(
            beta=[b.copy() for b in self.beta],
            gamma=[g.copy() for g in self.gamma],
            families=list(self.families),
            Ztilde=self.Ztilde.copy(),
            Sigma=self.Sigma.copy(),
            R=self.R.copy(),
            graph=self.graph,
        )

    def check_invariants(self, dataset: Dataset, tol: float = 1e-8) -> None:
        """Raise AssertionError if any structural invariant is violated.

        The sampler calls this every sweep under __debug__ and every 100
        sweeps otherwise.
        """
        m = self.m
        assert self.Sigma.shape == (m, m) and self.R.shape == (m, m)
        d = self.delta
        assert np.all(d > 0), "Sigma diagonal must be positive"
        assert np.allclose(np.diag(self.R), 1.0, atol=1e-12), "R must have unit diagonal"
        recon = self.R * np.outer(d, d)
        assert np.max(np.abs(recon - self.Sigma)) <= 1e-10, "Sigma != D R D"
        np.linalg.cholesky(self.R)
        kprec = markov_precision(self.graph, self.R)
        assert np.max(np.abs(kprec @ self.R - np.eye(m))) <= tol, \
            "R is not Markov with respect to the graph"
        for k in range(m):
            fam = self.families[k]
            g = self.gamma[k]
            assert g[dataset.confounders[k]].all(), "confounder gamma must stay on"
            assert np.all(self.beta[k][~g] == 0.0), "beta must vanish off support"
            if not fam.is_discrete:
                assert abs(fam.variance - self.Sigma[k, k]) <= 1e-10, \
                    "continuous variance out of sync with Sigma"
                obs = ~dataset.missing[:, k]
                eta = self.linear_predictor(dataset, k)
                want = fam.normal_score(dataset.Y[obs, k], eta[obs])
                assert np.max(np.abs(self.Ztilde[obs, k] - want), initial=0.0) <= tol, \
                    "continuous latents out of sync with their normal scores"
            else:
                obs = ~dataset.missing[:, k]
                if obs.any():
                    eta = self.linear_predictor(dataset, k)
                    lo, hi = fam.latent_bounds(dataset.Y[obs, k], eta[obs])
                    z = self.Ztilde[obs, k]
                    assert np.all((z > lo) & (z <= hi)), "discrete latent outside its bounds"


# ---------------------------------------------------------------------------
# initialization


def _empirical_cuts(y_obs: np.ndarray, n_categories: int):
    """First-cut and remaining cut-points from smoothed category frequencies.

    Returns (shift, cuts) where `cuts` has first element 0 and `shift` is the
    linear-predictor offset that reproduces the empirical cumulative
    frequencies at eta = shift.
    """
    counts = np.array([(y_obs == c).sum() for c in range(1, n_categories + 1)], dtype=float)
    counts += 0.5  # keep every category populated so cuts stay increasing
    cum = np.cumsum(counts)[:-1] / counts.sum()
    raw = special.ndtri(cum)
    return float(-raw[0]), tuple(raw - raw[0])


def _init_truncated(lo, hi, rng) -> np.ndarray:
    """Rough truncated standard normal draws used only at initialization."""
    plo = special.ndtr(lo)
    phi = special.ndtr(hi)
    u = plo + rng.random(np.shape(lo)) * (phi - plo)
    z = special.ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
    bad = ~((z > lo) & (z <= hi))
    if np.any(bad):
        mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                       np.where(np.isfinite(lo), lo + 0.5, hi - 0.5))
        z = np.where(bad, mid, z)
    return z


def init_state(dataset: Dataset, hyper: Hyperparams, rng: np.random.Generator) -> ModelState:
    """Deterministic-moment starting state.

    Only confounders start included; R is the identity and the graph empty.
    Continuous variances come from the sample variance of the observed
    responses, ordinal cut-points from empirical category frequencies, and
    negative binomial dispersions start at 1. Discrete latents are drawn
    inside their bounds with the given generator.
    """
    n, m = dataset.n, dataset.m
    beta, gamma, families = [], [], []
    diag = np.ones(m)
    for k in range(m):
        obs = dataset.observed(k)
        if np.unique(obs).size < 2:
            raise DataError(f"response column {k} is constant")
        fam = dataset.families[k]
        bk = np.zeros(dataset.p(k))
        icpt = dataset.intercept_index(k)
        if isinstance(fam, marginals.Gaussian):
            var0 = float(np.var(obs, ddof=1))
            fam = marginals.Gaussian(variance=var0)
            diag[k] = var0
            if icpt is not None:
                bk[icpt] = float(obs.mean())
        elif isinstance(fam, marginals.OrdinalProbit):
            shift, cuts = _empirical_cuts(obs, fam.n_categories)
            fam = marginals.OrdinalProbit(cuts=cuts)
            if icpt is not None:
                bk[icpt] = shift
        elif isinstance(fam, marginals.NegBinomialLogit):
            fam = marginals.NegBinomialLogit(dispersion=1.0)
        beta.append(bk)
        gamma.append(dataset.confounders[k].copy())
        families.append(fam)

    ztil = np.empty((n, m))
    for k in range(m):
        fam = families[k]
        obs = ~dataset.missing[:, k]
        eta = dataset.X[k] @ beta[k]
        ztil[~obs, k] = rng.standard_normal(int((~obs).sum()))
        if fam.is_discrete:
            lo, hi = fam.latent_bounds(dataset.Y[obs, k], eta[obs])
            ztil[obs, k] = _init_truncated(lo, hi, rng)
        else:
            ztil[obs, k] = fam.normal_score(dataset.Y[obs, k], eta[obs])

    state = ModelState(
        beta=beta,
        gamma=gamma,
        families=families,
        Ztilde=ztil,
        Sigma=np.diag(diag),
        R=np.eye(m),
        graph=DecomposableGraph.empty(m),
    )
    state.check_invariants(dataset)
    return state


# ---------------------------------------------------------------------------
# generative draws (prior sampling and data regeneration)


def sample_prior_graph(m: int, rng: np.random.Generator) -> DecomposableGraph:
    """Draw a decomposable graph from the edge-count prior (small m only)."""
    graphs = enumerate_decomposable(m)
    logw = np.array([log_graph_prior(g) for g in graphs])
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return graphs[rng.choice(len(graphs), p=w)]


def draw_latents_and_responses(dataset: Dataset, families, beta, R,
                               rng: np.random.Generator):
    """Draw (Ztilde, Y) given parameters, pushing latents through each margin.

    Missing cells of the dataset stay missing: their latents are drawn with
    the rest of the row but the response cell is NaN.
    """
    n, m = dataset.n, dataset.m
    chol = np.linalg.cholesky(R)
    ztil = rng.standard_normal((n, m)) @ chol.T
    Y = np.full((n, m), np.nan)
    for k in range(m):
        fam = families[k]
        eta = dataset.X[k] @ beta[k]
        if fam.is_discrete:
            u = np.clip(special.ndtr(ztil[:, k]), 1e-300, 1.0 - 1e-16)
            yk = fam.inverse_cdf(u, eta).astype(float)
        else:
            yk = eta + fam.sd * ztil[:, k]
        yk = np.where(dataset.missing[:, k], np.nan, yk)
        Y[:, k] = yk
    return ztil, Y


def sample_prior_state(dataset: Dataset, hyper: Hyperparams,
                       rng: np.random.Generator):
    """Joint draw of (parameters, latents, responses) from the model.

    Returns a (dataset, state) pair where the dataset carries the generated
    responses. This is the generative counterpart of one sampler sweep and is
    what the joint-distribution correctness test compares against.
    """
    m = dataset.m
    graph = sample_prior_graph(m, rng)
    Sigma = sample_hiw(graph, 2.0, np.eye(m), rng)
    d = np.sqrt(np.diag(Sigma))
    R = Sigma / np.outer(d, d)
    np.fill_diagonal(R, 1.0)

    beta, gamma, families = [], [], []
    for k in range(m):
        conf = dataset.confounders[k]
        g = conf.copy()
        prop = rng.beta(hyper.a[k], hyper.b[k])
        g[~conf] = rng.random(dataset.n_free(k)) < prop
        bk = np.zeros(dataset.p(k))
        bk[conf] = rng.normal(0.0, np.sqrt(hyper.confounder_prior_variance), int(conf.sum()))
        act = g & ~conf
        bk[act] = rng.normal(0.0, np.sqrt(hyper.v), int(act.sum()))
        fam = dataset.families[k]
        if isinstance(fam, marginals.Gaussian):
            fam = marginals.Gaussian(variance=float(Sigma[k, k]))
        elif isinstance(fam, marginals.OrdinalProbit):
            loginc = rng.normal(0.0, hyper.cut_prior_std, fam.n_categories - 2)
            fam = marginals.OrdinalProbit(cuts=tuple(marginals.log_increments_to_cuts(0.0, loginc)))
        elif isinstance(fam, marginals.NegBinomialLogit):
            fam = marginals.NegBinomialLogit(
                dispersion=float(rng.gamma(hyper.dispersion_prior_shape,
                                           1.0 / hyper.dispersion_prior_rate)))
        beta.append(bk)
        gamma.append(g)
        families.append(fam)

    ztil, Y = draw_latents_and_responses(dataset, families, beta, R, rng)
    new_dataset = with_responses(dataset, Y)
    state = ModelState(beta=beta, gamma=gamma, families=families, Ztilde=ztil,
                       Sigma=Sigma, R=R, graph=graph)
    return new_dataset, state
