"""Synthetic data generation for the simulation study.

The generating process mirrors the model itself: predictor rows are drawn
from a zero-mean Gaussian with AR(1) correlation 0.7 so every column has
unit marginal variance, a sparse coefficient matrix couples predictors to
responses, and the responses are produced by pushing correlated Gaussian
latents (AR(1) correlation 0.8 across responses) through each margin's
quantile function.

Sparsity of the coefficient matrix comes from two masks: a cell-level
Bernoulli(pi1) mask and a row-level Bernoulli(pi2) mask shared across
responses, multiplied into a dense Gaussian value matrix. With success
probabilities pi1 and pi2, an expected (1 - pi2) * p predictors are
irrelevant for every response and each relevant predictor is associated
with pi1 * m responses on average.

Four named presets (I, II, III, IV) cover the two response mixes (Gaussian
plus binary and ordinal margins; Gaussian plus count margins) at two sizes
(n=50, p=30 and n=100, p=100). Replicates are individually reproducible:
replicate i uses a child stream spawned from the scenario seed with spawn
key (i,), so regenerating any single replicate never requires the others.
"""

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import marginals
from .errors import ConfigError

PREDICTOR_RHO = 0.7
LATENT_RHO = 0.8

_ORDINAL = "ordinal-probit"


@dataclass(frozen=True)
class ResponseSpec:
    """Declarative description of one response margin in a scenario.

    Parameters
    ----------
    kind : str
        Family name understood by `marginals.make_family`.
    variance : float
        Gaussian margins only: generative variance.
    dispersion : float
        Negative-binomial margins only: generative dispersion.
    trials : int
        Binomial margins only: number of trials.
    n_categories : int
        Ordinal margins only: number of categories (>= 2).
    cut_range : tuple of float
        Ordinal margins only: (low, high) range the generative cut-points
        are drawn from, uniformly and independently, then sorted.
    """

    kind: str
    variance: float = 1.0
    dispersion: float = 1.0
    trials: int = 1
    n_categories: int = 0
    cut_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in marginals.FAMILY_KINDS:
            raise ConfigError(f"unknown response family {self.kind!r}")
        object.__setattr__(self, "cut_range",
                           tuple(float(c) for c in self.cut_range))
        if self.kind == _ORDINAL:
            if self.n_categories < 2:
                raise ConfigError("ordinal response needs n_categories >= 2")
            lo, hi = self.cut_range
            if not lo < hi:
                raise ConfigError(f"empty cut range {self.cut_range}")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "gaussian"

    def realize(self, rng) -> marginals.Family:
        """Concrete Family instance, drawing ordinal cut-points if needed."""
        if self.kind == "gaussian":
            return marginals.Gaussian(variance=self.variance)
        if self.kind == "bernoulli-probit":
            return marginals.BernoulliProbit()
        if self.kind == "binomial-logit":
            return marginals.BinomialLogit(trials=self.trials)
        if self.kind == "negbinomial-logit":
            return marginals.NegBinomialLogit(dispersion=self.dispersion)
        lo, hi = self.cut_range
        while True:
            cuts = np.sort(rng.uniform(lo, hi, self.n_categories - 1))
            if np.all(np.diff(cuts) > 0.0):
                return marginals.OrdinalProbit(cuts=tuple(cuts))


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration: sizes, margins, and sparsity levels.

    `coef_mean` and `coef_var` give, per response, the mean and variance of
    the Gaussian values filling the nonzero cells of the coefficient matrix.
    """

    name: str
    n: int
    p: int
    responses: tuple
    pi1: float
    pi2: float
    coef_mean: tuple
    coef_var: tuple
    replicates: int = 20
    seed: int = 0
    shared_X: bool = True

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError("scenario needs n >= 1 and p >= 1")
        if not (0.0 <= self.pi1 <= 1.0 and 0.0 <= self.pi2 <= 1.0):
            raise ConfigError("pi1 and pi2 must lie in [0, 1]")
        if self.replicates < 1:
            raise ConfigError("scenario needs at least one replicate")
        responses = tuple(r if isinstance(r, ResponseSpec) else ResponseSpec(**r)
                          for r in self.responses)
        object.__setattr__(self, "responses", responses)
        mean = tuple(float(b) for b in np.broadcast_to(self.coef_mean, (self.m,)))
        var = tuple(float(s) for s in np.broadcast_to(self.coef_var, (self.m,)))
        if any(s < 0.0 for s in var):
            raise ConfigError("coefficient variances must be nonnegative")
        object.__setattr__(self, "coef_mean", mean)
        object.__setattr__(self, "coef_var", var)

    @property
    def m(self) -> int:
        return len(self.responses)

    @property
    def family_kinds(self) -> tuple:
        return tuple(r.kind for r in self.responses)


def scenario_to_dict(scenario: Scenario) -> dict:
    return dataclasses.asdict(scenario)


def scenario_from_dict(payload: dict) -> Scenario:
    payload = dict(payload)
    payload["responses"] = tuple(payload["responses"])
    return Scenario(**payload)


_MIXED_RESPONSES = (
    ResponseSpec("gaussian", variance=3.0),
    ResponseSpec("gaussian", variance=3.0),
    ResponseSpec("gaussian", variance=3.0),
    ResponseSpec("bernoulli-probit"),
    ResponseSpec(_ORDINAL, n_categories=3, cut_range=(0.0, 1.0)),
    ResponseSpec(_ORDINAL, n_categories=4, cut_range=(1.0, 2.0)),
)

_COUNT_RESPONSES = (
    ResponseSpec("gaussian", variance=1.0),
    ResponseSpec("negbinomial-logit", dispersion=0.5),
    ResponseSpec("negbinomial-logit", dispersion=0.5),
    ResponseSpec("binomial-logit", trials=10),
)


def _coef_params(responses):
    ## nonzero coefficients center on 1 for Gaussian margins, 0.5 otherwise
    mean = tuple(0.5 if r.is_discrete else 1.0 for r in responses)
    var = tuple(0.2 if r.is_discrete else 1.0 for r in responses)
    return mean, var


def get_scenario(name, replicates=20, seed=0) -> Scenario:
    """Named preset. `name` is one of "I", "II", "III", "IV"."""
    key = str(name).strip().upper()
    sizes = {"I": (50, 30, 0.15), "II": (100, 100, 0.05),
             "III": (50, 30, 0.15), "IV": (100, 100, 0.05)}
    if key not in sizes:
        raise ConfigError(f"unknown scenario {name!r}, expected I, II, III or IV")
    n, p, pi1 = sizes[key]
    responses = _MIXED_RESPONSES if key in ("I", "II") else _COUNT_RESPONSES
    mean, var = _coef_params(responses)
    return Scenario(name=key, n=n, p=p, responses=responses, pi1=pi1, pi2=0.95,
                    coef_mean=mean, coef_var=var, replicates=replicates, seed=seed)


# ---------------------------------------------------------------------------
# generators


def ar1_correlation(m: int, rho: float) -> np.ndarray:
    """Correlation matrix with entries rho^|k - k'|."""
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_predictors(n: int, p: int, rng, rho: float = PREDICTOR_RHO) -> np.ndarray:
    """n x p predictor matrix, rows iid N(0, S) with S_jj' = rho^|j - j'|.

    Generated by the stationary AR(1) recursion across columns, so each
    column has exactly unit marginal variance.
    """
    if n < 1 or p < 1:
        raise ConfigError("gen_predictors needs n >= 1 and p >= 1")
    eps = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = eps[:, 0]
    innov = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + innov * eps[:, j]
    return X


def gen_coefficients(p: int, m: int, pi1: float, pi2: float, b, s2, rng) -> np.ndarray:
    """Sparse p x m coefficient matrix.

    Nonzero pattern is the product of iid Bernoulli(pi1) cells with
    Bernoulli(pi2) whole-row indicators shared across the m columns; values
    in the surviving cells are N(b_k, s2_k) with per-column parameters
    (scalars broadcast).
    """
    if not (0.0 <= pi1 <= 1.0 and 0.0 <= pi2 <= 1.0):
        raise ConfigError("pi1 and pi2 must lie in [0, 1]")
    mean = np.broadcast_to(np.asarray(b, dtype=float), (m,))
    var = np.broadcast_to(np.asarray(s2, dtype=float), (m,))
    if np.any(var < 0.0):
        raise ConfigError("coefficient variances must be nonnegative")
    cells = rng.random((p, m)) < pi1
    rows = rng.random(p) < pi2
    values = mean + np.sqrt(var) * rng.standard_normal((p, m))
    return np.where(cells & rows[:, None], values, 0.0)


def realize_families(scenario: Scenario, rng):
    """Concrete Family per response, drawing any generative cut-points."""
    return tuple(spec.realize(rng) for spec in scenario.responses)


def _family_list(scenario, rng):
    if isinstance(scenario, Scenario):
        return realize_families(scenario, rng)
    out = []
    for item in scenario:
        if isinstance(item, marginals.Family):
            out.append(item)
        else:
            out.append(item.realize(rng))
    return tuple(out)


def gen_responses(scenario, X, B, rng, families=None,
                  latent_rho: float = LATENT_RHO) -> np.ndarray:
    """Draw the n x m response matrix.

    Latent rows are iid N(0, R) with R_kk' = latent_rho^|k - k'|; response
    (i, k) is the family-k quantile of the standard normal cdf of the
    latent, with location shifted by the linear predictor. `scenario` may
    be a Scenario or a sequence of ResponseSpec / Family objects; passing
    `families` skips cut-point drawing (used when the caller stores them).

    `X` is the shared n x p design (or a sequence of per-response designs)
    and `B` the matching p x m coefficient matrix (or sequence of vectors).
    """
    if families is None:
        families = _family_list(scenario, rng)
    m = len(families)
    shared = not isinstance(X, (list, tuple))
    if shared:
        X = np.asarray(X, dtype=float)
        B = np.asarray(B, dtype=float)
        if B.shape != (X.shape[1], m):
            raise ConfigError(f"coefficients shaped {B.shape}, expected "
                              f"{(X.shape[1], m)}")
        n = X.shape[0]
        etas = [X @ B[:, k] for k in range(m)]
    else:
        if len(X) != m or len(B) != m:
            raise ConfigError("per-response designs need one X and one "
                              "coefficient vector per response")
        n = np.asarray(X[0]).shape[0]
        etas = [np.asarray(X[k], dtype=float) @ np.asarray(B[k], dtype=float)
                for k in range(m)]

    R = ar1_correlation(m, latent_rho)
    ztil = rng.standard_normal((n, m)) @ np.linalg.cholesky(R).T
    Y = np.empty((n, m))
    for k, fam in enumerate(families):
        if fam.is_discrete:
            u = np.clip(special.ndtr(ztil[:, k]), 1e-300, 1.0 - 1e-16)
            Y[:, k] = fam.inverse_cdf(u, etas[k]).astype(float)
        else:
            Y[:, k] = etas[k] + fam.sd * ztil[:, k]
    return Y


# ---------------------------------------------------------------------------
# replicate pipeline


@dataclass(frozen=True)
class Replicate:
    """One generated dataset plus everything needed to score a fit on it."""

    scenario: Scenario
    index: int
    X: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    families: tuple
    R: np.ndarray

    @property
    def gamma_truth(self) -> np.ndarray:
        return self.B != 0.0

    @property
    def edge_truth(self) -> np.ndarray:
        """Boolean m x m matrix marking nonzero off-diagonals of inv(R)."""
        prec = np.linalg.inv(self.R)
        truth = np.abs(prec) > 1e-10
        np.fill_diagonal(truth, True)
        return truth

    def truth_dict(self) -> dict:
        fams = []
        for spec, fam in zip(self.scenario.responses, self.families):
            entry = {"kind": spec.kind}
            if spec.kind == "gaussian":
                entry["variance"] = fam.variance
            elif spec.kind == "negbinomial-logit":
                entry["dispersion"] = fam.dispersion
            elif spec.kind == "binomial-logit":
                entry["trials"] = fam.trials
            elif spec.kind == _ORDINAL:
                entry["cuts"] = list(fam.cuts)
            fams.append(entry)
        return {
            "scenario": scenario_to_dict(self.scenario),
            "replicate": self.index,
            "families": fams,
            "B": self.B.tolist(),
            "gamma": self.gamma_truth.astype(int).tolist(),
            "R": self.R.tolist(),
            "edge_truth": self.edge_truth.astype(int).tolist(),
        }

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "Y.csv"), self.Y, "y")
        if self.scenario.shared_X:
            _write_csv(os.path.join(out_dir, "X.csv"), self.X, "x")
        else:
            for k in range(self.scenario.m):
                _write_csv(os.path.join(out_dir, f"X{k}.csv"), self.X[k], "x")
        with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
            json.dump(self.truth_dict(), fh, indent=1)
            fh.write("\n")


def _write_csv(path, arr, prefix) -> None:
    arr = np.asarray(arr, dtype=float)
    header = ",".join(f"{prefix}{j}" for j in range(arr.shape[1]))
    np.savetxt(path, arr, delimiter=",", header=header, comments="", fmt="%.17g")


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate `index`, addressable by index alone."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_replicate(scenario: Scenario, index: int, out_dir=None) -> Replicate:
    """Generate replicate `index` of `scenario`, optionally writing files.

    Deterministic in (scenario.seed, index); output order within the stream
    is predictors, coefficients, cut-points, then responses.
    """
    rng = replicate_rng(scenario.seed, index)
    if scenario.shared_X:
        X = gen_predictors(scenario.n, scenario.p, rng)
    else:
        X = tuple(gen_predictors(scenario.n, scenario.p, rng)
                  for _ in range(scenario.m))
    B = gen_coefficients(scenario.p, scenario.m, scenario.pi1, scenario.pi2,
                         scenario.coef_mean, scenario.coef_var, rng)
    families = realize_families(scenario, rng)
    cols = B if scenario.shared_X else [B[:, k] for k in range(scenario.m)]
    Y = gen_responses(scenario, X, cols, rng, families=families)
    rep = Replicate(scenario=scenario, index=index, X=X, B=B, Y=Y,
                    families=families,
                    R=ar1_correlation(scenario.m, LATENT_RHO))
    if out_dir is not None:
        rep.save(out_dir)
    return rep


def replicate_dir(out_root, index: int) -> str:
    return os.path.join(out_root, f"rep{index:03d}")


def generate_scenario(scenario: Scenario, out_root, indices=None):
    """Write every replicate of `scenario` under `out_root`.

    Returns the list of replicate directories. `indices` restricts the run
    to a subset (regeneration of replicate i never depends on the others).
    """
    if indices is None:
        indices = range(scenario.replicates)
    os.makedirs(out_root, exist_ok=True)
    with open(os.path.join(out_root, "scenario.json"), "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=1)
        fh.write("\n")
    dirs = []
    for i in indices:
        d = replicate_dir(out_root, i)
        generate_replicate(scenario, i, out_dir=d)
        dirs.append(d)
    return dirs


def load_truth(rep_dir) -> dict:
    """Parse truth.json of a written replicate, arrays back as ndarrays."""
    with open(os.path.join(rep_dir, "truth.json"), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    raw["B"] = np.asarray(raw["B"], dtype=float)
    raw["gamma"] = np.asarray(raw["gamma"], dtype=bool)
    raw["R"] = np.asarray(raw["R"], dtype=float)
    raw["edge_truth"] = np.asarray(raw["edge_truth"], dtype=bool)
    return raw
