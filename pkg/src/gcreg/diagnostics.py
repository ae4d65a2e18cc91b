"""Posterior summaries and selection-quality metrics.

Everything here is pure post-processing over a Trace: inclusion
frequencies for predictors (MPPI) and graph edges (EPPI), ROC curves and
their areas against a known truth, interval scores for coefficient
estimates, and a per-parameter summary table.

Quantiles are computed with numpy's default linear interpolation (type 7),
so every score derived from a trace is reproducible bit for bit. ROC curves
sweep thresholds over the distinct score values; their trapezoid area
equals the pairwise rank statistic (ties counted half), which is asserted
in the tests rather than assumed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ALPHA_DEFAULT = 0.05
FPR_GRID = np.linspace(0.0, 1.0, 101)


def _require_draws(trace) -> None:
    if trace.n_draws == 0:
        raise DataError("trace holds no draws")


# ---------------------------------------------------------------------------
# inclusion frequencies


def mppi(trace):
    """Marginal posterior probability of inclusion for every predictor.

    Returns an array of shape (p, m) when all responses share one design
    width, otherwise a list of per-response vectors. Confounder columns are
    never flipped by the sampler, so their frequency is exactly 1.
    """
    _require_draws(trace)
    cols = [g.mean(axis=0) for g in trace.gamma]
    if len({c.size for c in cols}) == 1:
        return np.column_stack(cols)
    return cols


def eppi(trace) -> np.ndarray:
    """Edge posterior probability of inclusion, symmetric with unit diagonal."""
    _require_draws(trace)
    m = len(trace.gamma)
    out = np.eye(m)
    freq = trace.edges.mean(axis=0)
    for (i, j), f in zip(trace.pairs, freq):
        out[i, j] = out[j, i] = f
    return out


# ---------------------------------------------------------------------------
# ROC


def roc_auc(scores, truth):
    """ROC curve and area for one response.

    Parameters
    ----------
    scores : array_like, shape (p,)
        Selection scores, typically an MPPI column restricted to the free
        (non-confounder) predictors.
    truth : array_like of bool, shape (p,)
        Which predictors are truly associated. Needs at least one positive
        and one negative, otherwise the area is undefined.

    Returns
    -------
    curve : ndarray, shape (T + 1, 2)
        (FPR, TPR) points from (0, 0) to (1, 1), thresholds at the distinct
        score values in decreasing order.
    auc : float
        Trapezoid area; equals the Mann-Whitney statistic of the scores.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    if scores.size != truth.size:
        raise DataError(f"{scores.size} scores but {truth.size} truth labels")
    pos = int(truth.sum())
    neg = truth.size - pos
    if pos == 0 or neg == 0:
        raise DataError("AUC undefined: truth labels are all one class")
    fpr, tpr = [0.0], [0.0]
    for t in np.unique(scores)[::-1]:
        hit = scores >= t
        tpr.append(float((hit & truth).sum()) / pos)
        fpr.append(float((hit & ~truth).sum()) / neg)
    curve = np.column_stack([fpr, tpr])
    auc = float(np.trapezoid(curve[:, 1], curve[:, 0]))
    return curve, auc


def average_curves(curves, grid=FPR_GRID):
    """Pointwise-in-FPR mean of ROC curves on a fixed grid.

    Vertical curve segments (repeated FPR values) are collapsed to their
    upper TPR before interpolation.
    """
    grid = np.asarray(grid, dtype=float)
    stack = np.empty((len(curves), grid.size))
    for i, curve in enumerate(curves):
        fpr, tpr = curve[:, 0], curve[:, 1]
        keep_fpr, keep_tpr = [], []
        for x, y in zip(fpr, tpr):
            if keep_fpr and keep_fpr[-1] == x:
                keep_tpr[-1] = max(keep_tpr[-1], y)
            else:
                keep_fpr.append(x)
                keep_tpr.append(y)
        stack[i] = np.interp(grid, keep_fpr, keep_tpr)
    return grid, stack.mean(axis=0)


# ---------------------------------------------------------------------------
# interval score


def credible_interval(draws, alpha=ALPHA_DEFAULT):
    """Equal-tailed (1 - alpha) interval via linear-interpolation quantiles."""
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < 2:
        raise DataError("interval needs at least two draws")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def interval_score_bounds(lo, hi, truth, alpha=ALPHA_DEFAULT):
    """Score of the interval [lo, hi] against the realized value.

    Width plus 2/alpha times the distance by which the value escapes the
    interval; equals the width exactly when the value is covered
    (endpoints inclusive).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    truth = np.asarray(truth, dtype=float)
    out = (hi - lo) \
        + (2.0 / alpha) * np.maximum(lo - truth, 0.0) \
        + (2.0 / alpha) * np.maximum(truth - hi, 0.0)
    return out if out.ndim else float(out)


def interval_score(draws, truth, alpha=ALPHA_DEFAULT):
    """Interval score of the equal-tailed (1 - alpha) interval of `draws`."""
    lo, hi = credible_interval(draws, alpha)
    return interval_score_bounds(lo, hi, truth, alpha)


# ---------------------------------------------------------------------------
# per-parameter summaries


def _blocks(trace):
    m = len(trace.gamma)
    for k in range(m):
        for j in range(trace.gamma[k].shape[1]):
            yield f"g{k}_{j}", trace.gamma[k][:, j]
    for k in range(m):
        for j in range(trace.beta[k].shape[1]):
            yield f"b{k}_{j}", trace.beta[k][:, j]
    for k in range(m):
        for j in range(trace.theta[k].shape[1]):
            yield f"t{k}_{j}", trace.theta[k][:, j]
    for col, (i, j) in enumerate(trace.pairs):
        yield f"r{i}_{j}", trace.corr[:, col]
    for k in range(m):
        yield f"d{k}", trace.delta[:, k]
    for col, (i, j) in enumerate(trace.pairs):
        yield f"e{i}_{j}", trace.edges[:, col]


def summarize(trace, quantiles=(0.025, 0.5, 0.975)) -> dict:
    """Mean, sd and quantiles for every scalar parameter in the trace.

    Keys follow the trace CSV headers (b0_2 is the third coefficient of the
    first response, r0_1 a correlation entry, and so on).
    """
    _require_draws(trace)
    out = {}
    for name, col in _blocks(trace):
        col = np.asarray(col, dtype=float)
        row = {"mean": float(col.mean()),
               "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0}
        for q, val in zip(quantiles, np.quantile(col, quantiles)):
            row[f"q{100 * q:g}"] = float(val)
        out[name] = row
    return out


def loglik_matrix(trace, dataset=None) -> np.ndarray:
    """Per-draw, per-observation log-likelihood stored during sampling.

    Rows are conditional log densities given the other responses' latents,
    with missing cells contributing zero; they cannot be rebuilt from the
    trace alone, so the chain must have run with `store_loglik`.
    """
    _require_draws(trace)
    if trace.loglik.size == 0:
        raise DataError("trace stored no pointwise log-likelihood "
                        "(run the chain with store_loglik)")
    if dataset is not None and trace.loglik.shape[1] != dataset.n:
        raise DataError(f"log-likelihood has {trace.loglik.shape[1]} columns, "
                        f"dataset has {dataset.n} rows")
    return trace.loglik


# ---------------------------------------------------------------------------
# full report


@dataclass(frozen=True)
class SelectionReport:
    """Selection quality of one fitted chain against a known truth.

    `auc` is NaN (and the curve None) for responses whose truth column is
    all positive or all negative. `interval_scores[k]` holds one score per
    truly nonzero coefficient of response k, in free-column order.
    """

    mppi: np.ndarray
    eppi: np.ndarray
    curves: tuple
    auc: np.ndarray
    interval_scores: tuple
    alpha: float = ALPHA_DEFAULT
    meta: dict = field(default_factory=dict)

    @property
    def mean_interval_score(self) -> np.ndarray:
        return np.array([float(np.mean(s)) if len(s) else np.nan
                         for s in self.interval_scores])


def selection_report(trace, confounders, truth_gamma, truth_beta=None,
                     alpha=ALPHA_DEFAULT) -> SelectionReport:
    """Score a fitted chain against the generating truth.

    Parameters
    ----------
    trace : Trace
        Output of `run_chain`.
    confounders : sequence of boolean arrays
        Per-response masks over the fitted design columns (as carried by
        `Dataset.confounders`); confounder columns never take part in the
        scoring because the sampler holds them included.
    truth_gamma : array_like of bool, shape (p, m)
        True inclusion pattern, rows aligned with the free columns of each
        design in order (the natural alignment when the fit added only an
        intercept on top of the generated predictors).
    truth_beta : array_like, shape (p, m), optional
        True coefficients; enables interval scores for the nonzero cells.
    """
    _require_draws(trace)
    truth_gamma = np.asarray(truth_gamma).astype(bool)
    m = len(confounders)
    freqs = [trace.gamma[k].mean(axis=0) for k in range(m)]

    curves, aucs, scores = [], [], []
    for k in range(m):
        free = ~np.asarray(confounders[k], dtype=bool)
        if truth_gamma[:, k].size != int(free.sum()):
            raise DataError(f"truth for response {k} has {truth_gamma[:, k].size} "
                            f"rows, design has {int(free.sum())} free columns")
        tk = truth_gamma[:, k]
        if tk.all() or not tk.any():
            curves.append(None)
            aucs.append(np.nan)
        else:
            curve, auc = roc_auc(freqs[k][free], tk)
            curves.append(curve)
            aucs.append(auc)

        if truth_beta is None:
            scores.append(np.array([]))
        else:
            beta_free = trace.beta[k][:, free]
            true_k = np.asarray(truth_beta, dtype=float)[:, k]
            nz = np.flatnonzero(true_k != 0.0)
            scores.append(np.array([
                interval_score(beta_free[:, j], true_k[j], alpha) for j in nz]))

    return SelectionReport(mppi=mppi(trace), eppi=eppi(trace),
                           curves=tuple(curves), auc=np.array(aucs),
                           interval_scores=tuple(scores), alpha=alpha,
                           meta={"n_draws": trace.n_draws})
