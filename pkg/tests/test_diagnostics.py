"""Tests for posterior summaries and selection metrics."""

import numpy as np
import pytest
from scipy import stats

from gcreg import diagnostics, model, simulate
from gcreg.errors import DataError
from gcreg.sampler import ChainConfig, Trace, run_chain


def _toy_trace(m=1, draws=4, widths=(2,), seed=0):
    """Hand-assembled trace with simple integer-coded draws."""
    rng = np.random.default_rng(seed)
    gamma = [rng.integers(0, 2, size=(draws, w)).astype(float) for w in widths]
    beta = [rng.normal(size=(draws, w)) for w in widths]
    theta = [np.empty((draws, 0)) for _ in widths]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    corr = rng.uniform(-0.5, 0.5, size=(draws, len(pairs)))
    edges = rng.integers(0, 2, size=(draws, len(pairs))).astype(float)
    delta = np.ones((draws, m))
    return Trace(gamma=gamma, beta=beta, theta=theta, corr=corr, delta=delta,
                 edges=edges, loglik=np.empty((draws, 0)), pairs=pairs)


def _empty_trace():
    return Trace(gamma=[np.empty((0, 2))], beta=[np.empty((0, 2))],
                 theta=[np.empty((0, 0))], corr=np.empty((0, 0)),
                 delta=np.empty((0, 1)), edges=np.empty((0, 0)),
                 loglik=np.empty((0, 0)), pairs=[])


# ---------------------------------------------------------------------------
# inclusion frequencies


def test_mppi_is_column_mean():
    tr = _toy_trace()
    tr.gamma[0][:] = [[1, 1], [0, 1], [1, 1], [0, 1]]
    out = diagnostics.mppi(tr)
    np.testing.assert_allclose(out, [[0.5], [1.0]])


def test_mppi_hand_count_two_responses():
    tr = _toy_trace(m=2, draws=10, widths=(3, 3), seed=3)
    out = diagnostics.mppi(tr)
    assert out.shape == (3, 2)
    for k in range(2):
        np.testing.assert_allclose(out[:, k], tr.gamma[k].mean(axis=0))
    assert np.all((out >= 0.0) & (out <= 1.0))


def test_mppi_ragged_designs_fall_back_to_list():
    tr = _toy_trace(m=2, draws=5, widths=(2, 4), seed=4)
    out = diagnostics.mppi(tr)
    assert isinstance(out, list)
    assert out[0].shape == (2,) and out[1].shape == (4,)


def test_mppi_empty_trace_rejected():
    with pytest.raises(DataError):
        diagnostics.mppi(_empty_trace())


def test_eppi_symmetric_unit_diagonal():
    tr = _toy_trace(m=3, draws=8, widths=(2, 2, 2), seed=5)
    tr.edges[:] = 0.0
    tr.edges[:4, 0] = 1.0          # edge (0, 1) in half the draws
    tr.edges[:, 2] = 1.0           # edge (1, 2) always
    out = diagnostics.eppi(tr)
    assert np.allclose(np.diag(out), 1.0)
    np.testing.assert_allclose(out, out.T)
    assert out[0, 1] == 0.5
    assert out[1, 2] == 1.0
    assert out[0, 2] == 0.0


# ---------------------------------------------------------------------------
# ROC


def _pairwise_auc(scores, truth):
    """Brute-force rank statistic: mean over (positive, negative) pairs."""
    pos = scores[truth]
    neg = scores[~truth]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (pos.size * neg.size)


def test_roc_perfect_separation():
    scores = np.array([0.9, 0.8, 0.1, 0.2])
    truth = np.array([True, True, False, False])
    curve, auc = diagnostics.roc_auc(scores, truth)
    assert auc == 1.0
    np.testing.assert_allclose(curve[0], [0.0, 0.0])
    np.testing.assert_allclose(curve[-1], [1.0, 1.0])


def test_roc_constant_scores_give_half():
    _, auc = diagnostics.roc_auc(np.full(6, 0.3), np.arange(6) < 2)
    assert auc == pytest.approx(0.5)


def test_roc_matches_pairwise_count_on_random_instances():
    rng = np.random.default_rng(21)
    levels = np.array([0.0, 0.1, 0.25, 0.5, 0.8, 1.0])
    for _ in range(200):
        scores = rng.choice(levels, size=15)
        truth = rng.random(15) < 0.4
        if truth.all() or not truth.any():
            continue
        curve, auc = diagnostics.roc_auc(scores, truth)
        assert auc == pytest.approx(_pairwise_auc(scores, truth), abs=1e-12)
        assert np.all(np.diff(curve[:, 0]) >= 0)
        assert np.all(np.diff(curve[:, 1]) >= 0)


def test_roc_degenerate_truth_rejected():
    with pytest.raises(DataError):
        diagnostics.roc_auc(np.array([0.1, 0.2]), np.array([True, True]))
    with pytest.raises(DataError):
        diagnostics.roc_auc(np.array([0.1, 0.2]), np.array([False, False]))


def test_roc_length_mismatch_rejected():
    with pytest.raises(DataError):
        diagnostics.roc_auc(np.array([0.1, 0.2, 0.3]), np.array([True, False]))


def test_average_curves_pointwise_mean():
    perfect = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    diagonal = np.array([[0.0, 0.0], [1.0, 1.0]])
    grid, mean_tpr = diagnostics.average_curves([perfect, diagonal])
    assert grid.shape == (101,) and mean_tpr.shape == (101,)
    assert mean_tpr[0] == pytest.approx(0.5)      # (1 + 0) / 2 at FPR 0
    assert mean_tpr[50] == pytest.approx(0.75)    # (1 + 0.5) / 2
    assert mean_tpr[-1] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# interval score


def test_interval_score_bounds_covered():
    assert diagnostics.interval_score_bounds(0.0, 1.0, 0.5, 0.05) == 1.0


def test_interval_score_bounds_below():
    assert diagnostics.interval_score_bounds(0.0, 1.0, -0.1, 0.05) == pytest.approx(5.0)


def test_interval_score_bounds_boundary_inclusive():
    assert diagnostics.interval_score_bounds(0.0, 1.0, 1.0, 0.05) == 1.0
    assert diagnostics.interval_score_bounds(0.0, 1.0, 0.0, 0.05) == 1.0


def test_interval_score_from_draws_type7():
    draws = np.linspace(0.0, 1.0, 101)
    lo, hi = diagnostics.credible_interval(draws, 0.05)
    assert lo == pytest.approx(0.025, abs=1e-15)
    assert hi == pytest.approx(0.975, abs=1e-15)
    assert diagnostics.interval_score(draws, 0.5, 0.05) == pytest.approx(0.95)
    assert diagnostics.interval_score(draws, 1.1, 0.05) == pytest.approx(5.95)


def test_interval_score_validation():
    with pytest.raises(DataError):
        diagnostics.interval_score(np.array([1.0]), 0.0)
    with pytest.raises(DataError):
        diagnostics.interval_score(np.array([1.0, 2.0]), 0.0, alpha=0.0)


def test_quantile_convention_is_linear_interpolation():
    ## the scoring depends on numpy's default (type 7); pin it
    assert np.quantile(np.array([0.0, 1.0]), 0.25) == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# summaries and log-likelihood export


def test_summarize_matches_numpy():
    tr = _toy_trace(m=1, draws=40, widths=(2,), seed=6)
    out = diagnostics.summarize(tr)
    col = tr.beta[0][:, 1]
    assert out["b0_1"]["mean"] == pytest.approx(col.mean())
    assert out["b0_1"]["sd"] == pytest.approx(col.std(ddof=1))
    assert out["b0_1"]["q50"] == pytest.approx(np.quantile(col, 0.5))
    assert "g0_0" in out and "d0" in out


def test_summarize_empty_trace_rejected():
    with pytest.raises(DataError):
        diagnostics.summarize(_empty_trace())


def _gaussian_chain(n=12, p=2, seed=7, **cfg):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (0.8 * X[:, 0] + rng.normal(size=n))[:, None]
    ds = model.build_dataset(y, ["gaussian"], X)
    hyper = model.Hyperparams(a=(1.0,), b=(1.0,))
    config = ChainConfig(iterations=cfg.pop("iterations", 120),
                         burnin=cfg.pop("burnin", 40),
                         thin=cfg.pop("thin", 2), seed=3, **cfg)
    return ds, run_chain(ds, hyper, config)


def test_loglik_matrix_gaussian_closed_form():
    ## with a single Gaussian response the stored rows must equal plain
    ## normal log densities rebuilt from the kept parameter draws
    ds, tr = _gaussian_chain()
    ll = diagnostics.loglik_matrix(tr, ds)
    assert ll.shape == (tr.n_draws, ds.n)
    X = ds.X[0]
    y = ds.Y[:, 0]
    for s in range(tr.n_draws):
        eta = X @ tr.beta[0][s]
        var = tr.theta[0][s, 0]
        direct = stats.norm.logpdf(y, eta, np.sqrt(var))
        np.testing.assert_allclose(ll[s], direct, atol=1e-10)


def test_loglik_matrix_requires_storage():
    ds, tr = _gaussian_chain(store_loglik=False)
    with pytest.raises(DataError):
        diagnostics.loglik_matrix(tr, ds)


# ---------------------------------------------------------------------------
# selection report


def test_selection_report_end_to_end():
    specs = (simulate.ResponseSpec("gaussian", variance=1.0),
             simulate.ResponseSpec("bernoulli-probit"))
    scen = simulate.Scenario(name="toy", n=30, p=6, responses=specs,
                             pi1=0.5, pi2=0.9, coef_mean=(1.0, 0.5),
                             coef_var=(1.0, 0.2), replicates=1, seed=9)
    rep = simulate.generate_replicate(scen, 0)
    ds = model.build_dataset(rep.Y, scen.family_kinds, rep.X)
    hyper = model.Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0))
    tr = run_chain(ds, hyper, ChainConfig(iterations=200, burnin=80, thin=2,
                                          seed=5))
    report = diagnostics.selection_report(tr, ds.confounders, rep.gamma_truth,
                                          truth_beta=rep.B)

    assert report.mppi.shape == (7, 2)            # intercept plus 6 predictors
    assert np.all((report.mppi >= 0.0) & (report.mppi <= 1.0))
    np.testing.assert_allclose(report.mppi[0], [1.0, 1.0])   # confounder row
    assert report.eppi.shape == (2, 2)
    assert np.allclose(np.diag(report.eppi), 1.0)
    for k in range(2):
        nnz = int((rep.B[:, k] != 0.0).sum())
        assert report.interval_scores[k].shape == (nnz,)
        tk = rep.gamma_truth[:, k]
        if tk.any() and not tk.all():
            assert 0.0 <= report.auc[k] <= 1.0
            assert report.curves[k] is not None
        else:
            assert np.isnan(report.auc[k])
    mean_scores = report.mean_interval_score
    assert mean_scores.shape == (2,)


def test_selection_report_truth_shape_mismatch():
    ds, tr = _gaussian_chain()
    with pytest.raises(DataError):
        diagnostics.selection_report(tr, ds.confounders, np.ones((5, 1), dtype=bool))
