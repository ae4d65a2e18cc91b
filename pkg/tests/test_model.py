import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from gcreg.errors import ConfigError, DataError
from gcreg.marginals import (
    BernoulliProbit,
    BinomialLogit,
    Gaussian,
    NegBinomialLogit,
    OrdinalProbit,
)
from gcreg.model import (
    Dataset,
    Hyperparams,
    beta_binomial_moments,
    build_dataset,
    elicit_beta_hyperparams,
    elicited_hyperparams,
    init_state,
    load_dataset,
    log_prior_beta,
    log_prior_gamma,
    sample_prior_graph,
    sample_prior_state,
    with_responses,
)


def bb_moments_bruteforce(p, a, b):
    """Beta-binomial mean and variance by explicit summation over sizes."""
    s = np.arange(p + 1)
    logpmf = (
        special.gammaln(p + 1.0)
        - special.gammaln(s + 1.0)
        - special.gammaln(p - s + 1.0)
        + special.betaln(a + s, b + p - s)
        - special.betaln(a, b)
    )
    pmf = np.exp(logpmf)
    assert abs(pmf.sum() - 1.0) < 1e-12
    mean = float((s * pmf).sum())
    var = float(((s - mean) ** 2 * pmf).sum())
    return mean, var


# ---------------------------------------------------------------------------
# elicitation


def test_elicit_matches_bruteforce_moments():
    a, b = elicit_beta_hyperparams(5.0, 9.0, 100)
    mean, var = bb_moments_bruteforce(100, a, b)
    assert abs(mean - 5.0) < 1e-8
    assert abs(var - 9.0) < 1e-8


def test_closed_form_moments_agree_with_summation():
    for p, a, b in [(7, 1.0, 1.0), (20, 2.5, 40.0), (13, 0.3, 0.7)]:
        want = bb_moments_bruteforce(p, a, b)
        got = beta_binomial_moments(p, a, b)
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_elicit_binomial_variance_boundary_infeasible():
    # E = p/2 with the plain binomial variance sits exactly on the a=b->inf
    # boundary and must be rejected.
    with pytest.raises(ConfigError, match="feasible range"):
        elicit_beta_hyperparams(5.0, 2.5, 10)


def test_elicit_small_variance_infeasible_reports_range():
    # A model-size variance below the binomial floor cannot be matched by any
    # beta-binomial; the error must state the feasible interval.
    with pytest.raises(ConfigError, match="feasible range") as err:
        elicit_beta_hyperparams(3.0, 2.0, 13)
    assert "2.30769" in str(err.value)


def test_elicit_invalid_expected_size():
    with pytest.raises(ConfigError):
        elicit_beta_hyperparams(0.0, 1.0, 10)
    with pytest.raises(ConfigError):
        elicit_beta_hyperparams(10.0, 1.0, 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.floats(0.1, 0.9), st.floats(0.05, 0.95))
def test_elicit_round_trip_random_feasible(p, frac_mean, frac_var):
    expected = frac_mean * p
    floor = expected * (1.0 - expected / p)
    variance = floor + frac_var * (p - 1.0) * floor
    a, b = elicit_beta_hyperparams(expected, variance, p)
    assert a > 0 and b > 0
    mean, var = bb_moments_bruteforce(p, a, b)
    assert abs(mean - expected) < 1e-7
    assert abs(var - variance) < 1e-7


# ---------------------------------------------------------------------------
# selection priors


def test_log_prior_gamma_empty_of_two():
    got = log_prior_gamma(np.zeros(2, dtype=bool), 1.0, 1.0)
    np.testing.assert_allclose(got, np.log(1.0 / 3.0), rtol=1e-14)


@pytest.mark.parametrize("p,a,b", [(5, 1.0, 1.0), (9, 2.5, 7.5), (12, 5.5, 104.2)])
def test_log_prior_gamma_sums_to_one(p, a, b):
    sizes = np.arange(p + 1)
    counts = special.comb(p, sizes)
    logp = np.array([log_prior_gamma(np.arange(p) < s, a, b) for s in sizes])
    total = float((counts * np.exp(logp)).sum())
    assert abs(total - 1.0) < 1e-10


def test_log_prior_gamma_uniform_over_sizes_at_unit_hyper():
    p = 6
    masses = [
        special.comb(p, s) * np.exp(log_prior_gamma(np.arange(p) < s, 1.0, 1.0))
        for s in range(p + 1)
    ]
    np.testing.assert_allclose(masses, 1.0 / (p + 1), rtol=1e-12)


def test_log_prior_gamma_depends_only_on_size():
    g1 = np.array([True, False, True, False])
    g2 = np.array([False, True, False, True])
    assert log_prior_gamma(g1, 2.0, 3.0) == log_prior_gamma(g2, 2.0, 3.0)


def test_log_prior_beta_empty_support():
    assert log_prior_beta(np.zeros(3), np.zeros(3, dtype=bool), 1.0) == 0.0


def test_log_prior_beta_single_zero_coefficient():
    g = np.array([True, False])
    got = log_prior_beta(np.array([0.0, 0.0]), g, 1.0)
    np.testing.assert_allclose(got, -0.5 * np.log(2.0 * np.pi), rtol=1e-14)


def test_log_prior_beta_matches_direct_bivariate():
    from scipy import stats

    g = np.array([True, False, True])
    beta = np.array([0.7, 0.0, -1.3])
    got = log_prior_beta(beta, g, 2.0)
    want = stats.norm.logpdf(0.7, scale=np.sqrt(2.0)) + stats.norm.logpdf(
        -1.3, scale=np.sqrt(2.0)
    )
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_log_prior_beta_rejects_off_support_coefficient():
    with pytest.raises(ValueError):
        log_prior_beta(np.array([0.5, 0.1]), np.array([True, False]), 1.0)


# ---------------------------------------------------------------------------
# dataset assembly


def test_build_dataset_imputes_predictor_gaps_by_median():
    X = np.array([[1.0, 10.0], [2.0, np.nan], [3.0, 30.0], [4.0, 20.0]])
    ds = build_dataset(np.zeros((4, 1)) + [[1.0], [2.0], [1.5], [0.5]],
                       [Gaussian()], X)
    # intercept is column 0; imputed cell = median(10, 30, 20) = 20
    assert ds.X[0][1, 2] == 20.0


def test_build_dataset_rejects_family_mismatch():
    Y = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(DataError):
        build_dataset(Y, [BernoulliProbit()], np.ones((3, 1)))


def test_build_dataset_rejects_all_missing_column():
    Y = np.array([[np.nan], [np.nan]])
    with pytest.raises(DataError):
        build_dataset(Y, [Gaussian()], np.ones((2, 1)))


def test_build_dataset_standardize_flag():
    rng = np.random.default_rng(3)
    X = rng.normal(2.0, 5.0, size=(40, 3))
    Y = rng.normal(size=(40, 1))
    ds = build_dataset(Y, [Gaussian()], X, standardize=True)
    free = ds.X[0][:, 1:]
    np.testing.assert_allclose(free.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(free.std(axis=0), 1.0, rtol=1e-12)
    np.testing.assert_allclose(ds.X[0][:, 0], 1.0)


def test_build_dataset_standardize_rejects_constant_free_column():
    X = np.ones((5, 2))
    X[:, 0] = np.arange(5.0)
    Y = np.arange(5.0)[:, None]
    with pytest.raises(DataError):
        build_dataset(Y, [Gaussian()], X, standardize=True)


def test_build_dataset_shared_design_is_aliased():
    rng = np.random.default_rng(0)
    ds = build_dataset(rng.normal(size=(6, 3)),
                       [Gaussian(), Gaussian(), Gaussian()],
                       rng.normal(size=(6, 2)))
    assert ds.X[0] is ds.X[1]
    assert ds.X[0] is ds.X[2]


def test_build_dataset_confounder_mask_shifts_past_intercept():
    rng = np.random.default_rng(1)
    ds = build_dataset(rng.normal(size=(8, 1)), [Gaussian()],
                       rng.normal(size=(8, 4)), confounder_cols=[2])
    np.testing.assert_array_equal(ds.confounders[0],
                                  [True, False, False, True, False])
    assert ds.n_free(0) == 3
    assert ds.intercept_index(0) == 0


def test_with_responses_updates_mask():
    rng = np.random.default_rng(5)
    ds = build_dataset(rng.normal(size=(4, 2)), [Gaussian(), Gaussian()],
                       rng.normal(size=(4, 1)))
    Y = ds.Y.copy()
    Y[0, 0] = np.nan
    ds2 = with_responses(ds, Y)
    assert ds2.missing[0, 0] and not ds.missing[0, 0]
    assert ds2.X[0] is ds.X[0]


def test_load_dataset_from_csv(tmp_path):
    resp = tmp_path / "y.csv"
    resp.write_text("y1,y2\n1.5,0\n,1\n0.25,1\n-2.0,0\n")
    pred = tmp_path / "x.csv"
    pred.write_text("1.0,4.0\n2.0,\n3.0,6.0\n4.0,8.0\n")
    ds = load_dataset(resp, pred, [Gaussian(), BernoulliProbit()])
    assert ds.n == 4 and ds.m == 2
    assert ds.missing[1, 0] and not ds.missing[1, 1]
    assert ds.X[0][1, 2] == 6.0  # median of 4, 6, 8


# ---------------------------------------------------------------------------
# hyperparameters


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        Hyperparams(a=(1.0,), b=(1.0,), move_probs=(0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        Hyperparams(a=(1.0,), b=(-1.0,))
    with pytest.raises(ConfigError):
        Hyperparams(a=(1.0,), b=(1.0,), v=0.0)


def test_elicited_hyperparams_per_response():
    rng = np.random.default_rng(2)
    ds = build_dataset(rng.normal(size=(10, 2)), [Gaussian(), Gaussian()],
                       rng.normal(size=(10, 30)))
    hyper = elicited_hyperparams(ds, 5.0, 9.0)
    assert len(hyper.a) == 2
    mean, var = bb_moments_bruteforce(30, hyper.a[0], hyper.b[0])
    assert abs(mean - 5.0) < 1e-8 and abs(var - 9.0) < 1e-8


# ---------------------------------------------------------------------------
# initialization


def _gaussian_dataset(seed=7, n=12, m=2, p=3):
    rng = np.random.default_rng(seed)
    Y = rng.normal(1.0, 2.0, size=(n, m))
    X = rng.normal(size=(n, p))
    return build_dataset(Y, [Gaussian()] * m, X), rng


def test_init_gaussian_latents_are_standardized_residuals():
    ds, rng = _gaussian_dataset()
    hyper = Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0))
    state = init_state(ds, hyper, np.random.default_rng(0))
    for k in range(ds.m):
        y = ds.Y[:, k]
        want = (y - y.mean()) / y.std(ddof=1)
        np.testing.assert_allclose(state.Ztilde[:, k], want, rtol=1e-12)
        assert state.families[k].variance == pytest.approx(np.var(y, ddof=1))


def test_init_discrete_latents_inside_bounds():
    rng = np.random.default_rng(11)
    n = 30
    yb = rng.integers(0, 2, size=n)
    yo = rng.integers(1, 5, size=n)
    Y = np.column_stack([yb, yo]).astype(float)
    ds = build_dataset(Y, [BernoulliProbit(), OrdinalProbit(cuts=(0.0, 0.5, 1.0))],
                       rng.normal(size=(n, 2)))
    state = init_state(ds, Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0)),
                       np.random.default_rng(4))
    state.check_invariants(ds)
    lo, hi = state.families[0].latent_bounds(Y[:, 0], state.linear_predictor(ds, 0))
    z = state.Ztilde[:, 0]
    assert np.all((z > lo) & (z <= hi))


def test_init_ordinal_cuts_match_empirical_frequencies():
    y = np.array([1, 1, 2, 2, 2, 3, 3, 1, 2, 3], dtype=float)
    ds = build_dataset(y[:, None], [OrdinalProbit(cuts=(0.0, 1.0))],
                       np.ones((10, 0)))
    state = init_state(ds, Hyperparams(a=(1.0,), b=(1.0,)),
                       np.random.default_rng(0))
    counts = np.array([3, 4, 3]) + 0.5
    cum = np.cumsum(counts)[:-1] / counts.sum()
    eta = state.beta[0][0]
    got = special.ndtr(np.array(state.families[0].cuts) - eta)
    np.testing.assert_allclose(got, cum, rtol=1e-12)
    assert state.families[0].cuts[0] == 0.0


def test_init_rejects_constant_response():
    Y = np.column_stack([np.ones(8), np.arange(8.0)])
    ds = build_dataset(Y, [Gaussian(), Gaussian()], np.random.default_rng(0).normal(size=(8, 2)))
    with pytest.raises(DataError):
        init_state(ds, Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0)), np.random.default_rng(1))


def test_init_deterministic_given_seed():
    rng = np.random.default_rng(9)
    n = 20
    Y = np.column_stack([rng.normal(size=n), rng.integers(0, 2, size=n)]).astype(float)
    Y[3, 0] = np.nan
    ds = build_dataset(Y, [Gaussian(), BernoulliProbit()], rng.normal(size=(n, 4)))
    hyper = Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0))
    s1 = init_state(ds, hyper, np.random.default_rng(42))
    s2 = init_state(ds, hyper, np.random.default_rng(42))
    np.testing.assert_array_equal(s1.Ztilde, s2.Ztilde)


def test_init_negbinomial_dispersion_starts_at_one():
    rng = np.random.default_rng(12)
    y = rng.poisson(3.0, size=25).astype(float)
    ds = build_dataset(y[:, None], [NegBinomialLogit(dispersion=9.0)],
                       rng.normal(size=(25, 2)))
    state = init_state(ds, Hyperparams(a=(1.0,), b=(1.0,)), np.random.default_rng(0))
    assert state.families[0].dispersion == 1.0


def test_check_invariants_catches_corruption():
    ds, _ = _gaussian_dataset()
    hyper = Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0))
    state = init_state(ds, hyper, np.random.default_rng(0))
    free = np.flatnonzero(~ds.confounders[0])
    state.beta[0][free[0]] = 0.5  # gamma stays off
    with pytest.raises(AssertionError):
        state.check_invariants(ds)


def test_state_copy_is_deep():
    ds, _ = _gaussian_dataset()
    state = init_state(ds, Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0)),
                       np.random.default_rng(0))
    dup = state.copy()
    dup.Ztilde[0, 0] += 1.0
    dup.beta[0][0] += 1.0
    assert state.Ztilde[0, 0] != dup.Ztilde[0, 0]
    assert state.beta[0][0] != dup.beta[0][0]


# ---------------------------------------------------------------------------
# prior draws


def test_sample_prior_graph_m2_is_fair_coin():
    rng = np.random.default_rng(8)
    hits = sum(sample_prior_graph(2, rng).edge_count for _ in range(4000))
    # prior mass on each of the two graphs is 1/2
    assert abs(hits / 4000 - 0.5) < 3.0 * 0.5 / np.sqrt(4000)


def test_sample_prior_state_satisfies_invariants():
    rng = np.random.default_rng(21)
    n = 15
    template = np.column_stack([
        np.zeros(n), np.zeros(n), np.ones(n),
    ]).astype(float)
    template[:, 1] = 0.0
    template[5, 2] = np.nan
    families = [Gaussian(), BernoulliProbit(), OrdinalProbit(cuts=(0.0, 0.7))]
    template[:, 2] = np.where(np.isnan(template[:, 2]), np.nan, 1.0)
    Y0 = np.column_stack([rng.normal(size=n),
                          rng.integers(0, 2, size=n).astype(float),
                          rng.integers(1, 4, size=n).astype(float)])
    Y0[5, 2] = np.nan
    ds = build_dataset(Y0, families, rng.normal(size=(n, 3)))
    hyper = Hyperparams(a=(1.0, 1.0, 1.0), b=(2.0, 2.0, 2.0), cut_prior_std=1.0)
    new_ds, state = sample_prior_state(ds, hyper, np.random.default_rng(77))
    state.check_invariants(new_ds)
    assert new_ds.missing[5, 2]
    assert not np.isnan(new_ds.Y[~new_ds.missing]).any()
    # binomial support of the generated discrete data
    assert set(np.unique(new_ds.Y[:, 1])) <= {0.0, 1.0}


def test_sample_prior_state_deterministic():
    rng = np.random.default_rng(3)
    ds = build_dataset(rng.normal(size=(6, 2)), [Gaussian(), Gaussian()],
                       rng.normal(size=(6, 2)))
    hyper = Hyperparams(a=(1.0, 1.0), b=(1.0, 1.0))
    d1, s1 = sample_prior_state(ds, hyper, np.random.default_rng(5))
    d2, s2 = sample_prior_state(ds, hyper, np.random.default_rng(5))
    np.testing.assert_array_equal(d1.Y, d2.Y)
    np.testing.assert_array_equal(s1.Sigma, s2.Sigma)
