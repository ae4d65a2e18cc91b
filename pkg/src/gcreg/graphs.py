"""Decomposable graphs and hyper-inverse Wishart computations.

A decomposable graph is stored together with its junction tree (cliques and
separators in perfect order), built once by maximum cardinality search. The
hyper-inverse Wishart HIW_G(b, Lambda) is handled entirely through that
clique/separator factorization: its normalizing constant, its density, exact
sampling that preserves structural zeros in the precision, and the marginal
likelihood of scaled latents with the covariance integrated out.

Convention: IW_q(b, Lambda) has density proportional to
|Sigma|^{-(b+2q)/2} exp(-tr(Lambda Sigma^{-1})/2), so Sigma^{-1} is Wishart
with nu = b+q-1 and scale Lambda^{-1}, and E[Sigma] = Lambda/(b-2) for b > 2.
The normalizer h(b, Lambda) below is the integral of that kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

__all__ = [
    "DecomposableGraph",
    "HiwParams",
    "is_decomposable",
    "junction_tree",
    "hiw_log_norm",
    "log_marginal_latents",
    "sample_hiw",
    "hiw_log_density",
    "markov_precision",
    "markov_logdet",
    "propose_edge_flip",
    "log_graph_prior",
    "enumerate_decomposable",
]


def _check_adjacency(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if not np.all(np.diag(adj) == 1):
        raise ValueError("adjacency diagonal must be all ones")
    if not np.all((adj == 0) | (adj == 1)):
        raise ValueError("adjacency entries must be 0/1")
    return adj.astype(np.int8)


def _mcs_order(adj: np.ndarray):
    """Maximum cardinality search visit order."""
    m = adj.shape[0]
    weights = np.zeros(m, dtype=np.int64)
    visited = np.zeros(m, dtype=bool)
    order = []
    for _ in range(m):
        cand = np.where(~visited)[0]
        v = cand[np.argmax(weights[cand])]
        order.append(int(v))
        visited[v] = True
        nbrs = np.where((adj[v] == 1) & ~visited)[0]
        weights[nbrs] += 1
    return order


def is_decomposable(adjacency) -> bool:
    """True iff the graph admits a perfect elimination ordering.

    Runs maximum cardinality search, then the Tarjan-Yannakakis zero-fill-in
    check on the resulting order.
    """
    adj = _check_adjacency(adjacency)
    m = adj.shape[0]
    order = _mcs_order(adj)
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    for i in range(1, m):
        v = order[i]
        earlier = [u for u in np.where(adj[v] == 1)[0] if u != v and rank[u] < i]
        if not earlier:
            continue
        u = max(earlier, key=lambda w: rank[w])
        for w in earlier:
            if w != u and adj[u, w] != 1:
                return False
    return True


def junction_tree(adjacency):
    """Cliques and separators of a decomposable graph, in perfect order.

    Returns
    -------
    cliques : list of tuple of int
    separators : list of tuple of int
        One per clique after the first (possibly empty); the running
        intersection property holds by construction.
    """
    adj = _check_adjacency(adjacency)
    if not is_decomposable(adj):
        raise ValueError("junction_tree requires a decomposable graph")
    m = adj.shape[0]
    order = _mcs_order(adj)
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    # candidate cliques {v} + earlier neighbors, in MCS discovery order
    candidates = []
    for i, v in enumerate(order):
        earlier = tuple(sorted(u for u in np.where(adj[v] == 1)[0] if u != v and rank[u] < i))
        candidates.append(tuple(sorted(earlier + (v,))))
    cliques = []
    for i, c in enumerate(candidates):
        cs = set(c)
        if any(cs < set(d) for j, d in enumerate(candidates) if j != i):
            continue
        if tuple(c) not in cliques:
            cliques.append(tuple(c))
    separators = []
    seen: set = set()
    for j, c in enumerate(cliques):
        if j == 0:
            seen = set(c)
            continue
        sep = tuple(sorted(set(c) & seen))
        separators.append(sep)
        seen |= set(c)
    # sanity: the factorization must account for every vertex exactly once
    count = sum(len(c) for c in cliques) - sum(len(s) for s in separators)
    if count != m or seen != set(range(m)):
        raise ValueError("running intersection property violated; graph not decomposable")
    return cliques, separators


@dataclass(frozen=True)
class DecomposableGraph:
    """Adjacency plus cached junction tree; build with :meth:`from_adjacency`."""

    m: int
    adjacency: np.ndarray
    cliques: tuple
    separators: tuple

    @classmethod
    def from_adjacency(cls, adjacency) -> "DecomposableGraph":
        adj = _check_adjacency(adjacency)
        cliques, separators = junction_tree(adj)
        adj.flags.writeable = False
        return cls(m=adj.shape[0], adjacency=adj, cliques=tuple(cliques), separators=tuple(separators))

    @classmethod
    def empty(cls, m: int) -> "DecomposableGraph":
        return cls.from_adjacency(np.eye(m, dtype=np.int8))

    @classmethod
    def complete(cls, m: int) -> "DecomposableGraph":
        return cls.from_adjacency(np.ones((m, m), dtype=np.int8))

    @property
    def edge_count(self) -> int:
        return int((self.adjacency.sum() - self.m) // 2)

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j]) and i != j


@dataclass(frozen=True)
class HiwParams:
    """Degrees of freedom b > 0 and SPD scale matrix Lambda."""

    b: float
    Lambda: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.Lambda, dtype=float)
        if not self.b > 0:
            raise ValueError(f"HIW degrees of freedom must be positive, got {self.b}")
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1] or not np.allclose(lam, lam.T):
            raise ValueError("Lambda must be square symmetric")
        object.__setattr__(self, "Lambda", lam)


def _logdet_pd(a: np.ndarray) -> float:
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix block is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def _iw_log_norm(b: float, lam: np.ndarray) -> float:
    """log of the integral of |S|^{-(b+2q)/2} exp(-tr(lam S^{-1})/2) dS."""
    q = lam.shape[0]
    delta = 0.5 * (b + q - 1)
    return float(special.multigammaln(delta, q)) + delta * (q * np.log(2.0) - _logdet_pd(lam))


def hiw_log_norm(graph: DecomposableGraph, params: HiwParams) -> float:
    """log H(G, b, Lambda): clique factors over separator factors."""
    lam = params.Lambda
    if lam.shape[0] != graph.m:
        raise ValueError("Lambda dimension does not match the graph")
    total = 0.0
    for c in graph.cliques:
        idx = np.array(c)
        total += _iw_log_norm(params.b, lam[np.ix_(idx, idx)])
    for s in graph.separators:
        if not s:
            continue
        idx = np.array(s)
        total -= _iw_log_norm(params.b, lam[np.ix_(idx, idx)])
    return total


def log_marginal_latents(graph: DecomposableGraph, W) -> float:
    """log p(W | G) with the covariance integrated out against HIW_G(2, I).

    Rows of W are treated as iid N(0, Sigma) with Sigma ~ HIW_G(2, I); the
    marginal is the ratio of posterior to prior normalizers. Returns 0 for
    an empty W. Invariant under row permutations.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    m = graph.m
    if n == 0:
        return 0.0
    if not np.all(np.isfinite(W)):
        raise ValueError("W must be finite")
    eye = np.eye(m)
    post = HiwParams(2.0 + n, eye + W.T @ W)
    prior = HiwParams(2.0, eye)
    return -0.5 * m * n * np.log(2.0 * np.pi) + hiw_log_norm(graph, post) - hiw_log_norm(graph, prior)


def _sample_iw(b: float, lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw from IW(b, lam) via Bartlett factors and triangular solves."""
    q = lam.shape[0]
    nu = b + q - 1
    L = np.linalg.cholesky(lam)
    A = np.zeros((q, q))
    df = nu - np.arange(q)
    A[np.diag_indices(q)] = np.sqrt(rng.chisquare(df))
    if q > 1:
        A[np.tril_indices(q, -1)] = rng.standard_normal(q * (q - 1) // 2)
    # Sigma = (L A^{-T})(L A^{-T})^T has precision L^{-T} A A^T L^{-1} ~ W(nu, lam^{-1})
    G = linalg.solve_triangular(A, L.T, lower=True).T
    return G @ G.T


def sample_hiw(graph: DecomposableGraph, b: float, Lambda, rng: np.random.Generator) -> np.ndarray:
    """Draw Sigma ~ HIW_G(b, Lambda) by sequential clique sampling.

    The first clique block is inverse-Wishart; each later clique is drawn
    conditionally on its separator (inverse-Wishart completion with a matrix
    normal regression block), and covariances to earlier vertices propagate
    through the regression coefficients, so the result is exactly Markov
    with respect to the graph.
    """
    lam = np.asarray(Lambda, dtype=float)
    if lam.shape != (graph.m, graph.m):
        raise ValueError("Lambda dimension does not match the graph")
    m = graph.m
    sigma = np.zeros((m, m))
    hist: list = []
    for j, clique in enumerate(graph.cliques):
        cl = np.array(clique)
        if j == 0:
            sigma[np.ix_(cl, cl)] = _sample_iw(b, lam[np.ix_(cl, cl)], rng)
            hist = list(clique)
            continue
        sep = [v for v in clique if v in hist]
        rest = [v for v in clique if v not in hist]
        r = np.array(rest, dtype=np.intp)
        if not sep:
            # disconnected component: independent inverse-Wishart block
            sigma[np.ix_(r, r)] = _sample_iw(b, lam[np.ix_(r, r)], rng)
            hist.extend(rest)
            continue
        s = np.array(sep, dtype=np.intp)
        lam_ss = lam[np.ix_(s, s)]
        lam_sr = lam[np.ix_(s, r)]
        lam_rr = lam[np.ix_(r, r)]
        Lss = np.linalg.cholesky(lam_ss)
        half = linalg.solve_triangular(Lss, lam_sr, lower=True)
        lam_cond = lam_rr - half.T @ half
        lam_cond = 0.5 * (lam_cond + lam_cond.T)
        sig_cond = _sample_iw(b + len(sep), lam_cond, rng)
        mean_b = linalg.solve_triangular(Lss, half, lower=True, trans="T")
        noise = linalg.solve_triangular(
            Lss, rng.standard_normal((len(sep), len(rest))), lower=True, trans="T"
        ) @ np.linalg.cholesky(sig_cond).T
        B = mean_b + noise
        h = np.array(hist)
        sigma[np.ix_(r, h)] = B.T @ sigma[np.ix_(s, h)]
        sigma[np.ix_(h, r)] = sigma[np.ix_(r, h)].T
        sigma[np.ix_(r, r)] = sig_cond + B.T @ sigma[np.ix_(s, s)] @ B
        hist.extend(rest)
    return 0.5 * (sigma + sigma.T)


def _iw_log_density(sig: np.ndarray, b: float, lam: np.ndarray) -> float:
    q = lam.shape[0]
    L = np.linalg.cholesky(sig)
    half = linalg.solve_triangular(L, lam, lower=True)
    tr = float(np.trace(linalg.solve_triangular(L, half.T, lower=True)))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -_iw_log_norm(b, lam) - 0.5 * (b + 2 * q) * logdet - 0.5 * tr


def hiw_log_density(graph: DecomposableGraph, Sigma, params: HiwParams) -> float:
    """Log density of HIW_G(b, Lambda) at Sigma (clique/separator factorized)."""
    sig = np.asarray(Sigma, dtype=float)
    lam = params.Lambda
    total = 0.0
    for c in graph.cliques:
        idx = np.array(c)
        total += _iw_log_density(sig[np.ix_(idx, idx)], params.b, lam[np.ix_(idx, idx)])
    for s in graph.separators:
        if not s:
            continue
        idx = np.array(s)
        total -= _iw_log_density(sig[np.ix_(idx, idx)], params.b, lam[np.ix_(idx, idx)])
    return total


def markov_precision(graph: DecomposableGraph, Sigma) -> np.ndarray:
    """Sigma^{-1} assembled from clique-block inverses.

    Non-edge entries are exactly zero by construction (they are never
    written), not thresholded.
    """
    sig = np.asarray(Sigma, dtype=float)
    K = np.zeros_like(sig)
    for c in graph.cliques:
        idx = np.ix_(np.array(c), np.array(c))
        K[idx] += np.linalg.inv(sig[idx])
    for s in graph.separators:
        if not s:
            continue
        idx = np.ix_(np.array(s), np.array(s))
        K[idx] -= np.linalg.inv(sig[idx])
    return K


def markov_logdet(graph: DecomposableGraph, Sigma) -> float:
    """log |Sigma| through the clique/separator factorization."""
    sig = np.asarray(Sigma, dtype=float)
    total = 0.0
    for c in graph.cliques:
        idx = np.ix_(np.array(c), np.array(c))
        total += _logdet_pd(sig[idx])
    for s in graph.separators:
        if not s:
            continue
        idx = np.ix_(np.array(s), np.array(s))
        total -= _logdet_pd(sig[idx])
    return total


def propose_edge_flip(graph: DecomposableGraph, rng: np.random.Generator):
    """Toggle one uniformly chosen vertex pair.

    Returns (candidate adjacency, decomposable flag). The pair choice is
    uniform over all m(m-1)/2 pairs and the toggle is deterministic, so the
    proposal is symmetric and needs no Hastings correction; a non-decomposable
    candidate is meant to be treated as an automatic rejection.
    """
    m = graph.m
    t = int(rng.integers(m * (m - 1) // 2))
    i, j = [(a, b) for a in range(m) for b in range(a + 1, m)][t]
    cand = np.array(graph.adjacency, dtype=np.int8)
    cand[i, j] = cand[j, i] = 1 - cand[i, j]
    return cand, bool(is_decomposable(cand))


def log_graph_prior(graph: DecomposableGraph) -> float:
    """log Beta(1+e, 1+M-e) with e the edge count, M = m(m-1)/2.

    The edge-inclusion probability is integrated against Unif(0,1), so the
    prior depends on the graph only through its edge count; the (intractable)
    normalizer over decomposable graphs is left out, which is harmless in
    ratios.
    """
    M = graph.m * (graph.m - 1) // 2
    e = graph.edge_count
    return float(special.betaln(1 + e, 1 + M - e))


def enumerate_decomposable(m: int):
    """All decomposable graphs on m vertices (m <= 5 is practical)."""
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    out = []
    for mask in range(1 << len(pairs)):
        adj = np.eye(m, dtype=np.int8)
        for t, (i, j) in enumerate(pairs):
            if mask >> t & 1:
                adj[i, j] = adj[j, i] = 1
        if is_decomposable(adj):
            out.append(DecomposableGraph.from_adjacency(adj))
    return out
