import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from rdslab.errors import (
    CapacityError,
    ConsistencyError,
    DataError,
    DegenerateError,
    DimensionError,
    DomainError,
    EdgeListParseError,
    NotApplicableError,
)
from rdslab.graph import (
    BlockModelSpec,
    block_levels,
    block_transition,
    check_c1_sufficient,
    check_c2prime,
    circulant_block_kernel,
    complete_block_graph,
    from_edge_list,
    graph_from_weights,
    kernel_spectrum,
    pi_inner,
    read_edge_list,
    read_node_attributes,
    sbm_from_config,
    sbm_params,
    sbm_sample,
    second_eigenvalue,
    spectral_decomposition,
    stationary_distribution,
    stationary_residual,
    two_block_kernel,
    write_edge_list,
)
from rdslab.walk import stream


def random_graph(rng, n, density=0.5, weighted=True):
    """Connected random weighted graph: a spanning path plus random extra edges."""
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = rng.uniform(0.5, 2.0) if weighted else 1.0
    extra = np.triu(rng.random((n, n)) < density, 2)
    w[extra] = rng.uniform(0.1, 3.0, extra.sum()) if weighted else 1.0
    w = w + w.T
    return graph_from_weights(w)


@st.composite
def weight_matrices(draw, max_n=10):
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_graph(np.random.default_rng(seed), n, density=draw(st.floats(0, 1)))


# --------------------------------------------------------------------------
# edge lists


def test_triangle():
    g = from_edge_list(["0 1 1", "1 2 1", "0 2 1"])
    assert np.array_equal(g.deg, [2, 2, 2])
    assert np.allclose(g.pi, 1 / 3, atol=1e-15)


def test_path():
    g = from_edge_list(["0 1 1", "1 2 1"])
    assert np.allclose(g.pi, [0.25, 0.5, 0.25], atol=1e-15)


def test_default_weight_and_comments():
    g = from_edge_list(["# header", "0 1", "", "1 2 2.5  # trailing"])
    assert np.allclose(g.deg, [1, 3.5, 2.5])


def test_disjoint_edges_keep_largest_component():
    with pytest.warns(UserWarning, match="dropped 2 nodes"):
        g = from_edge_list(["0 1 1", "2 3 1"])
    assert g.n == 2
    assert g.n_dropped == 2


def test_largest_component_wins():
    with pytest.warns(UserWarning, match="dropped 2 nodes"):
        g = from_edge_list(["0 1 1", "2 3 1", "3 4 1"])
    assert list(g.labels) == [2, 3, 4]


@pytest.mark.parametrize(
    "lines,lineno",
    [
        (["0 1 1", "0 x 1"], 2),
        (["0 1 1", "1"], 2),
        (["# c", "0 1 1", "1 2 3 4"], 3),
        (["0 1 1", "1 0 1"], 2),  # duplicate pair
        (["0 0 1"], 1),  # self loop
        (["0 -1 1"], 1),
    ],
)
def test_parse_errors_report_line(lines, lineno):
    with pytest.raises(EdgeListParseError, match=f"line {lineno}"):
        from_edge_list(lines)


def test_negative_weight_is_domain_error():
    with pytest.raises(DomainError):
        from_edge_list(["0 1 -1"])


def test_empty_input():
    with pytest.raises(Exception):
        from_edge_list(["# nothing"])


def test_edge_list_roundtrip(tmp_path):
    g = random_graph(np.random.default_rng(0), 12)
    write_edge_list(g, tmp_path / "g.txt")
    h = read_edge_list(tmp_path / "g.txt")
    assert np.allclose(h.weights.toarray(), g.weights.toarray(), rtol=0, atol=0)


def test_node_attributes(tmp_path):
    g = from_edge_list(["0 1", "1 2"])
    (tmp_path / "a.csv").write_text("node,age\n2,30\n0,10\n1,20\n")
    name, vals = read_node_attributes(tmp_path / "a.csv", g)
    assert name == "age" and list(vals) == [10, 20, 30]
    (tmp_path / "b.csv").write_text("node,age\n0,10\n1,20\n")
    with pytest.raises(DataError):
        read_node_attributes(tmp_path / "b.csv", g)
    (tmp_path / "c.csv").write_text("id,age\n0,1\n")
    with pytest.raises(EdgeListParseError, match="line 1"):
        read_node_attributes(tmp_path / "c.csv", g)


def test_asymmetric_and_self_loop_weights_rejected():
    with pytest.raises(DomainError):
        graph_from_weights(np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(DomainError):
        graph_from_weights(np.array([[1.0, 1.0], [1.0, 0]]))


# --------------------------------------------------------------------------
# graph invariants


@settings(max_examples=60, deadline=None)
@given(weight_matrices())
def test_graph_invariants(g):
    W = g.weights.toarray()
    assert np.array_equal(W, W.T) and not W.diagonal().any()
    assert np.all(g.deg > 0) and np.all(g.pi > 0)
    assert abs(g.pi.sum() - 1) <= 1e-12
    P = g.transition_matrix()
    assert stationary_residual(P, g.pi) <= 1e-10
    F = g.pi[:, None] * P
    assert np.max(np.abs(F - F.T)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(weight_matrices(max_n=12), st.integers(0, 2**32 - 1))
def test_spectrum_invariants(g, seed):
    spec = spectral_decomposition(g)
    f, pi = spec.eigenfunctions, spec.pi
    gram = f.T @ (f * pi[:, None])
    assert np.max(np.abs(gram - np.eye(g.n))) <= 1e-8
    assert np.array_equal(f[:, 0], np.ones(g.n))
    assert spec.eigenvalues[0] == 1.0
    assert np.all(np.abs(spec.eigenvalues) <= 1 + 1e-12)
    mods = np.abs(spec.eigenvalues[1:])
    assert np.all(np.diff(mods) <= 1e-12)
    P = g.transition_matrix()
    for t in (1, 2, 3):
        assert np.max(np.abs(spec.power(t) - np.linalg.matrix_power(P, t))) <= 1e-8
    y = np.random.default_rng(seed).normal(size=g.n)
    a = spec.coefficients(y)
    assert abs(np.sum(a**2) - pi @ y**2) <= 1e-10 * max(1, pi @ y**2)
    assert abs(np.sum(a[1:] ** 2) - (pi @ y**2 - (pi @ y) ** 2)) <= 1e-10 * max(1, pi @ y**2)


def test_reconstruction_n200():
    g = random_graph(np.random.default_rng(3), 200, density=0.05)
    spec = spectral_decomposition(g)
    P = g.transition_matrix()
    for t in (1, 2, 3):
        assert np.max(np.abs(spec.power(t) - np.linalg.matrix_power(P, t))) <= 1e-8


def test_two_node_spectrum():
    spec = spectral_decomposition(from_edge_list(["0 1 1"]))
    assert np.allclose(spec.eigenvalues, [1, -1], atol=1e-14)
    assert np.allclose(spec.eigenfunctions[:, 1], [1, -1], atol=1e-14)


def test_block_chain_spectrum():
    for p in (0.2, 0.55, 0.9):
        spec = kernel_spectrum(two_block_kernel(p), [0.5, 0.5])
        assert spec.lambda2 == pytest.approx(2 * p - 1, abs=1e-14)


def test_four_cycle_spectrum():
    g = from_edge_list(["0 1", "1 2", "2 3", "3 0"])
    spec = spectral_decomposition(g)
    # modulus order: 1, -1, then the two zeros
    assert np.allclose(spec.eigenvalues, [1, -1, 0, 0], atol=1e-12)
    assert spec.lambda_min == pytest.approx(-1)


def test_tie_break_positive_first():
    # 6-cycle: cos(2 pi k / 6) gives moduli ties 1/-1 and 1/2/-1/2
    g = from_edge_list([f"{i} {(i + 1) % 6}" for i in range(6)])
    assert np.allclose(spectral_decomposition(g).eigenvalues, [1, -1, 0.5, 0.5, -0.5, -0.5], atol=1e-12)


def test_sign_convention():
    g = random_graph(np.random.default_rng(9), 9)
    f = spectral_decomposition(g).eigenfunctions
    for col in f.T:
        nz = col[np.abs(col) > 1e-12]
        assert nz[0] > 0


def test_capacity_limit():
    g = random_graph(np.random.default_rng(1), 20)
    with pytest.raises(CapacityError):
        spectral_decomposition(g, dense_limit=10)


def test_check_gap():
    with pytest.raises(DegenerateError):
        spectral_decomposition(from_edge_list(["0 1"])).check_gap()


def test_second_eigenvalue_sparse_matches_dense():
    g = random_graph(np.random.default_rng(4), 120, density=0.05)
    assert second_eigenvalue(g) == pytest.approx(spectral_decomposition(g).lambda2, abs=1e-9)


# --------------------------------------------------------------------------
# pi inner product


def test_pi_inner():
    g = random_graph(np.random.default_rng(5), 10)
    spec = spectral_decomposition(g)
    f1 = spec.eigenfunctions[:, 0]
    y = np.arange(10.0)
    assert pi_inner(f1, f1, g.pi) == pytest.approx(1, abs=1e-12)
    assert pi_inner(y, f1, g.pi) == pytest.approx(g.pi @ y, abs=1e-12)
    var = g.pi @ y**2 - (g.pi @ y) ** 2
    total = sum(pi_inner(y, spec.eigenfunctions[:, l], g.pi) ** 2 for l in range(1, 10))
    assert total == pytest.approx(var, abs=1e-10)
    with pytest.raises(DimensionError):
        pi_inner(y[:3], f1, g.pi)


# --------------------------------------------------------------------------
# stochastic block model


def test_sbm_params_and_validation():
    p, r = sbm_params(0.6, 0.01)
    assert (p, r) == pytest.approx((0.008, 0.002))
    with pytest.raises(DegenerateError):
        sbm_sample(10, 0.0, 0.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        sbm_sample(10, 0.1, 0.2, np.random.default_rng(0))
    with pytest.raises(DomainError):
        sbm_sample(11, 0.2, 0.1, np.random.default_rng(0))


def test_sbm_edge_probabilities():
    # pooled over seeds, within/between densities match p and r within 4 SE
    n, p, r = 200, 0.1, 0.02
    within = between = 0
    reps = 20
    for k in range(reps):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = sbm_sample(n, p, r, stream(11, k))
        assert g.n_dropped == 0
        W = g.weights.toarray() > 0
        same = g.blocks[:, None] == g.blocks[None, :]
        within += W[same].sum() / 2
        between += W[~same].sum() / 2
    n_within = reps * 2 * (n // 2) * (n // 2 - 1) / 2
    n_between = reps * (n // 2) ** 2
    for count, total, q in ((within, n_within, p), (between, n_between, r)):
        assert abs(count / total - q) <= 4 * np.sqrt(q * (1 - q) / total)


def test_sbm_from_config_is_deterministic():
    cfg = {"n": 100, "p": 0.2, "r": 0.05, "seed": 4}
    a, b = sbm_from_config(cfg), sbm_from_config(cfg)
    assert (a.weights != b.weights).nnz == 0


def _sparse_sbm_lambda(lam, mean_degree):
    # informative eigenvalue of a sparse two-block SBM walk: (lam d + 1/lam)/(d + 1)
    return (lam * mean_degree + 1 / lam) / (mean_degree + 1)


def test_sbm_realized_lambda2_n2000():
    vals = np.array([second_eigenvalue(sbm_sample(2000, 0.009, 0.001, stream(7, k))) for k in range(50)])
    assert abs(vals.mean() - 0.8) <= 0.05
    assert abs(vals.mean() - _sparse_sbm_lambda(0.8, 0.01 * 999)) <= 0.01
    assert vals.std() <= 0.01  # frozen spread: 0.0044 at seed 7


@pytest.mark.slow
def test_sbm_realized_lambda2_n5000():
    vals = [second_eigenvalue(sbm_sample(5000, 0.0075, 0.0025, stream(8, k))) for k in range(2)]
    for v in vals:
        assert abs(v - 0.5) <= 0.06
        assert abs(v - _sparse_sbm_lambda(0.5, 0.01 * 2499.5)) <= 0.01


def test_complete_block_graph_lambda2():
    p, r = 0.7, 0.3
    g = complete_block_graph([30, 30], [[p, r], [r, p]])
    # finite-n exclusion of the self weight shifts lambda_2 below (p - r)/(p + r)
    lam = (p * 29 - r * 30) / (p * 29 + r * 30)
    assert spectral_decomposition(g).lambda2 == pytest.approx(lam, abs=1e-12)


# --------------------------------------------------------------------------
# block kernels


def test_block_transition_examples():
    P, lam = block_transition(BlockModelSpec((100, 100), [[0.008, 0.002], [0.002, 0.008]]))
    assert lam == pytest.approx(0.6, abs=1e-14)
    assert np.allclose(P.sum(axis=1), 1)
    _, lam = block_transition(BlockModelSpec((50, 50), [[0.3, 0.3], [0.3, 0.3]]))
    assert lam == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(DomainError):
        block_transition(BlockModelSpec((10,), [[0.1]]))
    with pytest.raises(DegenerateError):
        block_transition(BlockModelSpec((10, 10), [[0.0, 0.0], [0.0, 0.3]]))
    with pytest.raises(DomainError):
        BlockModelSpec((1, 1), [[0.1, 0.2], [0.3, 0.1]])


def test_circulant_kernel_lambda2():
    P = circulant_block_kernel(2, 0.4)
    spec = kernel_spectrum(P, np.full(4, 0.25))
    assert spec.lambda2 == pytest.approx(0.4 - 0.6 / 3, abs=1e-14)


def test_stationary_distribution():
    P = np.array([[0.5, 0.5, 0], [0.25, 0.5, 0.25], [0, 0.5, 0.5]])
    assert np.allclose(stationary_distribution(P), [0.25, 0.5, 0.25])


# --------------------------------------------------------------------------
# condition (c2')


@pytest.mark.parametrize("p", [0.55, 0.75, 0.9, 0.3])
def test_c2prime_two_block(p):
    res = check_c2prime(two_block_kernel(p), [0.5, 0.5])
    assert res.gamma == pytest.approx(abs(2 * p - 1), abs=1e-12)
    assert res.passed == (abs(2 * p - 1) < 1 / np.sqrt(2))


def test_c2prime_rank_one():
    pi = np.array([0.2, 0.3, 0.5])
    assert check_c2prime(np.tile(pi, (3, 1)), pi).gamma == pytest.approx(0, abs=1e-15)


def test_c2prime_circulant_window():
    # the 1/4 < p < 1/4 + 1/(2 sqrt 2) window is the row-L1 criterion; the exact
    # constant |4p - 1|/3 never exceeds it, so the exact check passes wherever
    # the window does
    lo, hi = 0.25, 0.25 + 1 / (2 * np.sqrt(2))
    pi = np.full(4, 0.25)
    for p in np.linspace(0.26, 0.99, 74):
        res = check_c2prime(circulant_block_kernel(2, p), pi)
        assert res.row_l1_to_pi == pytest.approx(2 * abs(p - 0.25), abs=1e-12)
        assert (res.row_l1_to_pi < 1 / np.sqrt(2)) == (lo < p < hi)
        assert res.gamma == pytest.approx(abs(4 * p - 1) / 3, abs=1e-12)
        assert res.gamma <= res.row_l1_to_pi + 1e-15
        if lo < p < hi:
            assert res.passed


def test_c2prime_nonstationary_pi():
    with pytest.raises(ConsistencyError):
        check_c2prime(two_block_kernel(0.7), [0.4, 0.6])


def _lp_gamma(P, pi):
    """max_i max {(P f)_i : -1 <= f <= 1, <f, pi> = 0} by linear programming."""
    n = len(pi)
    best = 0.0
    for i in range(n):
        res = linprog(-P[i], A_eq=pi[None, :], b_eq=[0.0], bounds=[(-1, 1)] * n, method="highs")
        best = max(best, -res.fun)
    return best


def _vertex_gamma(P, pi):
    """Vertex enumeration: all coordinates at +-1 except one free coordinate."""
    n = len(pi)
    best = 0.0
    for i in range(n):
        for free in range(n):
            others = [j for j in range(n) if j != free]
            for mask in range(2 ** (n - 1)):
                f = np.zeros(n)
                for b, j in enumerate(others):
                    f[j] = 1.0 if mask >> b & 1 else -1.0
                f[free] = -(pi[others] @ f[others]) / pi[free]
                if abs(f[free]) <= 1 + 1e-12:
                    best = max(best, abs(P[i] @ f))
    return best


@pytest.mark.parametrize("seed", range(12))
def test_c2prime_matches_lp_and_vertices(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    if seed % 2:
        g = random_graph(rng, n, density=0.7)
        P, pi = g.transition_matrix(), g.pi
    else:  # non-reversible row-stochastic kernel
        P = rng.random((n, n)) ** 3
        P /= P.sum(axis=1, keepdims=True)
        pi = stationary_distribution(P)
    gamma = check_c2prime(P, pi).gamma
    assert _lp_gamma(P, pi) <= gamma + 1e-6
    assert abs(_lp_gamma(P, pi) - gamma) <= 1e-6
    assert abs(_vertex_gamma(P, pi) - gamma) <= 1e-6


# --------------------------------------------------------------------------
# condition (c1) sufficiency


def test_c1_two_blocks():
    assert check_c1_sufficient(two_block_kernel(0.7), [1, -1])
    assert not check_c1_sufficient(two_block_kernel(0.7), [1, 2])


def test_c1_2k_blocks():
    y = [1.0, -1.0, 2.5, -2.5]
    assert check_c1_sufficient(circulant_block_kernel(2, 0.4), y)
    P = circulant_block_kernel(2, 0.4)
    P[0] = [0.4, 0.1, 0.3, 0.2]  # breaks p(a, b) = p(-a, -b)
    assert not check_c1_sufficient(P, y)


def test_block_levels():
    assert list(block_levels([1, 1, -1, -1], [0, 0, 1, 1])) == [1, -1]
    with pytest.raises(NotApplicableError):
        block_levels([1, 2, -1, -1], [0, 0, 1, 1])


def test_c1_ill_defined_level_kernel():
    # nodes 0 and 1 share level 1 but send different mass to level -1
    P = np.array([[0.5, 0.2, 0.3], [0.1, 0.5, 0.4], [0.3, 0.3, 0.4]])
    with pytest.raises(NotApplicableError):
        check_c1_sufficient(P, [1.0, 1.0, -1.0])
