import math

import numpy as np
import pytest
from scipy.stats import chi2

from weakfpp.fpp import (
    OUTCOME_COLUMNS,
    _Explored,
    _next_growth,
    dijkstra_from_weights,
    dijkstra_oracle,
    outcome_row,
    run_single_source,
    run_two_source,
)
from weakfpp.limits import Disorder, malthusian
from weakfpp.sampling import RngStream
from weakfpp.stats import chi_square_homogeneity, ks_one_sample, ks_two_sample

from conftest import SEED

ENGINES = ("stream", "split", "joint")


def _race(n, s, m, method="stream", key=0):
    d = Disorder(s)
    return [run_two_source(n, d, RngStream(SEED, r, (key, n)), method=method) for r in range(m)]


def _oracle(n, s, m, key=1):
    d = Disorder(s)
    return [dijkstra_oracle(n, d, RngStream(SEED, r, (key, n))) for r in range(m)]


def _weibull_cdf(s):
    return lambda x: -np.expm1(-np.power(np.maximum(x, 0.0), 1.0 / s))


# -- two-source race -------------------------------------------------------
@pytest.mark.parametrize("method", ENGINES)
@pytest.mark.parametrize("s", (0.5, 1.0, 2.0))
def test_n2_exact_law(method, s):
    res = _race(2, s, 20_000, method, key=2)
    assert all(o.hopcount == 1 and o.G1 == 0 and o.G2 == 0 for o in res)
    c = [o.cost_original for o in res]
    assert ks_one_sample(c, _weibull_cdf(s)).p_value > 0.01


def test_n3_s1_matches_direct_edge_sampling():
    m = 10_000
    res = _race(3, 1.0, m, key=3)
    e = RngStream(SEED, 0, (4,)).exponentials(3 * m).reshape(m, 3)
    direct = np.minimum(e[:, 0], e[:, 1] + e[:, 2])
    assert ks_two_sample([o.cost_original for o in res], direct).p_value > 0.01
    # P(direct edge optimal) = 1 - E exp(-Gamma(2, 1)) = 3/4
    p_hat = np.mean([o.hopcount == 1 for o in res])
    assert abs(p_hat - 0.75) < 3 * math.sqrt(0.75 * 0.25 / m)
    orc = _oracle(3, 1.0, m, key=5)
    q_hat = np.mean([h == 1 for _, h in orc])
    pooled = 0.5 * (p_hat + q_hat)
    assert abs(p_hat - q_hat) < 2.58 * math.sqrt(2 * pooled * (1 - pooled) / m)


def _recursive_tree_depth_pmf(n, kmax=60):
    # at s = 1 the hopcount is the depth of a uniform non-root node of a random
    # recursive tree on n nodes: node k has depth sum_{j<=k} Bernoulli(1/j)
    pmf = np.zeros(kmax)
    pmf[0] = 1.0
    acc = np.zeros(kmax)
    for j in range(1, n):
        p = 1.0 / j
        nxt = pmf * (1 - p)
        nxt[1:] += pmf[:-1] * p
        pmf = nxt
        acc += pmf
    return acc / (n - 1)


def test_hopcount_law_s1_matches_recursive_tree_depth():
    n, m = 1000, 4000
    pmf = _recursive_tree_depth_pmf(n)
    h = np.array([o.hopcount for o in _race(n, 1.0, m, key=20)])
    lo, hi = 2, 14
    obs = np.bincount(h, minlength=pmf.size)[:pmf.size]
    o = np.concatenate([[obs[:lo].sum()], obs[lo:hi], [obs[hi:].sum()]])
    e = m * np.concatenate([[pmf[:lo].sum()], pmf[lo:hi], [pmf[hi:].sum()]])
    chi = float(((o - e) ** 2 / e).sum())
    assert chi2.sf(chi, o.size - 1) > 0.01


def test_recursive_tree_depth_mean():
    # E[depth] = H_{n-1} averaged over ranks: (1/(n-1)) sum_k H_k = (n/(n-1)) H_{n-1} - 1
    n = 500
    pmf = _recursive_tree_depth_pmf(n)
    harm = sum(1.0 / j for j in range(1, n))
    assert np.dot(np.arange(pmf.size), pmf) == pytest.approx(n / (n - 1) * harm - 1, rel=1e-12)


@pytest.mark.parametrize("n,s", [(5, 0.5), (10, 1.0), (10, 2.0), (30, 1.0)])
def test_race_matches_dijkstra_oracle(n, s):
    m = 4000
    race = _race(n, s, m, key=6)
    orc = _oracle(n, s, m, key=7)
    assert ks_two_sample([o.cost_original for o in race], [c for c, _ in orc]).p_value > 0.01
    assert chi_square_homogeneity([o.hopcount for o in race], [h for _, h in orc]).p_value > 0.01


@pytest.mark.parametrize("s", (0.5, 2.0))
def test_engines_agree(s):
    n, m = 40, 3000
    ref = _race(n, s, m, "stream", key=8)
    for k, method in enumerate(("split", "joint")):
        other = _race(n, s, m, method, key=9 + k)
        assert ks_two_sample([o.cost_original for o in ref],
                             [o.cost_original for o in other]).p_value > 0.01
        assert chi_square_homogeneity([o.hopcount for o in ref],
                                      [o.hopcount for o in other]).p_value > 0.01


@pytest.mark.parametrize("method", ENGINES)
def test_determinism(method):
    a = run_two_source(60, Disorder(1.4), RngStream(SEED, 5), method)
    b = run_two_source(60, Disorder(1.4), RngStream(SEED, 5), method)
    assert a == b


@pytest.mark.parametrize("method", ENGINES)
@pytest.mark.parametrize("s", (0.5, 1.0, 2.0))
def test_outcome_invariants(method, s):
    d = Disorder(s)
    lam = malthusian(d).lam
    for o in _race(50, s, 30, method, key=12):
        assert o.T12 > 0 and o.hopcount >= 1 and o.G1 >= 0 and o.G2 >= 0
        assert o.hopcount == o.G1 + o.G2 + 1
        assert o.cost_rescaled == 2 * o.T12
        assert o.cost_original == pytest.approx(o.cost_rescaled / 49**s, rel=1e-14)
        assert o.recentered_weight == pytest.approx(50**s * o.cost_original - math.log(50) / lam,
                                                    rel=1e-12, abs=1e-12)
        assert all(t <= o.T12 for t in o.activation_times)


@pytest.mark.parametrize("method", ("split", "joint"))
@pytest.mark.parametrize("s", (0.5, 2.0))
def test_debug_bookkeeping(method, s):
    for r in range(5):
        run_two_source(40, Disorder(s), RngStream(SEED, r), method, debug=True)


def test_input_checks():
    with pytest.raises(ValueError):
        run_two_source(1, Disorder(1.0), RngStream(SEED))
    with pytest.raises(ValueError):
        run_two_source(10, Disorder(30.0), RngStream(SEED))
    with pytest.raises(ValueError):
        run_two_source(10, Disorder(1.0), RngStream(SEED), method="nope")
    with pytest.raises(ValueError):
        run_single_source(10, Disorder(1.0), RngStream(SEED), target=1)


def test_explored_size_grows_faster_in_larger_graph():
    # with k explored after j growth events, U = n - k is larger for larger n at every step
    for r in range(10):
        small = run_two_source(100, Disorder(1.0), RngStream(SEED, r))
        large = run_two_source(1000, Disorder(1.0), RngStream(SEED, r))
        steps = min(small.events, large.events)
        u_small = [100 - (2 + j) for j in range(steps)]
        u_large = [1000 - (2 + j) for j in range(steps)]
        assert all(b >= a for a, b in zip(u_small, u_large))


def test_activation_fraction_decreases_before_collision_scale():
    n, m = 10_000, 2000
    d = Disorder(1.0)
    lam = malthusian(d).lam
    res = _race(n, 1.0, m, key=14)
    t_star = math.log(n) / (2 * lam)
    frac = [np.mean([any(t < t_star - c for t in o.activation_times) for o in res])
            for c in (0, 1, 2, 3)]
    assert all(b < a for a, b in zip(frac, frac[1:]))


def test_outcome_row_format():
    o = run_two_source(20, Disorder(0.5), RngStream(SEED))
    row = outcome_row(o, SEED, 0)
    assert len(row) == len(OUTCOME_COLUMNS)
    rec = dict(zip(OUTCOME_COLUMNS, row))
    assert float(rec["T12"]) == o.T12
    assert float(rec["C"]) == o.cost_original
    assert int(rec["H_n"]) == o.hopcount
    assert rec["T12"] == format(o.T12, ".17g")


# -- single source ---------------------------------------------------------
@pytest.mark.parametrize("s", (0.5, 1.0, 2.0))
def test_single_source_n2_law(s):
    d = Disorder(s)
    res = [run_single_source(2, d, RngStream(SEED, r, (15,))) for r in range(20_000)]
    assert all(o.hopcount == 1 for o in res)
    assert ks_one_sample([o.cost_original for o in res], _weibull_cdf(s)).p_value > 0.01


@pytest.mark.parametrize("s", (0.5, 1.0, 2.0))
def test_single_source_law_matches_two_source(s):
    n, m = 50, 4000
    d = Disorder(s)
    single = [run_single_source(n, d, RngStream(SEED, r, (16,))) for r in range(m)]
    two = _race(n, s, m, key=17)
    assert ks_two_sample([o.cost_original for o in single],
                         [o.cost_original for o in two]).p_value > 0.01
    assert chi_square_homogeneity([o.hopcount for o in single],
                                  [o.hopcount for o in two]).p_value > 0.01


def test_single_source_cluster_state():
    o = run_single_source(200, Disorder(1.0), RngStream(SEED, 3))
    cl = o.cluster
    assert cl.labels[0] == 1 and cl.labels[-1] == 2
    assert np.all(np.diff(cl.birth_times) >= 0)
    assert cl.birth_times[-1] == o.cost_rescaled
    assert cl.generations[-1] == o.hopcount
    assert len(set(cl.labels.tolist())) == cl.size


@pytest.mark.parametrize("k", (1, 5, 20))
def test_growth_time_exponential_at_s1(k):
    # at s = 1 the growth hazard is constant: rate k (n - k) / (n - 1)
    n, m = 50, 10_000
    ex = _Explored(n)
    births = np.linspace(0.0, 1.0, k)
    for t in births:
        ex.add(t, 0, 1, -1, 0)
    t0 = 1.0
    rng = RngStream(SEED, k, (18,))
    gaps = np.array([_next_growth(ex, n - k, n, 1.0, t0, rng.exponential(), 0.1) - t0
                     for _ in range(m)])
    rate = k * (n - k) / (n - 1)
    assert abs(gaps.mean() - 1 / rate) < 3 / rate / math.sqrt(m)
    assert abs(np.var(gaps) - 1 / rate**2) < 5 * math.sqrt(8) / rate**2 / math.sqrt(m)


# -- Dijkstra oracle -------------------------------------------------------
def test_oracle_n2():
    for s in (0.5, 2.0):
        rng = RngStream(SEED, 0, (19,))
        e = RngStream(SEED, 0, (19,)).exponentials(1)[0]
        cost, hops = dijkstra_oracle(2, Disorder(s), rng)
        assert hops == 1 and cost == pytest.approx(e**s, rel=1e-15)


def test_oracle_forced_triangle():
    w = np.array([[np.inf, 5.0, 1.0], [5.0, np.inf, 2.0], [1.0, 2.0, np.inf]])
    assert dijkstra_from_weights(w) == (3.0, 2)


def test_oracle_against_scipy_shortest_path():
    from scipy.sparse.csgraph import shortest_path

    rng = np.random.default_rng(0)
    for n in (5, 20, 60):
        w = rng.exponential(size=(n, n)) ** 1.5
        w = np.triu(w, 1)
        w = w + w.T
        ref = shortest_path(w, method="D", directed=False, indices=0)[1]
        full = w.copy()
        np.fill_diagonal(full, np.inf)
        assert dijkstra_from_weights(full)[0] == pytest.approx(ref, rel=1e-12)


def test_oracle_memory_guard():
    with pytest.raises(MemoryError):
        dijkstra_oracle(2001, Disorder(1.0), RngStream(SEED))
