"""Bit-exact parity between the compiled kernels and the pure-Python twin,
plus determinism of the chunked parallel runner."""

import numpy as np
import pytest

from brwcap import lattice, offspring, streams
from brwcap._tables import PointTable, point_hash
from brwcap.backend import has_compiled, kernels_compiled, kernels_py

pytestmark = pytest.mark.skipif(not has_compiled(),
                                reason="compiled backend not built")


@pytest.fixture(scope="module")
def mu():
    return offspring.preset("binary")


@pytest.fixture(scope="module")
def geo():
    return offspring.preset("geometric:40")


def test_philox_matches_numpy():
    """The in-kernel Philox must reproduce numpy's stream exactly."""
    tab = PointTable(np.zeros((1, 2), dtype=np.int64))
    a = kernels_compiled.srw_visits(123456789, 42, 1, 2, 50, tab)
    b = kernels_py.srw_visits(123456789, 42, 1, 2, 50, tab)
    assert np.array_equal(a[0], b[0])


def test_point_table_lookup():
    pts = np.array([[1, 2, -3], [0, 0, 0], [5, -5, 5]], dtype=np.int64)
    tab = PointTable(pts)
    assert tab.lookup([0, 0, 0]) == 1
    assert tab.lookup([1, 2, -3]) == 0
    assert tab.lookup([9, 9, 9]) == -1
    assert point_hash([1, 2, -3]) != point_hash([-3, 2, 1])


@pytest.mark.parametrize("adj", [False, True])
def test_parity_tree_avoid(mu, adj):
    K = PointTable(np.array([[2, 0, 0, 0, 0], [1, 1, 0, 0, 0]], dtype=np.int64))
    a = kernels_compiled.tree_avoid(99, 0, 300, 5, [0] * 5, adj, mu.cdf,
                                    mu.adj_cdf, K, 10.0 ** 2, 10**5)
    b = kernels_py.tree_avoid(99, 0, 300, 5, [0] * 5, adj, mu.cdf, mu.adj_cdf,
                              K, 10.0 ** 2, 10**5)
    assert a == b


def test_parity_geometric_offspring(geo):
    K = PointTable(np.array([[1, 0, 0, 0, 0]], dtype=np.int64))
    a = kernels_compiled.tree_avoid(5, 0, 300, 5, [0] * 5, False, geo.cdf,
                                    geo.adj_cdf, K, 8.0 ** 2, 10**5)
    b = kernels_py.tree_avoid(5, 0, 300, 5, [0] * 5, False, geo.cdf,
                              geo.adj_cdf, K, 8.0 ** 2, 10**5)
    assert a == b


def test_parity_past_and_visits(mu):
    tab = PointTable(np.array([[0, 0, 0, 0, 0], [1, 0, 0, 0, 0]], dtype=np.int64))
    a = kernels_compiled.past_visits(11, 0, 40, 5, [0] * 5, mu.cdf, mu.adj_cdf,
                                     tab, 8.0 ** 2, 10**6)
    b = kernels_py.past_visits(11, 0, 40, 5, [0] * 5, mu.cdf, mu.adj_cdf, tab,
                               8.0 ** 2, 10**6)
    assert np.array_equal(a[0], b[0]) and np.allclose(a[1], b[1]) and a[2] == b[2]
    K = PointTable(lattice.ball([0] * 5, 1).coords)
    a = kernels_compiled.past_avoid(7, 0, 60, 5, [2, 0, 0, 0, 0], mu.cdf,
                                    mu.adj_cdf, K, 10.0 ** 2, 10**6)
    b = kernels_py.past_avoid(7, 0, 60, 5, [2, 0, 0, 0, 0], mu.cdf, mu.adj_cdf,
                              K, 10.0 ** 2, 10**6)
    assert a == b


def test_parity_full_modes(mu):
    st = PointTable(np.array([[0, 0, 0, 0, 0], [1, 0, 0, 0, 0]], dtype=np.int64),
                    np.array([0, 1], dtype=np.int32))
    args = (5, [0] * 5, mu.cdf, mu.split_cdf, mu.split_kp, mu.split_kf)
    a = kernels_compiled.full_localtime(5, 0, 40, *args, st, 2, 8.0 ** 2, 10**6)
    b = kernels_py.full_localtime(5, 0, 40, *args, st, 2, 8.0 ** 2, 10**6)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    vals = np.array([0.04, 0.01])
    for crit in (False, True):
        a = kernels_compiled.full_phi_sum(6, 0, 40, *args, st, vals, 8.0 ** 2,
                                          10**6, crit)
        b = kernels_py.full_phi_sum(6, 0, 40, *args, st, vals, 8.0 ** 2, 10**6,
                                    crit)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_parity_lastpassage(mu):
    Kt = PointTable(np.array([[0, 0, 0, 0, 0]], dtype=np.int64),
                    np.array([1], dtype=np.int32))
    KB = PointTable(lattice.ball([0] * 5, 1).coords)
    args = (5, [2, 0, 0, 0, 0], mu.cdf, mu.split_cdf, mu.split_kp, mu.split_kf)
    a = kernels_compiled.full_lastpassage(21, 0, 80, *args, KB, Kt, 10.0 ** 2,
                                          10**6)
    b = kernels_py.full_lastpassage(21, 0, 80, *args, KB, Kt, 10.0 ** 2, 10**6)
    assert a == b


def test_parity_first_entry_and_height(mu):
    gam = np.array([[3, 0, 0, 0, 0], [2, 0, 0, 0, 0]], dtype=np.int64)
    A = PointTable(np.array([[2, 0, 0, 0, 0]], dtype=np.int64))
    a = kernels_compiled.tree_first_entry(31, 0, 300, 5, [3, 0, 0, 0, 0],
                                          mu.cdf, A, gam, 10**5)
    b = kernels_py.tree_first_entry(31, 0, 300, 5, [3, 0, 0, 0, 0], mu.cdf, A,
                                    gam, 10**5)
    assert a == b
    a = kernels_compiled.tree_height_tail(41, 0, 500, mu.cdf, 40, 10**6)
    b = kernels_py.tree_height_tail(41, 0, 500, mu.cdf, 40, 10**6)
    assert a == b


def test_parity_grower_vs_batch(mu):
    st = PointTable(np.array([[0, 0, 0, 0, 0], [1, 0, 0, 0, 0]], dtype=np.int64),
                    np.array([0, 1], dtype=np.int32))
    batch, _ = kernels_compiled.full_localtime(5, 9, 1, 5, [0] * 5, mu.cdf,
                                               mu.split_cdf, mu.split_kp,
                                               mu.split_kf, st, 2, 8.0 ** 2,
                                               10**6)
    for kern in (kernels_compiled, kernels_py):
        g = kern.LocaltimeGrower(5, [0] * 5, mu.cdf, mu.split_cdf, mu.split_kp,
                                 mu.split_kf, st, 2, 8.0 ** 2, 10**6, 5, 9)
        # pause at intermediate levels, then exhaust; counts must agree
        g.grow_until(1)
        g.grow_until(3)
        status = g.grow_until(-1)
        assert status == 1
        assert np.array_equal(g.counts, batch[0])


def test_grower_clone_independent(mu):
    st = PointTable(np.array([[0, 0, 0, 0, 0]], dtype=np.int64),
                    np.array([0], dtype=np.int32))
    g = kernels_compiled.LocaltimeGrower(5, [0] * 5, mu.cdf, mu.split_cdf,
                                         mu.split_kp, mu.split_kf, st, 1,
                                         8.0 ** 2, 10**6, 5, 11)
    g.grow_until(1)
    c1 = g.clone(1001)
    c2 = g.clone(1002)
    st1 = c1.grow_until(-1)
    st2 = c2.grow_until(-1)
    assert st1 == 1 and st2 == 1
    # clones share the past but explore independent futures
    assert c1.min_count() >= 1 and c2.min_count() >= 1


def test_run_chunked_worker_invariance(mu):
    tab = PointTable(np.array([[1, 0, 0, 0, 0]], dtype=np.int64))
    k0 = streams.task_key(3, "worker-invariance")
    extra = (5, 2000, tab)
    r1 = streams.run_chunked(kernels_compiled.srw_visits, k0, 6000, extra,
                             workers=1, chunk=1000)
    r2 = streams.run_chunked(kernels_compiled.srw_visits, k0, 6000, extra,
                             workers=2, chunk=1000)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(r1, r2))
    assert sum(p[0][0] for p in r1) == sum(p[0][0] for p in r2)
