import numpy as np
import pytest
from scipy.stats import chi2 as chi2_dist
from scipy.stats import ks_2samp

from brwcap import lattice, trees
from brwcap._tables import PointTable
from brwcap.backend import kernels
from brwcap.trees import SampleBudget

from conftest import rng_for


def test_critical_binary_node_count_odd(mu_binary):
    for rep in range(200):
        t = trees.sample_critical([0] * 5, mu_binary, SampleBudget(10**6),
                                  rng_for(10, rep))
        if not t.truncated:
            assert len(t) % 2 == 1  # root + offspring pairs


def test_root_child_law_chisq(mu_binary):
    root_children = []
    for rep in range(2000):
        t = trees.sample_critical([0] * 5, mu_binary, SampleBudget(10**6),
                                  rng_for(11, rep))
        if not t.truncated:  # a budget cut can interrupt a child block
            root_children.append(int((t.parent == 0).sum()))
    obs = np.bincount(root_children, minlength=3)
    assert obs[1] == 0
    half = len(root_children) / 2
    chi2 = (obs[0] - half) ** 2 / half + (obs[2] - half) ** 2 / half
    assert chi2_dist.sf(chi2, 1) > 0.01


def test_edge_increments_uniform(mu_binary):
    counts = {}
    for rep in range(300):
        t = trees.sample_past([0] * 5, mu_binary, SampleBudget(10**6, 8.0),
                              rng_for(12, rep))
        kid = np.nonzero(t.parent >= 0)[0]
        steps = t.position[kid] - t.position[t.parent[kid]]
        for s in steps:
            counts[tuple(int(v) for v in s)] = counts.get(tuple(int(v) for v in s), 0) + 1
    assert len(counts) == 10  # all 2d unit vectors appear
    n = sum(counts.values())
    exp = n / 10.0
    chi2 = sum((c - exp) ** 2 / exp for c in counts.values())
    assert chi2_dist.sf(chi2, 9) > 0.001


def test_generation_population_mean_one(mu_binary):
    """E[Z_n] = 1 by criticality (checked at generation 30, CLT band)."""
    n = 2500
    zs = []
    for rep in range(n):
        t = trees.sample_critical([0] * 5, mu_binary, SampleBudget(10**6),
                                  rng_for(13, rep))
        depth = np.zeros(len(t), dtype=np.int64)
        for i in range(1, len(t)):
            depth[i] = depth[t.parent[i]] + 1
        zs.append(int((depth == 30).sum()))
    zs = np.asarray(zs, dtype=float)
    se = zs.std(ddof=1) / np.sqrt(n)
    assert abs(zs.mean() - 1.0) <= 3 * se


def test_height_tail_kolmogorov(mu_binary):
    """P(height >= n) ~ 2/(sigma^2 n) within 15 percent."""
    n_reach, n_ab = kernels.tree_height_tail(99, 0, 200_000, mu_binary.cdf,
                                             100, 10**7)
    p = n_reach / (200_000 - n_ab)
    stat = 100 * p * mu_binary.sigma2 / 2
    assert 0.85 < stat < 1.15


def test_adjoint_root_law(mu_binary):
    kids = []
    for rep in range(3000):
        t = trees.sample_adjoint([0] * 5, mu_binary, SampleBudget(10**6),
                                 rng_for(14, rep))
        kids.append(int((t.parent == 0).sum()))
    obs = np.bincount(kids, minlength=2)[:2]
    chi2 = ((obs - 1500.0) ** 2 / 1500.0).sum()
    assert chi2_dist.sf(chi2, 1) > 0.01


def test_adjoint_hitting_scaling(mu_binary):
    """P(adjoint tree from distance 2R hits B(0,R)) ~ R^(2-d) scaling."""
    est = {}
    for R in (4, 8):
        tab = PointTable(lattice.ball([0] * 5, R).coords)
        av, hit, ab = kernels.tree_avoid(7, 0, 40_000, 5, [2 * R, 0, 0, 0, 0],
                                         True, mu_binary.cdf, mu_binary.adj_cdf,
                                         tab, -1.0, 10**7)
        est[R] = hit / (av + hit)
    # BCap(B_R) ~ R, so the hit probability scales like R * R^(2-d) = R^-2
    ratio = (est[4] / est[8]) / 4.0
    assert 1 / 3 < ratio < 3


def test_past_root_not_counted(mu_binary):
    """The past tree excludes its own starting site."""
    misses = 0
    for rep in range(400):
        t = trees.sample_past([0] * 5, mu_binary, SampleBudget(10**7, 4.0),
                              rng_for(15, rep))
        if t.local_time(np.array([[0, 0, 0, 0, 0]])) == 0:
            misses += 1
    assert misses > 0  # P(origin unvisited) is strictly positive


def test_past_visits_match_green_table(mu_binary, table10):
    pts = np.array([[1, 0, 0, 0, 0], [2, 1, 0, 0, 0]], dtype=np.int64)
    tab = PointTable(pts)
    n = 3000
    sums, sumsq, nab = kernels.past_visits(16, 0, n, 5, [0] * 5,
                                           mu_binary.cdf, mu_binary.adj_cdf,
                                           tab, 24.0 ** 2, 10**8)
    est = sums / n
    se = np.sqrt(np.maximum(sumsq / n - est ** 2, 0) / n)
    gt = table10.G_at(pts)
    for i in range(2):
        # one-sided truncation: MC plus bias allowance covers the table value
        assert est[i] <= gt[i] + 3 * se[i]
        assert est[i] + 3 * se[i] + 0.7 / (24 - np.linalg.norm(pts[i])) >= gt[i]


def test_critical_visits_match_srw_green(mu_binary, table10):
    """E[visits of the critical tree] equals the SRW Green's function."""
    pts = np.array([[1, 0, 0, 0, 0], [2, 0, 0, 0, 0]], dtype=np.int64)
    tab = PointTable(pts)
    n = 40_000
    sums, sumsq, nab = kernels.tree_visits(17, 0, n, 5, [0] * 5, False,
                                           mu_binary.cdf, mu_binary.adj_cdf,
                                           tab, -1.0, 10**7)
    est = sums / n
    se = np.sqrt(np.maximum(sumsq / n - est ** 2, 0) / n)
    gt = table10.g_at(pts)
    for i in range(2):
        assert abs(est[i] - gt[i]) < 4 * se[i]


def test_local_time_additivity_and_hits(mu_binary):
    t = trees.sample_past([0] * 5, mu_binary, SampleBudget(10**6, 6.0),
                          rng_for(18, 3))
    A = lattice.ball([0] * 5, 2)
    total = t.local_time(A)
    assert total == sum(t.local_time(np.array([p])) for p in A)
    assert t.hits(A) == (total > 0)


def test_first_hit_hand_built():
    # hand-built five-node path: every root-to-leaf path passes (1,0,..)
    d = 5
    tree = trees.BrwTree(
        d=d, kind="critical",
        parent=np.array([-1, 0, 1, 2, 3]),
        position=np.array([[0] * d, [1] + [0] * 4, [1, 1, 0, 0, 0],
                           [2, 1, 0, 0, 0], [2, 2, 0, 0, 0]]),
        part=np.zeros(5, dtype=np.int8),
        spine_index=np.full(5, -1, dtype=np.int32),
        labels=np.arange(5),
        spine_positions=np.zeros((1, d), dtype=np.int64))
    A = lattice.Region([[2, 2, 0, 0, 0], [1, 1, 0, 0, 0]])
    pt, idx = tree.first_hit(A, view="future")
    assert pt == (1, 1, 0, 0, 0) and idx == 2
    assert tree.first_hit(lattice.Region([[9] * d])) is None
    # root in A: root returned
    pt, idx = tree.first_hit(lattice.Region([[0] * d]))
    assert idx == 0


def test_full_tree_root_in_future(mu_binary):
    t = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 6.0),
                          rng_for(19, 0))
    assert t.labels[0] == 0
    assert 0 in set(t.view_nodes("future").tolist())
    spine = np.nonzero((t.part == trees.PART_SPINE) & (t.spine_index > 0))[0]
    assert all(t.labels[v] < 0 for v in spine)


def test_spine_split_mean_offspring(mu_binary):
    """Spine vertices carry 1 + sigma^2 children on average (size-biased)."""
    tot, cnt = 0, 0
    for rep in range(400):
        t = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 8.0),
                              rng_for(20, rep))
        for v in np.nonzero((t.part == trees.PART_SPINE) & (t.spine_index > 0))[0]:
            if np.linalg.norm(t.position[v].astype(float)) <= 8.0 - 1:
                tot += int((t.parent == v).sum())
                cnt += 1
    mean = tot / cnt
    assert abs(mean - (1 + mu_binary.sigma2)) < 0.1


def test_extract_past_distribution_ks(mu_binary):
    """Past view of the invariant tree vs the standalone past sampler."""
    target = np.array([[1, 0, 0, 0, 0]])
    a, b = [], []
    for rep in range(2200):
        tf = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 6.0),
                               rng_for(21, rep))
        a.append(tf.local_time(target, view="past"))
        tp = trees.sample_past([0] * 5, mu_binary, SampleBudget(10**6, 6.0),
                               rng_for(22, rep))
        b.append(tp.local_time(target))
    stat = ks_2samp(a, b)
    assert stat.pvalue > 0.01


def test_budget_flag(mu_binary):
    t = trees.sample_past([0] * 5, mu_binary, SampleBudget(50, 30.0),
                          rng_for(23, 0))
    assert len(t) <= 50
    assert t.truncated and t.trunc_reason == "node_budget"
    t2 = trees.sample_past([0] * 5, mu_binary, SampleBudget(10**6, 5.0),
                           rng_for(23, 1))
    assert t2.trunc_reason == "r_trunc"


def test_shift_round_trip_and_adjacency(mu_binary):
    for rep in range(30):
        t = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 5.0),
                              rng_for(24, rep))
        try:
            t1 = trees.shift(t, +1)
        except trees.InsufficientTruncation:
            continue
        t2 = trees.shift(t1, -1)
        assert np.array_equal(t2.labels, t.labels)
        assert np.array_equal(t2.position, t.position)

        def edges(tr):
            return sorted((min(i, int(tr.parent[i])), max(i, int(tr.parent[i])))
                          for i in range(len(tr)) if tr.parent[i] >= 0)
        assert edges(t1) == edges(t)
        assert edges(t2) == edges(t)


def test_shift_insufficient_truncation(mu_binary):
    # shrink the window until no vertex can take label 0 after shifting back
    t = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 4.0),
                          rng_for(25, 7))
    future_only = (t.labels >= 0).all()
    if future_only:
        with pytest.raises(trees.InsufficientTruncation):
            trees.shift(t, +1)


def test_shift_invariance_chisq(mu_binary):
    from brwcap import experiments
    res = experiments.shift_invariance_check(mu_binary, 3000, 5, r_trunc=6.0)
    assert res["p_value"] > 0.01


def test_tree_dump_csv(tmp_path, mu_binary):
    t = trees.sample_full([0] * 5, mu_binary, SampleBudget(10**6, 4.0),
                          rng_for(26, 0))
    path = tmp_path / "tree.csv"
    t.dump_csv(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == len(t)
    first = lines[0].split(",")
    assert len(first) == 4 + t.d
