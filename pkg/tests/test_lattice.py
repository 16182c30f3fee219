import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwcap import lattice
from brwcap.lattice import Region, RegionSpecError


def brute_ball_count(r, d):
    """Independent oracle: exhaustive coordinate scan over [-k, k]^d."""
    k = int(np.floor(r))
    axes = np.arange(-k, k + 1)
    grids = np.meshgrid(*([axes] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return int((np.sum(pts ** 2, axis=1) <= r * r).sum())


def test_ball_trivial():
    assert len(lattice.ball([0] * 5, 0)) == 1
    assert len(lattice.ball([0] * 5, 1)) == 11  # center + 2d neighbours


def test_ball_matches_brute_force_scan():
    # expected value computed by the exhaustive oracle, then frozen
    assert brute_ball_count(4, 5) == 5913
    assert len(lattice.ball([0] * 5, 4)) == 5913


def test_ball_monotone_in_radius():
    c = [0] * 5
    b1, b2 = lattice.ball(c, 2), lattice.ball(c, 3.5)
    assert b1.issubset(b2)


def test_boundary_trivial_cases():
    single = Region([[0] * 5])
    assert lattice.boundary(single) == single
    # the unit ball: every point except the center has an exterior neighbour
    # (the center's 2d neighbours are exactly the rest of the ball)
    b1 = lattice.ball([0] * 5, 1)
    assert lattice.boundary(b1) == b1.difference(single)


def test_boundary_box_against_enumeration():
    box3 = lattice.box(3, 5)
    inner = lattice.box(2, 5)
    bd = lattice.boundary(box3)
    assert len(bd) == len(box3) - len(inner)
    assert bd == box3.difference(inner)


def test_interior_mask():
    b2 = lattice.ball([0] * 5, 2)
    mask = lattice.interior_mask(b2)
    center = [i for i, p in enumerate(b2) if p == (0, 0, 0, 0, 0)][0]
    assert mask[center]
    bd = lattice.boundary(b2)
    for i, p in enumerate(b2):
        assert mask[i] == (p not in bd.index)


def test_distances():
    K = Region([[0] * 5])
    assert lattice.dist_to_set([0] * 5, K) == 0.0
    assert lattice.diam(lattice.ball([0] * 5, 3)) == 6.0
    assert lattice.dist_to_set([8, 0, 0, 0, 0], lattice.ball([0] * 5, 2)) == 6.0
    with pytest.raises(lattice.LatticeError):
        lattice.dist_to_set([0] * 5, Region([], d=5))


def test_parse_region_basics():
    assert lattice.parse_region("ball:2", 5) == lattice.ball([0] * 5, 2)
    two = lattice.parse_region("union(ball:1;shift(ball:1;8,0,0,0,0))", 5)
    assert len(two) == 22
    seg = lattice.parse_region("segment:10", 5)
    assert len(seg) == 10
    assert (1, 0, 0, 0, 0) in seg


def test_parse_region_errors_carry_offset():
    with pytest.raises(RegionSpecError) as exc:
        lattice.parse_region("ball:", 5)
    assert exc.value.offset == 5
    with pytest.raises(RegionSpecError):
        lattice.parse_region("shift(ball:1;1,2)", 5)  # arity mismatch
    with pytest.raises(RegionSpecError):
        lattice.parse_region("blob:3", 5)


def test_points_file_roundtrip(tmp_path):
    reg = lattice.ball([1, 0, 0, 0, 0], 1.5)
    path = tmp_path / "pts.csv"
    lattice.write_points_csv(reg, path)
    with open(path, "a") as fh:
        fh.write("# trailing comment\n")
    back = lattice.parse_region(f"points:@{path}", 5)
    assert back == reg
    with pytest.raises(FileNotFoundError):
        lattice.parse_region("points:@/nonexistent/file.csv", 5)


# random expression trees for the printer round trip
_leaf = st.sampled_from(["ball:1", "ball:2", "box:1", "segment:3", "segment:7"])


def _expr(depth):
    if depth == 0:
        return _leaf
    sub = _expr(depth - 1)
    shift = st.tuples(sub, st.lists(st.integers(-5, 5), min_size=5, max_size=5)).map(
        lambda t: f"shift({t[0]};{','.join(map(str, t[1]))})")
    union = st.lists(sub, min_size=2, max_size=3).map(
        lambda ps: "union(" + ";".join(ps) + ")")
    return st.one_of(sub, shift, union)


@settings(max_examples=40, deadline=None)
@given(_expr(2))
def test_printer_parse_roundtrip(spec):
    ast = lattice.parse_region_expr(spec, 5)
    printed = lattice.print_region_expr(ast)
    assert lattice.parse_region(printed, 5) == lattice.parse_region(spec, 5)
    # printing is canonical: print(parse(print(e))) == print(e)
    assert lattice.print_region_expr(lattice.parse_region_expr(printed, 5)) == printed


def test_region_canonical_order_deterministic():
    pts = [[3, 0, 0, 0, 0], [1, 0, 0, 0, 0], [1, 0, 0, 0, 0], [-2, 0, 0, 0, 0]]
    reg = Region(pts)
    assert len(reg) == 3
    assert list(reg)[0] == (-2, 0, 0, 0, 0)
    assert np.array_equal(reg.coords, Region(list(reversed(pts))).coords)
