import math

import numpy as np
import pytest

from brwcap import green


def norm(p):
    return float(np.linalg.norm(np.asarray(p, dtype=float)))


def test_discrete_identity_residuals(table10):
    assert table10.g_residual < 1e-9
    assert table10.c_residual < 1e-9
    # identity at the origin: g(e1) = g(0) - 1 by symmetry
    g0 = table10.g_at([[0, 0, 0, 0, 0]])[0]
    ge1 = table10.g_at([[1, 0, 0, 0, 0]])[0]
    assert abs(ge1 - (g0 - 1.0)) < 1e-9
    assert g0 > 1.0


def test_g_value_at_origin(table10):
    """d=5 walk: g(0) pinned against the Fourier oracle (about 1.1563)."""
    f0 = green.g_fourier_point([0, 0, 0, 0, 0])
    assert abs(f0 - 1.1563) < 5e-4
    assert abs(table10.g_at([[0, 0, 0, 0, 0]])[0] - f0) < 1e-6


def test_fourier_symmetry_and_refinement():
    a = green.g_fourier_point([2, 1, 0, 0, 0])
    b = green.g_fourier_point([0, 1, 0, 2, 0])
    c = green.g_fourier_point([-2, 0, 1, 0, 0])
    assert a == pytest.approx(b, abs=1e-15)
    assert a == pytest.approx(c, abs=1e-15)
    vals = green.g_fourier_refinement([1, 1, 1, 0, 0], (6, 12, 24, 48))
    deltas = [abs(vals[i + 1] - vals[i]) for i in range(3)]
    assert deltas[1] <= deltas[0] * 1.5 + 1e-12
    assert deltas[2] <= deltas[1] * 1.5 + 1e-12
    assert deltas[-1] < 1e-9


def test_three_way_oracle_agreement(table10):
    pts = [(0, 0, 0, 0, 0), (1, 0, 0, 0, 0), (2, 1, 0, 0, 0), (4, 0, 0, 0, 0)]
    mc, se, tail = green.g_mc_points(np.array(pts), 5, 40_000, 4000, 77,
                                     workers=2)
    for i, x in enumerate(pts):
        pde = table10.g_at([x])[0]
        fou = green.g_fourier_point(x)
        assert abs(pde - fou) < 1e-4
        tol = max(1e-4, 3 * se[i] + tail)
        assert abs(pde - mc[i]) < tol
        assert abs(fou - mc[i]) < tol


def test_mc_parity_structure():
    # a far odd-parity point is unreachable within a too-short horizon
    est, se, tail = green.g_mc_point([9, 9, 9, 9, 9], 200, 10, 5)
    assert est == 0.0 and se == 0.0


def test_g_monotone_along_ray(table10):
    vals = table10.g_at([[k, 0, 0, 0, 0] for k in range(0, 10)])
    assert np.all(np.diff(vals) < 0)
    Gv = table10.G_at([[k, 0, 0, 0, 0] for k in range(0, 10)])
    assert np.all(np.diff(Gv) < 0)
    assert np.all(Gv > 0)


def test_g_asymptotic_slope(table10):
    """log g vs log |x| slope within 0.05 of -(d-2) on the outer shell."""
    reps = table10.reps
    nrm = np.sqrt((reps.astype(float) ** 2).sum(axis=1))
    sel = (nrm >= 5.0) & (nrm <= 10.0)
    x = np.log(nrm[sel])
    y = np.log(table10.g[sel])
    slope = np.polyfit(x, y, 1)[0]
    assert abs(slope + 3.0) < 0.05


def test_a_d_close_to_continuum(table10):
    assert abs(table10.a_d - 5 / (4 * np.pi ** 2)) < 2e-3


def test_G_symmetry_invariance(table10):
    pts = [[3, 1, 0, 0, 0], [0, 3, 0, 1, 0], [-3, 0, -1, 0, 0]]
    vals = table10.G_at(pts)
    assert vals[0] == vals[1] == vals[2]


def test_G_asymptotic_band(table10):
    """|x|^(d-4) G(x) roughly constant over 6 <= |x| <= 10."""
    reps = table10.reps
    nrm = np.sqrt((reps.astype(float) ** 2).sum(axis=1))
    sel = (nrm >= 6.0) & (nrm <= 10.0)
    prod = table10.G[sel] * nrm[sel]
    assert prod.max() / prod.min() < 2.0


def test_G_rebuild_stability(table10):
    """Enlarging the convolution box moves tabled values within budget."""
    bigger = green.build_green_table(5, 10, sigma2=1.0, tol=1e-10, margin=12)
    delta = float(np.abs(bigger.G - table10.G).max())
    assert delta <= max(table10.conv_budget, 1e-6)


def test_convolution_identity_direct(table10):
    """c(0) = sum of h^2 over the table plus a continuum tail estimate."""
    orbits = green._orbit_sizes(table10.reps)
    h = table10.g.copy()
    origin = int(np.nonzero((table10.reps == 0).all(axis=1))[0][0])
    h[origin] -= 1.0
    direct = float((orbits * h * h).sum())
    surf = 2 * math.pi ** 2.5 / math.gamma(2.5)  # unit 4-sphere area
    tail = table10.a_d ** 2 * surf / (table10.L + 0.5)
    solved = table10.conv_at([[0, 0, 0, 0, 0]])[0]
    assert direct < solved < direct + 2 * tail


def test_apply_G_and_sup(table10):
    z = np.zeros((1, 5), dtype=np.int64)
    assert table10.apply_G(z, [0.0], z)[0] == 0.0
    g0 = table10.G_at(z)[0]
    assert table10.apply_G(z, [1.0], z)[0] == pytest.approx(g0)
    sup, arg, outside = table10.sup_norm_G(z, [1.0], 4)
    assert sup == pytest.approx(g0)
    assert tuple(arg) == (0, 0, 0, 0, 0)
    assert outside < g0
    # uniform potential on a small ball: sup attained at or adjacent to 0
    from brwcap import lattice
    b2 = lattice.ball([0] * 5, 2)
    sup, arg, _ = table10.sup_norm_G(b2.coords, np.ones(len(b2)), 5)
    assert np.linalg.norm(np.asarray(arg, dtype=float)) <= 1.0


def test_gbar_positive_definite_sample(table10):
    from brwcap import lattice
    K = lattice.ball([0] * 5, 1)
    M = table10.kernel_matrix(K.coords, kind="Gbar")
    assert np.allclose(M, M.T)
    evals = np.linalg.eigvalsh(M)
    assert evals.min() > 0


def test_save_load_roundtrip(tmp_path, table10):
    path = tmp_path / "t.brwg"
    green.save_table(table10, path)
    back = green.load_table(path)
    assert np.array_equal(back.g, table10.g)
    assert np.array_equal(back.G, table10.G)
    assert back.a_d == table10.a_d and back.L_conv == table10.L_conv
    # byte-for-byte stable save
    path2 = tmp_path / "t2.brwg"
    green.save_table(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_corruption(tmp_path, table10):
    path = tmp_path / "t.brwg"
    green.save_table(table10, path)
    blob = bytearray(path.read_bytes())
    blob[0:4] = b"NOPE"
    bad = tmp_path / "bad.brwg"
    bad.write_bytes(bytes(blob))
    with pytest.raises(green.GreenError):
        green.load_table(bad)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    bad.write_bytes(bytes(blob))
    with pytest.raises(green.GreenError, match="CRC"):
        green.load_table(bad)
    # forged dimension with a recomputed checksum: class count mismatch
    import struct
    blob = bytearray(path.read_bytes())[:-8]
    blob[8:12] = struct.pack("<I", 6)
    blob += struct.pack("<Q", green.crc64(bytes(blob)))
    bad.write_bytes(bytes(blob))
    with pytest.raises(green.GreenError, match="class count"):
        green.load_table(bad)


def test_build_guards():
    with pytest.raises(green.GreenError):
        green.build_green_table(4, 8, sigma2=1.0)  # G needs d >= 5
    with pytest.raises(green.GreenError):
        green.build_green_table(2, 8, g_only=True)  # g needs d >= 3
    # d=3 boundary corrections decay like 1/r, so the small box is coarser
    t3 = green.build_green_table(3, 10, g_only=True)
    f3 = green.g_fourier_point([0, 0, 0])
    assert abs(f3 - 1.516386059151978) < 1e-9  # classical d=3 value
    assert abs(t3.g_at([[0, 0, 0]])[0] - f3) < 1e-3
