import numpy as np
import pytest

from treewave import wavelet
from treewave.wavelet import ORIENT_D, ORIENT_H, ORIENT_SCALING, ORIENT_V


class TestLayout:
    def test_smallest_transform(self):
        lay = wavelet.make_layout(2, 2, 1)
        assert lay.n_scaling == 1
        assert lay.n_detail == 3
        assert np.all(lay.parent == -1)
        assert set(lay.orientation[1:]) == {ORIENT_H, ORIENT_V, ORIENT_D}

    def test_4x4_depth2_structure(self):
        lay = wavelet.make_layout(4, 4, 2)
        assert lay.n_scaling == 1
        assert int(np.sum(lay.level == 1)) == 3
        assert int(np.sum(lay.level == 2)) == 12
        # every level-2 node points at the unique level-1 node of its orientation
        for j in np.flatnonzero(lay.level == 2):
            p = lay.parent[j]
            assert lay.level[p] == 1
            assert lay.orientation[p] == lay.orientation[j]

    def test_256_depth8_counts(self):
        lay = wavelet.make_layout(256, 256, 8)
        assert lay.n == 256 * 256
        assert lay.n_scaling == 1
        assert lay.n_detail == 65535
        assert int(np.sum(lay.level == 1)) == 3
        # per-level detail counts: 3 * 4^(l-1) * n / 4^L
        for l in range(1, 9):
            assert int(np.sum(lay.level == l)) == 3 * 4 ** (l - 1)

    def test_level_counts_general(self):
        lay = wavelet.make_layout(32, 64, 3)
        for l in range(1, 4):
            expected = 3 * 4 ** (l - 1) * (32 * 64) // 4**3
            assert int(np.sum(lay.level == l)) == expected

    def test_parent_is_colocated(self):
        lay = wavelet.make_layout(16, 16, 3)
        for j in np.flatnonzero(lay.level > 1):
            p = lay.parent[j]
            assert lay.orientation[p] == lay.orientation[j]
            assert lay.row[p] == lay.row[j] // 2
            assert lay.col[p] == lay.col[j] // 2

    def test_every_nonleaf_detail_has_four_children(self):
        lay = wavelet.make_layout(16, 16, 2)
        counts = np.zeros(lay.n, dtype=int)
        for p in lay.parent[lay.parent >= 0]:
            counts[p] += 1
        detail_nonleaf = (lay.level >= 1) & (lay.level < 2)
        assert np.all(counts[detail_nonleaf] == 4)
        assert np.all(counts[lay.level == 0] == 0)
        assert np.all(counts[lay.level == 2] == 0)

    def test_rejects_indivisible_dims(self):
        with pytest.raises(ValueError):
            wavelet.make_layout(6, 8, 2)
        with pytest.raises(ValueError):
            wavelet.make_layout(8, 12, 3)
        with pytest.raises(ValueError):
            wavelet.make_layout(8, 8, 0)


class TestTransform:
    def test_constant_image(self):
        lay = wavelet.make_layout(4, 4, 2)
        s = wavelet.forward(np.ones((4, 4)), lay)
        assert abs(abs(s[0]) - 4.0) < 1e-12
        np.testing.assert_allclose(s[1:], 0.0, atol=1e-12)

    def test_2x2_haar_by_hand(self):
        # [[1,0],[0,0]] through the 2x2 orthonormal step gives 0.5 everywhere
        lay = wavelet.make_layout(2, 2, 1)
        s = wavelet.forward(np.array([[1.0, 0.0], [0.0, 0.0]]), lay)
        np.testing.assert_allclose(np.abs(s), 0.5, atol=1e-14)
        np.testing.assert_allclose(s, 0.5, atol=1e-14)  # sign convention fixed

    def test_orthonormality_inner_products(self):
        rng = np.random.default_rng(0)
        lay = wavelet.make_layout(8, 8, 2)
        u = rng.standard_normal((8, 8))
        v = rng.standard_normal((8, 8))
        lhs = float(wavelet.forward(u, lay) @ wavelet.forward(v, lay))
        assert abs(lhs - float(np.vdot(u, v))) < 1e-12 * np.linalg.norm(u) * np.linalg.norm(v)

    def test_norm_preserved(self):
        rng = np.random.default_rng(1)
        lay = wavelet.make_layout(16, 16, 4)
        u = rng.standard_normal((16, 16))
        assert abs(np.linalg.norm(wavelet.forward(u, lay)) - np.linalg.norm(u)) < 1e-12

    def test_roundtrip_random(self):
        rng = np.random.default_rng(2)
        lay = wavelet.make_layout(16, 16, 3)
        u = rng.standard_normal((16, 16))
        back = wavelet.inverse(wavelet.forward(u, lay), lay)
        np.testing.assert_allclose(back, u, atol=1e-10)

    def test_zero_coefficients(self):
        lay = wavelet.make_layout(8, 8, 3)
        np.testing.assert_array_equal(wavelet.inverse(np.zeros(64), lay), np.zeros((8, 8)))

    def test_unit_scaling_coefficient_gives_constant(self):
        lay = wavelet.make_layout(4, 4, 2)
        e = np.zeros(16)
        e[0] = 1.0
        np.testing.assert_allclose(wavelet.inverse(e, lay), 0.25, atol=1e-12)

    def test_adjoint_consistency(self):
        rng = np.random.default_rng(3)
        lay = wavelet.make_layout(8, 16, 2)
        u = rng.standard_normal((8, 16))
        w = rng.standard_normal(lay.n)
        lhs = float(wavelet.forward(u, lay) @ w)
        rhs = float(np.vdot(u, wavelet.inverse(w, lay)))
        assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))

    def test_dimension_mismatch_raises(self):
        lay = wavelet.make_layout(8, 8, 2)
        with pytest.raises(ValueError):
            wavelet.forward(np.zeros((4, 4)), lay)
        with pytest.raises(ValueError):
            wavelet.inverse(np.zeros(63), lay)

    def test_band_energy_localized(self):
        # an image living in one band reconstructs from that band alone
        lay = wavelet.make_layout(8, 8, 2)
        rng = np.random.default_rng(4)
        coeffs = np.zeros(lay.n)
        sl = lay.band_slice(2, ORIENT_H)
        coeffs[sl] = rng.standard_normal(sl.stop - sl.start)
        u = wavelet.inverse(coeffs, lay)
        np.testing.assert_allclose(wavelet.forward(u, lay), coeffs, atol=1e-12)


def test_csv_dump_roundtrips_fields(tmp_path):
    lay = wavelet.make_layout(4, 4, 1)
    values = np.arange(16, dtype=float) / 7.0
    path = tmp_path / "coeffs.csv"
    wavelet.dump_coefficients_csv(path, lay, values)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "index,level,orientation,row,col,parent_index,value"
    assert len(lines) == 17
    first = lines[1].split(",")
    assert first[0] == "0" and first[2] == "scaling"
    assert float(first[6]) == 0.0
