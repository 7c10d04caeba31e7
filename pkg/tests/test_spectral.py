import math

import numpy as np
import pytest

from leufm.imbalance import label_algebra, spec_from_counts
from leufm.linalg import svd_desc
from leufm.spectral import (
    G_MATRIX, GROUP_REPEAT, closed_form_g_singulars, full_spectrum, group_matrix, interlacing_margins,
)

from conftest import random_counts


def _random_spec_with_m(rng, m):
    while True:
        sizes = rng.choice(np.arange(1, 65), size=m, replace=False)
        mult = rng.integers(1, 3, size=m)
        counts = [int(s) for s, l in zip(sizes, mult) for _ in range(l)]
        if len(counts) <= 8:
            return spec_from_counts(counts)


class TestGroupMatrix:
    def test_three_one(self):
        g = group_matrix(spec_from_counts([3, 1]))
        r3 = math.sqrt(3)
        np.testing.assert_allclose(g, [[r3 / 4, -0.75], [-r3 / 4, 0.75]], atol=1e-15)

    def test_balanced_is_zero(self):
        np.testing.assert_allclose(group_matrix(spec_from_counts([3, 3, 3])), [[0.0]], atol=1e-15)

    def test_grouped(self):
        s = np.linalg.svd(group_matrix(spec_from_counts([8, 8, 2, 2])), compute_uv=False)
        np.testing.assert_allclose(s, [math.sqrt(3.2), 0.0], atol=1e-12)

    def test_zero_singular(self, rng):
        for _ in range(50):
            g = group_matrix(spec_from_counts(random_counts(rng)))
            m = g.shape[0]
            assert abs(np.linalg.det(g @ g.T)) <= 1e-12 * max(np.sum(g**2) ** m, 1e-300)


class TestClosedForm:
    def test_three_one(self):
        np.testing.assert_allclose(closed_form_g_singulars(spec_from_counts([3, 1])), [math.sqrt(1.5), 0])

    def test_grouped(self):
        np.testing.assert_allclose(closed_form_g_singulars(spec_from_counts([8, 8, 2, 2])), [math.sqrt(3.2), 0])

    def test_three_groups(self):
        # direct SVD of G is the oracle: a = 4, b = 24/7
        spec = spec_from_counts([4, 2, 1])
        got = closed_form_g_singulars(spec)
        ref = np.linalg.svd(group_matrix(spec), compute_uv=False)
        np.testing.assert_allclose(got, ref, atol=1e-10)
        np.testing.assert_allclose(got[:2], np.sqrt([2 + math.sqrt(4 - 24 / 7), 2 - math.sqrt(4 - 24 / 7)]))
        np.testing.assert_allclose(got[:2], [1.66009908, 1.11537933], atol=1e-8)

    @pytest.mark.parametrize("m", [2, 3])
    def test_random(self, rng, m):
        for _ in range(50):
            spec = _random_spec_with_m(rng, m)
            ref = np.linalg.svd(group_matrix(spec), compute_uv=False)
            np.testing.assert_allclose(closed_form_g_singulars(spec), ref, atol=1e-10)

    @pytest.mark.parametrize("counts", [[2, 2], [5, 4, 3, 2]])
    def test_unavailable(self, counts):
        with pytest.raises(ValueError, match="closed form unavailable"):
            closed_form_g_singulars(spec_from_counts(counts))


class TestFullSpectrum:
    def test_grouped(self):
        gs = full_spectrum(spec_from_counts([8, 8, 2, 2]))
        np.testing.assert_allclose(gs.full_singulars, [math.sqrt(8), math.sqrt(3.2), math.sqrt(2), 0], atol=1e-12)
        sources = {(round(v, 9), src) for v, _, src in gs.multiplicities}
        assert (round(math.sqrt(8), 9), GROUP_REPEAT) in sources
        assert (round(math.sqrt(3.2), 9), G_MATRIX) in sources

    def test_balanced(self):
        gs = full_spectrum(spec_from_counts([6] * 5))
        np.testing.assert_allclose(gs.full_singulars, [math.sqrt(6)] * 4 + [0.0])
        assert gs.multiplicities[0] == (math.sqrt(6), 4, GROUP_REPEAT)

    def test_three_one(self):
        np.testing.assert_allclose(full_spectrum(spec_from_counts([3, 1])).full_singulars, [math.sqrt(1.5), 0], atol=1e-12)

    def test_multiplicities_total(self, rng):
        for _ in range(30):
            spec = spec_from_counts(random_counts(rng))
            assert sum(mult for _, mult, _ in full_spectrum(spec).multiplicities) == spec.K

    def test_matches_direct_svd(self, rng):
        for _ in range(200):
            spec = spec_from_counts(random_counts(rng))
            gs = full_spectrum(spec)
            assert len(gs.full_singulars) == spec.K
            assert np.all(np.diff(gs.full_singulars) <= 0)
            ref = svd_desc(label_algebra(spec).y_hat).s
            np.testing.assert_allclose(gs.full_singulars, ref, atol=1e-9)

    def test_interlacing(self, rng):
        checked = 0
        for _ in range(200):
            spec = spec_from_counts(random_counts(rng))
            if spec.m < 2:
                continue
            margins = interlacing_margins(spec)
            assert len(margins) == 2 * spec.m - 1
            assert np.all(margins > 1e-9 * math.sqrt(spec.groups[0][0]))
            checked += 1
        assert checked > 150
