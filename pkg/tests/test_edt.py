"""Exact distance transform cross-checked against an independent implementation."""

import numpy as np
from scipy import ndimage

from edgepose.edt import exact_edt, exact_edt_with_indices


class TestExactEdt:
    def test_single_feature(self):
        mask = np.zeros((16, 16), bool)
        mask[3, 4] = True
        d = exact_edt(mask)
        assert d[3, 4] == 0.0
        assert abs(d[6, 8] - 5.0) < 1e-12  # 3-4-5 triangle

    def test_matches_scipy_on_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h, w = rng.integers(2, 40, size=2)
            mask = rng.random((h, w)) < rng.uniform(0.01, 0.3)
            if not mask.any():
                mask[rng.integers(h), rng.integers(w)] = True
            ref = ndimage.distance_transform_edt(~mask)
            np.testing.assert_allclose(exact_edt(mask), ref, atol=1e-9)

    def test_indices_point_to_nearest_feature(self):
        rng = np.random.default_rng(1)
        mask = rng.random((24, 31)) < 0.05
        mask[5, 7] = True
        d, fy, fx = exact_edt_with_indices(mask)
        assert mask[fy, fx].all()
        realized = np.hypot(
            np.arange(24)[:, None] - fy, np.arange(31)[None, :] - fx
        )
        np.testing.assert_allclose(realized, d, atol=1e-9)

    def test_empty_mask_sentinel(self):
        d, fy, fx = exact_edt_with_indices(np.zeros((5, 9), bool))
        assert np.all(d > 1e12)
        assert np.all(fy == -1)

    def test_sparse_columns(self):
        # exercise rows whose leading columns contain no feature
        mask = np.zeros((10, 10), bool)
        mask[:, 7] = [False, True] * 5
        ref = ndimage.distance_transform_edt(~mask)
        np.testing.assert_allclose(exact_edt(mask), ref, atol=1e-9)
