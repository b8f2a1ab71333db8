"""Encoder tests: projection contract and pooling."""

import numpy as np
import pytest

from nacap import encoder
from nacap.data import RegionFeatureSet
from nacap.params import ModelConfig, init_params
from nacap.tensor import ShapeError, Tensor


def _params(d_in=4, d_model=4, vocab=10):
    return init_params(
        ModelConfig(vocab_size=vocab, d_model=d_model, d_hidden=8,
                    heads=2, d_in=d_in),
        seed=0,
    )


class TestEncode:
    def test_identity_projection(self):
        params = _params()
        params["encoder.weight"].data[:] = np.eye(4)
        params["encoder.bias"].data[:] = 0.0
        feats = np.arange(12.0).reshape(3, 4)
        image = encoder.encode(RegionFeatureSet(feats), params)
        np.testing.assert_array_equal(image.proj.data, feats)

    def test_single_region_pool_equals_row(self):
        params = _params()
        feats = np.random.default_rng(0).normal(size=(1, 4))
        image = encoder.encode(RegionFeatureSet(feats), params)
        np.testing.assert_allclose(
            image.pooled.data, image.proj.data[0], rtol=0, atol=1e-15
        )

    def test_pool_matches_column_mean_loop(self):
        params = _params(d_in=6, d_model=4)
        feats = np.random.default_rng(1).normal(size=(5, 6))
        image = encoder.encode(RegionFeatureSet(feats), params)
        want = np.zeros(4)
        for j in range(4):
            acc = 0.0
            for i in range(5):
                acc += image.proj.data[i, j]
            want[j] = acc / 5
        np.testing.assert_allclose(image.pooled.data, want, rtol=0, atol=1e-12)

    def test_width_mismatch_is_dimension_error(self):
        params = _params(d_in=4)
        with pytest.raises(ShapeError):
            encoder.encode(RegionFeatureSet(np.ones((2, 5))), params)

    def test_row_permutation_equivariance(self):
        params = _params(d_in=6, d_model=4)
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        a = encoder.encode(RegionFeatureSet(feats), params)
        b = encoder.encode(RegionFeatureSet(feats[perm]), params)
        np.testing.assert_allclose(
            a.proj.data[perm], b.proj.data, rtol=0, atol=1e-12
        )
        np.testing.assert_allclose(
            a.pooled.data, b.pooled.data, rtol=0, atol=1e-12
        )

    def test_accepts_raw_arrays(self):
        params = _params()
        image = encoder.encode(np.ones((2, 4)), params)
        assert image.proj.shape == (2, 4)
