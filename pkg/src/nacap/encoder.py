"""Region feature projection to model width."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import RegionFeatureSet
from .tensor import ShapeError, Tensor


@dataclass
class EncodedImage:
    """Projected region features (k, d_model) and their mean-pooled summary."""

    proj: Tensor
    pooled: Tensor

    @property
    def k(self):
        return self.proj.shape[0]


def encode(regions, params):
    """Project each region row: proj = features @ W + b; pooled = row mean."""
    feats = (
        regions.features
        if isinstance(regions, RegionFeatureSet)
        else np.asarray(regions, dtype=np.float64)
    )
    w = params["encoder.weight"]
    if feats.ndim != 2 or feats.shape[1] != w.shape[0]:
        raise ShapeError(
            f"region features {feats.shape} do not match encoder weight {w.shape}"
        )
    proj = T.add(T.matmul(Tensor(feats), w), params["encoder.bias"])
    return EncodedImage(proj=proj, pooled=T.mean_pool(proj))
