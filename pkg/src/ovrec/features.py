"""Fixed (non-trained) feature extractors for the perceptual loss."""

import numpy as np

from .engine import Tensor, ops
from .util import fold_seed


class IdentityExtractor:
    """Single layer returning the input itself; perceptual loss degenerates
    to plain mean absolute difference."""

    def features(self, x: Tensor):
        return [x]


class ConvFeatureExtractor:
    """Random fixed conv stack; features are taken after each stage.

    Weights are frozen constants, so gradients flow only to the inputs.
    """

    def __init__(self, in_channels, widths=(8, 16), seed=0, dtype=np.float32):
        rng = np.random.default_rng(fold_seed("feature-extractor", in_channels,
                                              tuple(widths), seed))
        self.stages = []
        prev = in_channels
        for w in widths:
            wt = rng.normal(0, np.sqrt(2.0 / (prev * 9)), (w, prev, 3, 3)).astype(dtype)
            self.stages.append((Tensor(wt), Tensor(np.zeros(w, dtype=dtype))))
            prev = w

    def features(self, x: Tensor):
        feats = []
        y = x
        for wt, b in self.stages:
            y = ops.leaky_relu(ops.conv2d(y, wt, b, stride=2, pad=1), 0.2)
            feats.append(y)
        return feats
