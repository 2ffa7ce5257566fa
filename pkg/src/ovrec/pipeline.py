"""End-to-end inference: visible segmentation, mask completion, appearance
generation, compositing, and iterative refinement.

Only the first generator path ever runs here; recovered pixels are painted
back so that everything outside the invisible region is preserved
bit-exactly.
"""

from dataclasses import dataclass

import numpy as np

from .engine import Adam, Tensor, no_grad, ops
from .models import GeneratorParams, generator_forward, init_params
from .util import fold_seed, validate_image, validate_mask

MASK_THRESHOLD = 0.5
DEFAULT_ITERATIONS = 2


class PipelineError(Exception):
    pass


class EmptyVisibleMaskError(PipelineError):
    def __init__(self, iteration):
        super().__init__(f"visible segmenter returned an empty mask at iteration {iteration}")
        self.iteration = iteration


@dataclass
class RecoveryResult:
    iteration_index: int
    completed_mask: np.ndarray    # (H,W,1) binary
    generator_image: np.ndarray   # (H,W,3) raw generator output
    recovered_image: np.ndarray   # (H,W,3) composited
    invisible_region: np.ndarray  # (H,W,1) binary


@dataclass
class PipelineModels:
    g1: GeneratorParams
    g2: GeneratorParams

    @classmethod
    def from_checkpoint(cls, ck):
        return cls(g1=ck.roles["g1"], g2=ck.roles["g2"])


class OracleSegmenter:
    """Returns a stored visible mask regardless of the input image."""

    def __init__(self, visible_mask):
        self.visible_mask = visible_mask.astype(np.float32)

    def __call__(self, image):
        return self.visible_mask


FixedMaskSegmenter = OracleSegmenter  # file-import variant: same behavior


class TrainedSegmenter:
    """Small generator-shaped net predicting the visible mask from the image."""

    def __init__(self, params: GeneratorParams, threshold=MASK_THRESHOLD):
        self.params = params
        self.threshold = threshold

    def __call__(self, image):
        x = np.transpose(image, (2, 0, 1))[None].astype(np.float32)
        with no_grad():
            raw = generator_forward(self.params, Tensor(x)).data[0]
        return (np.transpose(raw, (1, 2, 0)) > self.threshold).astype(np.float32)


def train_visible_segmenter(samples, arch, steps=600, batch_size=4, lr=1e-3,
                            seed=0, input_attr="image_occluded",
                            target_attr="visible_mask",
                            name="seg_f") -> GeneratorParams:
    """Supervised L1 training of the toy segmenter (also used for the
    recovered-image scoring proxy when pointed at unoccluded targets)."""
    from .seg_trainer import batch_indices, stack_field
    params = init_params(arch, fold_seed(seed, name), name)
    opt = Adam(params.tensors, lr=lr)
    xs = stack_field(samples, input_attr)
    ys = stack_field(samples, target_attr)
    n = xs.shape[0]
    for step in range(steps):
        idx = batch_indices(n, batch_size, step, fold_seed(seed, name, "order"))
        pred = generator_forward(params, Tensor(xs[idx]))
        loss = ops.mean_l1(pred, Tensor(ys[idx]))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return params


def complete_mask(g1_params, image, visible_mask, threshold=MASK_THRESHOLD):
    """Generated mask, thresholded and unioned with the visible evidence."""
    validate_image(image)
    validate_mask(visible_mask)
    if image.shape[:2] != visible_mask.shape[:2]:
        raise ValueError("image / visible mask shape mismatch")
    x = np.concatenate([np.transpose(image, (2, 0, 1)),
                        np.transpose(visible_mask, (2, 0, 1))])[None]
    with no_grad():
        raw = generator_forward(g1_params, Tensor(x.astype(np.float32))).data[0]
    raw = np.transpose(raw, (1, 2, 0))
    return ((raw > threshold) | (visible_mask > 0)).astype(np.float32)


def recover_appearance(g2_params, image, visible_mask, completed_mask):
    """First-path generation only; the background-inpainting path never runs
    at inference."""
    validate_mask(visible_mask)
    validate_mask(completed_mask)
    x = np.concatenate([np.transpose(image, (2, 0, 1)),
                        np.transpose(visible_mask, (2, 0, 1)),
                        np.transpose(completed_mask, (2, 0, 1))])[None]
    with no_grad():
        out = generator_forward(g2_params, Tensor(x.astype(np.float32))).data[0]
    return np.transpose(out, (1, 2, 0)).copy()


def composite(image, gen_image, completed_mask, visible_mask):
    """Paint generated pixels into the invisible region R = M and not M_vis.

    Pixels with R = 0 are returned bit-exactly from `image`.
    """
    if image.shape != gen_image.shape or completed_mask.shape != visible_mask.shape:
        raise ValueError("shape mismatch")
    r = (completed_mask * (1.0 - visible_mask)).astype(np.float32)
    ir = np.where(r > 0, gen_image, image).astype(np.float32)
    return ir, r


def run_iterations(models: PipelineModels, segmenter, image, k=DEFAULT_ITERATIONS):
    """k passes of segment -> complete -> recover -> composite.

    The segmenter is re-invoked on each iteration's recovered image.
    """
    if k < 1:
        raise ValueError("iteration count must be >= 1")
    results = []
    cur = image
    for t in range(1, k + 1):
        vis = segmenter(cur)
        if vis.sum() == 0:
            raise EmptyVisibleMaskError(t)
        m = complete_mask(models.g1, cur, vis)
        gen = recover_appearance(models.g2, cur, vis, m)
        ir, r = composite(cur, gen, m, vis)
        results.append(RecoveryResult(iteration_index=t, completed_mask=m,
                                      generator_image=gen, recovered_image=ir,
                                      invisible_region=r))
        cur = ir
    return results
