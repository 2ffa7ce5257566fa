"""Adversarial objectives and the perceptual loss.

Discriminators emit unbounded logits; the (0,1) probabilities in the
objectives are realized through the logistic function inside the loss
terms (log-sigmoid via softplus) for numerical stability. Expectations
are means over everything a logit tensor carries (batch, and patch cells
for map-shaped logits).
"""

import numpy as np

from .engine import Tensor, ops


def _check_finite(*tensors):
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise ValueError("non-finite logits")


def mean_log_sigmoid(logits: Tensor) -> Tensor:
    # E[log sigma(x)] = -E[softplus(-x)]
    return ops.neg(ops.mean_all(ops.softplus(ops.neg(logits))))


def mean_log_one_minus_sigmoid(logits: Tensor) -> Tensor:
    # E[log(1 - sigma(x))] = -E[softplus(x)]
    return ops.neg(ops.mean_all(ops.softplus(logits)))


def d_obj_objective(logit_fake, logit_real_gt, logit_real_sil) -> Tensor:
    """Object-discriminator value: ground truth and sampled silhouettes are
    real, the generated mask is fake. The discriminator maximizes this."""
    _check_finite(logit_fake, logit_real_gt, logit_real_sil)
    reals = ops.add(mean_log_sigmoid(logit_real_gt), mean_log_sigmoid(logit_real_sil))
    return ops.add(mean_log_one_minus_sigmoid(logit_fake), ops.scale(reals, 0.5))


def d_ins_objective(logit_real_gt, logit_fake_gen, logit_fake_sil) -> Tensor:
    """Instance-discriminator value: only the ground truth is real; both the
    generated mask and the sampled silhouette are fake."""
    _check_finite(logit_real_gt, logit_fake_gen, logit_fake_sil)
    fakes = ops.add(mean_log_one_minus_sigmoid(logit_fake_gen),
                    mean_log_one_minus_sigmoid(logit_fake_sil))
    return ops.add(mean_log_sigmoid(logit_real_gt), ops.scale(fakes, 0.5))


def d_standard_objective(logit_real, logit_fake) -> Tensor:
    """Plain real/fake discriminator value (single-discriminator ablation)."""
    _check_finite(logit_real, logit_fake)
    return ops.add(mean_log_sigmoid(logit_real),
                   mean_log_one_minus_sigmoid(logit_fake))


def d2_objective(logit_real, logit_fake_1, logit_fake_2=None) -> Tensor:
    """Image-discriminator value; two generated batches count half each."""
    if logit_fake_2 is None:
        return d_standard_objective(logit_real, logit_fake_1)
    _check_finite(logit_real, logit_fake_1, logit_fake_2)
    fakes = ops.add(mean_log_one_minus_sigmoid(logit_fake_1),
                    mean_log_one_minus_sigmoid(logit_fake_2))
    return ops.add(mean_log_sigmoid(logit_real), ops.scale(fakes, 0.5))


def generator_adv_loss(logit_fake, saturating=False) -> Tensor:
    """Generator-side adversarial term (minimized).

    Default is the non-saturating surrogate -E[log sigma(D(fake))]; the
    literal saturating form E[log(1 - sigma(D(fake)))] sits behind a flag.
    """
    if saturating:
        return mean_log_one_minus_sigmoid(logit_fake)
    return ops.neg(mean_log_sigmoid(logit_fake))


def perceptual_loss(extractor, a, b) -> Tensor:
    """Mean L1 distance between extractor features, averaged over layers."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    fa = extractor.features(a)
    fb = extractor.features(b)
    terms = [ops.mean_l1(x, y) for x, y in zip(fa, fb)]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, 1.0 / len(terms))
