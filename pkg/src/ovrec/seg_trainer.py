"""Stage-1 training: mask completion with coupled discriminators.

One alternating step updates the object and instance discriminators on
(generated mask, ground truth, freshly sampled silhouette) and then the
generator on its combined adversarial + reconstruction + perceptual
objective. The same silhouette batch is real for the object
discriminator and fake for the instance discriminator.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, metrics, silhouette_pool
from .engine import Adam, Tensor, no_grad, ops
from .features import ConvFeatureExtractor
from .losses import perceptual_loss  # re-exported; defined once for both stages
from .models import (Checkpoint, generator_forward, init_params,
                     mask_disc_forward)
from .util import fold_seed, rng_for

__all__ = ["SegLossWeights", "SegTrainState", "NonFiniteLossError",
           "PlateauTracker", "perceptual_loss", "d_obj_objective",
           "d_ins_objective", "g1_loss", "assemble_g1_loss", "seg_train_step",
           "train_seg", "init_seg_state", "make_batch", "batch_indices",
           "completion_iou"]

d_obj_objective = losses.d_obj_objective
d_ins_objective = losses.d_ins_objective


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SegLossWeights:
    lambda_l1: float = 10.0
    beta_perc: float = 1.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.beta_perc < 0:
            raise ValueError("loss weights must be >= 0")


class PlateauTracker:
    """Fires once when no new minimum appears for `window` consecutive evals."""

    def __init__(self, window=10):
        self.window = window
        self.best = np.inf
        self.stale = 0
        self.fired = False

    def update(self, value) -> bool:
        if self.fired:
            return False
        if value < self.best - 1e-12:
            self.best = value
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.window:
            self.fired = True
            return True
        return False


@dataclass
class SegTrainState:
    g1: object
    d_obj: object
    d_ins: object
    opt_g: Adam
    opt_d_obj: Adam
    opt_d_ins: Adam
    step: int = 0
    lr: float = 1e-4
    plateau: PlateauTracker = field(default_factory=PlateauTracker)
    extractor: object = None


def to_nchw(a: np.ndarray) -> np.ndarray:
    return np.transpose(a, (2, 0, 1))


def stack_field(samples, attr) -> np.ndarray:
    return np.stack([to_nchw(getattr(s, attr)) for s in samples]).astype(np.float32)


def make_batch(samples) -> dict:
    return {
        "image": stack_field(samples, "image_occluded"),
        "m_vis": stack_field(samples, "visible_mask"),
        "m_full": stack_field(samples, "full_mask"),
        "target": stack_field(samples, "target_unoccluded"),
        "bg": stack_field(samples, "background_plate"),
        "samples": list(samples),
    }


def batch_indices(n, batch_size, step, seed) -> list:
    """Cycle epoch permutations; the order is a pure function of the seed."""
    out = []
    pos = step * batch_size
    while len(out) < batch_size:
        epoch = pos // n
        perm = rng_for("batch-order", seed, epoch).permutation(n)
        k = pos % n
        take = perm[k:k + (batch_size - len(out))]
        out.extend(int(i) for i in take)
        pos += len(take)
    return out


def draw_silhouettes(pool, batch, step, seed, jitter=True) -> np.ndarray:
    """One aligned silhouette per instance, fit to its ground-truth mask."""
    sils = []
    for i in range(batch["m_full"].shape[0]):
        ref = np.transpose(batch["m_full"][i], (1, 2, 0))
        sils.append(to_nchw(silhouette_pool.sample_aligned(
            pool, ref, fold_seed("sil", seed, step, i), jitter=jitter)))
    return np.stack(sils).astype(np.float32)


def assemble_g1_loss(m, batch, logit_obj, logit_ins, weights: SegLossWeights,
                     extractor, saturating=False, disc_mode="coupled"):
    """Combine adversarial, reconstruction, and perceptual terms.

    `m` is the generated mask tensor; logits come from the discriminators
    evaluated on it. Returns (total, breakdown); the weighted breakdown
    entries sum to the total.
    """
    m_full = Tensor(batch["m_full"].astype(m.data.dtype, copy=False))
    if m.shape != m_full.shape:
        raise ValueError(f"mask shape mismatch: {m.shape} vs {m_full.shape}")
    l1_raw = ops.mean_l1(m, m_full)
    perc_raw = perceptual_loss(extractor, m, m_full)
    l1_term = ops.scale(l1_raw, weights.lambda_l1)
    perc_term = ops.scale(perc_raw, weights.beta_perc)
    zero = Tensor(np.zeros((), dtype=m.data.dtype))
    adv_obj = (losses.generator_adv_loss(logit_obj, saturating)
               if disc_mode == "coupled" else zero)
    adv_ins = (losses.generator_adv_loss(logit_ins, saturating)
               if disc_mode in ("coupled", "single") else zero)
    total = ops.add(ops.add(adv_obj, adv_ins), ops.add(l1_term, perc_term))
    breakdown = {"adv_obj": adv_obj.item(), "adv_ins": adv_ins.item(),
                 "l1": l1_term.item(), "perc": perc_term.item(),
                 "l1_raw": l1_raw.item(), "perc_raw": perc_raw.item(),
                 "total": total.item()}
    return total, breakdown


def g1_forward(g1, batch) -> Tensor:
    x = np.concatenate([batch["image"], batch["m_vis"]], axis=1)
    return generator_forward(g1, Tensor(x))


def g1_loss(batch, params, weights: SegLossWeights, extractor,
            saturating=False, disc_mode="coupled"):
    """Full generator objective; `params` carries g1/d_obj/d_ins."""
    m = g1_forward(params.g1, batch)
    zero = Tensor(np.zeros((), dtype=m.data.dtype))
    logit_obj = (mask_disc_forward(params.d_obj, m)
                 if disc_mode == "coupled" else zero)
    logit_ins = zero
    if disc_mode in ("coupled", "single"):
        cond = ops.concat_channels([m, Tensor(batch["image"]), Tensor(batch["m_vis"])])
        logit_ins = mask_disc_forward(params.d_ins, cond)
    return assemble_g1_loss(m, batch, logit_obj, logit_ins, weights, extractor,
                            saturating, disc_mode)


def completion_iou(g1, samples, threshold=0.5) -> float:
    """Mean IoU of the thresholded-and-unioned completion vs ground truth."""
    batch = samples if isinstance(samples, dict) else make_batch(samples)
    with no_grad():
        m = g1_forward(g1, batch).data
    pred = ((m > threshold) | (batch["m_vis"] > 0)).astype(np.float32)
    ious = []
    for i in range(pred.shape[0]):
        p = np.transpose(pred[i], (1, 2, 0))
        g = np.transpose(batch["m_full"][i], (1, 2, 0))
        ious.append(metrics.mask_metrics(p, g).iou)
    return float(np.mean(ious))


def init_seg_state(config) -> SegTrainState:
    archs = config.archs()
    sched = config.schedule
    g1 = init_params(archs["g1"], fold_seed(config.seed, "g1"), "g1")
    d_obj = init_params(archs["d_obj"], fold_seed(config.seed, "d_obj"), "d_obj")
    d_ins = init_params(archs["d_ins"], fold_seed(config.seed, "d_ins"), "d_ins")
    mk = lambda p: Adam(p.tensors, lr=sched.lr_phase1,
                        beta1=sched.adam_beta1, beta2=sched.adam_beta2)
    return SegTrainState(
        g1=g1, d_obj=d_obj, d_ins=d_ins,
        opt_g=mk(g1), opt_d_obj=mk(d_obj), opt_d_ins=mk(d_ins),
        lr=sched.lr_phase1,
        plateau=PlateauTracker(sched.plateau_window),
        extractor=ConvFeatureExtractor(1, seed=fold_seed(config.seed, "perc-mask")))


def seg_train_step(state: SegTrainState, batch, pool, weights: SegLossWeights,
                   seed=0, disc_mode="coupled", saturating=False):
    """One alternating update; mutates and returns (state, logs)."""
    if isinstance(batch, list):
        batch = make_batch(batch)
    img_t = Tensor(batch["image"])
    vis_t = Tensor(batch["m_vis"])
    m = g1_forward(state.g1, batch)
    m_det = m.detach()
    m_full = Tensor(batch["m_full"])
    logs = {"step": state.step, "lr": state.lr}

    if disc_mode in ("coupled", "single"):
        # stack (generated, ground truth, silhouette) into one discriminator
        # pass; all three are constants at this phase
        n = batch["m_full"].shape[0]
        sils = draw_silhouettes(pool, batch, state.step, seed)
        if disc_mode == "coupled":
            state.opt_d_obj.zero_grad()
            stacked = Tensor(np.concatenate([m_det.data, batch["m_full"], sils]))
            lg = mask_disc_forward(state.d_obj, stacked)
            j_obj = losses.d_obj_objective(ops.slice_rows(lg, 0, n),
                                           ops.slice_rows(lg, n, 2 * n),
                                           ops.slice_rows(lg, 2 * n, 3 * n))
            ops.neg(j_obj).backward()
            state.opt_d_obj.step()
            logs["d_obj_value"] = j_obj.item()

        state.opt_d_ins.zero_grad()
        iv = np.concatenate([batch["image"], batch["m_vis"]], axis=1)
        groups = [m_det.data, batch["m_full"]] + ([sils] if disc_mode == "coupled" else [])
        stacked = Tensor(np.concatenate(
            [np.concatenate([g, iv], axis=1) for g in groups]))
        lg = mask_disc_forward(state.d_ins, stacked)
        if disc_mode == "coupled":
            j_ins = losses.d_ins_objective(ops.slice_rows(lg, n, 2 * n),
                                           ops.slice_rows(lg, 0, n),
                                           ops.slice_rows(lg, 2 * n, 3 * n))
        else:
            j_ins = losses.d_standard_objective(ops.slice_rows(lg, n, 2 * n),
                                                ops.slice_rows(lg, 0, n))
        ops.neg(j_ins).backward()
        state.opt_d_ins.step()
        logs["d_ins_value"] = j_ins.item()

    zero = Tensor(np.zeros((), dtype=m.data.dtype))
    logit_obj = (mask_disc_forward(state.d_obj, m)
                 if disc_mode == "coupled" else zero)
    logit_ins = zero
    if disc_mode in ("coupled", "single"):
        logit_ins = mask_disc_forward(
            state.d_ins, ops.concat_channels([m, img_t, vis_t]))
    total, breakdown = assemble_g1_loss(m, batch, logit_obj, logit_ins,
                                        weights, state.extractor,
                                        saturating, disc_mode)
    if not np.isfinite(total.data):
        raise NonFiniteLossError(f"non-finite generator loss at step {state.step}",
                                 diagnostics=breakdown)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.step += 1
    logs.update(breakdown)
    return state, logs


def seg_checkpoint(state: SegTrainState, config_fingerprint="") -> Checkpoint:
    opt_arrays = {}
    opt_arrays.update(state.opt_g.state_arrays("g1"))
    opt_arrays.update(state.opt_d_obj.state_arrays("d_obj"))
    opt_arrays.update(state.opt_d_ins.state_arrays("d_ins"))
    counters = {"seg_step": state.step, "opt_g1_t": state.opt_g.t,
                "opt_d_obj_t": state.opt_d_obj.t, "opt_d_ins_t": state.opt_d_ins.t}
    return Checkpoint(roles={"g1": state.g1, "d_obj": state.d_obj,
                             "d_ins": state.d_ins},
                      opt_arrays=opt_arrays, counters=counters,
                      config_fingerprint=config_fingerprint)


def _build_pool(config):
    if config.pool.source == "import":
        return silhouette_pool.import_silhouettes(config.pool.import_dir)
    return silhouette_pool.build_procedural_pool(
        config.pool.size, fold_seed(config.seed, "pool"))


def train_seg(dataset, config, run_dir=None, val_samples=None) -> Checkpoint:
    """Train stage 1 with the two-phase LR schedule; returns a checkpoint."""
    if not dataset:
        raise ValueError("empty dataset")
    sched = config.schedule
    state = init_seg_state(config)
    pool = _build_pool(config)
    val = val_samples if val_samples is not None else dataset
    val_batch = make_batch(val[:min(len(val), 16)])
    weights = config.seg_weights
    log_f = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "logs").mkdir(parents=True, exist_ok=True)
        log_f = open(run_dir / "logs" / "seg.jsonl", "w")
    nonfinite = 0
    try:
        for _ in range(sched.seg_steps):
            idx = batch_indices(len(dataset), sched.batch_size, state.step,
                                config.seed)
            batch = make_batch([dataset[i] for i in idx])
            try:
                _, logs = seg_train_step(state, batch, pool, weights,
                                         seed=config.seed,
                                         disc_mode=config.train.disc_mode,
                                         saturating=config.train.saturating_adv)
                nonfinite = 0
            except NonFiniteLossError as e:
                nonfinite += 1
                state.step += 1
                if nonfinite > sched.nonfinite_budget:
                    raise NonFiniteLossError(
                        f"non-finite loss persisted for {nonfinite} steps",
                        e.diagnostics) from e
                continue
            if state.step % sched.eval_every == 0:
                with no_grad():
                    val_loss, _ = g1_loss(val_batch, state, weights,
                                          state.extractor,
                                          config.train.saturating_adv,
                                          config.train.disc_mode)
                iou = completion_iou(state.g1, val_batch)
                logs["val_loss"] = val_loss.item()
                logs["val_iou"] = iou
                if state.plateau.update(val_loss.item()):
                    state.lr = sched.lr_phase2
                    state.opt_g.lr = sched.lr_phase2
                    state.opt_d_obj.lr = sched.lr_phase2
                    state.opt_d_ins.lr = sched.lr_phase2
                if log_f:
                    log_f.write(json.dumps(logs, sort_keys=True) + "\n")
                    log_f.flush()
                if sched.stop_at_iou is not None and iou >= sched.stop_at_iou:
                    break
    finally:
        if log_f:
            log_f.close()
    return seg_checkpoint(state, config.fingerprint())
