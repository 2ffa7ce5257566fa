"""Stage-2 training: appearance recovery with a weight-shared two-path
generator, plus the end-to-end joint fine-tune.

Path 1 fills in the invisible parts given (image, visible mask, completed
mask); path 2 inpaints the whole vehicle from the background plate with a
zero map in the visible-mask slot. Both paths run the same parameter
object, so their gradients accumulate into one set of weights. At test
time only path 1 exists (see ovrec.pipeline).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .engine import Adam, Tensor, no_grad, ops
from .features import ConvFeatureExtractor
from .losses import perceptual_loss
from .models import Checkpoint, generator_forward, patch_disc_forward, init_params
from .seg_trainer import (NonFiniteLossError, PlateauTracker, SegTrainState,
                          batch_indices, g1_forward, make_batch,
                          seg_checkpoint, _build_pool)
from . import seg_trainer
from .util import fold_seed

MASK_SOURCES = ("predicted", "ground_truth")


@dataclass
class AppLossWeights:
    lambda1: float = 10.0
    lambda2: float = 10.0
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.beta1, self.beta2) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class TwoPathBatch:
    path1_input: np.ndarray  # (N,5,H,W): image, visible mask, completed mask
    path2_input: np.ndarray  # (N,5,H,W): background, zero map, completed mask
    target: np.ndarray       # (N,3,H,W): unoccluded target image

    def __post_init__(self):
        if self.path1_input.shape != self.path2_input.shape:
            raise ValueError("path inputs must share a shape")
        if self.path1_input.shape[1] != 5:
            raise ValueError("path inputs must have 5 channels")


def build_two_path_batch(batch, m: np.ndarray, swap_path2_slots=False) -> TwoPathBatch:
    """Assemble both path inputs from a sample batch and the mask m.

    Slot layout is [image(3), visible-mask slot(1), target-mask slot(1)];
    path 2 puts the zero map in the visible slot unless the fidelity flag
    swaps the two mask slots.
    """
    zero = np.zeros_like(m)
    p1 = np.concatenate([batch["image"], batch["m_vis"], m], axis=1)
    if swap_path2_slots:
        p2 = np.concatenate([batch["bg"], m, zero], axis=1)
    else:
        p2 = np.concatenate([batch["bg"], zero, m], axis=1)
    return TwoPathBatch(p1.astype(np.float32), p2.astype(np.float32),
                        batch["target"].astype(np.float32))


def two_path_forward(g2_params, batch: TwoPathBatch):
    """Both paths through literally the same parameter object."""
    out1 = generator_forward(g2_params, Tensor(batch.path1_input))
    out2 = generator_forward(g2_params, Tensor(batch.path2_input))
    return out1, out2


def app_loss(batch: TwoPathBatch, outputs, d2_logit_maps, weights: AppLossWeights,
             extractor, two_path=True, saturating=False):
    """Adversarial + reconstruction + perceptual terms over both paths.

    `d2_logit_maps` is (logits(out1), logits(out2) or None). With the
    path-2 terms disabled this is exactly the one-path objective.
    """
    out1, out2 = outputs
    lt1, lt2 = d2_logit_maps
    target = Tensor(batch.target.astype(out1.data.dtype, copy=False))
    if out1.shape != target.shape:
        raise ValueError(f"output shape {out1.shape} != target {target.shape}")
    zero = Tensor(np.zeros((), dtype=out1.data.dtype))

    adv1 = losses.generator_adv_loss(lt1, saturating)
    l1_1r = ops.mean_l1(out1, target)
    perc1r = perceptual_loss(extractor, out1, target)
    l1_1 = ops.scale(l1_1r, weights.lambda1)
    perc1 = ops.scale(perc1r, weights.beta1)
    if two_path:
        adv2 = losses.generator_adv_loss(lt2, saturating)
        l1_2r = ops.mean_l1(out2, target)
        perc2r = perceptual_loss(extractor, out2, target)
        l1_2 = ops.scale(l1_2r, weights.lambda2)
        perc2 = ops.scale(perc2r, weights.beta2)
    else:
        adv2 = l1_2 = perc2 = zero
        l1_2r = perc2r = zero
    total = ops.add(ops.add(ops.add(adv1, adv2), ops.add(l1_1, perc1)),
                    ops.add(l1_2, perc2))
    breakdown = {"adv1": adv1.item(), "adv2": adv2.item(),
                 "l1_1": l1_1.item(), "perc1": perc1.item(),
                 "l1_2": l1_2.item(), "perc2": perc2.item(),
                 "l1_1_raw": l1_1r.item(), "l1_2_raw": l1_2r.item(),
                 "total": total.item()}
    return total, breakdown


@dataclass
class AppTrainState:
    g2: object
    d2: object
    opt_g: Adam
    opt_d: Adam
    step: int = 0
    lr: float = 1e-4
    plateau: PlateauTracker = field(default_factory=PlateauTracker)
    extractor: object = None


def init_app_state(config) -> AppTrainState:
    archs = config.archs()
    sched = config.schedule
    g2 = init_params(archs["g2"], fold_seed(config.seed, "g2"), "g2")
    d2 = init_params(archs["d2"], fold_seed(config.seed, "d2"), "d2")
    mk = lambda p, lr: Adam(p.tensors, lr=lr, beta1=sched.adam_beta1,
                            beta2=sched.adam_beta2)
    return AppTrainState(
        g2=g2, d2=d2, opt_g=mk(g2, sched.lr_phase1), opt_d=mk(d2, sched.lr_phase1),
        lr=sched.lr_phase1, plateau=PlateauTracker(sched.plateau_window),
        extractor=ConvFeatureExtractor(3, seed=fold_seed(config.seed, "perc-img")))


def app_train_step(state: AppTrainState, batch: TwoPathBatch,
                   weights: AppLossWeights, two_path=True, saturating=False):
    """Alternating D2 then G2 update; mutates and returns (state, logs)."""
    out1, out2 = two_path_forward(state.g2, batch)
    logs = {"step": state.step, "lr": state.lr}

    # one stacked pass over (real target, fake path 1[, fake path 2])
    n = batch.target.shape[0]
    state.opt_d.zero_grad()
    groups = [batch.target, out1.data] + ([out2.data] if two_path else [])
    lg = patch_disc_forward(state.d2, Tensor(np.concatenate(groups)))
    j_d2 = losses.d2_objective(
        ops.slice_rows(lg, 0, n), ops.slice_rows(lg, n, 2 * n),
        ops.slice_rows(lg, 2 * n, 3 * n) if two_path else None)
    ops.neg(j_d2).backward()
    state.opt_d.step()
    logs["d2_value"] = j_d2.item()

    lt1 = patch_disc_forward(state.d2, out1)
    lt2 = patch_disc_forward(state.d2, out2) if two_path else None
    total, breakdown = app_loss(batch, (out1, out2), (lt1, lt2), weights,
                                state.extractor, two_path, saturating)
    if not np.isfinite(total.data):
        raise NonFiniteLossError(f"non-finite appearance loss at step {state.step}",
                                 diagnostics=breakdown)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.step += 1
    logs.update(breakdown)
    return state, logs


def predict_masks(g1_params, batch, threshold=0.5) -> np.ndarray:
    """Frozen-G1 completed masks (thresholded, unioned with the visible mask)."""
    with no_grad():
        raw = g1_forward(g1_params, batch).data
    return ((raw > threshold) | (batch["m_vis"] > 0)).astype(np.float32)


def _mask_for_batch(batch, mask_source, g1_params):
    if mask_source == "ground_truth":
        return batch["m_full"]
    return predict_masks(g1_params, batch)


def invisible_region_l1(out1: np.ndarray, batch, m: np.ndarray) -> float:
    """Mean |out1 - target| restricted to R = m minus the visible mask."""
    r = m * (1.0 - batch["m_vis"])
    r3 = np.broadcast_to(r > 0, batch["target"].shape)
    if not r3.any():
        return 0.0
    return float(np.abs(out1 - batch["target"])[r3].mean())


def app_checkpoint(state: AppTrainState, seg_ck: Checkpoint | None,
                   config_fingerprint="") -> Checkpoint:
    roles = dict(seg_ck.roles) if seg_ck is not None else {}
    roles.update({"g2": state.g2, "d2": state.d2})
    opt_arrays = dict(seg_ck.opt_arrays) if seg_ck is not None else {}
    opt_arrays.update(state.opt_g.state_arrays("g2"))
    opt_arrays.update(state.opt_d.state_arrays("d2"))
    counters = dict(seg_ck.counters) if seg_ck is not None else {}
    counters.update({"app_step": state.step, "opt_g2_t": state.opt_g.t,
                     "opt_d2_t": state.opt_d.t})
    return Checkpoint(roles=roles, opt_arrays=opt_arrays, counters=counters,
                      config_fingerprint=config_fingerprint)


def train_app(dataset, seg_checkpoint_in, config, run_dir=None,
              val_samples=None) -> Checkpoint:
    """Train stage 2; mask source is predicted (frozen G1) or ground truth."""
    if not dataset:
        raise ValueError("empty dataset")
    mask_source = config.train.mask_source
    if mask_source not in MASK_SOURCES:
        raise ValueError(f"unknown mask_source {mask_source!r}")
    if mask_source == "predicted" and seg_checkpoint_in is None:
        raise ValueError("predicted-mask mode requires a stage-1 checkpoint")
    g1_params = seg_checkpoint_in.roles["g1"] if seg_checkpoint_in else None

    sched = config.schedule
    state = init_app_state(config)
    two_path = config.train.two_path
    weights = config.app_weights
    swap = config.train.swap_path2_slots
    val = val_samples if val_samples is not None else dataset
    val_batch = make_batch(val[:min(len(val), 16)])
    val_m = _mask_for_batch(val_batch, mask_source, g1_params)
    val_tpb = build_two_path_batch(val_batch, val_m, swap)

    log_f = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "logs").mkdir(parents=True, exist_ok=True)
        log_f = open(run_dir / "logs" / "app.jsonl", "w")
    nonfinite = 0
    try:
        for _ in range(sched.app_steps):
            idx = batch_indices(len(dataset), sched.batch_size, state.step,
                                fold_seed(config.seed, "app"))
            batch = make_batch([dataset[i] for i in idx])
            m = _mask_for_batch(batch, mask_source, g1_params)
            tpb = build_two_path_batch(batch, m, swap)
            try:
                _, logs = app_train_step(state, tpb, weights, two_path,
                                         config.train.saturating_adv)
                nonfinite = 0
            except NonFiniteLossError as e:
                nonfinite += 1
                state.step += 1
                if nonfinite > sched.nonfinite_budget:
                    raise
                continue
            if state.step % sched.eval_every == 0:
                with no_grad():
                    out1, out2 = two_path_forward(state.g2, val_tpb)
                    lt1 = patch_disc_forward(state.d2, out1)
                    lt2 = patch_disc_forward(state.d2, out2) if two_path else None
                    v_total, _ = app_loss(val_tpb, (out1, out2), (lt1, lt2),
                                          weights, state.extractor, two_path,
                                          config.train.saturating_adv)
                inv_l1 = invisible_region_l1(out1.data, val_batch, val_m)
                logs["val_loss"] = v_total.item()
                logs["val_inv_l1"] = inv_l1
                if state.plateau.update(v_total.item()):
                    state.lr = sched.lr_phase2
                    state.opt_g.lr = sched.lr_phase2
                    state.opt_d.lr = sched.lr_phase2
                if log_f:
                    log_f.write(json.dumps(logs, sort_keys=True) + "\n")
                    log_f.flush()
                if (sched.stop_at_invisible_l1 is not None
                        and inv_l1 <= sched.stop_at_invisible_l1):
                    break
    finally:
        if log_f:
            log_f.close()
    return app_checkpoint(state, seg_checkpoint_in, config.fingerprint())


def _load_adam(params, arrays, counters, prefix, lr, sched):
    opt = Adam(params.tensors, lr=lr, beta1=sched.adam_beta1, beta2=sched.adam_beta2)
    key = f"{prefix}.m."
    if any(k.startswith(key) for k in arrays):
        opt.load_state_arrays(prefix, arrays, counters.get(f"opt_{prefix}_t", 0))
    return opt


def train_joint(dataset, checkpoint_in: Checkpoint, config, run_dir=None) -> Checkpoint:
    """End-to-end fine-tune at a fixed learning rate.

    With backflow enabled, the appearance objective differentiates through
    the (continuous) completed mask into the mask generator, and the
    stage-1 objective keeps training alongside; all five parameter sets
    update. Disabling backflow reduces a joint step to a stage-2 step on
    the frozen predicted mask.
    """
    if not dataset:
        raise ValueError("empty dataset")
    for role in ("g1", "d_obj", "d_ins", "g2", "d2"):
        if role not in checkpoint_in.roles:
            raise ValueError(f"joint training requires role {role!r} in the checkpoint")
    sched = config.schedule
    lr = sched.lr_joint
    r = checkpoint_in.roles
    arrays, counters = checkpoint_in.opt_arrays, checkpoint_in.counters
    seg_state = SegTrainState(
        g1=r["g1"], d_obj=r["d_obj"], d_ins=r["d_ins"],
        opt_g=_load_adam(r["g1"], arrays, counters, "g1", lr, sched),
        opt_d_obj=_load_adam(r["d_obj"], arrays, counters, "d_obj", lr, sched),
        opt_d_ins=_load_adam(r["d_ins"], arrays, counters, "d_ins", lr, sched),
        step=counters.get("seg_step", 0), lr=lr,
        extractor=ConvFeatureExtractor(1, seed=fold_seed(config.seed, "perc-mask")))
    app_state = AppTrainState(
        g2=r["g2"], d2=r["d2"],
        opt_g=_load_adam(r["g2"], arrays, counters, "g2", lr, sched),
        opt_d=_load_adam(r["d2"], arrays, counters, "d2", lr, sched),
        step=counters.get("app_step", 0), lr=lr,
        extractor=ConvFeatureExtractor(3, seed=fold_seed(config.seed, "perc-img")))
    pool = _build_pool(config)
    weights_seg = config.seg_weights
    weights_app = config.app_weights
    two_path = config.train.two_path
    swap = config.train.swap_path2_slots
    backflow = config.train.backflow

    log_f = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "logs").mkdir(parents=True, exist_ok=True)
        log_f = open(run_dir / "logs" / "joint.jsonl", "w")
    joint_step = counters.get("joint_step", 0)
    try:
        for _ in range(sched.joint_steps):
            idx = batch_indices(len(dataset), sched.batch_size, joint_step,
                                fold_seed(config.seed, "joint"))
            batch = make_batch([dataset[i] for i in idx])
            if not backflow:
                m = predict_masks(r["g1"], batch)
                tpb = build_two_path_batch(batch, m, swap)
                _, logs = app_train_step(app_state, tpb, weights_app, two_path,
                                         config.train.saturating_adv)
            else:
                logs = _joint_step(seg_state, app_state, batch, pool,
                                   weights_seg, weights_app, config, two_path,
                                   swap)
            joint_step += 1
            logs["lr"] = lr
            logs["joint_step"] = joint_step
            if log_f and joint_step % max(sched.eval_every // 10, 1) == 0:
                log_f.write(json.dumps(logs, sort_keys=True) + "\n")
                log_f.flush()
    finally:
        if log_f:
            log_f.close()
    ck = app_checkpoint(app_state, seg_checkpoint(seg_state, config.fingerprint()),
                        config.fingerprint())
    ck.counters["joint_step"] = joint_step
    return ck


def _joint_step(seg_state, app_state, batch, pool, weights_seg, weights_app,
                config, two_path, swap):
    from .models import mask_disc_forward
    img_t = Tensor(batch["image"])
    vis_t = Tensor(batch["m_vis"])
    m_full = Tensor(batch["m_full"])

    # discriminator updates, generated samples detached
    m = g1_forward(seg_state.g1, batch)
    m_det = m.detach()
    sils = Tensor(seg_trainer.draw_silhouettes(pool, batch, seg_state.step,
                                               config.seed))
    seg_state.opt_d_obj.zero_grad()
    j_obj = losses.d_obj_objective(
        mask_disc_forward(seg_state.d_obj, m_det),
        mask_disc_forward(seg_state.d_obj, m_full),
        mask_disc_forward(seg_state.d_obj, sils))
    ops.neg(j_obj).backward()
    seg_state.opt_d_obj.step()

    cond = lambda mask: ops.concat_channels([mask, img_t, vis_t])
    seg_state.opt_d_ins.zero_grad()
    j_ins = losses.d_ins_objective(
        mask_disc_forward(seg_state.d_ins, cond(m_full)),
        mask_disc_forward(seg_state.d_ins, cond(m_det)),
        mask_disc_forward(seg_state.d_ins, cond(sils)))
    ops.neg(j_ins).backward()
    seg_state.opt_d_ins.step()

    # both path inputs carry the live mask so appearance gradients reach G1
    zero_map = Tensor(np.zeros_like(batch["m_vis"]))
    bg_t = Tensor(batch["bg"])
    p1 = ops.concat_channels([img_t, vis_t, m])
    p2 = (ops.concat_channels([bg_t, m, zero_map]) if swap
          else ops.concat_channels([bg_t, zero_map, m]))
    out1 = generator_forward(app_state.g2, p1)
    out2 = generator_forward(app_state.g2, p2)
    target_t = Tensor(batch["target"])

    app_state.opt_d.zero_grad()
    j_d2 = losses.d2_objective(
        patch_disc_forward(app_state.d2, target_t),
        patch_disc_forward(app_state.d2, out1.detach()),
        patch_disc_forward(app_state.d2, out2.detach()) if two_path else None)
    ops.neg(j_d2).backward()
    app_state.opt_d.step()

    # combined generator objective
    logit_obj = mask_disc_forward(seg_state.d_obj, m)
    logit_ins = mask_disc_forward(seg_state.d_ins, cond(m))
    seg_total, seg_bd = seg_trainer.assemble_g1_loss(
        m, batch, logit_obj, logit_ins, weights_seg, seg_state.extractor,
        config.train.saturating_adv, disc_mode="coupled")
    tpb = TwoPathBatch(p1.data, p2.data, batch["target"])
    lt1 = patch_disc_forward(app_state.d2, out1)
    lt2 = patch_disc_forward(app_state.d2, out2) if two_path else None
    app_total, app_bd = app_loss(tpb, (out1, out2), (lt1, lt2), weights_app,
                                 app_state.extractor, two_path,
                                 config.train.saturating_adv)
    total = ops.add(seg_total, app_total)
    if not np.isfinite(total.data):
        raise NonFiniteLossError("non-finite joint loss",
                                 diagnostics={**seg_bd, **app_bd})
    seg_state.opt_g.zero_grad()
    app_state.opt_g.zero_grad()
    total.backward()
    seg_state.opt_g.step()
    app_state.opt_g.step()
    seg_state.step += 1
    app_state.step += 1
    return {"seg_total": seg_total.item(), "app_total": app_total.item(),
            "d_obj_value": j_obj.item(), "d_ins_value": j_ins.item(),
            "d2_value": j_d2.item()}
