"""Evaluation: mask metrics, per-pixel image errors, recognizability (ICP)
and segmentation-score proxies, and batch evaluation reports."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import Adam, Tensor, no_grad, ops
from .pipeline import PipelineModels, run_iterations
from .util import fold_seed, mask_bbox, rng_for


@dataclass
class MaskMetrics:
    precision: float
    recall: float
    f1: float
    iou: float
    l1: float
    l2: float


def _check_binary_pair(p, g):
    if p.shape != g.shape:
        raise ValueError(f"mask shape mismatch: {p.shape} vs {g.shape}")
    for name, a in (("pred", p), ("gt", g)):
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError(f"{name} mask is not binary")


def mask_metrics(pred: np.ndarray, gt: np.ndarray) -> MaskMetrics:
    """Pixel metrics for binary masks.

    Empty/empty pairs score 1.0 on precision/recall/F1/IoU; if exactly one
    side is empty the ratio scores are 0.
    """
    _check_binary_pair(pred, gt)
    p = pred.astype(bool)
    g = gt.astype(bool)
    inter = float(np.logical_and(p, g).sum())
    np_, ng = float(p.sum()), float(g.sum())
    union = np_ + ng - inter
    if np_ == 0 and ng == 0:
        precision = recall = iou = f1 = 1.0
    else:
        precision = inter / np_ if np_ > 0 else 0.0
        recall = inter / ng if ng > 0 else 0.0
        iou = inter / union if union > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
    diff = np.abs(pred.astype(np.float64) - gt.astype(np.float64))
    l1 = float(diff.mean())
    l2 = float((diff ** 2).mean())
    return MaskMetrics(precision, recall, f1, iou, l1, l2)


def pixel_errors(a: np.ndarray, b: np.ndarray, region=None):
    """Mean absolute and mean squared difference, optionally over a region."""
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    if region is None:
        return float(np.abs(diff).mean()), float((diff ** 2).mean())
    r = np.broadcast_to(region.astype(bool), a.shape)
    if not r.any():
        raise ValueError("empty region")
    sel = diff[r]
    return float(np.abs(sel).mean()), float((sel ** 2).mean())


# ---------------------------------------------------------------------------
# proxy networks for the recognizability (ICP) and segmentation (SS) scores

@dataclass
class ShapeClassifier:
    tensors: dict
    widths: tuple
    n_classes: int
    in_size: int


def classifier_forward(clf: ShapeClassifier, x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    y = x
    t = clf.tensors
    for i in range(len(clf.widths)):
        y = ops.leaky_relu(ops.conv2d(y, t[f"c{i}.w"], t[f"c{i}.b"],
                                      stride=2, pad=1), 0.2)
    y = ops.mean_spatial(y)
    return ops.dense(y, t["fc.w"], t["fc.b"])


def crop_to_mask(image, mask, out_size=32):
    """Mask-bounded crop, nearest-resized to a square classifier input."""
    bb = mask_bbox(mask)
    if bb is None:
        raise ValueError("cannot crop to an empty mask")
    r0, r1, c0, c1 = bb
    crop = image[r0:r1, c0:c1]
    rows = np.minimum((np.arange(out_size) * crop.shape[0]) // out_size,
                      crop.shape[0] - 1)
    cols = np.minimum((np.arange(out_size) * crop.shape[1]) // out_size,
                      crop.shape[1] - 1)
    return crop[rows][:, cols]


def train_shape_classifier(crops, labels, n_classes, widths=(8, 16, 32),
                           steps=400, batch_size=16, lr=1e-3, seed=0,
                           in_size=32) -> ShapeClassifier:
    """Train the frozen conv classifier used by the ICP proxy."""
    rng = np.random.default_rng(fold_seed("clf-init", seed))
    tensors = {}
    prev = 3
    for i, w in enumerate(widths):
        std = np.sqrt(2.0 / (prev * 9))
        tensors[f"c{i}.w"] = Tensor(rng.normal(0, std, (w, prev, 3, 3)).astype(np.float32),
                                    requires_grad=True)
        tensors[f"c{i}.b"] = Tensor(np.zeros(w, dtype=np.float32), requires_grad=True)
        prev = w
    tensors["fc.w"] = Tensor(rng.normal(0, np.sqrt(1.0 / prev),
                                        (prev, n_classes)).astype(np.float32),
                             requires_grad=True)
    tensors["fc.b"] = Tensor(np.zeros(n_classes, dtype=np.float32), requires_grad=True)
    clf = ShapeClassifier(tensors, tuple(widths), n_classes, in_size)

    xs = np.stack([np.transpose(c, (2, 0, 1)) for c in crops]).astype(np.float32)
    ys = np.asarray(labels)
    opt = Adam(tensors, lr=lr)
    n = xs.shape[0]
    for step in range(steps):
        idx = rng_for("clf-batch", seed, step).choice(n, size=min(batch_size, n),
                                                      replace=False)
        logits = classifier_forward(clf, xs[idx])
        loss = ops.nll_loss(ops.log_softmax(logits), ys[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return clf


def classifier_probs(clf: ShapeClassifier, crops) -> np.ndarray:
    xs = np.stack([np.transpose(c, (2, 0, 1)) for c in crops]).astype(np.float32)
    with no_grad():
        logits = classifier_forward(clf, xs).data
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def icp_score(classifier: ShapeClassifier, recovered_crops, class_labels) -> float:
    """Mean probability the frozen classifier assigns to the true class."""
    labels = np.asarray(class_labels)
    if labels.min() < 0 or labels.max() >= classifier.n_classes:
        raise ValueError("label outside the classifier's class set")
    probs = classifier_probs(classifier, recovered_crops)
    return float(probs[np.arange(len(labels)), labels].mean())


def seg_score(proxy_segmenter, recovered_images, gt_full_masks) -> float:
    """Mean full-frame pixel accuracy of a frozen segmenter's vehicle mask."""
    accs = []
    for img, gt in zip(recovered_images, gt_full_masks):
        if img.shape[:2] != gt.shape[:2]:
            raise ValueError("image / mask shape mismatch")
        pred = proxy_segmenter(img)
        accs.append(float((pred == gt).mean()))
    return float(np.mean(accs))


# ---------------------------------------------------------------------------
# batch evaluation

@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    icp: float | None = None
    ss: float | None = None
    sample_count: int = 0
    iterations: int = 1
    config_fingerprint: str = ""

    def to_text(self) -> str:
        cols = ["iter", "prec", "recall", "f1", "iou", "mask_l1", "mask_l2",
                "img_l1", "img_l2", "inv_l1", "inv_l2"]
        lines = ["  ".join(f"{c:>8s}" for c in cols)]
        for it in range(1, self.iterations + 1):
            agg = self.aggregates[f"iter{it}"]
            vals = [f"{it:>8d}"] + [f"{agg[c]:8.4f}" for c in cols[1:]]
            lines.append("  ".join(vals))
        if self.icp is not None:
            lines.append(f"ICP: {self.icp:.4f}")
        if self.ss is not None:
            lines.append(f"SS: {self.ss:.4f}")
        return "\n".join(lines)


class PipelineRunner:
    """Evaluates the trained two-stage pipeline."""

    def __init__(self, models: PipelineModels, segmenter_factory):
        self.models = models
        self.segmenter_factory = segmenter_factory

    def recover(self, sample, k):
        segmenter = self.segmenter_factory(sample)
        return run_iterations(self.models, segmenter, sample.image_occluded, k)


class CopyInputBaseline:
    """M = visible mask, recovered image = input, for every iteration."""

    def recover(self, sample, k):
        from .pipeline import RecoveryResult
        zero = np.zeros_like(sample.visible_mask)
        return [RecoveryResult(t, sample.visible_mask, sample.image_occluded,
                               sample.image_occluded, zero)
                for t in range(1, k + 1)]


class CheatingOracle:
    """Emits ground truth; used to sanity-check the harness upper bound."""

    def recover(self, sample, k):
        from .pipeline import RecoveryResult
        r = (sample.full_mask * (1 - sample.visible_mask)).astype(np.float32)
        return [RecoveryResult(t, sample.full_mask, sample.target_unoccluded,
                               sample.target_unoccluded, r)
                for t in range(1, k + 1)]


_ROW_KEYS = ["prec", "recall", "f1", "iou", "mask_l1", "mask_l2",
             "img_l1", "img_l2", "inv_l1", "inv_l2"]


def evaluate(model, dataset, config, icp_classifier=None, class_labels=None,
             ss_segmenter=None) -> MetricsReport:
    """Run the model on every sample for k iterations and tabulate metrics.

    Mask metrics compare the completed mask against the full ground truth;
    image errors compare the recovered image against the unoccluded target,
    both full-frame and restricted to the true invisible region.
    """
    if not dataset:
        raise ValueError("empty dataset")
    k = config.eval.iterations
    report = MetricsReport(sample_count=len(dataset), iterations=k,
                           config_fingerprint=config.fingerprint())
    final_images = []
    for sample in dataset:
        results = model.recover(sample, k)
        inv_gt = (sample.full_mask * (1 - sample.visible_mask)).astype(bool)
        for res in results:
            mm = mask_metrics(res.completed_mask, sample.full_mask)
            img_l1, img_l2 = pixel_errors(res.recovered_image,
                                          sample.target_unoccluded)
            if inv_gt.any():
                inv_l1, inv_l2 = pixel_errors(res.recovered_image,
                                              sample.target_unoccluded, inv_gt)
            else:
                inv_l1 = inv_l2 = 0.0
            report.rows.append({
                "sample_id": sample.sample_id, "iter": res.iteration_index,
                "prec": mm.precision, "recall": mm.recall, "f1": mm.f1,
                "iou": mm.iou, "mask_l1": mm.l1, "mask_l2": mm.l2,
                "img_l1": img_l1, "img_l2": img_l2,
                "inv_l1": inv_l1, "inv_l2": inv_l2})
        final_images.append(results[-1].recovered_image)
    for it in range(1, k + 1):
        rows = [r for r in report.rows if r["iter"] == it]
        report.aggregates[f"iter{it}"] = {
            key: float(np.mean([r[key] for r in rows])) for key in _ROW_KEYS}
    if icp_classifier is not None:
        crops = [crop_to_mask(img, s.full_mask, icp_classifier.in_size)
                 for img, s in zip(final_images, dataset)]
        report.icp = icp_score(icp_classifier, crops, class_labels)
    if ss_segmenter is not None:
        report.ss = seg_score(ss_segmenter, final_images,
                              [s.full_mask for s in dataset])
    return report


def write_report(report: MetricsReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text() + "\n")
    with open(out / "rows.jsonl", "w") as f:
        for row in report.rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    summary = {"aggregates": report.aggregates, "icp": report.icp,
               "ss": report.ss, "sample_count": report.sample_count,
               "iterations": report.iterations,
               "config_fingerprint": report.config_fingerprint}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
