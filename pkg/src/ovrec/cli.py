"""Command-line interface.

Subcommands: synth, pool, train-seg, train-app, train-joint, infer, eval,
ablate. Every run is reproducible from (config, seed); outputs land in a
run directory with config.lock, checkpoints/, logs/, reports/, outputs/.

Environment:
  OVREC_OUT      overrides the --out directory
  OVREC_THREADS  caps worker threads (numba + BLAS via the usual env vars)
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import app_trainer, imgio, metrics, pipeline, seg_trainer, silhouette_pool, synth_data
from .config import Config, ConfigError, config_from_dict, load_config
from .models import (CheckpointError, load_checkpoint, save_checkpoint)
from .synth_data import DatasetError, SynthDataError
from .silhouette_pool import PoolError
from .util import fold_seed


class CliError(Exception):
    pass


def _apply_thread_cap():
    cap = os.environ.get("OVREC_THREADS")
    if not cap:
        return
    try:
        import numba
        numba.set_num_threads(max(1, int(cap)))
    except (ImportError, ValueError):
        pass


def _load_cfg(args) -> Config:
    if getattr(args, "config", None):
        return load_config(args.config)
    return Config()


def _out_dir(args) -> Path:
    out = os.environ.get("OVREC_OUT") or getattr(args, "out", None)
    if not out:
        raise CliError("no output directory given (--out or OVREC_OUT)")
    return Path(out)


def _setup_run_dir(out: Path, cfg: Config) -> Path:
    for sub in ("checkpoints", "logs", "reports", "outputs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.lock").write_text(cfg.to_yaml())
    return out


def _load_ckpt(path):
    if not path or not Path(path).exists():
        raise CliError(f"missing checkpoint: {path or '(none given)'}")
    return load_checkpoint(path)


def _read_data(path):
    if not path:
        raise CliError("missing dataset path (--data)")
    return synth_data.read_dataset(path)


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    count = args.count or cfg.synth_count
    samples = synth_data.generate_dataset(cfg.synth, count, cfg.seed)
    manifest = synth_data.write_dataset(samples, out, overwrite=args.overwrite)
    print(f"wrote {count} samples to {manifest}")
    return 0


def cmd_pool(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    if args.import_dir:
        pool = silhouette_pool.import_silhouettes(args.import_dir)
    elif cfg.pool.source == "import":
        pool = silhouette_pool.import_silhouettes(cfg.pool.import_dir)
    else:
        pool = silhouette_pool.build_procedural_pool(
            cfg.pool.size, fold_seed(cfg.seed, "pool"))
    silhouette_pool.save_pool(pool, out)
    print(f"wrote pool of {pool.count} silhouettes to {out}")
    return 0


def _train_segmenter_role(ck, dataset, cfg):
    if not cfg.train.train_segmenter:
        return ck
    seg_f = pipeline.train_visible_segmenter(
        dataset, cfg.archs()["seg_f"], steps=cfg.schedule.segmenter_steps,
        batch_size=cfg.schedule.batch_size, lr=cfg.schedule.segmenter_lr,
        seed=cfg.seed)
    ck.roles["seg_f"] = seg_f
    return ck


def cmd_train_seg(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    dataset = _read_data(args.data)
    val = synth_data.read_dataset(args.val) if args.val else None
    ck = seg_trainer.train_seg(dataset, cfg, run_dir=run, val_samples=val)
    ck = _train_segmenter_role(ck, dataset, cfg)
    path = run / "checkpoints" / "seg.ckpt"
    save_checkpoint(ck, path)
    print(f"stage-1 checkpoint: {path}")
    return 0


def cmd_train_app(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    dataset = _read_data(args.data)
    seg_ck = _load_ckpt(args.seg_checkpoint) if args.seg_checkpoint else None
    if seg_ck is None and cfg.train.mask_source == "predicted":
        raise CliError("predicted-mask training requires --seg-checkpoint")
    val = synth_data.read_dataset(args.val) if args.val else None
    ck = app_trainer.train_app(dataset, seg_ck, cfg, run_dir=run, val_samples=val)
    path = run / "checkpoints" / "app.ckpt"
    save_checkpoint(ck, path)
    print(f"stage-2 checkpoint: {path}")
    return 0


def cmd_train_joint(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    dataset = _read_data(args.data)
    ck = _load_ckpt(args.checkpoint)
    out_ck = app_trainer.train_joint(dataset, ck, cfg, run_dir=run)
    path = run / "checkpoints" / "joint.ckpt"
    save_checkpoint(out_ck, path)
    print(f"joint checkpoint: {path}")
    return 0


def _segmenter_for(ck, cfg, mask_path=None):
    if mask_path:
        return pipeline.FixedMaskSegmenter(imgio.load_mask_png(mask_path))
    if "seg_f" in ck.roles:
        return pipeline.TrainedSegmenter(ck.roles["seg_f"])
    raise CliError("no visible-mask source: pass --mask or use a checkpoint "
                   "with a trained segmenter role")


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    ck = _load_ckpt(args.checkpoint)
    image = imgio.load_image_png(args.image)
    segmenter = _segmenter_for(ck, cfg, args.mask)
    k = args.iterations or cfg.eval.iterations
    models = pipeline.PipelineModels.from_checkpoint(ck)
    results = pipeline.run_iterations(models, segmenter, image, k)
    index = []
    for res in results:
        t = res.iteration_index
        files = {"mask": f"iter{t}_mask.png", "generated": f"iter{t}_gen.png",
                 "recovered": f"iter{t}_recovered.png"}
        imgio.save_mask_png(run / "outputs" / files["mask"], res.completed_mask)
        imgio.save_image_png(run / "outputs" / files["generated"], res.generator_image)
        imgio.save_image_png(run / "outputs" / files["recovered"], res.recovered_image)
        index.append({"iteration": t, **files})
    (run / "outputs" / "index.json").write_text(json.dumps(index, indent=2))
    print(f"wrote {len(results)} iterations to {run / 'outputs'}")
    return 0


def _icp_inputs(cfg, dataset):
    for s in dataset:
        if s.seed is None:
            raise CliError("ICP labels need synthetic samples (seeded)")
    labels = [synth_data.vehicle_archetype_for(cfg.synth, s.seed) for s in dataset]
    crops = [metrics.crop_to_mask(s.target_unoccluded, s.full_mask)
             for s in dataset]
    return crops, labels


def _build_eval_model(name, ck, cfg, dataset):
    if name == "copy-input":
        return metrics.CopyInputBaseline()
    if name == "oracle-upper":
        return metrics.CheatingOracle()
    models = pipeline.PipelineModels.from_checkpoint(ck)
    if "seg_f" in ck.roles:
        shared = pipeline.TrainedSegmenter(ck.roles["seg_f"])
        factory = lambda s: shared
    else:
        factory = lambda s: pipeline.OracleSegmenter(s.visible_mask)
    return metrics.PipelineRunner(models, factory)


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    dataset = _read_data(args.data)
    ck = None
    if args.model == "pipeline":
        ck = _load_ckpt(args.checkpoint)
    model = _build_eval_model(args.model, ck, cfg, dataset)
    clf = labels = proxy = None
    if cfg.eval.icp:
        crops, labels = _icp_inputs(cfg, dataset)
        clf = metrics.train_shape_classifier(
            crops, labels, n_classes=8, seed=fold_seed(cfg.seed, "icp"))
    if cfg.eval.ss:
        seg_f = pipeline.train_visible_segmenter(
            dataset, cfg.archs()["seg_f"], steps=cfg.schedule.segmenter_steps,
            batch_size=cfg.schedule.batch_size, lr=cfg.schedule.segmenter_lr,
            seed=fold_seed(cfg.seed, "ss"), input_attr="target_unoccluded",
            target_attr="full_mask", name="ss_proxy")
        proxy = pipeline.TrainedSegmenter(seg_f)
    report = metrics.evaluate(model, dataset, cfg, icp_classifier=clf,
                              class_labels=labels, ss_segmenter=proxy)
    metrics.write_report(report, run / "reports")
    print(report.to_text())
    return 0


_ABLATE_PRESETS = ("coupled-disc", "single-disc", "one-path", "two-path",
                   "iterations")


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    run = _setup_run_dir(_out_dir(args), cfg)
    dataset = _read_data(args.data)
    heldout = synth_data.read_dataset(args.eval_data) if args.eval_data else dataset
    preset = args.preset
    d = cfg.to_dict()
    report = {"preset": preset}
    if preset in ("coupled-disc", "single-disc"):
        d["train"]["disc_mode"] = "coupled" if preset == "coupled-disc" else "single"
        cfg2 = config_from_dict(d)
        ck = seg_trainer.train_seg(dataset, cfg2, run_dir=run)
        report["iou"] = seg_trainer.completion_iou(ck.roles["g1"], heldout)
        save_checkpoint(ck, run / "checkpoints" / f"{preset}.ckpt")
    elif preset in ("one-path", "two-path"):
        d["train"]["two_path"] = preset == "two-path"
        if preset == "one-path":
            d["app_weights"]["lambda2"] = 0.0
            d["app_weights"]["beta2"] = 0.0
        seg_ck = _load_ckpt(args.seg_checkpoint) if args.seg_checkpoint else None
        if seg_ck is None:
            d["train"]["mask_source"] = "ground_truth"
        cfg2 = config_from_dict(d)
        ck = app_trainer.train_app(dataset, seg_ck, cfg2, run_dir=run)
        batch = seg_trainer.make_batch(heldout)
        m = (app_trainer.predict_masks(seg_ck.roles["g1"], batch)
             if seg_ck is not None else batch["m_full"])
        tpb = app_trainer.build_two_path_batch(batch, m)
        from .engine import no_grad
        with no_grad():
            out1, _ = app_trainer.two_path_forward(ck.roles["g2"], tpb)
        report["invisible_l1"] = app_trainer.invisible_region_l1(out1.data, batch, m)
        save_checkpoint(ck, run / "checkpoints" / f"{preset}.ckpt")
    elif preset == "iterations":
        ck = _load_ckpt(args.checkpoint)
        d["eval"]["iterations"] = args.iterations or 3
        cfg2 = config_from_dict(d)
        model = _build_eval_model("pipeline", ck, cfg2, heldout)
        rep = metrics.evaluate(model, heldout, cfg2)
        metrics.write_report(rep, run / "reports")
        report["aggregates"] = rep.aggregates
    else:
        raise CliError(f"unknown ablate preset {preset!r}")
    (run / "reports" / "ablate.json").write_text(json.dumps(report, indent=2,
                                                            sort_keys=True))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ovrec",
                                description="occluded-vehicle mask completion "
                                            "and appearance recovery")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--out", help="output directory")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, help="generate a synthetic dataset")
    sp.add_argument("--count", type=int, help="number of samples")
    sp.add_argument("--overwrite", action="store_true")

    sp = add("pool", cmd_pool, help="build or import a silhouette pool")
    sp.add_argument("--import-dir", help="directory of grayscale renders")

    sp = add("train-seg", cmd_train_seg, help="train the mask completion stage")
    sp.add_argument("--data", required=True)
    sp.add_argument("--val")

    sp = add("train-app", cmd_train_app, help="train the appearance recovery stage")
    sp.add_argument("--data", required=True)
    sp.add_argument("--seg-checkpoint")
    sp.add_argument("--val")

    sp = add("train-joint", cmd_train_joint, help="end-to-end fine-tune")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)

    sp = add("infer", cmd_infer, help="recover one image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--iterations", type=int)

    sp = add("eval", cmd_eval, help="evaluate on a labeled dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--model", choices=("pipeline", "copy-input", "oracle-upper"),
                    default="pipeline")

    sp = add("ablate", cmd_ablate, help="run an ablation preset")
    sp.add_argument("preset", choices=_ABLATE_PRESETS)
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-data")
    sp.add_argument("--seg-checkpoint")
    sp.add_argument("--checkpoint")
    sp.add_argument("--iterations", type=int)
    return p


def run(argv) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, SynthDataError, PoolError,
            CheckpointError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
