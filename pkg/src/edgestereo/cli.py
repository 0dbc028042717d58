"""Command-line entry point: gen-data, train, infer, eval, gradcheck.

Set ``EDGESTEREO_NUM_THREADS`` to cap the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import codecs
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import DataConfig, RunConfig, load_config, save_config
from .data import generate_dataset, load_dataset, load_manifest, save_dataset
from .gradcheck import format_table, run_suite
from .losses import evaluate
from .model import EdgeStereo, ModelConfig
from .training import PhasePlan, PhaseSpec, predict, run_phase

log = logging.getLogger("edgestereo")

THREADS_ENV = "EDGESTEREO_NUM_THREADS"
ERROR_SATURATION = 3.0
HOLDOUT_SEED_OFFSET = 1_000_003


class CliError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _data_overrides(cfg: DataConfig, args) -> DataConfig:
    for key in ("n_samples", "height", "width", "d_max", "max_layers", "texture"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _generate(cfg: DataConfig, seed: int, n: int):
    return generate_dataset(n, seed, cfg.height, cfg.width, cfg.d_max, cfg.max_layers,
                            cfg.texture, cfg.random_background)


def training_data(cfg: RunConfig):
    """Training and held-out samples: from a manifest, or generated from the seed."""
    d = cfg.data
    if d.manifest is not None:
        samples = load_dataset(d.manifest)
        if d.holdout >= len(samples):
            raise CliError(f"holdout {d.holdout} leaves no training samples")
        return samples[d.holdout:], samples[:d.holdout]
    return (_generate(d, cfg.seed, d.n_samples),
            _generate(d, cfg.seed + HOLDOUT_SEED_OFFSET, d.holdout))


def _pad_to(x: np.ndarray, divisor: int) -> np.ndarray:
    h, w = x.shape[-2:]
    ph, pw = -h % divisor, -w % divisor
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)], mode="edge")


def infer_pair(model: EdgeStereo, left: np.ndarray, right: np.ndarray):
    """Disparity and edge maps ([H, W]) at the input extents; inputs are padded
    by edge replication to the model divisor and cropped back."""
    h, w = left.shape[-2:]
    div = model.config.divisor
    lp, rp = _pad_to(left, div)[None], _pad_to(right, div)[None]
    disp = predict(model, lp, rp)[0, 0, :h, :w]
    edges = model.edges(lp).edge_map.value[0, 0, :h, :w]
    return disp, edges


def error_colormap(err: np.ndarray, saturation: float = ERROR_SATURATION) -> np.ndarray:
    """[3, H, W] ramp from blue (0 px) to red (>= saturation px); black where invalid."""
    t = np.clip(np.nan_to_num(err, nan=0.0) / saturation, 0.0, 1.0)
    rgb = np.stack([t, 1.0 - np.abs(2.0 * t - 1.0), 1.0 - t])
    return np.where(np.isnan(err)[None], 0.0, rgb)


def load_model(checkpoint) -> tuple[EdgeStereo, dict]:
    header, _ = read_checkpoint(checkpoint)
    meta = header["meta"]
    if "model" not in meta:
        raise CheckpointError(f"{checkpoint} does not record a model configuration")
    model = EdgeStereo(ModelConfig(**meta["model"]))
    load_checkpoint(checkpoint, model)
    return model, meta


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    data = _data_overrides(cfg.data, args)
    out = Path(args.out or cfg.out_dir)
    samples = _generate(data, cfg.seed, data.n_samples)
    meta = {"seed": cfg.seed, "height": data.height, "width": data.width, "d_max": data.d_max,
            "max_layers": data.max_layers, "texture": data.texture,
            "random_background": data.random_background}
    path = save_dataset(out, samples, meta)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def _phase_plan(cfg: RunConfig, args) -> PhasePlan:
    plan = cfg.training
    if args.iterations:
        its = [int(v) for v in args.iterations.split(",")]
        if len(its) != len(plan.phases):
            raise CliError(f"--iterations needs {len(plan.phases)} values")
        plan = PhasePlan([PhaseSpec(**{**p.to_dict(), "iterations": n})
                          for p, n in zip(plan.phases, its)])
    return plan


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.data:
        cfg.data.manifest = args.data
    if args.checkpoint_every is not None:
        cfg.checkpoint_every = args.checkpoint_every
    cfg.training = _phase_plan(cfg, args)
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    train, holdout = training_data(cfg)

    completed: dict[str, list[float]] = {}
    resume_phase, resume_path = None, None
    if args.resume:
        header, _ = read_checkpoint(args.resume)
        meta = header["meta"]
        if ModelConfig(**meta.get("model", {})) != cfg.model:
            raise CheckpointError("checkpoint model configuration differs from the run config")
        completed = {k: list(v) for k, v in meta.get("completed", {}).items()}
        resume_phase, resume_path = int(meta["phase"]), args.resume
        model = EdgeStereo(cfg.model, seed=cfg.seed)
        load_checkpoint(args.resume, model)
    else:
        model = EdgeStereo(cfg.model, seed=cfg.seed)

    untrained = None
    if holdout and not args.resume:
        untrained = evaluate(predict(model, *_stack(holdout)[:2]), *_stack(holdout)[2:])

    for spec in cfg.training.phases:
        if resume_phase is not None and spec.id < resume_phase:
            continue
        resume = resume_path if spec.id == resume_phase else None
        result = run_phase(spec, model, train, cfg.seed, out, cfg.checkpoint_every,
                           resume=resume, extra_meta={"completed": completed})
        completed[str(spec.id)] = result.trace
        log.info("phase %d done: last loss %.4f", spec.id,
                 result.trace[-1] if result.trace else float("nan"))

    with open(out / "loss_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "iteration", "loss"])
        for phase, trace in sorted(completed.items(), key=lambda kv: int(kv[0])):
            for it, value in enumerate(trace):
                writer.writerow([phase, it, repr(float(value))])

    save_checkpoint(out / "model.ckpt", model, None,
                    {"model": cfg.model.to_dict(), "seed": cfg.seed, "completed": completed})
    if holdout:
        report = evaluate(predict(model, *_stack(holdout)[:2]), *_stack(holdout)[2:])
        lines = []
        if untrained is not None:
            lines.append(f"untrained_epe: {untrained.epe:.3f}")
        text = "\n".join(lines) + ("\n" if lines else "") + report.to_text()
        (out / "eval.txt").write_text(text)
        print(text, end="")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def _stack(samples):
    return (np.stack([s.left for s in samples]), np.stack([s.right for s in samples]),
            np.stack([s.gt_disparity for s in samples]), np.stack([s.valid_mask for s in samples]))


def cmd_infer(args) -> int:
    model, _ = load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset:
        root, entries = load_manifest(args.dataset)
        for e in entries:
            disp, _ = infer_pair(model, codecs.read_rgb(root / e["left"]),
                                 codecs.read_rgb(root / e["right"]))
            codecs.pfm_write(out / f"{e['id']}.pfm", disp)
        print(f"wrote {len(entries)} disparity maps to {out}")
        return 0
    if not (args.left and args.right):
        raise CliError("infer needs --left and --right, or --dataset")
    left, right = codecs.read_rgb(args.left), codecs.read_rgb(args.right)
    if left.shape != right.shape:
        raise CliError(f"left {left.shape} and right {right.shape} images differ in size")
    disp, edges = infer_pair(model, left, right)
    stem = Path(args.left).stem.removesuffix("_left")
    codecs.pfm_write(out / f"{stem}_disp.pfm", disp)
    codecs.write_gray(out / f"{stem}_edges.png", edges)
    if args.gt:
        gt = codecs.pfm_read(args.gt)
        if gt.shape != disp.shape:
            raise CliError(f"ground truth {gt.shape} does not match prediction {disp.shape}")
        valid = np.isfinite(gt) & (gt > 0) if args.gt_valid is None else \
            codecs.read_gray(args.gt_valid) > 0.5
        err = np.where(valid, np.abs(disp - gt), np.nan)
        codecs.write_rgb(out / f"{stem}_error.png", error_colormap(err))
        print(evaluate(disp, gt, valid).to_text(), end="")
    print(f"disparity: {out / f'{stem}_disp.pfm'}")
    return 0


def cmd_eval(args) -> int:
    root, entries = load_manifest(args.gt)
    pred_dir = Path(args.pred)
    preds, gts, valids = [], [], []
    for e in entries:
        path = pred_dir / f"{e['id']}.pfm"
        if not path.exists():
            raise CliError(f"missing prediction {path}")
        preds.append(codecs.pfm_read(path))
        gts.append(codecs.pfm_read(root / e["disparity"]))
        valids.append(codecs.read_gray(root / e["valid"]) > 0.5)
    report = evaluate(np.stack(preds), np.stack(gts), np.stack(valids))
    print(report.to_text(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    names = args.names.split(",") if args.names else None
    results = run_suite(args.instances, args.seed or 0, names)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="edgestereo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic stereo dataset")
    g.add_argument("--n", dest="n_samples", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--d-max", type=int)
    g.add_argument("--max-layers", type=int)
    g.add_argument("--texture", choices=("value-noise", "random-dot"))
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="run the three training phases")
    t.add_argument("--data", help="dataset directory or manifest (default: generate)")
    t.add_argument("--iterations", help="comma-separated iterations per phase")
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", help="checkpoint written by a previous train run")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="predict disparity and edges")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--left")
    i.add_argument("--right")
    i.add_argument("--gt", help="ground-truth PFM; enables the error map")
    i.add_argument("--gt-valid", help="validity PNG for --gt")
    i.add_argument("--dataset", help="predict every pair of a dataset as <id>.pfm")
    i.set_defaults(func=cmd_infer, out=None)

    e = sub.add_parser("eval", parents=[common], help="score predictions against a dataset")
    e.add_argument("--pred", required=True, help="directory of <id>.pfm predictions")
    e.add_argument("--gt", required=True, help="dataset directory or manifest")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    c.add_argument("--instances", type=int, default=5)
    c.add_argument("--names", help="comma-separated subset of operators")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "infer" and not args.out:
        args.out = "."
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    limits = threadpool_limits(int(threads)) if threads else None
    try:
        return args.func(args)
    except (CliError, CheckpointError, codecs.FormatError, OSError, ValueError) as exc:
        print(f"edgestereo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limits is not None:
            limits.unregister()


if __name__ == "__main__":
    sys.exit(main())
