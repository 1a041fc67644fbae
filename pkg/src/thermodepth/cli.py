"""Command-line entry point: gen / train / eval / enhance / gradcheck / plot.

Every command resolves one RunConfig (file, then flag overrides), echoes
it with its hash into the output directory, and is reproducible from
that echo plus the seed. Output directories default to
$THERMODEPTH_RUN_ROOT (or ./runs) under a timestamp+hash name so reruns
never overwrite each other.

Exit codes: 0 success, 2 config problems, 3 data problems, 4 numerical
failures (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import runconfig
from .checkpoint import CheckpointError, config_hash, load_checkpoint
from .depthnet import BackboneConfig
from .enhance import (clahe, colorize, gaussian_smooth, load_colormap,
                      refine, refined_to_8bit, to_8bit_linear)
from .frames import (DepthMap, MetricsReport, SequenceSample, ThermalFrame,
                     raw_to_normalized)
from .metrics import depth_flicker, depth_metrics, flicker, repeatability
from .model import build_model, parameter_census
from .runconfig import ConfigError, RunConfig
from .sensorsim import (DatasetError, SceneSpec, Sprite, apply_sensor,
                        read_dataset, render_sequence, write_dataset)
from .trainer import (DivergenceError, TrainConfig, forward_sequence,
                      gradcheck, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RUN_ROOT_ENV = "THERMODEPTH_RUN_ROOT"

ENHANCE_METHODS = ("raw8", "gauss", "clahe", "trefnet")


# ------------------------------------------------------------ plumbing

def _resolve_config(args) -> RunConfig:
    cfg = runconfig.load(args.config) if args.config else RunConfig()
    tr = {}
    if getattr(args, "seed", None) is not None:
        tr["seed"] = args.seed
    if getattr(args, "rb", None) is not None:
        tr["rb"] = args.rb
    if getattr(args, "no_trefnet", False):
        tr["trefnet"] = False
    if getattr(args, "epochs", None) is not None:
        tr["epochs"] = args.epochs
    try:
        if tr:
            cfg.train = dataclasses.replace(cfg.train, **tr)
        if getattr(args, "radiometric", False):
            cfg.sensor = dataclasses.replace(cfg.sensor, radiometric=True)
        if getattr(args, "workers", None) is not None:
            cfg.workers = args.workers
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if cfg.workers != 1:
        print("note: execution is sequential; --workers only recorded")
    return cfg


def _run_dir(cfg: RunConfig, tag: str, explicit=None) -> Path:
    if explicit:
        out = Path(explicit)
    else:
        root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = root / f"{stamp}-{runconfig.run_hash(cfg)[:8]}-{tag}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out_dir: Path):
    (out_dir / "config.json").write_text(runconfig.emit(cfg))
    (out_dir / "config.sha256").write_text(runconfig.run_hash(cfg) + "\n")


def _tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _save_png(path: Path, arr: np.ndarray):
    from PIL import Image
    Image.fromarray(arr).save(path)


# ------------------------------------------------------------ cmd_gen

def _scene_suite(cfg: RunConfig):
    """16 default scenes: static / translating / sprite-entering /
    NUC-freeze families, cycled. Returns (spec, sensor, sequence_id)."""
    gen = cfg.gen
    base = cfg.train.seed
    out = []
    for i in range(gen.n_sequences):
        family = ("static", "translate", "enter", "nucfreeze")[i % 4]
        k = i // 4
        near, far = 0.8 + 0.2 * k, 2.0 + 0.5 * k
        sprites = [
            Sprite(shape="disk", size=18.0 + 2 * k, depth=near,
                   temperature=38000.0 + 1500.0 * k,
                   position=(20.0 + 3 * k, 22.0)),
            Sprite(shape="rect", size=14.0, depth=far,
                   temperature=30000.0,
                   position=(40.0, 52.0 - 2 * k)),
        ]
        camera = (0.0, 0.0)
        if family == "translate":
            camera = (0.0, 2.0)
        if family == "enter":
            sprites[0] = dataclasses.replace(
                sprites[0], position=(24.0, -14.0), velocity=(0.0, 6.0),
                temperature=47000.0)
        spec = SceneSpec(background_depth=4.0, sprites=tuple(sprites),
                         camera_translation=camera, seed=base * 1000 + i,
                         n_frames=gen.n_frames,
                         width=cfg.backbone.width,
                         height=cfg.backbone.height)
        sensor = cfg.sensor
        if family == "nucfreeze" and sensor.nuc_interval == 0:
            sensor = dataclasses.replace(sensor, nuc_interval=3)
        out.append((spec, sensor, f"{family}-{i:02d}"))
    return out


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise DatasetError(f"{out_dir} exists and is not empty "
                           f"(use --force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)

    samples = []
    for spec, sensor, seq_id in _scene_suite(cfg):
        clean = render_sequence(spec)
        clean = dataclasses.replace(clean, sequence_id=seq_id)
        samples.append(apply_sensor(clean, sensor))
    write_dataset(samples, out_dir)
    _echo_config(cfg, out_dir)

    manifest = {
        "n_sequences": len(samples),
        "n_frames": cfg.gen.n_frames,
        "radiometric": cfg.sensor.radiometric,
        "sequences": [s.sequence_id for s in samples],
        "tree_sha256": _tree_hash(out_dir),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {manifest['n_sequences']} sequences x "
          f"{manifest['n_frames']} frames to {out_dir} "
          f"(radiometric={manifest['radiometric']})")
    print(f"tree sha256: {manifest['tree_sha256']}")
    return EXIT_OK


# ------------------------------------------------------------ cmd_train

def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    samples = read_dataset(args.data)
    h, w = samples[0].frames[0].pixels.shape
    if (cfg.backbone.height, cfg.backbone.width) != (h, w):
        raise ConfigError(
            f"backbone is {cfg.backbone.height}x{cfg.backbone.width} but "
            f"the data is {h}x{w}; set backbone.height/width")
    out_dir = _run_dir(cfg, "train", args.out)
    _echo_config(cfg, out_dir)

    model = build_model(seed=cfg.train.seed, config=cfg.backbone,
                        rb=cfg.train.rb, trefnet=cfg.train.trefnet)
    model, log = train(samples, cfg.train, model=model, out_dir=out_dir)
    last = log[-1]["total"] if log else float("nan")
    print(f"trained {len(log)} steps; final loss {last:.6f}")
    print(f"checkpoint: {out_dir / 'final.ckpt'}")
    print(f"config hash: {runconfig.run_hash(cfg)}")
    return EXIT_OK


# ------------------------------------------------------------ cmd_eval

def _eval_one(params, sample, cfg: RunConfig, oracle: bool):
    n = len(sample.frames)
    tc = TrainConfig(unroll=n, rb=params.rb_kind,
                     trefnet=params.refine is not None,
                     weights=cfg.train.weights, seed=cfg.train.seed)
    if oracle:
        preds = [d.depth for d in sample.depths]
    else:
        out = forward_sequence(sample, params, tc)
        preds = [p.data.astype(np.float64) for p in out[0]]
    return preds


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    params, stored = load_checkpoint(args.checkpoint)
    if args.config:
        want = cfg.backbone
        got = params.build_spec["backbone"]
        if (want.height, want.width, tuple(want.channels)) != \
                (got["height"], got["width"], tuple(got["channels"])):
            raise CheckpointError(
                f"checkpoint backbone {got} does not match config")
    samples = read_dataset(args.data)
    out_dir = _run_dir(cfg, "eval", args.out)
    _echo_config(cfg, out_dir)

    all_pred, all_gt, all_valid = [], [], []
    flickers = []
    repeats = []
    for sample in samples:
        preds = _eval_one(params, sample, cfg, args.oracle)
        for p, d in zip(preds, sample.depths):
            all_pred.append(p)
            all_gt.append(d.depth)
            all_valid.append(d.valid)
        if len(preds) >= 2:
            flickers.append(depth_flicker(preds))
        if sample.motion_gt is not None and len(sample.frames) >= 2:
            ref = [to_8bit_linear(f) for f in sample.frames] \
                if params.refine is None else \
                [refined_to_8bit(refine(raw_to_normalized(f), params.refine))
                 for f in sample.frames]
            repeats.append(repeatability(ref, sample.motion_gt, cfg.eval))

    stack = lambda xs: np.concatenate([x.reshape(1, -1) for x in xs], axis=0)
    gt = DepthMap(stack(all_gt), stack(all_valid),
                  cfg.eval.min_depth, cfg.eval.max_depth)
    absrel, rmse, a1, a2, a3 = depth_metrics(stack(all_pred), gt, cfg.eval)
    n_eval = int(np.count_nonzero(
        stack(all_valid) & (stack(all_gt) >= cfg.eval.min_depth)
        & (stack(all_gt) <= cfg.eval.max_depth)))

    chash = config_hash({"model": params.build_spec, "config": stored})
    report = MetricsReport(
        absrel=absrel, rmse=rmse, a1=a1, a2=a2, a3=a3,
        flicker=float(np.mean(flickers)) if flickers else 0.0,
        repeatability=float(np.mean(repeats)) if repeats else 0.0,
        n_pixels_evaluated=n_eval, config_hash=chash)

    (out_dir / "report.json").write_text(
        json.dumps(report.as_dict(), indent=2))
    name = args.name or f"{params.rb_kind}" + \
        ("" if params.refine is not None else "-noTRN")
    psi = parameter_census(params)["counts"]["psi"]
    with open(out_dir / "row.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["name", "absrel", "rmse", "a1", "a2", "a3",
                     "flicker", "repeatability", "psi_params"])
        wr.writerow([name, f"{absrel:.6f}", f"{rmse:.6f}", f"{a1:.6f}",
                     f"{a2:.6f}", f"{a3:.6f}", f"{report.flicker:.6f}",
                     f"{report.repeatability:.6f}", psi])
    print(json.dumps(report.as_dict(), indent=2))
    print(f"row: {out_dir / 'row.csv'}")
    return EXIT_OK


# ------------------------------------------------------------ cmd_enhance

def _enhance_frame(frame: ThermalFrame, method: str, params):
    if method == "raw8":
        return to_8bit_linear(frame)
    if method == "gauss":
        return gaussian_smooth(to_8bit_linear(frame), sigma=1.5)
    if method == "clahe":
        return clahe(to_8bit_linear(frame))
    return refined_to_8bit(refine(raw_to_normalized(frame), params.refine))


def cmd_enhance(args) -> int:
    cfg = _resolve_config(args)
    methods = ENHANCE_METHODS if args.method == "all" else (args.method,)
    params = None
    if "trefnet" in methods:
        if not args.checkpoint:
            raise ConfigError("method trefnet requires --checkpoint")
        params, _ = load_checkpoint(args.checkpoint)
        if params.refine is None:
            raise ConfigError("checkpoint was trained without the "
                              "refinement net")
    samples = read_dataset(args.data)
    out_dir = _run_dir(cfg, "enhance", args.out)
    _echo_config(cfg, out_dir)
    cmap = load_colormap()

    scores = {}
    for method in methods:
        per_seq = {}
        for sample in samples:
            sdir = out_dir / method / sample.sequence_id
            sdir.mkdir(parents=True, exist_ok=True)
            frames8 = [_enhance_frame(f, method, params)
                       for f in sample.frames]
            for f, img in zip(sample.frames, frames8):
                _save_png(sdir / f"{f.frame_index:06d}.png", img)
                _save_png(sdir / f"{f.frame_index:06d}_color.png",
                          cmap[img])
            if len(frames8) >= 2:
                per_seq[sample.sequence_id] = flicker(frames8)
        vals = list(per_seq.values())
        scores[method] = {"per_sequence": per_seq,
                          "mean": float(np.mean(vals)) if vals else 0.0}
    (out_dir / "flicker.json").write_text(json.dumps(scores, indent=2))
    for method in methods:
        print(f"{method}: mean flicker {scores[method]['mean']:.6f}")
    return EXIT_OK


# ------------------------------------------------------------ cmd_gradcheck

def verification_sample(seed=0, t=2, h=32, w=40) -> SequenceSample:
    """Deterministic smooth random sequence for gradient checking."""
    rng = np.random.default_rng([seed, 99])
    frames, depths = [], []
    for k in range(t):
        raw = gaussian_filter(rng.random((h, w)), 2.0, mode="wrap")
        raw = (raw - raw.min()) / max(float(np.ptp(raw)), 1e-9)
        frames.append(ThermalFrame((raw * 60000).astype(np.uint16),
                                   timestamp=0.1 * k, frame_index=k))
        d = 0.5 + 4.0 * gaussian_filter(rng.random((h, w)), 3.0,
                                        mode="wrap")
        valid = rng.random((h, w)) > 0.05
        depths.append(DepthMap(d, valid))
    return SequenceSample(frames=frames, depths=depths,
                          sequence_id="gradcheck")


def cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    # fixed small verification geometry; the full-size model would only
    # slow the finite differences down without checking anything new
    vcfg = BackboneConfig(channels=(8, 16, 32), height=32, width=40,
                          latent_k=32)
    rb = cfg.train.rb
    model = build_model(seed=cfg.train.seed, config=vcfg, rb=rb,
                        trefnet=cfg.train.trefnet, reservoir_n=16,
                        reservoir_out=24, dtype=np.float64)
    tc = TrainConfig(unroll=2, rb=rb, trefnet=cfg.train.trefnet,
                     weights=cfg.train.weights, seed=cfg.train.seed)
    report = gradcheck(verification_sample(cfg.train.seed), model, tc,
                       n_params=args.n_params)
    print(json.dumps(report, indent=2))
    if report["max_rel_error"] >= args.tolerance:
        print(f"FAIL: max relative error {report['max_rel_error']:.3e} "
              f">= tolerance {args.tolerance:.1e}")
        return EXIT_NUMERIC
    print(f"OK: max relative error {report['max_rel_error']:.3e} "
          f"< {args.tolerance:.1e} over {report['checked']} parameters")
    return EXIT_OK


# ------------------------------------------------------------ cmd_plot

def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    logs, reports = [], []
    for path in args.inputs:
        p = Path(path)
        if not p.exists():
            raise DatasetError(f"no such input {p}")
        text = p.read_text().strip()
        if not text:
            raise DatasetError(f"{p} is empty")
        if p.suffix == ".jsonl":
            recs = [json.loads(line) for line in text.splitlines()]
            steps = [(r["step"], r["total"]) for r in recs if "total" in r]
            if not steps:
                raise DatasetError(f"{p} has no loss records")
            logs.append((p.stem, steps))
        else:
            reports.append((p.parent.name, json.loads(text)))

    written = []
    for stem, steps in logs:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs, ys = zip(*steps)
        ax.plot(xs, ys)
        ax.set_xlabel("step")
        ax.set_ylabel("total loss")
        ax.set_title(stem)
        path = out_dir / f"loss_curve_{stem}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if reports:
        keys = ["absrel", "rmse", "a1", "a2", "a3"]
        fig, ax = plt.subplots(figsize=(7, 4))
        width = 0.8 / len(reports)
        xs = np.arange(len(keys))
        for i, (name, rep) in enumerate(reports):
            ax.bar(xs + i * width, [rep[k] for k in keys], width,
                   label=name)
        ax.set_xticks(xs + width * (len(reports) - 1) / 2)
        ax.set_xticklabels(keys)
        ax.legend()
        path = out_dir / "metrics_bars.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="thermodepth",
        description="thermal-to-depth pipeline: data, training, "
                    "evaluation, enhancement")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seedy=True):
        p.add_argument("--config", help="JSON run config")
        if seedy:
            p.add_argument("--seed", type=int)
            p.add_argument("--rb",
                           choices=("convgru", "reservoir", "none"))
            p.add_argument("--no-trefnet", action="store_true")
            p.add_argument("--workers", type=int)

    g = sub.add_parser("gen", help="render synthetic sequences")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.add_argument("--radiometric", action="store_true")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="fit the model on a dataset")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="metrics for a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--name", help="row label in the CSV output")
    e.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself "
                        "(plumbing check)")
    e.set_defaults(fn=cmd_eval)

    n = sub.add_parser("enhance", help="8-bit enhancement comparison")
    common(n)
    n.add_argument("--data", required=True)
    n.add_argument("--method", default="all",
                   choices=ENHANCE_METHODS + ("all",))
    n.add_argument("--checkpoint")
    n.add_argument("--out")
    n.set_defaults(fn=cmd_enhance)

    c = sub.add_parser("gradcheck", help="finite-difference verification")
    common(c)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--n-params", type=int, default=60)
    c.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("plot", help="loss curves and metric bar charts")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("inputs", nargs="+",
                   help="train_log.jsonl and/or report.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DivergenceError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, CheckpointError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
