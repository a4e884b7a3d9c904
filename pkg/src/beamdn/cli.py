"""Command-line entry point: beamdn <subcommand> [flags].

Exit codes: 0 success, 2 input/path errors, 3 numeric failure, 4 version or
compatibility failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import svg
from .beta import BetaParams, DomainError, SeededRng, pdf_table, sample_offsets
from .config import ConfigError, RunConfig, load_config
from .evaluation import Detection, emit_report, evaluate, save_detections
from .raydn import build_all
from .scenes import SceneFormatError, load_scene_dir, make_benchmark, make_rig, save_scene

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_COMPAT = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    try:
        return load_config(args.config).with_seed(args.seed)
    except OSError as exc:
        raise CliError(f"cannot read config {args.config}: {exc.strerror}") from exc
    except ConfigError as exc:
        raise CliError(f"bad config: {exc}") from exc


def _prepare_out_dir(path: str, force: bool, produced: list[str]):
    """Create ``path``; refuse to overwrite any of ``produced`` unless ``force``."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise CliError(f"output directory {path} is not writable")
    if not force:
        clash = [p for p in produced if os.path.exists(os.path.join(path, p))]
        if clash:
            raise CliError(f"{os.path.join(path, clash[0])} exists; pass --force to overwrite")


def _write_text(path: str, text: str):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from exc


def _scenes(path: str):
    if not os.path.isdir(path):
        raise CliError(f"scene directory {path} does not exist")
    try:
        scenes = load_scene_dir(path)
    except (OSError, ValueError, KeyError, SceneFormatError) as exc:
        raise CliError(f"cannot load scenes from {path}: {exc}") from exc
    if not scenes:
        raise CliError(f"scene directory {path} holds no scene files")
    return scenes


def _rows_to_csv(header, rows) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_gen_scenes(args) -> int:
    cfg = _config(args)
    if args.count < 0:
        raise CliError("--count must be >= 0")
    sc = cfg.scenes
    rig = make_rig(sc.n_cameras)
    scenes = make_benchmark(
        cfg.seed,
        args.count,
        rig,
        prange=cfg.decoder.perception_range,
        class_count=cfg.decoder.n_classes,
        max_boxes=sc.max_boxes,
        colinear_fraction=sc.colinear_fraction,
        placement=sc.placement_range,
    )
    names = [f"{s.scene_id}.json" for s in scenes]
    _prepare_out_dir(args.out, args.force, names)
    for scene, name in zip(scenes, names):
        try:
            save_scene(scene, os.path.join(args.out, name))
        except OSError as exc:
            raise CliError(f"cannot write {os.path.join(args.out, name)}: {exc.strerror}") from exc
    print(f"wrote {len(scenes)} scene(s) to {args.out}")
    return EXIT_OK


def cmd_build_queries(args) -> int:
    cfg = _config(args)
    scenes = _scenes(args.scenes)
    spec = cfg.ray.spec()
    root = SeededRng(cfg.seed, stream=0x0D)
    lines = [f"# ray groups: lambda={spec.params.lam:g} mu={spec.params.mu:g} k={spec.radius_k:g} N={spec.n_per_ray}"]
    for scene, rng in zip(scenes, root.spawn_many(len(scenes))):
        res = build_all(scene.rig, scene.boxes, spec, rng)
        lines.append(f"scene {scene.scene_id} groups={len(res.groups)} skipped={res.skipped}")
        for g in res.groups:
            lines.append(
                f"  group gt={g.gt_index} cam={g.camera_index} class={g.target.class_id} "
                f"center_depth={g.center_depth:.6f} extent={g.extent:.6f}"
            )
            for d, p, lab in zip(g.depths, g.ref_points, g.labels):
                tag = "+" if lab == 1 else "-"
                lines.append(f"    {tag} depth={d:.6f} point=({p[0]:.6f}, {p[1]:.6f}, {p[2]:.6f})")
    _prepare_out_dir(os.path.dirname(os.path.abspath(args.out)), True, [])
    if os.path.exists(args.out) and not args.force:
        raise CliError(f"{args.out} exists; pass --force to overwrite")
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    from .toynet.model import ToyDetector, save_model
    from .toynet.train import NonFiniteLossError, fit, prepare_scene

    cfg = _config(args)
    scenes = _scenes(args.scenes)
    _prepare_out_dir(args.out, args.force, ["model.bin", "loss.csv", "config.json"])
    dcfg = cfg.decoder.build()
    prepared = [prepare_scene(s, dcfg, cfg.scenes.grid_w, cfg.scenes.grid_h) for s in scenes]
    model = ToyDetector(dcfg, seed=cfg.seed)
    spec = cfg.ray.spec() if args.with_beam else None
    rows = []

    def log(step, stats):
        rows.append((step, f"{stats.total:.8f}", f"{stats.matching:.8f}", f"{stats.denoise:.8f}"))

    try:
        fit(model, prepared, spec, cfg.seed, cfg.train.build(), on_step=log)
    except NonFiniteLossError as exc:
        dump = os.path.join(args.out, "nonfinite.json")
        _write_text(dump, json.dumps({"message": str(exc), **exc.diagnostics}, indent=1, sort_keys=True) + "\n")
        raise CliError(f"{exc}; diagnostics in {dump}", EXIT_NUMERIC) from exc
    _write_text(os.path.join(args.out, "loss.csv"), _rows_to_csv(("step", "total", "matching", "denoise"), rows))
    _write_text(os.path.join(args.out, "config.json"), cfg.to_json())
    try:
        save_model(model, os.path.join(args.out, "model.bin"))
    except OSError as exc:
        raise CliError(f"cannot write model to {args.out}: {exc.strerror}") from exc
    print(f"trained {len(rows)} steps ({'with' if args.with_beam else 'without'} ray denoising) -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .toynet.model import ModelFormatError, load_model
    from .toynet.train import predict, prepare_scene, visible_boxes

    cfg = _config(args)
    scenes = _scenes(args.scenes)
    dcfg = cfg.decoder.build()
    try:
        model = load_model(args.model, dcfg)
    except FileNotFoundError as exc:
        raise CliError(f"model file {args.model} does not exist") from exc
    except OSError as exc:
        raise CliError(f"cannot read model {args.model}: {exc.strerror}") from exc
    except ModelFormatError as exc:
        raise CliError(str(exc), EXIT_COMPAT) from exc
    floor = cfg.eval.score_floor if args.score_floor is None else args.score_floor
    produced = ["metrics.csv", "summary.csv", "pr_curves.csv", "pr_curves.svg", "class_ap.svg", "detections.json"]
    _prepare_out_dir(args.out, args.force, produced)
    dets = []
    for scene in scenes:
        prepared = prepare_scene(scene, dcfg, cfg.scenes.grid_w, cfg.scenes.grid_h)
        dets.extend(Detection(**d) for d in predict(model, prepared, floor))
    report = evaluate(dets, scenes, cfg.eval.build(), classes=range(dcfg.n_classes), gt_filter=visible_boxes)
    emit_report(report, args.out)
    save_detections(dets, os.path.join(args.out, "detections.json"))
    mean = report.mean_ap
    print(f"mAP={'nan' if mean is None else f'{mean:.4f}'} ray_duplicate_rate={report.ray_duplicate_rate:.4f} -> {args.out}")
    return EXIT_OK


def cmd_beta_sample(args) -> int:
    cfg = _config(args)
    lam = cfg.ray.lam if args.lam is None else args.lam
    mu = cfg.ray.mu if args.mu is None else args.mu
    try:
        params = BetaParams(lam, mu)
    except DomainError as exc:
        raise CliError(str(exc)) from exc
    if args.n < 1:
        raise CliError("--n must be >= 1")
    _prepare_out_dir(args.out, args.force, ["samples.csv", "pdf.csv", "pdf.svg"])
    draws = sample_offsets(SeededRng(cfg.seed, stream=0xBE7A), params, args.n)
    _write_text(os.path.join(args.out, "samples.csv"), _rows_to_csv(("offset",), [(f"{x:.10f}",) for x in draws]))
    xs, ys = pdf_table(params)
    _write_text(os.path.join(args.out, "pdf.csv"), _rows_to_csv(("offset", "density"), [(f"{x:.6f}", f"{y:.10f}") for x, y in zip(xs, ys)]))
    series = [(f"pdf lambda={lam:g} mu={mu:g}", xs, ys)]
    ymax = float(np.max(ys)) if len(ys) else 1.0
    # density histogram of the draws on the shifted support [-1, 1]
    counts, edges = np.histogram(draws, bins=40, range=(-1.0, 1.0))
    dens = counts / (args.n * (edges[1] - edges[0]))
    hx = np.repeat(edges, 2)[1:-1]
    hy = np.repeat(dens, 2)
    series.append((f"histogram n={args.n}", hx, hy))
    ymax = max(ymax, float(dens.max()))
    ymax = ymax * 1.05 if ymax > 0 else 1.0
    _write_text(
        os.path.join(args.out, "pdf.svg"),
        svg.line_plot(series, "ray-depth offset density", "offset", "density", (-1.0, 1.0), (0.0, ymax)),
    )
    return EXIT_OK


def _read_loss(path: str):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return [int(r["step"]) for r in rows], {k: [float(r[k]) for r in rows] for k in ("total", "matching", "denoise")}
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path} is not a loss log") from exc


def cmd_plot(args) -> int:
    if not args.inputs:
        raise CliError("plot needs at least one loss log")
    series = []
    top = 0.0
    n_steps = 1
    for path in args.inputs:
        steps, cols = _read_loss(path)
        ys = cols[args.column]
        w = max(1, args.smooth)
        sm = np.convolve(ys, np.ones(w) / w, mode="valid") if len(ys) >= w else np.asarray(ys)
        xs = steps[w - 1 :] if len(ys) >= w else steps
        series.append((os.path.basename(os.path.dirname(os.path.abspath(path))) or path, xs, sm))
        if len(sm):
            top = max(top, float(np.max(sm)))
        n_steps = max(n_steps, len(steps))
    if os.path.exists(args.out) and not args.force:
        raise CliError(f"{args.out} exists; pass --force to overwrite")
    parent = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(parent):
        raise CliError(f"output directory {parent} does not exist")
    _write_text(
        args.out,
        svg.line_plot(series, f"{args.column} loss", "step", "loss", (0.0, float(n_steps)), (0.0, top * 1.05 or 1.0)),
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamdn", description="Ray denoising toolkit for a toy multi-view 3D detector.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", default=None, help="run config JSON (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("gen-scenes", help="generate a seeded synthetic scene set")
    common(sp, "directory to write scene JSON files into")
    sp.add_argument("--count", type=int, required=True, help="number of scenes")
    sp.set_defaults(func=cmd_gen_scenes)

    sp = sub.add_parser("build-queries", help="dump the ray-query groups of a scene set as text")
    common(sp, "text file to write")
    sp.add_argument("--scenes", required=True, help="directory of scene JSON files")
    sp.set_defaults(func=cmd_build_queries)

    sp = sub.add_parser("train", help="train the toy detector")
    common(sp, "directory for model.bin, loss.csv and config.json")
    sp.add_argument("--scenes", required=True, help="directory of training scene JSON files")
    sp.add_argument("--with-beam", action="store_true", help="add ray denoising queries during training")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained model on a scene set")
    common(sp, "directory for the metrics CSVs, SVG plots and detections")
    sp.add_argument("--scenes", required=True, help="directory of evaluation scene JSON files")
    sp.add_argument("--model", required=True, help="model.bin written by train")
    sp.add_argument("--score-floor", type=float, default=None, help="drop detections scoring below this (default from config)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("beta-sample", help="sample shifted Beta depth offsets and tabulate the density")
    common(sp, "directory for samples.csv, pdf.csv and pdf.svg")
    sp.add_argument("--lam", type=float, default=None, help="Beta shape lambda (default from config)")
    sp.add_argument("--mu", type=float, default=None, help="Beta shape mu (default from config)")
    sp.add_argument("--n", type=int, default=1000, help="number of samples (default 1000)")
    sp.set_defaults(func=cmd_beta_sample)

    sp = sub.add_parser("plot", help="plot loss curves from one or more loss.csv logs")
    common(sp, "SVG file to write")
    sp.add_argument("inputs", nargs="*", help="loss.csv files written by train")
    sp.add_argument("--column", choices=("total", "matching", "denoise"), default="total", help="loss column to plot")
    sp.add_argument("--smooth", type=int, default=1, help="moving-average window in steps (default 1)")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
