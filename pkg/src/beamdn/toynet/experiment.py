"""Seed-pinned baseline-versus-ray-denoising comparison on the synthetic benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass

from ..evaluation import Detection, EvalConfig, evaluate
from ..raydn import RaySpec
from ..scenes import make_benchmark, make_rig
from .model import DecoderConfig, ToyDetector
from .train import TrainConfig, fit, predict, prepare_scene, visible_boxes

TRAIN_SEED = 1
EVAL_SEED = 2
N_TRAIN = 256
N_EVAL = 64


@dataclass
class Benchmark:
    train: list  # PreparedScene
    eval_scenes: list  # Scene
    eval_prepared: list  # PreparedScene
    cfg: DecoderConfig


@dataclass
class RunResult:
    seed: int
    label: str
    mean_ap: float
    ray_duplicate_rate: float
    n_fp: int
    n_duplicates: int
    seconds: float


def build_benchmark(n_train: int = N_TRAIN, n_eval: int = N_EVAL, cfg: DecoderConfig | None = None) -> Benchmark:
    cfg = cfg or DecoderConfig()
    rig = make_rig(6)
    train = make_benchmark(TRAIN_SEED, n_train, rig, prefix="train")
    test = make_benchmark(EVAL_SEED, n_eval, rig, prefix="eval")
    return Benchmark(
        [prepare_scene(s, cfg) for s in train],
        test,
        [prepare_scene(s, cfg) for s in test],
        cfg,
    )


def run(
    bench: Benchmark,
    seed: int,
    spec: RaySpec | None,
    tcfg: TrainConfig = TrainConfig(),
    ecfg: EvalConfig = EvalConfig(),
    score_floor: float = 0.05,
    label: str | None = None,
) -> RunResult:
    """Train one model from ``seed`` (ray denoising on iff ``spec``) and evaluate it."""
    t0 = time.perf_counter()
    model = ToyDetector(bench.cfg, seed=seed)
    fit(model, bench.train, spec, seed, tcfg)
    dets = [Detection(**d) for p in bench.eval_prepared for d in predict(model, p, score_floor)]
    rep = evaluate(dets, bench.eval_scenes, ecfg, classes=range(bench.cfg.n_classes), gt_filter=visible_boxes)
    if label is None:
        label = "base" if spec is None else f"beam({spec.params.lam:g},{spec.params.mu:g})"
    return RunResult(
        seed,
        label,
        rep.mean_ap,
        rep.ray_duplicate_rate,
        rep.n_fp_dup_threshold,
        rep.n_ray_duplicates,
        time.perf_counter() - t0,
    )
