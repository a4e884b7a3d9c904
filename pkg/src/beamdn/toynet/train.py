"""Training step, optimiser, finite-difference gradient check and inference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..beta import SeededRng
from ..geometry import visible
from ..raydn import RayQueryGroup, RaySpec, build_all
from . import tape as T
from .losses import BOX_CODE, LossWeights, denoising_loss, matching_cost, set_loss
from .matching import MatchResult, hungarian_match
from .model import ToyDetector, box_target, decode_boxes


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class PreparedScene:
    """A scene rendered to tokens, with the visible ground truth in head-target form."""

    scene_id: str
    rig: list
    boxes: list  # GroundTruthBox, visible in at least one camera
    tokens: object  # TokenGrid
    gt_labels: np.ndarray
    gt_targets: np.ndarray


def visible_boxes(scene) -> list:
    return [b for b in scene.boxes if any(visible(c, b.center) for c in scene.rig)]


def prepare_scene(scene, cfg, grid_w=16, grid_h=12) -> PreparedScene:
    from ..scenes import render_arrays

    boxes = visible_boxes(scene)
    tokens = render_arrays(scene, grid_w, grid_h, cfg.n_classes)
    labels = np.array([b.class_id for b in boxes], dtype=np.int64)
    targets = np.array([box_target(b, cfg.perception_range) for b in boxes]).reshape(-1, 8)
    return PreparedScene(scene.scene_id, scene.rig, boxes, tokens, labels, targets)


class AdamW:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4, grad_clip=None):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        if self.grad_clip:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:  # fixed key order keeps updates reproducible
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] *= 1.0 - self.lr * self.weight_decay
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class SceneLoss:
    total: T.Var
    matching: float
    denoise: float
    match: MatchResult | None
    groups: list[RayQueryGroup] = field(default_factory=list)


def scene_loss(
    model: ToyDetector,
    scene: PreparedScene,
    spec: RaySpec | None,
    rng: SeededRng | None,
    weights: LossWeights,
    groups: Sequence[RayQueryGroup] | None = None,
    match: MatchResult | None = None,
    bound=None,
    token_pos=None,
) -> tuple[SceneLoss, object]:
    """Forward one scene and assemble matching + denoising losses.

    Ray queries never enter the Hungarian matching; only object-query rows
    are costed. Passing ``groups``/``match`` freezes those discrete choices
    (used by the gradient check).
    """
    cfg = model.cfg
    if groups is None:
        groups = build_all(scene.rig, scene.boxes, spec, rng).groups if spec is not None and scene.boxes else []
    groups = list(groups)
    ray_points = np.concatenate([g.ref_points for g in groups]) if groups else None
    fr = model.forward(scene.tokens, ray_points, [len(g) for g in groups], bound=bound, token_pos=token_pos)
    obj = fr.obj
    n_gt = len(scene.gt_labels)
    if match is None and n_gt:
        cost = matching_cost(
            obj.class_logits.value, obj.box.value, scene.gt_labels, scene.gt_targets, l1_weight=weights.match_l1, code=weights.code
        )
        match = hungarian_match(cost)
    q_idx = match.query_indices if (match is not None and n_gt) else np.zeros(0, dtype=np.int64)
    g_idx = match.gt_indices if (match is not None and n_gt) else np.zeros(0, dtype=np.int64)
    cls, reg = set_loss(obj, q_idx, scene.gt_labels[g_idx], scene.gt_targets[g_idx], weights)
    matching = T.add(cls, reg)
    total = matching
    dn_value = 0.0
    if groups:
        dn = T.mul(denoising_loss(groups, fr.ray, cfg.perception_range, weights), weights.denoise)
        dn_value = float(dn.value)
        total = T.add(total, dn)
    return SceneLoss(total, float(matching.value), dn_value, match, groups), fr


@dataclass
class StepStats:
    total: float
    matching: float
    denoise: float


def train_step(
    model: ToyDetector,
    batch: Sequence[PreparedScene],
    spec: RaySpec | None,
    rng: SeededRng,
    opt: AdamW,
    weights: LossWeights = LossWeights(),
) -> StepStats:
    """One optimiser step on the mean loss over ``batch``.

    Each scene draws its ray groups from its own child stream. The whole
    batch lives on one tape, so the gradient reduction order is fixed.
    """
    if not batch:
        raise ValueError("train_step needs a nonempty batch")
    streams = rng.spawn_many(len(batch)) if spec is not None else [None] * len(batch)
    tape = T.Tape()
    P = model.bind(tape)
    # every scene shares the rig, so the token position branch is computed once
    shared_pos = {}
    losses = []
    tot = mat = dn = 0.0
    scale = 1.0 / len(batch)
    for scene, stream in zip(batch, streams):
        key = id(scene.tokens.position)
        if key not in shared_pos:
            shared_pos[key] = model.token_positions(P, scene.tokens.position)
        sl, _ = scene_loss(model, scene, spec, stream, weights, bound=P, token_pos=shared_pos[key])
        value = float(sl.total.value)
        if not math.isfinite(value):
            raise NonFiniteLossError(
                f"non-finite loss {value} on scene {scene.scene_id}",
                {"scene_id": scene.scene_id, "matching": sl.matching, "denoise": sl.denoise, "step": opt.t},
            )
        losses.append(sl.total)
        tot += value * scale
        mat += sl.matching * scale
        dn += sl.denoise * scale
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    tape.backward(T.mul(total, scale))
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    opt.step(model.params, grads)
    return StepStats(tot, mat, dn)


def loss_and_grads(model, scene, spec, rng, weights=LossWeights(), groups=None, match=None):
    sl, fr = scene_loss(model, scene, spec, rng, weights, groups, match)
    fr.tape.backward(sl.total)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in fr.params.items()}
    return sl, grads


def gradient_check(
    model: ToyDetector,
    scene: PreparedScene,
    epsilon: float = 1e-5,
    spec: RaySpec | None = None,
    seed: int = 0,
    max_coords: int = 200,
    weights: LossWeights = LossWeights(),
    floor: float = 1e-6,
) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error is |a - n| / max(|a|, |n|, floor). Ray groups and the
    Hungarian matching are frozen at the unperturbed point, since they are
    piecewise-constant in the parameters.
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    sl, grads = loss_and_grads(model, scene, spec, SeededRng(seed), weights)
    groups, match = sl.groups, sl.match
    pick = SeededRng(seed, stream=0x6C)
    worst = 0.0
    for name, value in model.params.items():
        flat = value.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else np.sort(np.argsort(pick.uniform(n))[:max_coords])
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(scene_loss(model, scene, spec, None, weights, groups, match)[0].total.value)
            flat[i] = orig - epsilon
            down = float(scene_loss(model, scene, spec, None, weights, groups, match)[0].total.value)
            flat[i] = orig
            num = (up - down) / (2.0 * epsilon)
            ana = float(grads[name].reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst


def scalar_gradient_check(f: Callable[[T.Var], T.Var], x: float, epsilon: float = 1e-5) -> tuple[float, float]:
    """(tape derivative, central difference) of a scalar function at x."""
    tape = T.Tape()
    xv = tape.leaf(np.array(x))
    tape.backward(f(xv))
    num = (float(f(T.Tape().leaf(np.array(x + epsilon))).value) - float(f(T.Tape().leaf(np.array(x - epsilon))).value)) / (
        2.0 * epsilon
    )
    return float(xv.grad), num


def predict(model: ToyDetector, scene: PreparedScene, score_floor: float = 0.05) -> list[dict]:
    """Inference: object queries only, no ray queries."""
    fr = model.forward(scene.tokens)
    logits = fr.obj.class_logits.value
    probs = 1.0 / (1.0 + np.exp(-logits))
    cls = probs.argmax(axis=1)
    score = probs[np.arange(len(cls)), cls]
    boxes = decode_boxes(fr.obj.box.value, model.cfg.perception_range)
    out = []
    for q in range(len(cls)):
        if score[q] < score_floor:
            continue
        out.append(
            {
                "scene_id": scene.scene_id,
                "class_id": int(cls[q]),
                "center": boxes["center"][q],
                "size": boxes["size"][q],
                "yaw": float(boxes["yaw"][q]),
                "score": float(score[q]),
            }
        )
    return out


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float | None = 10.0
    denoise_weight: float = 1.0
    l1_weight: float = 0.25
    match_l1_weight: float = 2.0
    box_code: tuple = BOX_CODE


def batch_schedule(rng: SeededRng, n_scenes: int, steps: int, batch_size: int) -> list[list[int]]:
    """Scene indices per step: fresh permutation each epoch, drawn from ``rng``."""
    if n_scenes <= 0:
        raise ValueError("no scenes to train on")
    order: list[int] = []
    out = []
    for _ in range(steps):
        b = []
        for _ in range(batch_size):
            if not order:
                order = list(np.argsort(rng.uniform(n_scenes), kind="stable")[::-1])
            b.append(int(order.pop()))
        out.append(b)
    return out


def fit(
    model: ToyDetector,
    scenes: Sequence[PreparedScene],
    spec: RaySpec | None,
    seed: int,
    tcfg: TrainConfig = TrainConfig(),
    on_step: Callable[[int, StepStats], None] | None = None,
) -> list[StepStats]:
    """Train in place. The batch order depends only on ``seed`` so baseline and
    BEAM runs with the same seed see identical batches."""
    order_rng = SeededRng(seed, stream=0x0B)
    ray_rng = SeededRng(seed, stream=0x0D)
    opt = AdamW(lr=tcfg.lr, weight_decay=tcfg.weight_decay, grad_clip=tcfg.grad_clip)
    weights = LossWeights(l1=tcfg.l1_weight, match_l1=tcfg.match_l1_weight, denoise=tcfg.denoise_weight, code=tuple(tcfg.box_code))
    history = []
    for step, idx in enumerate(batch_schedule(order_rng, len(scenes), tcfg.steps, tcfg.batch_size)):
        stats = train_step(model, [scenes[i] for i in idx], spec, ray_rng, opt, weights)
        history.append(stats)
        if on_step is not None:
            on_step(step, stats)
    return history
