import itertools
import math

import numpy as np
import pytest

from beamdn.beta import SeededRng
from beamdn.raydn import GroundTruthBox, RaySpec, build_all
from beamdn.scenes import make_benchmark, make_rig, render_arrays
from beamdn.toynet import tape as T
from beamdn.toynet.encoding import denormalize_points, direction_embedding, fourier, normalize_points, ray_direction_pe
from beamdn.toynet.losses import LossWeights, denoising_loss, denoising_targets, focal_loss, matching_cost
from beamdn.toynet.matching import CapacityError, hungarian_match
from beamdn.toynet.model import (
    BOX_DIM,
    DecoderConfig,
    HeadOutput,
    ModelFormatError,
    ToyDetector,
    anchor_layout,
    box_target,
    decode_boxes,
    load_model,
    multi_head_attention,
    save_model,
)
from beamdn.toynet.train import (
    AdamW,
    TrainConfig,
    batch_schedule,
    fit,
    gradient_check,
    predict,
    prepare_scene,
    scene_loss,
    train_step,
)
from conftest import identity_camera

CFG = DecoderConfig()
PR = CFG.perception_range


@pytest.fixture(scope="module")
def scenes():
    rig = make_rig(6)
    return [prepare_scene(s, CFG) for s in make_benchmark(5, 8, rig, prefix="t")]


def scene_with_boxes(scenes, n=2):
    return next(s for s in scenes if len(s.boxes) >= n)


def ray_inputs(scene, seed=0):
    groups = build_all(scene.rig, scene.boxes, RaySpec(), SeededRng(seed)).groups
    return groups, np.concatenate([g.ref_points for g in groups]), [len(g) for g in groups]


# encodings


def test_normalize_endpoints():
    lo = [PR[0], PR[2], PR[4]]
    hi = [PR[1], PR[3], PR[5]]
    np.testing.assert_allclose(normalize_points(lo, PR), [[0, 0, 0]])
    np.testing.assert_allclose(normalize_points(hi, PR), [[1, 1, 1]])
    np.testing.assert_allclose(normalize_points(np.add(lo, hi) / 2, PR), [[0.5, 0.5, 0.5]])
    np.testing.assert_allclose(denormalize_points(normalize_points(hi, PR), PR), [hi])


def test_ray_direction_pe():
    cam = identity_camera(100, 80)
    a = ray_direction_pe(cam, (10.0, 20.0))
    assert a.tobytes() == ray_direction_pe(cam, (10.0, 20.0)).tobytes()
    assert np.linalg.norm(ray_direction_pe(cam, (0, 0)) - ray_direction_pe(cam, (100, 80))) > 0
    np.testing.assert_allclose(ray_direction_pe(cam, (0.0, 0.0)), fourier(np.array([0.0, 0.0, 1.0])), atol=1e-15)
    np.testing.assert_allclose(direction_embedding([0, 0, 3]), direction_embedding([0, 0, 1]))


def test_anchor_layout():
    a = anchor_layout(24)
    assert a.shape == (24, 3)
    assert not np.any(np.all(np.isclose(a[:, :2], 0.0), axis=1))  # the rig cell is skipped
    assert len({tuple(p) for p in a}) == 24


# decoder


def test_baseline_output_shape(scenes):
    m = ToyDetector(CFG, seed=0)
    fr = m.forward(scenes[0].tokens)
    assert fr.output.class_logits.shape == (CFG.n_obj_queries, CFG.n_classes)
    assert fr.output.box.shape == (CFG.n_obj_queries, BOX_DIM)
    assert fr.n_ray == 0


def test_hand_attention():
    # one head, D=2, one query, two tokens, identity projections
    tape = T.Tape()
    P = {}
    for proj in "qkvo":
        P[f"a.{proj}.w"] = tape.const(np.eye(2))
        P[f"a.{proj}.b"] = tape.const(np.zeros(2))
    q = tape.const([[1.0, 0.0]])
    k = tape.const([[1.0, 0.0], [0.0, 1.0]])
    v = tape.const([[2.0, 0.0], [0.0, 4.0]])
    out = multi_head_attention(P, "a", q, k, v, 1).value
    s = 1 / math.sqrt(2)
    w0 = math.exp(s) / (math.exp(s) + 1.0)
    np.testing.assert_allclose(out, [[2 * w0, 4 * (1 - w0)]], atol=1e-15)


def test_mask_leakage_outputs_bit_identical(scenes):
    sc = scene_with_boxes(scenes)
    m = ToyDetector(CFG, seed=1)
    groups, pts, sizes = ray_inputs(sc)
    rng = np.random.default_rng(0)

    def run(scale):
        noise = rng.normal(size=(len(pts), CFG.embed_dim)) * scale
        fr = m.forward(sc.tokens, pts, sizes, ray_embed_override=lambda tape, norm: tape.const(noise))
        return fr.obj.class_logits.value.tobytes() + fr.obj.box.value.tobytes()

    base = run(1.0)
    for scale in (0.0, 1e-3, 1e6):
        assert run(scale) == base
    # without any ray rows the matmul shapes change, so only rounding-level agreement
    alone = m.forward(sc.tokens).obj.class_logits.value
    with_rays = np.frombuffer(base[: alone.size * 8]).reshape(alone.shape)
    np.testing.assert_allclose(alone, with_rays, rtol=0, atol=1e-12)


def test_group_isolation(scenes):
    sc = scene_with_boxes(scenes)
    m = ToyDetector(CFG, seed=2)
    groups, pts, sizes = ray_inputs(sc)
    assert len(sizes) >= 2
    base = np.random.default_rng(1).normal(size=(len(pts), CFG.embed_dim))
    pert = base.copy()
    pert[sizes[0] :] += 5.0  # touch every group but the first
    a = m.forward(sc.tokens, pts, sizes, ray_embed_override=lambda t, n: t.const(base)).ray
    b = m.forward(sc.tokens, pts, sizes, ray_embed_override=lambda t, n: t.const(pert)).ray
    first = slice(0, sizes[0])
    assert a.class_logits.value[first].tobytes() == b.class_logits.value[first].tobytes()
    assert a.box.value[first].tobytes() == b.box.value[first].tobytes()


def test_object_loss_gradient_to_ray_embeddings_is_zero(scenes):
    sc = scene_with_boxes(scenes)
    m = ToyDetector(CFG, seed=3)
    groups, pts, sizes = ray_inputs(sc)
    holder = {}

    def leaf(tape, norm):
        holder["e"] = tape.leaf(np.random.default_rng(2).normal(size=(len(pts), CFG.embed_dim)))
        return holder["e"]

    fr = m.forward(sc.tokens, pts, sizes, ray_embed_override=leaf)
    obj = fr.obj
    loss = T.add(T.sum_(T.mul(obj.class_logits, 1.0)), T.sum_(T.mul(obj.box, 1.0)))
    fr.tape.backward(loss)
    g = holder["e"].grad
    assert g is None or not np.any(g)
    # sanity: the ray branch itself does reach the embeddings
    fr.tape.backward(T.sum_(fr.ray.class_logits))
    assert np.any(holder["e"].grad)


def test_box_size_decode_positive():
    raw = np.zeros((5, BOX_DIM))
    raw[:, 3:6] = [[-700], [-50], [0], [30], [700]]
    with np.errstate(over="ignore"):
        sizes = decode_boxes(raw, PR)["size"]
    assert np.all(sizes > 0)
    box = GroundTruthBox((3, -4, 0.5), (1, 2, 3), 0.7, 1)
    dec = decode_boxes(box_target(box, PR)[None], PR)
    np.testing.assert_allclose(dec["center"][0], box.center, atol=1e-12)
    np.testing.assert_allclose(dec["size"][0], box.size, atol=1e-12)
    assert dec["yaw"][0] == pytest.approx(0.7)


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(embed_dim=30, n_heads=4)
    with pytest.raises(ValueError):
        DecoderConfig(perception_range=(0, 0, -1, 1, -1, 1))
    assert DecoderConfig().digest() == DecoderConfig().digest()
    assert DecoderConfig(n_layers=3).digest() != DecoderConfig().digest()


# matching


def test_hungarian_examples():
    r = hungarian_match([[0, 9], [9, 0]])
    assert r.pairs == ((0, 0), (1, 1))
    r = hungarian_match([[1, 1], [1, 1]])
    assert r.pairs == ((0, 0), (1, 1))
    assert r.total_cost(np.ones((2, 2))) == 2
    with pytest.raises(CapacityError):
        hungarian_match(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        hungarian_match([[np.nan]])
    assert hungarian_match(np.zeros((3, 0))).pairs == ()


def brute_force(cost):
    n_q, n_g = cost.shape
    return min(sum(cost[q, g] for g, q in enumerate(perm)) for perm in itertools.permutations(range(n_q), n_g))


def test_hungarian_brute_force_rectangular():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n_g = int(rng.integers(1, 5))
        n_q = int(rng.integers(n_g, 7))
        cost = rng.uniform(-1, 1, (n_q, n_g))
        r = hungarian_match(cost)
        assert r.total_cost(cost) == pytest.approx(brute_force(cost), abs=1e-12)
        assert len({q for q, _ in r.pairs}) == n_g


def test_match_background():
    r = hungarian_match(np.array([[5.0], [1.0], [3.0]]))
    np.testing.assert_array_equal(r.background(), [True, False, True])


# losses


def test_focal_examples():
    t = T.Tape()
    logits = np.full((1, 3), -20.0)
    logits[0, 1] = 20.0
    assert float(focal_loss(t.const(logits), [1]).value) < 1e-6
    v = focal_loss(t.const(np.zeros((1, 1))), [0], gamma=0.0, alpha=1.0)
    assert float(v.value) == pytest.approx(math.log(2.0), abs=1e-12)
    assert float(focal_loss(t.const(np.full((4, 3), -20.0)), [-1] * 4).value) < 1e-6


def _dn_outputs(groups, labels, targets, neg_logit=-20.0, pos_logit=20.0):
    t = T.Tape()
    logits = np.full((len(labels), CFG.n_classes), -20.0)
    for i, lab in enumerate(labels):
        if lab >= 0:
            logits[i, lab] = pos_logit
        else:
            logits[i, groups[0].target.class_id] = neg_logit
    return HeadOutput(t.const(logits), t.const(targets.copy()))


def test_denoising_loss_examples(scenes):
    sc = scene_with_boxes(scenes)
    groups, _, _ = ray_inputs(sc)
    labels, targets = denoising_targets(groups, PR)
    assert float(denoising_loss(groups, _dn_outputs(groups, labels, targets), PR).value) < 1e-6
    low = float(denoising_loss(groups, _dn_outputs(groups, labels, targets, neg_logit=2.0), PR).value)
    high = float(denoising_loss(groups, _dn_outputs(groups, labels, targets, neg_logit=20.0), PR).value)
    assert 0 < low < high
    # 1 m along x on one query: normalised delta 1/(x_max - x_min), code weight 1, L1 weight, per-query mean
    w = LossWeights()
    shifted = targets.copy()
    shifted[0, 0] += 1.0 / (PR[1] - PR[0])
    base = float(denoising_loss(groups, _dn_outputs(groups, labels, targets), PR, w).value)
    moved = float(denoising_loss(groups, _dn_outputs(groups, labels, shifted), PR, w).value)
    expect = w.l1 * w.code[0] * (1.0 / (PR[1] - PR[0])) / len(labels)
    assert moved - base == pytest.approx(expect, rel=1e-9)


def test_matching_cost_shape_and_code():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 3))
    box = rng.normal(size=(5, 8))
    gt = rng.normal(size=(2, 8))
    c = matching_cost(logits, box, [0, 2], gt, l1_weight=1.0, code=None)
    c2 = matching_cost(logits, box, [0, 2], gt, l1_weight=1.0, code=(1.0,) * 8)
    assert c.shape == (5, 2)
    np.testing.assert_allclose(c, c2)


# training


def test_gradient_check_random_init(scenes):
    sc = scene_with_boxes(scenes)
    m = ToyDetector(CFG, seed=4)
    assert gradient_check(m, sc, spec=RaySpec(), max_coords=5) < 1e-4


def test_gradient_check_epsilon_range(scenes):
    with pytest.raises(ValueError):
        gradient_check(ToyDetector(CFG), scenes[0], epsilon=1e-2)


def test_ray_queries_never_matched(scenes):
    sc = scene_with_boxes(scenes)
    m = ToyDetector(CFG, seed=5)
    sl, fr = scene_loss(m, sc, RaySpec(), SeededRng(0), LossWeights())
    assert fr.n_ray > 0
    assert sl.match.n_query == CFG.n_obj_queries
    assert all(q < CFG.n_obj_queries for q, _ in sl.match.pairs)


def test_two_runs_identical(scenes):
    a, b = ToyDetector(CFG, seed=6), ToyDetector(CFG, seed=6)
    for m in (a, b):
        fit(m, scenes, RaySpec(), 3, TrainConfig(steps=2, batch_size=2))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_baseline_step_has_no_denoising_term(scenes):
    """spec=None follows the plain set-prediction step, whatever ray settings exist."""
    a = ToyDetector(CFG, seed=7)
    hist = fit(a, scenes, None, 1, TrainConfig(steps=3, batch_size=2))
    assert all(h.denoise == 0.0 for h in hist)
    # reference trajectory without any ray machinery: explicit empty groups
    b = ToyDetector(CFG, seed=7)
    opt = AdamW(lr=1e-3, weight_decay=1e-4, grad_clip=10.0)
    w = LossWeights()
    for idx in batch_schedule(SeededRng(1, stream=0x0B), len(scenes), 3, 2):
        tape = T.Tape()
        P = b.bind(tape)
        pos = b.token_positions(P, scenes[idx[0]].tokens.position)
        losses = [scene_loss(b, scenes[i], None, None, w, groups=[], bound=P, token_pos=pos)[0].total for i in idx]
        total = losses[0]
        for extra in losses[1:]:
            total = T.add(total, extra)
        tape.backward(T.mul(total, 1.0 / len(idx)))
        opt.step(b.params, {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()})
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_descent_smoke(scenes):
    m = ToyDetector(CFG, seed=8)
    hist = fit(m, scenes, None, 0, TrainConfig(steps=200, batch_size=2))
    early = np.mean([h.total for h in hist[:10]])
    late = np.mean([h.total for h in hist[-10:]])
    assert late < early


def test_train_step_rejects_empty_batch():
    with pytest.raises(ValueError):
        train_step(ToyDetector(CFG), [], None, SeededRng(0), AdamW())


def test_predict_floor(scenes):
    m = ToyDetector(CFG, seed=9)
    dets = predict(m, scenes[0], score_floor=0.0)
    assert len(dets) == CFG.n_obj_queries
    assert predict(m, scenes[0], score_floor=1.0) == []
    assert all(np.all(np.asarray(d["size"]) > 0) for d in dets)


def test_batch_schedule_covers_epochs():
    sched = batch_schedule(SeededRng(0), 10, 5, 4)
    flat = [i for b in sched for i in b]
    assert sorted(flat[:10]) == list(range(10))
    with pytest.raises(ValueError):
        batch_schedule(SeededRng(0), 0, 1, 1)


# model files


def test_model_round_trip(tmp_path):
    m = ToyDetector(CFG, seed=10)
    p = tmp_path / "m.bin"
    save_model(m, p)
    back = load_model(p, CFG)
    for k in m.params:
        assert m.params[k].tobytes() == back.params[k].tobytes()
    save_model(back, tmp_path / "again.bin")
    assert p.read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_model_load_errors(tmp_path):
    m = ToyDetector(CFG, seed=10)
    p = tmp_path / "m.bin"
    save_model(m, p)
    with pytest.raises(ModelFormatError, match="different decoder config"):
        load_model(p, DecoderConfig(n_layers=1))
    blob = p.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ModelFormatError, match="not a model file"):
        load_model(tmp_path / "magic.bin", CFG)
    (tmp_path / "short.bin").write_bytes(blob[:-16])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "short.bin", CFG)
    (tmp_path / "tiny.bin").write_bytes(blob[:10])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "tiny.bin", CFG)
    bumped = bytearray(blob)
    bumped[8] = 99
    (tmp_path / "ver.bin").write_bytes(bytes(bumped))
    with pytest.raises(ModelFormatError, match="version"):
        load_model(tmp_path / "ver.bin", CFG)


def test_token_grid_shapes():
    rig = make_rig(6)
    sc = make_benchmark(1, 1, rig)[0]
    g = render_arrays(sc)
    assert g.content.shape == (6 * 16 * 12, CFG.content_dim)
    assert g.origin.shape == (6 * 16 * 12, 3)
    np.testing.assert_allclose(g.origin[0], rig[0].center)
