import numpy as np
import pytest

from beamdn.beta import BetaParams, DomainError, SeededRng
from beamdn.geometry import ray_through, visible
from beamdn.raydn import (
    MIN_DEPTH,
    NEGATIVE,
    POSITIVE,
    GroundTruthBox,
    NotVisibleError,
    RaySpec,
    assign_labels,
    build_all,
    build_ray_group,
    sample_depths,
    scale_extent,
)
from beamdn.scenes import make_rig
from conftest import identity_camera


def test_scale_extent_examples():
    assert scale_extent(GroundTruthBox((0, 0, 10), (2, 2, 2)), 3) == pytest.approx(3.0)
    assert scale_extent(GroundTruthBox((0, 0, 10), (4, 2, 6)), 3) == pytest.approx(6.0)
    with pytest.raises(DomainError):
        GroundTruthBox((0, 0, 10), (0, 0, 0))
    with pytest.raises(DomainError):
        scale_extent(GroundTruthBox((0, 0, 10), (2, 2, 2)), 0)


def test_sample_depths_bounds_and_mean():
    for lam, mu in [(1, 1), (8, 2), (2, 8), (0.5, 0.5)]:
        d = sample_depths(SeededRng(1), 10.0, 3.0, BetaParams(lam, mu), 2000)
        assert np.all((d > 7) & (d < 13))
    d = sample_depths(SeededRng(2), 10.0, 1e-9, BetaParams(8, 2), 100)
    np.testing.assert_allclose(d, 10.0, atol=1e-8)
    d = sample_depths(SeededRng(3), 10.0, 3.0, BetaParams(8, 2), 10000)
    assert d.mean() == pytest.approx(11.8, abs=0.1)


def test_sample_depths_domain():
    with pytest.raises(DomainError):
        sample_depths(SeededRng(0), 0.0, 1.0, BetaParams(), 3)
    with pytest.raises(DomainError):
        sample_depths(SeededRng(0), 1.0, 0.0, BetaParams(), 3)


def test_sample_depths_nonpositive_redraw_and_clamp():
    # near object, huge extent: many raw draws land at or below zero
    d = sample_depths(SeededRng(4), 0.5, 50.0, BetaParams(1, 1), 500)
    assert np.all(d > 0)
    # Beta(0.01, 50) puts essentially all mass at offset -1: every redraw fails
    d = sample_depths(SeededRng(5), 1.0, 10.0, BetaParams(0.01, 50), 4)
    np.testing.assert_array_equal(d, MIN_DEPTH)


def test_build_ray_group_axis_case():
    cam = identity_camera(100, 100)
    box = GroundTruthBox((0, 0, 10), (2, 2, 2))
    g = build_ray_group(cam, box, RaySpec(BetaParams(8, 2), 3.0, 5), SeededRng(7))
    assert g.ref_points.shape == (5, 3)
    np.testing.assert_allclose(g.ref_points[:, :2], 0.0, atol=1e-12)
    assert np.all((g.ref_points[:, 2] > 7) & (g.ref_points[:, 2] < 13))
    best = int(np.argmin(np.abs(g.ref_points[:, 2] - 10)))
    assert g.labels[best] == POSITIVE
    assert (g.labels == POSITIVE).sum() == 1
    assert g.positive_index == best


def test_positive_is_nearest_for_hand_offsets():
    # offsets -0.5 and +0.1 at d=10, extent=3 give depths 8.5 and 10.3
    pts = np.array([[0, 0, 8.5], [0, 0, 10.3]])
    np.testing.assert_array_equal(assign_labels(pts, np.array([0, 0, 10.0])), [NEGATIVE, POSITIVE])


def test_positive_tie_breaks_to_lowest_index():
    pts = np.array([[0, 0, 9.0], [0, 0, 11.0], [0, 0, 9.0]])
    np.testing.assert_array_equal(assign_labels(pts, np.array([0, 0, 10.0])), [POSITIVE, NEGATIVE, NEGATIVE])


def test_not_visible():
    with pytest.raises(NotVisibleError):
        build_ray_group(identity_camera(), GroundTruthBox((0, 0, -5), (1, 1, 1)), RaySpec(), SeededRng(0))


def test_build_all_counts():
    cam = identity_camera(100, 100)
    res = build_all([cam], [GroundTruthBox((0, 0, 10), (1, 1, 1))], RaySpec(), SeededRng(0))
    assert len(res) == 1 and res.skipped == 0
    res = build_all([cam], [GroundTruthBox((0, 0, -10), (1, 1, 1))], RaySpec(), SeededRng(0))
    assert len(res) == 0 and res.skipped == 1


def test_build_all_overlapping_cameras():
    rig = make_rig(6)
    rng = np.random.default_rng(0)
    found = False
    for _ in range(2000):
        c = np.r_[rng.uniform(-20, 20, 2), 0.0]
        n_vis = sum(visible(cam, c) for cam in rig)
        if n_vis == 2:
            res = build_all(rig, [GroundTruthBox(c, (1, 1, 1))], RaySpec(), SeededRng(1))
            assert len(res) == 2
            assert sorted(g.camera_index for g in res) == [i for i, cam in enumerate(rig) if visible(cam, c)]
            found = True
            break
    assert found


def test_groups_do_not_depend_on_other_boxes():
    rig = make_rig(6)
    a = GroundTruthBox((10, 2, 0), (2, 2, 4))
    b = GroundTruthBox((-8, -6, 0), (1, 2, 3))
    solo = build_all(rig, [a, GroundTruthBox((0, 0, -50), (1, 1, 1))], RaySpec(), SeededRng(3)).groups
    pair = build_all(rig, [a, b], RaySpec(), SeededRng(3)).groups
    first = [g for g in pair if g.gt_index == 0]
    assert len(first) == len(solo)
    for x, y in zip(first, solo):
        assert x.ref_points.tobytes() == y.ref_points.tobytes()


def test_determinism_and_serialisation():
    rig = make_rig(6)
    boxes = [GroundTruthBox((12, 3, 0), (2, 2, 4), 0.3, 1), GroundTruthBox((-5, 9, 0), (1, 1, 1))]
    a = build_all(rig, boxes, RaySpec(), SeededRng(11))
    b = build_all(rig, boxes, RaySpec(), SeededRng(11))
    assert [g.to_dict() for g in a] == [g.to_dict() for g in b]


def test_monotone_radius():
    cam = identity_camera(100, 100)
    box = GroundTruthBox((0, 0, 30), (2, 2, 2))
    spreads = []
    for k in (0.5, 1, 2, 3, 5):
        d = np.concatenate(
            [build_ray_group(cam, box, RaySpec(BetaParams(8, 2), k, 5), SeededRng(s)).depths for s in range(200)]
        )
        spreads.append(d.std())
    assert all(b >= a for a, b in zip(spreads, spreads[1:]))


def test_collinear_and_bounded_random():
    rig = make_rig(6)
    rng = np.random.default_rng(5)
    n = 0
    while n < 500:
        box = GroundTruthBox(np.r_[rng.uniform(-25, 25, 2), rng.uniform(-1, 1)], tuple(rng.uniform(0.5, 5, 3)))
        for ci, cam in enumerate(rig):
            if not visible(cam, box.center):
                continue
            g = build_ray_group(cam, box, RaySpec(), SeededRng(n), 0, ci)
            ray = ray_through(cam, box.center)
            assert max(ray.distance_to(p) for p in g.ref_points) < 1e-6
            assert np.all(np.abs(g.depths - g.center_depth) < g.extent)
            n += 1


def test_ray_spec_validation():
    with pytest.raises(DomainError):
        RaySpec(radius_k=0)
    with pytest.raises(DomainError):
        RaySpec(n_per_ray=1)
