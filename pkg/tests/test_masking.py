import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamdn.masking import build_attention_mask


def test_single_group():
    m = build_attention_mask(2, [3])
    assert m.blocked.shape == (5, 5)
    expect = np.zeros((5, 5), dtype=bool)
    expect[3:, :3] = True
    np.testing.assert_array_equal(m.blocked, expect)
    assert m.n_ray == 3 and m.n_obj == 2


def test_cross_group_blocked():
    m = build_attention_mask(0, [2, 2])
    expect = np.zeros((4, 4), dtype=bool)
    expect[:2, 2:] = True
    expect[2:, :2] = True
    np.testing.assert_array_equal(m.blocked, expect)


def test_no_groups():
    m = build_attention_mask(3, [])
    np.testing.assert_array_equal(m.blocked, np.zeros((3, 3), dtype=bool))


def test_validation():
    with pytest.raises(ValueError):
        build_attention_mask(-1, [])
    with pytest.raises(ValueError):
        build_attention_mask(2, [0])


def test_additive_and_dump():
    m = build_attention_mask(1, [1])
    np.testing.assert_array_equal(m.additive(), [[0.0, 0.0], [-np.inf, 0.0]])
    assert m.dump() == "00\n10\n"
    assert not m.blocked.flags.writeable


@settings(max_examples=100, deadline=None)
@given(n_obj=st.integers(0, 6), sizes=st.lists(st.integers(1, 4), max_size=5))
def test_rules(n_obj, sizes):
    m = build_attention_mask(n_obj, sizes)
    gid = np.repeat(np.arange(len(sizes)), sizes)
    n_ray = len(gid)
    b = m.blocked
    # object rows never see ray columns, object columns are open to everyone
    assert b[n_ray:, :n_ray].all()
    assert not b[:, n_ray:].any()
    for i in range(n_ray):
        for j in range(n_ray):
            assert b[i, j] == (gid[i] != gid[j])
    assert m.dump() == build_attention_mask(n_obj, sizes).dump()
