import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_eviction

from sunsplat.keyframes import (
    Keyframe,
    KeyframeWindow,
    NothingEvictable,
    eviction_candidate,
    should_admit,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def sweep(deg):
    a = np.deg2rad(deg)
    return np.array([np.cos(a), np.sin(a), 0.0])


def test_admission_rule_examples():
    w = [Keyframe(0, sweep(0))]
    assert should_admit(sweep(0), [])
    assert not should_admit(sweep(0), w)
    assert should_admit(sweep(15), w)
    assert should_admit(sweep(10), w)
    assert not should_admit(sweep(9.9), w)


def test_only_most_recent_keyframe_gates_admission():
    w = [Keyframe(1, sweep(30)), Keyframe(0, sweep(0))]
    assert should_admit(sweep(1), w)


def test_closest_old_pair_member_is_evicted():
    angles = [0, 25, 50, 75, 100, 125, 150, 175, 176, 220, 260]
    views = np.array([sweep(a) for a in angles])
    w = [Keyframe(i, v) for i, v in enumerate(views)]
    # frames at 175° and 176° are 1° apart, the rest ≥ 20°; the older one goes
    assert eviction_candidate(w, 10) == 8


def test_tie_goes_to_the_oldest():
    # evictable frames on the six axis directions: every score is exactly 0
    axes = [np.array(v, dtype=float) for v in
            ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1])]
    views = [unit([1, 1, 1]), unit([1, -1, 1])] + axes
    assert eviction_candidate([Keyframe(i, v) for i, v in enumerate(views)], 7) == 7


def test_window_below_three_cannot_evict():
    with pytest.raises(NothingEvictable):
        eviction_candidate([Keyframe(i, sweep(i * 20)) for i in range(3)], 2)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1), st.integers(4, 25))
def test_eviction_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    views = rng.normal(size=(n, 3))
    views /= np.linalg.norm(views, axis=1, keepdims=True)
    w = [Keyframe(i, v) for i, v in enumerate(views)]
    assert eviction_candidate(w, n - 1) == brute_force_eviction(views)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_evicted_frame_belongs_to_the_closest_pair(seed):
    """Removing a frame outside the closest evictable pair never leaves a
    better-spread window than the chosen eviction."""
    rng = np.random.default_rng(seed)
    views = rng.normal(size=(11, 3))
    views /= np.linalg.norm(views, axis=1, keepdims=True)
    e = eviction_candidate([Keyframe(i, v) for i, v in enumerate(views)], 10)
    ev = list(range(2, 11))

    def closest(keep):
        d = views[keep] @ views[keep].T
        np.fill_diagonal(d, -np.inf)
        return d.max()

    top = closest(ev)
    partner = [j for j in ev if j != e and np.isclose(views[e] @ views[j], top, atol=0)]
    assert partner, "evicted frame is not in the closest pair"
    ours = closest([i for i in ev if i != e])
    for alt in ev:
        if alt != e and alt not in partner:
            assert ours <= closest([i for i in ev if i != alt]) + 1e-12


def test_identical_stream_keeps_one_frame():
    w = KeyframeWindow()
    results = [w.ingest(i, sweep(0)) for i in range(20)]
    assert results[0] == (True, None)
    assert all(r == (False, None) for r in results[1:])
    assert len(w) == 1


def test_full_sweep_admits_every_tenth_degree():
    w = KeyframeWindow(max_size=10, theta_deg=10)
    admitted = sum(w.ingest(i, sweep(i))[0] for i in range(360))
    assert abs(admitted - 36) <= 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.floats(1, 60))
def test_window_invariants_under_random_streams(seed, size, theta):
    rng = np.random.default_rng(seed)
    w = KeyframeWindow(max_size=size, theta_deg=theta)
    admitted_ids = []
    for fid in range(60):
        v = unit(rng.normal(size=3))
        prev_views = [k.view for k in w.frames]
        prev_ids = w.ids
        expected = not prev_views or float(v @ prev_views[0]) <= np.cos(np.deg2rad(theta))
        ok, evicted = w.ingest(fid, v)
        assert ok == expected
        if ok:
            admitted_ids.append(fid)
            if len(prev_ids) == size:
                ids = [fid] + prev_ids
                assert evicted == ids[brute_force_eviction(np.array([v] + prev_views))]
            else:
                assert evicted is None
        else:
            assert w.ids == prev_ids
        assert len(w) <= size
        assert w.ids[:2] == admitted_ids[::-1][:2]
