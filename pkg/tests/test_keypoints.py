import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occtrack.acceptance import brute_force_greedy, promotion_checks
from occtrack.geometry import Pose, so3_exp
from occtrack.keypoints import (Candidate, FrameEvidence, Keypoint, KeypointMap, PendingPoint, SamplerConfig,
                                greedy_sample, min_rotation_to, passes_checks, sampling_objective,
                                should_sample, spread_mad, strictly_inside, try_promote, update_pending)


def ev(ok=True, rot_deg=0.5, trans=0.002, unc=0.1, point=(0.0, 0.0, 0.5), inside=True):
    return FrameEvidence(Pose(so3_exp([0.0, 0.0, np.deg2rad(rot_deg)]), [trans, 0.0, 0.0]),
                         visible=ok, depth_valid=True, uncertainty=unc, inside_mask=inside,
                         point=np.array(point))


# -- sampling --------------------------------------------------------------------

def test_score_only_ranks_by_score(rng):
    # spaced beyond r_min so the crowding penalty never applies
    cands = [Candidate((20.0 * k, 0.0), float(s)) for k, s in enumerate(rng.random(20))]
    picked = greedy_sample(cands, [], SamplerConfig(lam=1.0, K=20))
    assert [c.score for c in picked] == sorted((c.score for c in cands), reverse=True)


def test_coincident_candidate_objective():
    cfg = SamplerConfig(lam=0.5, beta=1.0)
    assert sampling_objective(1.0, 0.0, cfg) == pytest.approx(-0.5)
    assert sampling_objective(0.0, np.inf, cfg) == pytest.approx(0.5)


def test_matches_brute_force_oracle(rng):
    cfg = SamplerConfig()
    for trial in range(10):
        cands = [Candidate(tuple(rng.uniform(0, 300, 2)), float(s)) for s in rng.random(100)]
        existing = rng.uniform(0, 300, (rng.integers(0, 6), 2))
        got = greedy_sample(cands, existing, cfg)
        want = [cands[i] for i in brute_force_greedy(cands, existing, cfg)]
        assert got == want


def test_fewer_candidates_than_budget():
    cands = [Candidate((0.0, 0.0), 0.3), Candidate((50.0, 0.0), 0.9)]
    out = greedy_sample(cands, [], SamplerConfig(K=30))
    assert len(out) == 2 and out[0].score == 0.9
    assert greedy_sample([], [], SamplerConfig()) == []


def test_tie_breaks_on_lower_index():
    cands = [Candidate((0.0, 0.0), 0.5), Candidate((100.0, 100.0), 0.5)]
    assert greedy_sample(cands, [], SamplerConfig(K=1))[0] is cands[0]


def test_spacing_on_grid():
    # dense grid: plenty of candidates away from each other and from the existing point
    g = np.stack(np.meshgrid(np.arange(0, 300, 5.0), np.arange(0, 300, 5.0)), -1).reshape(-1, 2)
    rng = np.random.default_rng(3)
    cands = [Candidate(tuple(p), float(s)) for p, s in zip(g, rng.random(len(g)))]
    out = greedy_sample(cands, [[150.0, 150.0]], SamplerConfig(lam=0.5, beta=1.0, K=30))
    pts = np.array([c.pixel for c in out] + [[150.0, 150.0]])
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(len(pts)) * 1e9
    assert d.min() >= 10.0


def test_candidate_and_config_validation():
    with pytest.raises(ValueError):
        Candidate((0, 0), 1.5)
    with pytest.raises(ValueError):
        SamplerConfig(lam=1.2).validate()
    with pytest.raises(ValueError):
        SamplerConfig(r_min=50.0, r_ideal=40.0).validate()


# -- triggers ----------------------------------------------------------------------

def test_trigger_examples():
    cfg = SamplerConfig()
    assert should_sample(np.deg2rad(11), 100, cfg)
    assert should_sample(0.0, 24, cfg)
    assert not should_sample(np.deg2rad(5), 25, cfg)


def test_rotation_measured_against_all_keyframes():
    kfs = [np.eye(3), so3_exp([0, np.deg2rad(30), 0])]
    R = so3_exp([0, np.deg2rad(28), 0])
    assert min_rotation_to(R, kfs) == pytest.approx(np.deg2rad(2))
    assert min_rotation_to(R, []) == np.inf


# -- verification and promotion --------------------------------------------------

def test_streak_examples():
    pp = PendingPoint(1, 0, (np.zeros(3),), streak=1)
    assert update_pending(pp, ev()).streak == 2
    assert update_pending(pp, ev(unc=0.35)).streak == 0
    assert update_pending(pp, ev(rot_deg=3.0)).streak == 0
    assert update_pending(pp, ev(trans=0.02)).streak == 0
    assert update_pending(pp, ev(inside=False)).streak == 0
    assert len(update_pending(pp, ev(ok=False)).observations) == 1


@given(st.lists(st.booleans(), max_size=30))
def test_streak_is_passing_suffix_length(flags):
    pp = PendingPoint(0, 0)
    for f in flags:
        pp = update_pending(pp, ev() if f else ev(unc=0.9))
    suffix = 0
    for f in reversed(flags):
        if not f:
            break
        suffix += 1
    assert pp.streak == suffix
    assert len(pp.observations) == sum(flags)


def test_promotion_examples():
    rng = np.random.default_rng(4)
    obs = tuple(np.array([0.01, 0.02, 0.5]) + rng.uniform(-5e-4, 5e-4, 3) for _ in range(3))
    kp = try_promote(PendingPoint(1, 0, obs, streak=3), keyframe=2)
    assert kp is not None and kp.keyframe == 2
    np.testing.assert_allclose(kp.position, np.median(np.array(obs), axis=0))
    spread = (np.zeros(3), np.array([0.01, 0, 0]), np.array([-0.01, 0, 0]), np.array([0, 0.01, 0]))
    assert spread_mad(spread)[1] == pytest.approx(0.01)
    assert try_promote(PendingPoint(1, 0, spread, streak=4)) is None
    assert try_promote(PendingPoint(1, 0, obs, streak=2)) is None
    assert try_promote(PendingPoint(1, 0, obs[:2], streak=3)) is None


def test_promotion_constant_boundaries():
    for name, got, want in promotion_checks():
        assert got == want, name


@given(st.permutations(range(6)))
def test_promoted_position_permutation_invariant(order):
    rng = np.random.default_rng(9)
    obs = [np.array([0.1, 0.0, 0.4]) + rng.normal(0, 1e-3, 3) for _ in range(6)]
    a = try_promote(PendingPoint(0, 0, tuple(obs), 6))
    b = try_promote(PendingPoint(0, 0, tuple(obs[i] for i in order), 6))
    assert np.array_equal(a.position, b.position)


def test_strictly_inside():
    m = np.zeros((10, 10), bool)
    m[2:8, 2:8] = True
    assert strictly_inside(m, (4.0, 4.0))
    assert not strictly_inside(m, (2.0, 4.0))  # left neighbour off the mask
    assert not strictly_inside(m, (0.0, 0.0))
    assert not strictly_inside(m, (9.6, 4.0))


def test_map_grows_and_replaces_explicitly():
    km = KeypointMap()
    km.add(Keypoint(3, [0, 0, 0.5], 0))
    with pytest.raises(ValueError):
        km.add(Keypoint(3, [0, 0, 0.6], 1))
    snap = km.snapshot()
    km.replace_positions({3: np.array([0.0, 0.0, 0.55])})
    assert snap[3].position[2] == 0.5
    assert km.position(3)[2] == 0.55 and km.points[3].keyframe == 0
    with pytest.raises(ValueError):
        km.points[3].position[0] = 1.0
    with pytest.raises(ValueError):
        Keypoint(1, [np.nan, 0, 0], 0)


def test_missing_point_fails_checks():
    e = FrameEvidence(Pose(), True, True, 0.1, True, None)
    assert not passes_checks(e)
