from __future__ import annotations

import numpy as np
import pytest

from altlab.nn import make_rng
from altlab.similarity import (DegenerateTrainingSet, batch_report, positions_of,
                               resample_arclength, similarity_score, traj_distance)


def oracle_distance(a, b, m=64):
    """Independent re-implementation: loop-based arc-length resampling and
    index-matched averaging."""
    def resample(pts):
        pts = np.asarray(pts, float)
        lens = [0.0]
        for i in range(1, len(pts)):
            lens.append(lens[-1] + float(np.sqrt(((pts[i] - pts[i - 1]) ** 2).sum())))
        total = lens[-1]
        if total == 0:
            return np.repeat(pts[:1], m, axis=0)
        out = []
        for j in range(m):
            target = total * j / (m - 1)
            seg = 0
            while seg + 1 < len(lens) - 1 and lens[seg + 1] < target:
                seg += 1
            span = lens[seg + 1] - lens[seg]
            t = 0.0 if span == 0 else (target - lens[seg]) / span
            out.append(pts[seg] + t * (pts[seg + 1] - pts[seg]))
        return np.array(out)

    ra, rb = resample(a), resample(b)
    return float(np.mean(np.sqrt(((ra - rb) ** 2).sum(axis=1))))


def line(p0, p1, n=12):
    t = np.linspace(0, 1, n)[:, None]
    return np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))


def test_identical_trajectories_distance_zero():
    a = line([0, 0, 0], [1, 1, 0])
    assert traj_distance(a, a) == 0.0


def test_parallel_offset_segments_distance_is_offset():
    a = line([0, 0, 0], [2, 0, 0])
    b = line([0, 0.7, 0], [2, 0.7, 0], n=29)  # different sampling density
    assert traj_distance(a, b) == pytest.approx(0.7, abs=1e-12)


def test_distance_matches_independent_oracle_on_random_pairs():
    rng = make_rng(11)
    for _ in range(12):
        a = np.cumsum(rng.normal(size=(rng.integers(3, 20), 3)), axis=0)
        b = np.cumsum(rng.normal(size=(rng.integers(3, 20), 3)), axis=0)
        assert traj_distance(a, b) == pytest.approx(oracle_distance(a, b), rel=1e-10)


def test_score_is_exactly_one_for_training_trajectory():
    train = [line([0, 0, 0], [1, 0, 0]), line([0, 1, 0], [1, 1, 0]),
             line([0, 3, 0], [1, 3, 0])]
    rep = similarity_score(train[1].copy(), train)
    assert rep.score == 1.0
    assert rep.nearest_id == 1


def test_score_is_half_for_midpoint_of_two_nearest():
    train = [line([0, 0, 0], [1, 0, 0]), line([0, 1, 0], [1, 1, 0]),
             line([0, 5, 0], [1, 5, 0])]
    mid = (train[0] + train[1]) / 2.0
    rep = similarity_score(mid, train)
    assert rep.score == pytest.approx(0.5, abs=1e-9)


def test_far_query_scores_below_zero_and_is_not_clamped():
    train = [line([0, 0, 0], [1, 0, 0]), line([0, 1, 0], [1, 1, 0])]
    reflected = line([0, -30, 0], [1, -30, 0])
    rep = similarity_score(reflected, train)
    s1 = oracle_distance(reflected, train[0])
    s2 = oracle_distance(train[0], train[1])
    assert rep.score == pytest.approx(1 - s1 / s2, rel=1e-9)
    assert rep.score < 0


def test_duplicate_training_trajectories_rejected_with_ids():
    t0 = line([0, 0, 0], [1, 0, 0])
    train = [t0, t0.copy(), line([0, 9, 0], [1, 9, 0])]
    with pytest.raises(DegenerateTrainingSet, match="0 and 1"):
        similarity_score(t0 + 0.01, train)


def test_fewer_than_two_training_trajectories_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        similarity_score(line([0, 0, 0], [1, 0, 0]), [line([0, 0, 0], [1, 0, 0])])


def test_distance_is_pseudometric_on_random_triples():
    rng = make_rng(13)
    for _ in range(20):
        a, b, c = (np.cumsum(rng.normal(size=(8, 3)), axis=0) for _ in range(3))
        dab = traj_distance(a, b)
        dba = traj_distance(b, a)
        assert dab == pytest.approx(dba, rel=1e-12)
        assert traj_distance(a, c) <= dab + traj_distance(b, c) + 1e-9
        assert dab >= 0


def test_score_invariant_under_joint_translation():
    rng = make_rng(14)
    train = [np.cumsum(rng.normal(size=(9, 3)), axis=0) for _ in range(4)]
    q = np.cumsum(rng.normal(size=(9, 3)), axis=0)
    base = similarity_score(q, train).score
    shift = np.array([3.0, -2.0, 11.0])
    moved = similarity_score(q + shift, [t + shift for t in train]).score
    assert moved == pytest.approx(base, rel=1e-9)


def test_batch_report_identity_matching():
    train = [line([0, float(i), 0], [1, float(i), 0]) for i in range(5)]
    rep = batch_report([t.copy() for t in train], train)
    assert len(rep.reports) == 5
    assert np.all(rep.scores == 1.0)
    assert all(r.nearest_id == r.query_id for r in rep.reports)
    assert rep.modal_share == pytest.approx(1 / 5)


def test_batch_report_empty_queries_rejected():
    with pytest.raises(ValueError, match="no queries"):
        batch_report([], [line([0, 0, 0], [1, 0, 0])])


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        resample_arclength(np.zeros((1, 3)), 8)
    with pytest.raises(ValueError):
        traj_distance(np.zeros((0, 3)), np.zeros((5, 3)))


def test_zero_length_trajectory_resamples_to_repeats():
    still = np.tile([1.0, 2.0, 3.0], (4, 1))
    out = resample_arclength(still, 7)
    assert out.shape == (7, 3)
    assert np.all(out == still[0])


def test_positions_of_strips_non_spatial_columns():
    acts = np.arange(40, dtype=float).reshape(5, 8)
    assert positions_of(acts).shape == (5, 3)
    with pytest.raises(ValueError):
        positions_of(np.zeros((4, 2)))


def test_per_trajectory_vector_matches_definition():
    train = [line([0, 0, 0], [1, 0, 0]), line([0, 1, 0], [1, 1, 0]),
             line([0, 2, 0], [1, 2, 0])]
    q = line([0, 0.1, 0], [1, 0.1, 0])
    rep = similarity_score(q, train)
    for j, t in enumerate(train):
        expect = 1 - oracle_distance(q, t) / rep.s2
        assert rep.per_trajectory[j] == pytest.approx(expect, rel=1e-9)
