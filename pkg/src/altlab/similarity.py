"""Trajectory distance and similarity scoring for memorization analysis.

The distance between two trajectories is the mean Euclidean distance between
matched points after both are resampled to a common number of points uniform
in arc length. The similarity score of a query against a training set is

    S = 1 - s(query, nearest) / s(nearest, second_nearest)

where nearest/second_nearest are the two training trajectories closest to the
query. S is exactly 1 when the query re-executes a training trajectory and
exactly 0.5 when it runs midway between the two closest ones. S is not
clamped; far-away queries legitimately score <= 0. The score measures recall
of training motions, not their quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateTrainingSet(ValueError):
    """Raised when the two nearest training trajectories coincide."""


def resample_arclength(points: np.ndarray, num_points: int) -> np.ndarray:
    """Resample a polyline (T, d) to `num_points` points equally spaced in
    arc length. A zero-length trajectory resamples to copies of its start."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("trajectory must be a (T>=2, d) array")
    if num_points < 2:
        raise ValueError("need at least 2 resample points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(pts[:1], num_points, axis=0)
    targets = np.linspace(0.0, total, num_points)
    out = np.empty((num_points, pts.shape[1]))
    for j in range(pts.shape[1]):
        out[:, j] = np.interp(targets, cum, pts[:, j])
    return out


def traj_distance(a: np.ndarray, b: np.ndarray, num_points: int = 64) -> float:
    """Mean Euclidean distance between index-matched points after arc-length
    resampling of both trajectories."""
    ra = resample_arclength(a, num_points)
    rb = resample_arclength(b, num_points)
    return float(np.mean(np.linalg.norm(ra - rb, axis=1)))


@dataclass
class SimilarityReport:
    query_id: int
    nearest_id: int
    second_id: int
    s1: float                      # distance(query, nearest)
    s2: float                      # distance(nearest, second nearest)
    score: float                   # 1 - s1/s2
    per_trajectory: np.ndarray = field(repr=False)  # score against every training trajectory

    def as_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "nearest_id": self.nearest_id,
            "second_id": self.second_id,
            "s1": self.s1,
            "s2": self.s2,
            "score": self.score,
            "per_trajectory": self.per_trajectory.tolist(),
        }


def similarity_score(query: np.ndarray, training: list[np.ndarray],
                     num_points: int = 64, query_id: int = 0,
                     train_ids: list[int] | None = None) -> SimilarityReport:
    """Score one query trajectory against the training set (>= 2 entries)."""
    if len(training) < 2:
        raise ValueError("similarity score needs at least 2 training trajectories")
    ids = list(train_ids) if train_ids is not None else list(range(len(training)))
    rq = resample_arclength(query, num_points)
    rtrain = [resample_arclength(t, num_points) for t in training]
    dists = np.array([np.mean(np.linalg.norm(rq - rt, axis=1)) for rt in rtrain])
    order = np.argsort(dists, kind="stable")
    i1, i2 = int(order[0]), int(order[1])
    s1 = float(dists[i1])
    s2 = float(np.mean(np.linalg.norm(rtrain[i1] - rtrain[i2], axis=1)))
    if s2 == 0.0:
        raise DegenerateTrainingSet(
            f"training trajectories {ids[i1]} and {ids[i2]} are duplicates (zero distance)")
    return SimilarityReport(
        query_id=query_id,
        nearest_id=ids[i1],
        second_id=ids[i2],
        s1=s1,
        s2=s2,
        score=1.0 - s1 / s2,
        per_trajectory=1.0 - dists / s2,
    )


@dataclass
class BatchSimilarity:
    reports: list[SimilarityReport]
    matched_counts: dict[int, int]
    modal_id: int
    modal_share: float

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.reports])

    def as_rows(self) -> list[dict]:
        return [r.as_dict() for r in self.reports]

    def summary(self) -> dict:
        scores = self.scores
        return {
            "queries": len(self.reports),
            "mean_score": float(scores.mean()),
            "min_score": float(scores.min()),
            "max_score": float(scores.max()),
            "modal_id": self.modal_id,
            "modal_share": self.modal_share,
            "matched_counts": {str(k): v for k, v in sorted(self.matched_counts.items())},
        }


def batch_report(queries: list[np.ndarray], training: list[np.ndarray],
                 num_points: int = 64,
                 train_ids: list[int] | None = None) -> BatchSimilarity:
    """Per-query similarity reports plus the matched-ID histogram."""
    if not queries:
        raise ValueError("no queries given")
    reports = [similarity_score(q, training, num_points, query_id=i, train_ids=train_ids)
               for i, q in enumerate(queries)]
    counts: dict[int, int] = {}
    for r in reports:
        counts[r.nearest_id] = counts.get(r.nearest_id, 0) + 1
    modal_id = max(sorted(counts), key=lambda k: counts[k])
    return BatchSimilarity(
        reports=reports,
        matched_counts=counts,
        modal_id=modal_id,
        modal_share=counts[modal_id] / len(reports),
    )


def positions_of(actions: np.ndarray) -> np.ndarray:
    """Extract the spatial columns of an action sequence (T, >=3); distance
    and similarity are computed on end-effector positions only."""
    arr = np.asarray(actions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 3:
        raise ValueError("action sequence must be (T, >=3)")
    return arr[:, :3]
