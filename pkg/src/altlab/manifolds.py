"""1D manifolds embedded in the plane: star, ellipse, rectangle, heart.

Every shape provides arc-length-uniform sampling (points land exactly on the
curve; uniformity is in perimeter measure) and a dense boundary
discretization used for chamfer-style metrics. Polygonal shapes sample
segments exactly; smooth shapes invert a fine cumulative arc-length table and
then evaluate the exact parametric curve at the recovered parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TABLE = 8192  # arc-length table resolution for smooth curves


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Manifold2D:
    kind = "base"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n points uniform in arc length, shape (n, 2)."""
        if n < 1:
            raise ShapeError("need n >= 1 samples")
        u = rng.uniform(0.0, self.perimeter(), size=n)
        return self.at_arclength(u)

    def dense_boundary(self, m: int = 10000) -> np.ndarray:
        u = np.linspace(0.0, self.perimeter(), m, endpoint=False)
        return self.at_arclength(u)

    def perimeter(self) -> float:
        raise NotImplementedError

    def at_arclength(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Polygon(Manifold2D):
    """Closed polyline; arc-length sampling walks the segments exactly."""

    def _vertices(self) -> np.ndarray:
        raise NotImplementedError

    def _segments(self):
        v = self._vertices()
        nxt = np.roll(v, -1, axis=0)
        lengths = np.linalg.norm(nxt - v, axis=1)
        if np.any(lengths <= 0):
            raise ShapeError(f"{self.kind}: degenerate edge of zero length")
        return v, nxt, lengths

    def perimeter(self) -> float:
        return float(self._segments()[2].sum())

    def at_arclength(self, u):
        v, nxt, lengths = self._segments()
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        u = np.asarray(u, dtype=np.float64) % cum[-1]
        seg = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(lengths) - 1)
        t = (u - cum[seg]) / lengths[seg]
        return v[seg] + t[:, None] * (nxt[seg] - v[seg])


@dataclass(frozen=True)
class Star(_Polygon):
    outer_radius: float = 1.0
    inner_radius: float = 0.45
    points: int = 5
    kind = "star"

    def _vertices(self):
        if self.outer_radius <= 0 or self.inner_radius <= 0:
            raise ShapeError("star radii must be positive")
        if self.inner_radius >= self.outer_radius:
            raise ShapeError("star inner radius must be smaller than outer")
        if self.points < 2:
            raise ShapeError("star needs at least 2 points")
        k = np.arange(2 * self.points)
        ang = np.pi / 2.0 + np.pi * k / self.points
        r = np.where(k % 2 == 0, self.outer_radius, self.inner_radius)
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


@dataclass(frozen=True)
class Rectangle(_Polygon):
    width: float = 2.0
    height: float = 1.2
    kind = "rectangle"

    def _vertices(self):
        if self.width <= 0 or self.height <= 0:
            raise ShapeError("rectangle sides must be positive")
        w, h = self.width / 2.0, self.height / 2.0
        return np.array([[w, h], [-w, h], [-w, -h], [w, -h]])


class _Parametric(Manifold2D):
    """Smooth closed curve; arc length inverted through a dense table."""

    def _point(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _table(self):
        t = np.linspace(0.0, 2.0 * np.pi, _TABLE + 1)
        pts = self._point(t)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return t, cum

    def perimeter(self) -> float:
        return float(self._table()[1][-1])

    def at_arclength(self, u):
        t, cum = self._table()
        u = np.asarray(u, dtype=np.float64) % cum[-1]
        return self._point(np.interp(u, cum, t))


@dataclass(frozen=True)
class Ellipse(_Parametric):
    semi_x: float = 1.3
    semi_y: float = 0.8
    kind = "ellipse"

    def _point(self, t):
        if self.semi_x <= 0 or self.semi_y <= 0:
            raise ShapeError("ellipse semi-axes must be positive")
        return np.stack([self.semi_x * np.cos(t), self.semi_y * np.sin(t)], axis=-1)


@dataclass(frozen=True)
class Heart(_Parametric):
    scale: float = 1.0
    kind = "heart"

    def _point(self, t):
        if self.scale <= 0:
            raise ShapeError("heart scale must be positive")
        s = self.scale / 17.0
        x = 16.0 * np.sin(t) ** 3
        y = 13.0 * np.cos(t) - 5.0 * np.cos(2 * t) - 2.0 * np.cos(3 * t) - np.cos(4 * t)
        return np.stack([s * x, s * y], axis=-1)


SHAPES = {"star": Star, "ellipse": Ellipse, "rectangle": Rectangle, "heart": Heart}


def make_manifold(kind: str, **params) -> Manifold2D:
    if kind not in SHAPES:
        raise ShapeError(f"unknown manifold {kind!r}; choose from {sorted(SHAPES)}")
    return SHAPES[kind](**params)


def sample_manifold(m: Manifold2D, n: int, rng: np.random.Generator) -> np.ndarray:
    return m.sample(n, rng)
