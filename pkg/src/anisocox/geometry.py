"""Windows, point patterns, deformations and Fry processes.

Coordinates are stored as ``(n, 2)`` float arrays.  Linear maps act on
column vectors, so a map ``T`` sends a row-stacked array ``pts`` to
``pts @ T.T``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class WindowError(ValueError):
    """Raised for degenerate windows or erosions that leave nothing behind."""


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Window:
    """Axis-aligned rectangular observation window."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "x_max", "y_min", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise WindowError(f"degenerate window {self}")

    @classmethod
    def unit(cls):
        return cls(0.0, 1.0, 0.0, 1.0)

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def vertices(self):
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
                [self.x_min, self.y_max],
            ]
        )

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= self.x_min)
            & (pts[:, 0] <= self.x_max)
            & (pts[:, 1] >= self.y_min)
            & (pts[:, 1] <= self.y_max)
        )

    def boundary_distance(self, pts):
        pts = np.atleast_2d(pts)
        return np.minimum.reduce(
            [
                pts[:, 0] - self.x_min,
                self.x_max - pts[:, 0],
                pts[:, 1] - self.y_min,
                self.y_max - pts[:, 1],
            ]
        )

    def overlap(self, u):
        """Area of ``W ∩ (W + u)`` for one or many shift vectors ``u``."""
        u = np.asarray(u, dtype=float)
        dx, dy = u[..., 0], u[..., 1]
        return np.maximum(0.0, self.width - np.abs(dx)) * np.maximum(0.0, self.height - np.abs(dy))

    def erode(self, R):
        if R < 0:
            raise ValueError("erosion radius must be nonnegative")
        if 2 * R >= min(self.width, self.height):
            raise WindowError(f"erosion by R={R} leaves an empty window")
        return Window(self.x_min + R, self.x_max - R, self.y_min + R, self.y_max - R)

    def translate(self, shift):
        dx, dy = shift
        return Window(self.x_min + dx, self.x_max + dx, self.y_min + dy, self.y_max + dy)

    def to_dict(self):
        return {"xmin": self.x_min, "xmax": self.x_max, "ymin": self.y_min, "ymax": self.y_max}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["xmin"], d["xmax"], d["ymin"], d["ymax"])
        except KeyError as exc:
            raise ValueError(f"window JSON is missing field {exc}") from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class TransformedWindow:
    """Image of a rectangular window under an invertible linear map.

    The region is a parallelogram.  Translation overlaps are exact:
    ``|T W ∩ (T W + T u)| = |det T| |W ∩ (W + u)|``, so no generic polygon
    clipping is needed.
    """

    base: Window
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (2, 2) or abs(np.linalg.det(m)) == 0.0:
            raise WindowError("transform must be an invertible 2x2 matrix")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        inv = np.linalg.inv(m)
        inv.setflags(write=False)
        object.__setattr__(self, "_inverse", inv)

    @property
    def determinant(self):
        return abs(float(np.linalg.det(self.matrix)))

    @property
    def area(self):
        return self.base.area * self.determinant

    @property
    def vertices(self):
        return self.base.vertices @ self.matrix.T

    def polygon_area(self):
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        back = pts @ self._inverse.T
        b = self.base
        eps = 1e-12 * max(b.width, b.height, 1.0)
        return (
            (back[:, 0] >= b.x_min - eps)
            & (back[:, 0] <= b.x_max + eps)
            & (back[:, 1] >= b.y_min - eps)
            & (back[:, 1] <= b.y_max + eps)
        )

    def boundary_distance(self, pts):
        """Distance from each point to the nearest polygon edge."""
        pts = np.atleast_2d(pts)
        v = self.vertices
        best = np.full(len(pts), np.inf)
        for k in range(len(v)):
            a, b = v[k], v[(k + 1) % len(v)]
            ab = b - a
            t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
            proj = a + t[:, None] * ab
            best = np.minimum(best, np.hypot(*(pts - proj).T))
        return np.where(self.contains(pts), best, 0.0)

    def overlap(self, u):
        u = np.asarray(u, dtype=float)
        return self.base.overlap(u @ self._inverse.T) * self.determinant


def as_points(pts):
    arr = np.asarray(pts, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Points of a single type inside a window."""

    points: np.ndarray
    window: Window | TransformedWindow
    type_id: int = 1

    def __post_init__(self):
        pts = np.array(as_points(self.points), dtype=float)
        if len(pts) and not self.window.contains(pts).all():
            bad = int(np.sum(~self.window.contains(pts)))
            raise ValueError(f"{bad} point(s) of type {self.type_id} lie outside the window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def n(self):
        return len(self.points)

    @property
    def intensity(self):
        return self.n / self.window.area

    def translate(self, shift):
        if not isinstance(self.window, Window):
            raise TypeError("only rectangular patterns can be translated")
        return PointPattern(self.points + np.asarray(shift), self.window.translate(shift), self.type_id)


@dataclass(frozen=True, eq=False)
class MultiTypePattern:
    """A marked pattern with components ordered by type."""

    components: tuple
    window: Window | TransformedWindow

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a multitype pattern needs at least one component")
        for c in comps:
            if c.window is not self.window and c.window != self.window:
                raise ValueError("all components must share the pattern window")
        object.__setattr__(self, "components", comps)

    @property
    def P(self):
        return len(self.components)

    @property
    def counts(self):
        return [c.n for c in self.components]

    @property
    def type_ids(self):
        return [c.type_id for c in self.components]

    def __getitem__(self, p):
        return self.components[p]

    @classmethod
    def from_arrays(cls, types, xy, window, type_order=None):
        types = np.asarray(types)
        xy = as_points(xy)
        order = list(type_order) if type_order is not None else sorted(set(types.tolist()))
        comps = tuple(PointPattern(xy[types == t], window, int(t)) for t in order)
        return cls(comps, window)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["type", "x", "y"])
            for c in self.components:
                for x, y in c.points:
                    w.writerow([c.type_id, repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, window, type_order=None):
        types, xy = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["type", "x", "y"]:
                raise ValueError(f"{path}: line 1: expected header 'type,x,y', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
                try:
                    types.append(int(row[0]))
                    xy.append((float(row[1]), float(row[2])))
                except ValueError:
                    raise ValueError(f"{path}: line {lineno}: cannot parse {row}") from None
        return cls.from_arrays(np.array(types, dtype=int), np.array(xy).reshape(-1, 2), window, type_order)


@dataclass(frozen=True)
class Deformation:
    """Ellipse orientation ``theta`` (radians) and axis ratio ``zeta``.

    The deformation matrix is ``R_theta diag(1, zeta^2) R_theta^T``.
    """

    theta: float
    zeta: float

    def __post_init__(self):
        if not (self.zeta > 0 and math.isfinite(self.zeta)):
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        object.__setattr__(self, "theta", float(self.theta) % math.pi)
        object.__setattr__(self, "zeta", float(self.zeta))

    def _power(self, e):
        r = rotation(self.theta)
        return r @ np.diag([1.0, self.zeta ** e]) @ r.T

    @property
    def matrix(self):
        return self._power(2.0)

    @property
    def sqrt(self):
        return self._power(1.0)

    @property
    def inv_sqrt(self):
        return self._power(-1.0)

    @property
    def isotropising_map(self):
        """Linear map sending the ellipse major axis to the abscissa and
        stretching the minor axis by ``1/zeta``."""
        return np.diag([1.0, 1.0 / self.zeta]) @ rotation(self.theta).T

    def normalized(self):
        """Return ``(deformation, scale)`` with ``zeta <= 1``.

        A ratio above one is equivalent to the perpendicular orientation with
        ratio ``1/zeta`` once all lengths are multiplied by ``scale = zeta``.
        """
        if self.zeta <= 1.0:
            return self, 1.0
        return Deformation(self.theta + math.pi / 2, 1.0 / self.zeta), self.zeta

    @classmethod
    def from_matrix(cls, sigma, tol=1e-10):
        """Recover ``(theta, zeta)`` from a symmetric matrix of the form above."""
        sigma = np.asarray(sigma, dtype=float)
        w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
        if abs(w[1] - 1.0) > tol or w[0] <= 0:
            raise ValueError(f"matrix eigenvalues {w} are not (zeta^2, 1)")
        major = v[:, 1]
        return cls(math.atan2(major[1], major[0]), math.sqrt(min(w[0], 1.0)))


def deformation_matrix(d):
    return d.matrix


def isotropise(pattern, window, d):
    """Map a pattern and its window through the isotropising map of ``d``."""
    if d.zeta == 0:
        raise ValueError("zeta must be nonzero")
    t = d.isotropising_map
    base = window if isinstance(window, Window) else None
    if base is None:
        raise TypeError("isotropise expects a rectangular window")
    region = TransformedWindow(base, t)
    return PointPattern(pattern.points @ t.T, region, pattern.type_id), region


def deisotropise(points, d):
    """Inverse of the isotropising map applied to raw coordinates."""
    return as_points(points) @ np.linalg.inv(d.isotropising_map).T


@dataclass(frozen=True, eq=False)
class FryProcess:
    vectors: np.ndarray
    type_pair: tuple = (1, 1)

    def __len__(self):
        return len(self.vectors)


def _same(a, b):
    return a is b or (a.type_id == b.type_id and a.n == b.n and np.array_equal(a.points, b.points))


def pair_differences(a, b, r_max, same=None):
    """Ordered pairs ``(i, j)`` with ``0 < |a_i - b_j| <= r_max``.

    Returns ``(i, j, a_i - b_j)``.  When ``a`` and ``b`` are the same pattern,
    the pair ``(i, i)`` is excluded and both orderings appear.
    """
    pa = a.points if hasattr(a, "points") else as_points(a)
    pb = b.points if hasattr(b, "points") else as_points(b)
    if same is None:
        same = hasattr(a, "points") and hasattr(b, "points") and _same(a, b)
    if len(pa) == 0 or len(pb) == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2))
    if math.isinf(r_max):
        i, j = np.meshgrid(np.arange(len(pa)), np.arange(len(pb)), indexing="ij")
        i, j = i.ravel(), j.ravel()
    elif same:
        pairs = cKDTree(pa).query_pairs(r_max, output_type="ndarray")
        i = np.concatenate([pairs[:, 0], pairs[:, 1]])
        j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    else:
        sdm = cKDTree(pa).sparse_distance_matrix(cKDTree(pb), r_max, output_type="coo_matrix")
        i, j = sdm.row.astype(int), sdm.col.astype(int)
    order = np.lexsort((j, i))
    i, j = i[order], j[order]
    d = pa[i] - pb[j]
    norm = np.hypot(d[:, 0], d[:, 1])
    keep = (norm > 0) & (norm <= r_max)
    if same:
        keep &= i != j
    return i[keep], j[keep], d[keep]


def fry_points(a, b, r_max=math.inf):
    """Difference vectors with norm in ``(0, r_max]``, symmetric about the origin."""
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    same = _same(a, b)
    _, _, d = pair_differences(a, b, r_max, same=same)
    if not same:
        d = np.concatenate([d, -d])
    return FryProcess(d, (a.type_id, b.type_id))


def translation_overlap(w, u):
    return w.overlap(u)


def erode(w, R):
    return w.erode(R)


def count_interior(pattern, window, R):
    """Number of points further than ``R`` from the window boundary."""
    pts = pattern.points if hasattr(pattern, "points") else as_points(pattern)
    if len(pts) == 0:
        return 0
    return int(np.sum(window.boundary_distance(pts) > R))


def read_window(path):
    return Window.from_json(path)


def write_window(window, path):
    Path(path).write_text(json.dumps(window.to_dict(), indent=2) + "\n")
