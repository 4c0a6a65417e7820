import math
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import Field, model_validator
from scipy.spatial import cKDTree

from .base import Shape
from .errors import DomainError
from .fem import StructuredTriMesh

Point = tuple[float, float]


def _convex_polygon_distance(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Signed distance to a convex polygon with counter-clockwise vertices."""
    edges = np.roll(vertices, -1, axis=0) - vertices
    rel = points[:, None, :] - vertices[None, :, :]
    t = np.clip(np.einsum("nvi,vi->nv", rel, edges) / np.sum(edges**2, axis=1), 0.0, 1.0)
    dist = np.linalg.norm(rel - t[..., None] * edges, axis=-1).min(axis=1)
    cross = edges[:, 0] * rel[..., 1] - edges[:, 1] * rel[..., 0]
    inside = np.all(cross >= 0.0, axis=1)
    return np.where(inside, dist, -dist)


def _rotate(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return points @ np.array([[c, s], [-s, c]])


class Circle(Shape):
    kind: Literal["circle"] = "circle"
    center: Point = (0.0, 0.0)
    radius: float = Field(gt=0.0)

    def signed_distance(self, points):
        return self.radius - np.linalg.norm(points - np.asarray(self.center), axis=-1)

    def bounding_box(self):
        cx, cy = self.center
        return cx - self.radius, cx + self.radius, cy - self.radius, cy + self.radius


class Square(Shape):
    kind: Literal["square"] = "square"
    center: Point = (0.0, 0.0)
    half_width: float = Field(gt=0.0)
    rotation: float = 0.0

    def vertices(self) -> np.ndarray:
        hw = self.half_width
        corners = np.array([[-hw, -hw], [hw, -hw], [hw, hw], [-hw, hw]])
        return _rotate(corners, self.rotation) + np.asarray(self.center)

    def signed_distance(self, points):
        return _convex_polygon_distance(points, self.vertices())

    def bounding_box(self):
        v = self.vertices()
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()


class Hexagon(Shape):
    """Regular hexagon with circumradius `radius`; rotation 0 puts a vertex on the x axis."""

    kind: Literal["hexagon"] = "hexagon"
    center: Point = (0.0, 0.0)
    radius: float = Field(gt=0.0)
    rotation: float = 0.0

    def vertices(self) -> np.ndarray:
        angles = self.rotation + np.pi / 3.0 * np.arange(6)
        return np.asarray(self.center) + self.radius * np.column_stack(
            [np.cos(angles), np.sin(angles)]
        )

    def signed_distance(self, points):
        return _convex_polygon_distance(points, self.vertices())

    def bounding_box(self):
        v = self.vertices()
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()


class Star(Shape):
    """
    Star with boundary r(theta) = r_inner + (r_outer - r_inner) (1/2 + 1/2 cos(petals (theta - rotation))).

    Distances are measured to a dense sampling of the boundary curve.
    """

    kind: Literal["star"] = "star"
    center: Point = (0.0, 0.0)
    petals: int = Field(default=4, ge=2)
    r_inner: float = Field(default=0.35, gt=0.0)
    r_outer: float = Field(default=0.65, gt=0.0)
    rotation: float = 0.0
    samples: int = Field(default=4096, ge=64)

    @model_validator(mode="after")
    def _check_radii(self):
        if self.r_outer <= self.r_inner:
            raise ValueError("r_outer must exceed r_inner")
        return self

    def radius_at(self, theta):
        wave = 0.5 + 0.5 * np.cos(self.petals * (np.asarray(theta) - self.rotation))
        return self.r_inner + (self.r_outer - self.r_inner) * wave

    def boundary(self) -> np.ndarray:
        theta = np.linspace(0.0, 2.0 * np.pi, self.samples, endpoint=False)
        r = self.radius_at(theta)
        return np.asarray(self.center) + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])

    def signed_distance(self, points):
        dist, _ = cKDTree(self.boundary()).query(points)
        rel = points - np.asarray(self.center)
        inside = np.hypot(rel[:, 0], rel[:, 1]) < self.radius_at(np.arctan2(rel[:, 1], rel[:, 0]))
        return np.where(inside, dist, -dist)

    def bounding_box(self):
        cx, cy = self.center
        return cx - self.r_outer, cx + self.r_outer, cy - self.r_outer, cy + self.r_outer


class ShapeUnion(Shape):
    kind: Literal["union"] = "union"
    shapes: list["ShapeSpec"] = Field(min_length=2)

    def signed_distance(self, points):
        return np.max([s.signed_distance(points) for s in self.shapes], axis=0)

    def bounding_box(self):
        boxes = [s.bounding_box() for s in self.shapes]
        if any(b is None for b in boxes):
            return None
        boxes = np.asarray(boxes)
        return boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max()


class FullDomain(Shape):
    kind: Literal["full_domain"] = "full_domain"

    def signed_distance(self, points):
        return 1.0 - np.max(np.abs(points), axis=-1)

    def bounding_box(self):
        return None


class Constant(Shape):
    """Pure phase y = sign everywhere."""

    kind: Literal["constant"] = "constant"
    sign: Literal[-1, 1] = 1

    def signed_distance(self, points):
        return np.full(len(points), self.sign * np.inf)

    def bounding_box(self):
        return None


ShapeSpec = Annotated[
    Union[Circle, Square, Hexagon, Star, ShapeUnion, FullDomain, Constant],
    Field(discriminator="kind"),
]
ShapeUnion.model_rebuild()


def fits_inside(shape: Shape, margin: float = 0.0) -> bool:
    box = shape.bounding_box()
    if box is None:
        return True
    xmin, xmax, ymin, ymax = box
    lo, hi = -1.0 + margin, 1.0 - margin
    return lo <= xmin and xmax <= hi and lo <= ymin and ymax <= hi


def make_field(shape: Shape, mesh: StructuredTriMesh, eps: float) -> np.ndarray:
    """tanh(sd / (sqrt(2) eps)) at the mesh nodes."""
    if not fits_inside(shape):
        raise DomainError(f"{shape.kind} shape does not fit inside (-1, 1)^2")
    sd = shape.signed_distance(mesh.coords)
    return np.tanh(sd / (math.sqrt(2.0) * eps))
