"""Planar domain specifications."""
import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

Point = tuple[float, float]


class _Domain(BaseModel):
    model_config = ConfigDict(frozen=True)

    def feature_size(self) -> float:
        raise NotImplementedError

    def bounding_box(self) -> tuple[Point, Point]:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        (x0, y0), (x1, y1) = self.bounding_box()
        return math.hypot(x1 - x0, y1 - y0)


class Disk(_Domain):
    """Disk of given center and radius."""

    kind: Literal["disk"] = "disk"
    center: Point = (0.0, 0.0)
    radius: float = Field(default=1.0, gt=0)

    def feature_size(self) -> float:
        return self.radius

    def bounding_box(self) -> tuple[Point, Point]:
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r), (cx + r, cy + r)

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius


class Annulus(_Domain):
    """Concentric annulus r_inner < |x - center| < r_outer."""

    kind: Literal["annulus"] = "annulus"
    center: Point = (0.0, 0.0)
    r_inner: float = Field(gt=0)
    r_outer: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_radii(self) -> "Annulus":
        if not self.r_inner < self.r_outer:
            raise ValueError("annulus requires 0 < r_inner < r_outer")
        return self

    def feature_size(self) -> float:
        return self.r_outer - self.r_inner

    def bounding_box(self) -> tuple[Point, Point]:
        cx, cy = self.center
        r = self.r_outer
        return (cx - r, cy - r), (cx + r, cy + r)

    @property
    def diameter(self) -> float:
        return 2.0 * self.r_outer


class Rectangle(_Domain):
    """Axis-aligned rectangle."""

    kind: Literal["rectangle"] = "rectangle"
    corner_min: Point
    corner_max: Point

    @model_validator(mode="after")
    def _check_corners(self) -> "Rectangle":
        if not (self.corner_min[0] < self.corner_max[0] and self.corner_min[1] < self.corner_max[1]):
            raise ValueError("rectangle requires corner_min < corner_max componentwise")
        return self

    def feature_size(self) -> float:
        return min(self.corner_max[0] - self.corner_min[0], self.corner_max[1] - self.corner_min[1])

    def bounding_box(self) -> tuple[Point, Point]:
        return self.corner_min, self.corner_max


class Polygon(_Domain):
    """Simple, positively oriented polygon (straight edges)."""

    kind: Literal["polygon"] = "polygon"
    vertices: list[Point] = Field(min_length=3)

    @field_validator("vertices")
    @classmethod
    def _check_simple(cls, vertices: list[Point]) -> list[Point]:
        n = len(vertices)
        area = 0.5 * sum(
            vertices[i][0] * vertices[(i + 1) % n][1] - vertices[(i + 1) % n][0] * vertices[i][1]
            for i in range(n)
        )
        if area <= 0:
            raise ValueError("polygon must be positively oriented (counter-clockwise)")
        for i in range(n):
            a, b = vertices[i], vertices[(i + 1) % n]
            if a == b:
                raise ValueError("polygon has a repeated vertex")
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or j == (i + 1) % n:
                    continue
                if _segments_intersect(a, b, vertices[j], vertices[(j + 1) % n]):
                    raise ValueError("polygon edges intersect (not simple)")
        return vertices

    def feature_size(self) -> float:
        n = len(self.vertices)
        return min(
            math.dist(self.vertices[i], self.vertices[(i + 1) % n]) for i in range(n)
        )

    def bounding_box(self) -> tuple[Point, Point]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return (min(xs), min(ys)), (max(xs), max(ys))


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    d1, d2 = _orient(c, d, a), _orient(c, d, b)
    d3, d4 = _orient(a, b, c), _orient(a, b, d)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_segment(p: Point, q: Point, r: Point) -> bool:
        return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])

    return (
        (d1 == 0 and on_segment(c, d, a))
        or (d2 == 0 and on_segment(c, d, b))
        or (d3 == 0 and on_segment(a, b, c))
        or (d4 == 0 and on_segment(a, b, d))
    )


DomainSpec = Annotated[Union[Disk, Annulus, Rectangle, Polygon], Field(discriminator="kind")]

domain_adapter: TypeAdapter[DomainSpec] = TypeAdapter(DomainSpec)
