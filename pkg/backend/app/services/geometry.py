"""Signed distance and Cartesian grid construction for planar domains."""
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from app.core.errors import DisconnectedInterior, FeatureTooSmall
from app.core.logging import setup_logging
from app.models.domain import Annulus, Disk, DomainSpec, Polygon, Rectangle

logger = setup_logging("geometry")

# Nodes this close to the boundary (relative to h) count as boundary points.
ON_BOUNDARY = 1e-9
MIN_FEATURE_NODES = 16
MIN_RECTANGLE_NODES = 4

# Arm order used throughout: east, west, north, south.
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def signed_distance(spec: DomainSpec, x: Any) -> np.ndarray:
    """Signed Euclidean distance to the boundary: negative inside, positive outside.

    Accepts a single point or an array of shape (..., 2).
    """
    pts = np.asarray(x, dtype=float)
    if isinstance(spec, Disk):
        return np.hypot(pts[..., 0] - spec.center[0], pts[..., 1] - spec.center[1]) - spec.radius
    if isinstance(spec, Annulus):
        rho = np.hypot(pts[..., 0] - spec.center[0], pts[..., 1] - spec.center[1])
        return np.maximum(rho - spec.r_outer, spec.r_inner - rho)
    if isinstance(spec, Rectangle):
        lo = np.asarray(spec.corner_min)
        hi = np.asarray(spec.corner_max)
        q = np.abs(pts - 0.5 * (lo + hi)) - 0.5 * (hi - lo)
        outside = np.hypot(np.maximum(q[..., 0], 0.0), np.maximum(q[..., 1], 0.0))
        return outside + np.minimum(np.maximum(q[..., 0], q[..., 1]), 0.0)
    if isinstance(spec, Polygon):
        return _polygon_signed_distance(spec, pts)
    raise TypeError(f"unsupported domain: {type(spec).__name__}")


def _polygon_signed_distance(spec: Polygon, pts: np.ndarray) -> np.ndarray:
    verts = np.asarray(spec.vertices, dtype=float)
    a = verts
    b = np.roll(verts, -1, axis=0)
    px = pts[..., 0][..., None]
    py = pts[..., 1][..., None]
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    wx, wy = px - a[:, 0], py - a[:, 1]
    s = np.clip((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0)
    dist = np.hypot(wx - s * ex, wy - s * ey).min(axis=-1)

    # winding number
    is_left = ex * wy - ey * wx
    up = (a[:, 1] <= py) & (b[:, 1] > py) & (is_left > 0)
    down = (a[:, 1] > py) & (b[:, 1] <= py) & (is_left < 0)
    winding = up.sum(axis=-1) - down.sum(axis=-1)
    return np.where(winding != 0, -dist, dist)


def _circle_hits(center: tuple[float, float], radius: float, pts: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Smallest positive ray parameter at which pts + t*e meets the circle."""
    rel = pts - np.asarray(center)
    b = rel @ e
    c = np.einsum("ij,ij->i", rel, rel) - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        root = np.sqrt(disc)
    t_minus = -b - root
    t_plus = -b + root
    t = np.where(t_minus > 0, t_minus, t_plus)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _segment_hits(verts: np.ndarray, pts: np.ndarray, e: np.ndarray) -> np.ndarray:
    a = verts
    b = np.roll(verts, -1, axis=0)
    seg = b - a
    # Solve pts + t e = a + s seg for (t, s).
    denom = e[0] * seg[:, 1] - e[1] * seg[:, 0]
    rx = a[:, 0][None, :] - pts[:, 0][:, None]
    ry = a[:, 1][None, :] - pts[:, 1][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rx * seg[:, 1] - ry * seg[:, 0]) / denom
        s = (rx * e[1] - ry * e[0]) / denom
    ok = (denom != 0) & (s >= 0) & (s <= 1) & (t > 0)
    return np.where(ok, t, np.inf).min(axis=1)


def axis_hits(spec: DomainSpec, pts: np.ndarray, direction: tuple[int, int]) -> np.ndarray:
    """First boundary crossing along an axis direction, exact for every variant."""
    e = np.asarray(direction, dtype=float)
    if isinstance(spec, Disk):
        return _circle_hits(spec.center, spec.radius, pts, e)
    if isinstance(spec, Annulus):
        return np.minimum(
            _circle_hits(spec.center, spec.r_outer, pts, e),
            _circle_hits(spec.center, spec.r_inner, pts, e),
        )
    if isinstance(spec, Rectangle):
        lo = np.asarray(spec.corner_min)
        hi = np.asarray(spec.corner_max)
        axis = 0 if direction[0] != 0 else 1
        wall = hi[axis] if sum(direction) > 0 else lo[axis]
        return np.abs(wall - pts[:, axis])
    if isinstance(spec, Polygon):
        return _segment_hits(np.asarray(spec.vertices, dtype=float), pts, e)
    raise TypeError(f"unsupported domain: {type(spec).__name__}")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform Cartesian grid over a domain with Shortley-Weller arm data.

    Unknowns are the nodes strictly inside the domain. ``arms`` holds the
    fractions (theta_E, theta_W, theta_N, theta_S) of h to the next node or
    boundary cut; ``neighbors`` holds the unknown index of each neighbor or -1.
    """

    spec: DomainSpec
    h: float
    xs: np.ndarray
    ys: np.ndarray
    index: np.ndarray
    nodes: np.ndarray
    ij: np.ndarray
    arms: np.ndarray
    neighbors: np.ndarray
    boundary_adjacent: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_unknowns(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.index.shape  # type: ignore[return-value]

    @property
    def n_interior(self) -> int:
        return int((~self.boundary_adjacent).sum())

    def to_lattice(self, values: np.ndarray) -> np.ndarray:
        """Scatter unknown values onto the full lattice, zero elsewhere."""
        out = np.zeros(self.shape)
        out[self.ij[:, 0], self.ij[:, 1]] = values
        return out


def _check_feature(spec: DomainSpec, h: float, min_feature_nodes: int) -> None:
    size = spec.feature_size()
    required = MIN_RECTANGLE_NODES if isinstance(spec, Rectangle) else min_feature_nodes
    if size / h < required * (1 - 1e-12):
        raise FeatureTooSmall(
            f"{spec.kind}: feature {size:.6g} spans {size / h:.2f} spacings, need {required}",
            feature=size,
            h=h,
        )


def build_grid(spec: DomainSpec, h: float, min_feature_nodes: int = MIN_FEATURE_NODES) -> Grid:
    """Build the grid of unknowns with cut-cell arm fractions.

    Args:
        spec: Domain to discretize.
        h: Grid spacing.
        min_feature_nodes: Spacings required across the smallest curved feature.

    Returns:
        Immutable Grid.

    Raises:
        FeatureTooSmall: The smallest feature is under-resolved.
        DisconnectedInterior: The unknowns do not form one edge-connected set.
    """
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    _check_feature(spec, h, min_feature_nodes)

    (x0, y0), (x1, y1) = spec.bounding_box()
    nx = int(np.floor((x1 - x0) / h + 1e-9)) + 1
    ny = int(np.floor((y1 - y0) / h + 1e-9)) + 1
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    coords = np.stack([X, Y], axis=-1)
    dist = signed_distance(spec, coords)
    inside = dist < -ON_BOUNDARY * h

    index = np.full(inside.shape, -1, dtype=np.int64)
    n = int(inside.sum())
    index[inside] = np.arange(n)
    ij = np.argwhere(inside)
    nodes = coords[inside]

    arms = np.ones((n, 4))
    neighbors = np.full((n, 4), -1, dtype=np.int64)
    for k, (dx, dy) in enumerate(DIRECTIONS):
        hit = axis_hits(spec, nodes, (dx, dy)) / h
        theta = np.minimum(hit, 1.0)
        cut = theta < 1.0 - 1e-12
        theta[~cut] = 1.0
        iy = np.clip(ij[:, 0] + dy, 0, ny - 1)
        ix = np.clip(ij[:, 1] + dx, 0, nx - 1)
        nb = index[iy, ix]
        nb[cut] = -1
        arms[:, k] = theta
        neighbors[:, k] = nb

    boundary_adjacent = (neighbors < 0).any(axis=1)
    _check_connected(neighbors, n, spec)

    logger.info(
        "grid built: %s h=%.6g unknowns=%d boundary_adjacent=%d",
        spec.kind,
        h,
        n,
        int(boundary_adjacent.sum()),
        extra={"h": h},
    )
    return Grid(
        spec=spec,
        h=float(h),
        xs=xs,
        ys=ys,
        index=index,
        nodes=nodes,
        ij=ij,
        arms=arms,
        neighbors=neighbors,
        boundary_adjacent=boundary_adjacent,
    )


def _check_connected(neighbors: np.ndarray, n: int, spec: DomainSpec) -> None:
    if n == 0:
        raise DisconnectedInterior(f"{spec.kind}: grid has no interior nodes")
    rows, cols = np.nonzero(neighbors >= 0)
    graph = coo_matrix(
        (np.ones(rows.size), (rows, neighbors[rows, cols])), shape=(n, n)
    )
    n_components, _ = connected_components(graph, directed=False)
    if n_components != 1:
        raise DisconnectedInterior(
            f"{spec.kind}: interior splits into {n_components} components",
            components=n_components,
        )
