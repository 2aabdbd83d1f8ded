"""
Vectorised planar geometry used by the metric suite.

All functions broadcast over leading dimensions so a whole candidate set
(``M`` trajectories × ``N`` steps) is handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]

# Points processed per block when projecting onto polylines.
PROJECTION_CHUNK = 8192


def unit_vectors(heading: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Forward and left unit vectors, each of shape ``heading.shape + (2,)``."""
    h = np.asarray(heading, dtype=np.float64)
    c, s = np.cos(h), np.sin(h)
    return np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)


def box_corners(center: ArrayLike, heading: ArrayLike, length: float, width: float) -> FloatArray:
    """
    Corners of oriented boxes in counter-clockwise order.

    Order: front-left, rear-left, rear-right, front-right.

    Args:
        center: ``(..., 2)`` box centers
        heading: ``(...)`` box yaw
        length, width: Box extents (m)

    Returns:
        ``(..., 4, 2)`` corner coordinates
    """
    c = np.asarray(center, dtype=np.float64)
    fwd, left = unit_vectors(heading)
    hl, hw = length / 2.0, width / 2.0
    signs = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.stack([c + a * fwd + b * left for a, b in signs], axis=-2)


def _separating_axes(h1: ArrayLike, h2: ArrayLike) -> FloatArray:
    """The four candidate axes of two boxes, shape ``(..., 4, 2)``."""
    f1, l1 = unit_vectors(h1)
    f2, l2 = unit_vectors(h2)
    f1, l1, f2, l2 = np.broadcast_arrays(f1, l1, f2, l2)
    return np.stack([f1, l1, f2, l2], axis=-2)


def _projected_radius(axes: FloatArray, heading: ArrayLike, length: float, width: float) -> FloatArray:
    """Half-extent of a box projected on each axis, shape ``(..., 4)``."""
    fwd, left = unit_vectors(heading)
    return length / 2.0 * np.abs(np.einsum("...ad,...d->...a", axes, fwd)) + width / 2.0 * np.abs(
        np.einsum("...ad,...d->...a", axes, left)
    )


def obb_overlap(
    c1: ArrayLike,
    h1: ArrayLike,
    size1: tuple[float, float],
    c2: ArrayLike,
    h2: ArrayLike,
    size2: tuple[float, float],
) -> BoolArray:
    """
    Separating-axis overlap test of two oriented boxes; touching counts as overlap.

    Args:
        c1, c2: ``(..., 2)`` centers (broadcastable)
        h1, h2: ``(...)`` headings
        size1, size2: ``(length, width)`` of each box

    Returns:
        Boolean overlap array of the broadcast shape
    """
    axes = _separating_axes(h1, h2)
    d = np.asarray(c2, dtype=np.float64) - np.asarray(c1, dtype=np.float64)
    dist = np.abs(np.einsum("...ad,...d->...a", axes, d))
    reach = _projected_radius(axes, h1, *size1) + _projected_radius(axes, h2, *size2)
    return np.all(dist <= reach + 1e-12, axis=-1)


def first_contact_time(
    c1: ArrayLike,
    h1: ArrayLike,
    v1: ArrayLike,
    size1: tuple[float, float],
    c2: ArrayLike,
    h2: ArrayLike,
    v2: ArrayLike,
    size2: tuple[float, float],
    horizon: float,
) -> FloatArray:
    """
    Earliest overlap time of two boxes translating at constant velocity.

    Orientations stay fixed, so every separating axis is fixed and the
    projected center distance is affine in time. Each axis yields an
    interval of overlapping times; their intersection with ``(0, horizon]``
    is exact.

    Args:
        c1, c2: ``(..., 2)`` centers at τ = 0
        h1, h2: ``(...)`` headings
        v1, v2: ``(..., 2)`` velocities
        size1, size2: ``(length, width)``
        horizon: Look-ahead (s)

    Returns:
        Contact time in ``(0, horizon]`` (``0`` stands for "already touching"),
        ``inf`` when the boxes stay apart
    """
    axes = _separating_axes(h1, h2)
    d0 = np.asarray(c2, dtype=np.float64) - np.asarray(c1, dtype=np.float64)
    dv = np.asarray(v2, dtype=np.float64) - np.asarray(v1, dtype=np.float64)
    p0 = np.einsum("...ad,...d->...a", axes, d0)
    q = np.einsum("...ad,...d->...a", axes, dv)
    r = _projected_radius(axes, h1, *size1) + _projected_radius(axes, h2, *size2) + 1e-12

    moving = np.abs(q) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(moving, (-r - p0) / q, 0.0)
        tb = np.where(moving, (r - p0) / q, 0.0)
    inside = np.abs(p0) <= r
    lo = np.where(moving, np.minimum(ta, tb), np.where(inside, -np.inf, np.inf))
    hi = np.where(moving, np.maximum(ta, tb), np.where(inside, np.inf, -np.inf))

    enter = np.max(lo, axis=-1)
    leave = np.min(hi, axis=-1)
    hit = (enter <= leave) & (leave > 0.0) & (enter <= horizon)
    return np.where(hit, np.maximum(enter, 0.0), np.inf)


def _orientation(a: FloatArray, b: FloatArray, c: FloatArray) -> FloatArray:
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _on_segment(a: FloatArray, b: FloatArray, p: FloatArray) -> BoolArray:
    return (
        (np.minimum(a[..., 0], b[..., 0]) - 1e-12 <= p[..., 0])
        & (p[..., 0] <= np.maximum(a[..., 0], b[..., 0]) + 1e-12)
        & (np.minimum(a[..., 1], b[..., 1]) - 1e-12 <= p[..., 1])
        & (p[..., 1] <= np.maximum(a[..., 1], b[..., 1]) + 1e-12)
    )


def segments_intersect(p1: ArrayLike, p2: ArrayLike, q1: ArrayLike, q2: ArrayLike) -> BoolArray:
    """
    Closed segment intersection (touching and collinear overlap count).

    Args:
        p1, p2: ``(..., 2)`` endpoints of the first segments
        q1, q2: ``(..., 2)`` endpoints of the second segments

    Returns:
        Boolean array of the broadcast leading shape
    """
    a, b, c, d = (np.asarray(v, dtype=np.float64) for v in (p1, p2, q1, q2))
    o1 = _orientation(a, b, c)
    o2 = _orientation(a, b, d)
    o3 = _orientation(c, d, a)
    o4 = _orientation(c, d, b)
    proper = (np.sign(o1) * np.sign(o2) < 0) & (np.sign(o3) * np.sign(o4) < 0)
    touch = (
        ((o1 == 0) & _on_segment(a, b, c))
        | ((o2 == 0) & _on_segment(a, b, d))
        | ((o3 == 0) & _on_segment(c, d, a))
        | ((o4 == 0) & _on_segment(c, d, b))
    )
    return proper | touch


@dataclass(frozen=True)
class Projection:
    """Nearest-segment projection of query points onto a polyline set."""

    distance: FloatArray
    signed_offset: FloatArray
    arc_length: FloatArray
    segment: NDArray[np.int64]


class PolylineIndex:
    """
    Segments of one or more polylines prepared for nearest-point queries.

    Attributes:
        starts: ``(S, 2)`` segment start points
        vectors: ``(S, 2)`` segment vectors
        lengths: ``(S,)`` segment lengths
        arc_start: ``(S,)`` arc length of each segment start along its polyline
        owner: ``(S,)`` index of the polyline owning each segment
    """

    def __init__(self, polylines: list[ArrayLike]) -> None:
        starts, vectors, arc_start, owner = [], [], [], []
        for i, line in enumerate(polylines):
            pts = np.asarray(line, dtype=np.float64)
            seg = np.diff(pts, axis=0)
            lengths = np.hypot(seg[:, 0], seg[:, 1])
            starts.append(pts[:-1])
            vectors.append(seg)
            arc_start.append(np.concatenate([[0.0], np.cumsum(lengths)[:-1]]))
            owner.append(np.full(len(seg), i, dtype=np.int64))
        self.starts = np.concatenate(starts) if starts else np.zeros((0, 2))
        self.vectors = np.concatenate(vectors) if vectors else np.zeros((0, 2))
        self.lengths = np.hypot(self.vectors[:, 0], self.vectors[:, 1])
        self.arc_start = np.concatenate(arc_start) if arc_start else np.zeros(0)
        self.owner = np.concatenate(owner) if owner else np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.starts.shape[0])

    def project(self, points: ArrayLike) -> Projection:
        """
        Project points onto their nearest segment.

        Ties go to the lowest segment index. The signed offset is positive to
        the left of the segment direction.

        Args:
            points: ``(..., 2)`` query points

        Returns:
            Projection with arrays of shape ``points.shape[:-1]``
        """
        pts = np.asarray(points, dtype=np.float64)
        lead = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        count = flat.shape[0]
        distance = np.empty(count)
        offset = np.empty(count)
        arc = np.empty(count)
        segment = np.empty(count, dtype=np.int64)
        safe_len2 = np.maximum(self.lengths**2, 1e-18)

        for lo in range(0, count, PROJECTION_CHUNK):
            block = flat[lo : lo + PROJECTION_CHUNK]
            rel = block[:, None, :] - self.starts[None, :, :]
            u = np.clip(np.einsum("psd,sd->ps", rel, self.vectors) / safe_len2, 0.0, 1.0)
            foot = self.starts[None, :, :] + u[..., None] * self.vectors[None, :, :]
            diff = block[:, None, :] - foot
            dist2 = np.einsum("psd,psd->ps", diff, diff)
            best = np.argmin(dist2, axis=1)
            rows = np.arange(block.shape[0])
            cross = self.vectors[best, 0] * rel[rows, best, 1] - self.vectors[best, 1] * rel[rows, best, 0]
            distance[lo : lo + len(block)] = np.sqrt(dist2[rows, best])
            offset[lo : lo + len(block)] = cross / np.maximum(self.lengths[best], 1e-12)
            arc[lo : lo + len(block)] = self.arc_start[best] + u[rows, best] * self.lengths[best]
            segment[lo : lo + len(block)] = best

        return Projection(
            distance=distance.reshape(lead),
            signed_offset=offset.reshape(lead),
            arc_length=arc.reshape(lead),
            segment=segment.reshape(lead),
        )
