"""Polyline reference paths: closest-point projection and along-path arc length.

Both the projection distance d(p) = ||P_ref(p) - p|| and the arc-length map
D(p) come with analytic gradients, which feed the reference-path, boundary,
and headway costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MIN_SEGMENT = 1e-9


@dataclass(frozen=True)
class ReferencePath:
    """Piecewise-linear path through ordered 2-D waypoints."""

    vertices: np.ndarray  # (M, 2)
    cumulative_lengths: np.ndarray  # (M,), arc length at each vertex, starts at 0

    @staticmethod
    def from_waypoints(waypoints) -> "ReferencePath":
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("path requires at least two 2-D waypoints")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg < _MIN_SEGMENT):
            raise ValueError("consecutive waypoints must be distinct")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return ReferencePath(vertices=pts, cumulative_lengths=cum)

    @property
    def num_segments(self) -> int:
        return self.vertices.shape[0] - 1

    @property
    def total_length(self) -> float:
        return float(self.cumulative_lengths[-1])

    def _segment_data(self):
        a = self.vertices[:-1]
        d = self.vertices[1:] - a
        return a, d, np.einsum("ij,ij->i", d, d)

    def project_batch(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest path points for a batch of queries.

        Returns (closest (K, 2), segment_index (K,), arc_length (K,)); ties
        between equidistant segments resolve to the lower segment index.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a, d, dd = self._segment_data()
        # t[k, s]: clamped projection parameter of point k onto segment s.
        t = np.clip(pts @ d.T - np.einsum("ij,ij->i", a, d), 0.0, dd) / dd
        closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
        diff = closest - pts[:, None, :]
        dist2 = np.einsum("ksj,ksj->ks", diff, diff)
        idx = np.argmin(dist2, axis=1)
        rows = np.arange(pts.shape[0])
        seg_len = np.sqrt(dd[idx])
        arcs = self.cumulative_lengths[idx] + t[rows, idx] * seg_len
        return closest[rows, idx], idx, arcs

    def project(self, p) -> tuple[np.ndarray, int, float]:
        """Closest point on the path to p: (closest_point, segment_index, arc_length)."""
        closest, idx, arc = self.project_batch(np.asarray(p, dtype=float)[None, :])
        return closest[0], int(idx[0]), float(arc[0])

    def arc_length_of(self, p) -> float:
        """D(p): arc length of the closest projected point."""
        return self.project(p)[2]

    def lateral_offset_gradient(self, p) -> tuple[float, np.ndarray]:
        """Distance to the path and its gradient (p - P_ref(p)) / d.

        The gradient is taken as zero within 1e-9 of the path (subgradient
        choice at the nonsmooth minimum).
        """
        p = np.asarray(p, dtype=float)
        closest, _, _ = self.project(p)
        diff = p - closest
        dist = float(np.linalg.norm(diff))
        if dist <= 1e-9:
            return dist, np.zeros(2)
        return dist, diff / dist

    def gradient_segment_indices(self, indices: np.ndarray, arcs: np.ndarray) -> np.ndarray:
        """Segment whose tangent is dD/dp at each projection.

        Projections landing on a vertex (the far end of their segment) use
        the succeeding segment when one exists.
        """
        indices = np.array(indices, copy=True)
        at_vertex = arcs >= self.cumulative_lengths[indices + 1] - 1e-12
        bump = at_vertex & (indices + 1 < self.num_segments)
        indices[bump] += 1
        return indices

    def arc_length_gradient(self, p) -> np.ndarray:
        """dD/dp: unit tangent of the segment containing the projection.

        When the projection lands on a vertex, the succeeding segment's
        tangent is used (for the final vertex, the last segment's).
        """
        _, idx, arc = self.project(np.asarray(p, dtype=float))
        idx = int(self.gradient_segment_indices(np.array([idx]), np.array([arc]))[0])
        return self.tangent_of_segment(idx)

    def tangents(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def tangent_of_segment(self, idx: int) -> np.ndarray:
        d = self.vertices[idx + 1] - self.vertices[idx]
        return d / np.linalg.norm(d)

    def point_at_arc(self, s: float) -> np.ndarray:
        """Point at arc length s; extrapolates along the end segments beyond the path."""
        cum = self.cumulative_lengths
        if s <= 0.0:
            return self.vertices[0] + self.tangent_of_segment(0) * s
        if s >= cum[-1]:
            return self.vertices[-1] + self.tangent_of_segment(self.num_segments - 1) * (s - cum[-1])
        idx = int(np.searchsorted(cum, s, side="right")) - 1
        idx = min(idx, self.num_segments - 1)
        return self.vertices[idx] + self.tangent_of_segment(idx) * (s - cum[idx])

    def tangent_at_arc(self, s: float) -> np.ndarray:
        cum = self.cumulative_lengths
        if s <= 0.0:
            return self.tangent_of_segment(0)
        if s >= cum[-1]:
            return self.tangent_of_segment(self.num_segments - 1)
        idx = int(np.searchsorted(cum, s, side="right")) - 1
        return self.tangent_of_segment(min(idx, self.num_segments - 1))
