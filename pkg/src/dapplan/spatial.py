"""2-d k-d tree range queries over node positions."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class SpatialIndex:
    """Balanced k-d tree (k=2) over a fixed set of labelled points."""

    def __init__(self, positions, ids=None):
        pts = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.positions = pts
        self.ids = np.arange(len(pts)) if ids is None else np.asarray(ids)
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True) if len(pts) else None

    def __len__(self):
        return len(self.positions)

    def range_query(self, center, radius: float, exclude=None) -> list:
        """Sorted ids within ``radius`` of ``center``, minus ``exclude``."""
        if radius < 0:
            raise ValueError("radius must be >= 0")
        if self._tree is None:
            return []
        hits = self._tree.query_ball_point(np.asarray(center, dtype=float), radius)
        out = sorted(int(self.ids[i]) for i in hits)
        if exclude is not None:
            out = [i for i in out if i != exclude]
        return out

    def range_query_many(self, centers, radius: float) -> list:
        """Index lists (positions into this index, not ids) per center."""
        if self._tree is None:
            return [[] for _ in range(len(centers))]
        return [sorted(h) for h in self._tree.query_ball_point(np.asarray(centers, dtype=float), radius)]

    def pairs_within(self, radius: float) -> np.ndarray:
        """All index pairs (i < j) closer than ``radius``, as an (n, 2) array."""
        if self._tree is None:
            return np.empty((0, 2), dtype=np.int64)
        return self._tree.query_pairs(radius, output_type="ndarray")

    def nearest(self, point, k: int = 1):
        """Positions of the k nearest points, nearest first."""
        if self._tree is None:
            return []
        k = min(k, len(self.positions))
        _, idx = self._tree.query(np.asarray(point, dtype=float), k=k)
        return list(np.atleast_1d(idx))


def build_index(nodes) -> SpatialIndex:
    return SpatialIndex([n.position for n in nodes], [n.id for n in nodes])


def range_query(index: SpatialIndex, center_node, radius: float) -> list:
    return index.range_query(center_node.position, radius, exclude=center_node.id)
