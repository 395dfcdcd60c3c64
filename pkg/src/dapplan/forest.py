"""Routing forest: every connected meter's parent chain down to a DAP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIRECT = -1  # parent is the cluster's DAP
UNCONNECTED = -2


@dataclass
class RoutingForest:
    """Arrays are indexed by meter position in ``scenario.sms``.

    ``parent[i]`` is another meter index, ``DIRECT`` when meter i talks to
    its DAP itself, or ``UNCONNECTED``.  ``dap[i]`` is the pole index (into
    ``scenario.poles``) that terminates the chain.  ``nbr_ptr``/``nbr_idx``
    is the CSR list of all meters within radio range of each meter, tree
    edges or not.
    """

    parent: np.ndarray
    dap: np.ndarray
    depth: np.ndarray
    cost: np.ndarray
    eps: np.ndarray  # uplink PER to the parent
    dap_poles: tuple
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray
    order: np.ndarray = field(default=None)  # settle order (parents before children)

    def __post_init__(self):
        if self.order is None:
            conn = np.flatnonzero(self.parent != UNCONNECTED)
            self.order = conn[np.argsort(self.depth[conn], kind="stable")]

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def connected(self) -> np.ndarray:
        return self.parent != UNCONNECTED

    def neighbors(self, i: int) -> np.ndarray:
        return self.nbr_idx[self.nbr_ptr[i]:self.nbr_ptr[i + 1]]

    def feeding_counts(self) -> np.ndarray:
        """Number of meters whose traffic passes through each meter."""
        nf = np.zeros(self.n, dtype=np.int64)
        for i in self.order[::-1]:
            p = self.parent[i]
            if p >= 0:
                nf[p] += nf[i] + 1
        return nf

    def path(self, i: int) -> list:
        """Relays r_1..r_H of meter i (r_1 = i), i.e. every meter that transmits its packet."""
        out = []
        while i >= 0:
            out.append(int(i))
            i = self.parent[i]
        return out

    def children(self) -> list:
        ch = [[] for _ in range(self.n)]
        for i in range(self.n):
            if self.parent[i] >= 0:
                ch[self.parent[i]].append(i)
        return ch

    def clusters(self) -> dict:
        out = {int(d): [] for d in self.dap_poles}
        for i in np.flatnonzero(self.connected):
            out.setdefault(int(self.dap[i]), []).append(int(i))
        return out

    def restrict(self, keep: np.ndarray) -> "RoutingForest":
        """Disconnect every meter not in ``keep`` along with its descendants."""
        keep = np.asarray(keep, dtype=bool) & self.connected
        parent = self.parent.copy()
        for i in self.order:
            p = parent[i]
            if not keep[i] or (p >= 0 and parent[p] == UNCONNECTED):
                parent[i] = UNCONNECTED
        gone = parent == UNCONNECTED
        dap = np.where(gone, -1, self.dap)
        depth = np.where(gone, 0, self.depth)
        cost = np.where(gone, np.inf, self.cost)
        eps = np.where(gone, np.nan, self.eps)
        return RoutingForest(parent, dap, depth, cost, eps, self.dap_poles, self.nbr_ptr, self.nbr_idx)
