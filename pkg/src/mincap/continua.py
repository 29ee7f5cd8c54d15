"""Discretized poly-continua, connectivity patterns and class membership.

A poly-continuum is a polyline graph embedded in the surface chart: nodes are
complex lifts, edges straight chart segments of length at most the mesh
parameter.  Connectivity-pattern membership is decided on the universal cover:
a label (i, j, (m, n)) is contained when, inside a bounded window of lattice
translates, the lift of anchor i reaches the (m, n)-shifted lift of anchor j
through the eps-fattened lifted graph.  On the sphere only the partition of
anchors into components is tracked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .surface import Surface, SurfacePoint, distance

__all__ = [
    "AnchorSet",
    "HomotopyLabel",
    "ConnectivityPattern",
    "PolyContinuum",
    "contains_class",
    "exceeds_pattern",
    "fatten",
    "refine",
    "continuum_hausdorff",
]

_INF_CLEARANCE = 1e-9


@dataclass(frozen=True)
class AnchorSet:
    points: Tuple[SurfacePoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def validate(self, surface: Surface):
        pts = self.points
        for i, p in enumerate(pts):
            if distance(surface, p, surface.infinity) <= 0:
                raise ValueError("anchor coincides with the reference point")
            for q in pts[i + 1:]:
                if distance(surface, p, q) <= 0:
                    raise ValueError("anchors must be pairwise distinct")

    def coords(self) -> np.ndarray:
        return np.array([complex(p.coord) for p in self.points])


@dataclass(frozen=True)
class HomotopyLabel:
    """Relative-homotopy label between two anchors.

    ``winding`` is the covering translate (m, n) on the torus and None on the
    sphere, where only the component pairing is meaningful.
    """

    i: int
    j: int
    winding: Optional[Tuple[int, int]] = None

    def inverse(self) -> "HomotopyLabel":
        w = None if self.winding is None else (-self.winding[0], -self.winding[1])
        return HomotopyLabel(self.j, self.i, w)


class ConnectivityPattern:
    """Decorated adjacency data: per anchor pair, a set of homotopy labels.

    Labels are stored once per unordered pair; the transposed entry with
    negated winding is implied.
    """

    def __init__(self, size: int, labels: Sequence[HomotopyLabel]):
        self.size = size
        self.labels: List[HomotopyLabel] = []
        seen = set()
        for lab in labels:
            if not (0 <= lab.i < size and 0 <= lab.j < size):
                raise ValueError("label index out of range")
            key = self._key(lab)
            if key in seen:
                continue
            seen.add(key)
            self.labels.append(lab)

    @staticmethod
    def _key(lab: HomotopyLabel):
        w = lab.winding or (0, 0)
        if (lab.i, w) <= (lab.j, (-w[0], -w[1])):
            return (lab.i, lab.j, w)
        return (lab.j, lab.i, (-w[0], -w[1]))

    def is_admissible(self) -> bool:
        """Every anchor must be the endpoint of a nontrivial class."""
        touched = set()
        for lab in self.labels:
            nontrivial = lab.i != lab.j or (lab.winding not in (None, (0, 0)))
            if nontrivial:
                touched.add(lab.i)
                touched.add(lab.j)
        return touched == set(range(self.size))

    def class_count(self) -> int:
        return len(self.labels)

    def max_winding(self) -> int:
        w = 0
        for lab in self.labels:
            if lab.winding is not None:
                w = max(w, abs(lab.winding[0]), abs(lab.winding[1]))
        return w


class PolyContinuum:
    """Polyline graph with flagged anchor nodes."""

    def __init__(self, surface: Surface, nodes: Sequence[complex],
                 edges: Sequence[Tuple[int, int]], anchor_indices: Sequence[int],
                 mesh: float):
        self.surface = surface
        self.nodes = np.asarray(nodes, dtype=complex).copy()
        self.edges = [(int(a), int(b)) for a, b in edges]
        self.anchor_indices = list(int(i) for i in anchor_indices)
        self.mesh = float(mesh)
        self._validate()

    def _validate(self):
        if len(self.nodes) == 0 or len(self.edges) == 0:
            raise ValueError("empty continuum")
        inf = self.surface.infinity.coord
        if inf is not None:
            a = self.nodes[[e[0] for e in self.edges]]
            b = self.nodes[[e[1] for e in self.edges]]
            d = _point_segment_distance(complex(inf), a, b)
            if self.surface.kind == "torus":
                # check the nearest lattice copies of the reference point too
                tau = self.surface.tau
                for dm in (-1, 0, 1):
                    for dn in (-1, 0, 1):
                        d = np.minimum(d, _point_segment_distance(
                            complex(inf) + dm + dn * tau, a, b))
            if d.min() < _INF_CLEARANCE:
                raise ValueError("edge passes through the reference point")

    # -- geometry ----------------------------------------------------------

    def segment_arrays(self):
        a = self.nodes[[e[0] for e in self.edges]]
        b = self.nodes[[e[1] for e in self.edges]]
        return a, b

    def edge_lengths(self) -> np.ndarray:
        a, b = self.segment_arrays()
        return np.abs(b - a)

    def total_length(self) -> float:
        return float(self.edge_lengths().sum())

    def diameter(self) -> float:
        z = self.nodes
        return float(max(np.abs(z[:, None] - z[None, :]).max(), 1e-30))

    def components(self) -> List[int]:
        """Component id per node (union-find over shared edge endpoints)."""
        parent = list(range(len(self.nodes)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        return [find(i) for i in range(len(self.nodes))]

    def component_count(self) -> int:
        comp = self.components()
        used = {comp[a] for e in self.edges for a in e}
        # isolated nodes count as their own components only if flagged anchors
        for i in self.anchor_indices:
            used.add(comp[i])
        return len(used)

    def component_count_bfs(self) -> int:
        """Independent component count by breadth-first traversal."""
        adj: Dict[int, List[int]] = {}
        for a, b in self.edges:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        active = set(adj) | set(self.anchor_indices)
        seen = set()
        count = 0
        for start in sorted(active):
            if start in seen:
                continue
            count += 1
            stack = [start]
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                stack.extend(adj.get(v, []))
        return count

    def with_nodes(self, nodes) -> "PolyContinuum":
        return PolyContinuum(self.surface, nodes, self.edges,
                             self.anchor_indices, self.mesh)

    def sample_points(self, spacing: float) -> np.ndarray:
        """Points along all edges at the given spacing, endpoints included."""
        a, b = self.segment_arrays()
        out = [self.nodes]
        for ai, bi in zip(a, b):
            n = max(int(np.ceil(abs(bi - ai) / spacing)), 1)
            t = np.arange(1, n) / n
            out.append(ai + t * (bi - ai))
        return np.concatenate(out)


def refine(K: PolyContinuum, h_new: float) -> PolyContinuum:
    """Split edges so every edge length is at most h_new; geometry unchanged."""
    if h_new <= 0:
        raise ValueError("mesh must be positive")
    nodes = list(K.nodes)
    edges = []
    for a, b in K.edges:
        za, zb = nodes[a], nodes[b]
        n = max(int(np.ceil(abs(zb - za) / h_new)), 1)
        prev = a
        for k in range(1, n):
            nodes.append(za + (zb - za) * k / n)
            edges.append((prev, len(nodes) - 1))
            prev = len(nodes) - 1
        edges.append((prev, b))
    return PolyContinuum(K.surface, nodes, edges, K.anchor_indices, h_new)


def fatten(K: PolyContinuum, eps: float) -> np.ndarray:
    """Point cloud representing the eps-fattening (samples at eps/4 spacing)."""
    if eps <= 0:
        raise ValueError("fattening radius must be positive")
    return K.sample_points(eps / 4.0)


# -- segment geometry helpers ------------------------------------------------

def _point_segment_distance(p, a, b):
    """Distance from point(s) p to segment(s) [a, b]; numpy broadcastable."""
    ab = b - a
    denom = np.maximum(np.abs(ab) ** 2, 1e-300)
    t = np.clip(((p - a) * np.conj(ab)).real / denom, 0.0, 1.0)
    return np.abs(p - (a + t * ab))


def segment_segment_distance(a1, b1, a2, b2, samples: int = 8) -> np.ndarray:
    """Approximate min distance between segment families (vectorized).

    Exact when segments intersect or when the minimum is at an endpoint;
    interior-interior minima are resolved to the sampling resolution, which
    is ample for the 2*eps merge tolerance used by class membership.
    """
    t = np.linspace(0.0, 1.0, samples)
    p1 = a1[..., None] + t * (b1 - a1)[..., None]
    d = np.full(np.broadcast_shapes(a1.shape, a2.shape), np.inf)
    for k in range(samples):
        d = np.minimum(d, _point_segment_distance(p1[..., k], a2, b2))
    p2 = a2[..., None] + t * (b2 - a2)[..., None]
    for k in range(samples):
        d = np.minimum(d, _point_segment_distance(p2[..., k], a1, b1))
    return d


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def contains_class(K: PolyContinuum, label: HomotopyLabel, eps: float,
                   window: Optional[int] = None) -> bool:
    """True when the eps-fattening of K contains a path in the given class."""
    if eps <= 0:
        raise ValueError("fattening radius must be positive")
    surface = K.surface
    ai = K.anchor_indices[label.i]
    aj = K.anchor_indices[label.j]
    if surface.kind == "sphere":
        comp = _fattened_components(K, eps)
        return comp[ai] == comp[aj]
    tau = surface.tau
    m, n = label.winding or (0, 0)
    if window is None:
        window = max(abs(m), abs(n)) + 1
    shifts = [dm + dn * tau
              for dm in range(-window, window + 1)
              for dn in range(-window, window + 1)]
    a, b = K.segment_arrays()
    n_edges = len(K.edges)
    # element ids: copy index * n_edges + edge index
    uf = _UnionFind(n_edges * len(shifts))
    comp_node = _node_components(K)
    # identical connectivity inside each copy
    edge_comp = [comp_node[e[0]] for e in K.edges]
    for c in range(len(shifts)):
        base: Dict[int, int] = {}
        for e_idx in range(n_edges):
            key = edge_comp[e_idx]
            if key in base:
                uf.union(c * n_edges + base[key], c * n_edges + e_idx)
            else:
                base[key] = e_idx
    # proximity merges, cached by relative lattice shift
    mids = (a + b) / 2.0
    lens = np.abs(b - a)
    merge_cache: Dict[complex, list] = {}

    def merge_pairs(dz: complex):
        if dz in merge_cache:
            return merge_cache[dz]
        gap = np.abs(mids[:, None] + 0j - (mids[None, :] + dz)) \
            - (lens[:, None] + lens[None, :]) / 2.0
        if dz == 0:
            gap = np.where(np.triu(np.ones_like(gap, dtype=bool), 1), gap, np.inf)
        cand = np.argwhere(gap <= 2 * eps)
        pairs = []
        if cand.size:
            d = segment_segment_distance(a[cand[:, 0]], b[cand[:, 0]],
                                         a[cand[:, 1]] + dz, b[cand[:, 1]] + dz)
            pairs = [(int(ii), int(jj)) for (ii, jj) in cand[d <= 2 * eps]]
        merge_cache[dz] = pairs
        return pairs

    for c1 in range(len(shifts)):
        for c2 in range(c1, len(shifts)):
            dz = shifts[c2] - shifts[c1]
            if abs(dz) > 2.0 * max(1.0, abs(tau)) * (window + 1):
                continue
            for (ii, jj) in merge_pairs(dz):
                uf.union(c1 * n_edges + ii, c2 * n_edges + jj)
    # locate the anchor lifts
    zero_shift = shifts.index(0.0 + 0.0j) if (0.0 + 0.0j) in shifts else None
    target = m + n * tau
    try:
        tgt_shift = shifts.index(target)
    except ValueError:
        return False
    ei = _edge_at_node(K, ai)
    ej = _edge_at_node(K, aj)
    if ei is None or ej is None:
        return False
    return (uf.find(zero_shift * n_edges + ei)
            == uf.find(tgt_shift * n_edges + ej))


def _edge_at_node(K: PolyContinuum, node: int) -> Optional[int]:
    for idx, (a, b) in enumerate(K.edges):
        if a == node or b == node:
            return idx
    return None


def _node_components(K: PolyContinuum) -> List[int]:
    return K.components()


def _fattened_components(K: PolyContinuum, eps: float) -> List[int]:
    """Node component ids after merging edges closer than 2*eps."""
    comp = K.components()
    a, b = K.segment_arrays()
    uf = _UnionFind(len(K.nodes))
    for a_idx, b_idx in K.edges:
        uf.union(a_idx, b_idx)
    n_edges = len(K.edges)
    mids = (a + b) / 2.0
    lens = np.abs(b - a)
    gap = np.abs(mids[:, None] - mids[None, :]) - (lens[:, None] + lens[None, :]) / 2.0
    cand = np.argwhere(np.triu(gap <= 2 * eps, 1))
    if cand.size:
        d = segment_segment_distance(a[cand[:, 0]], b[cand[:, 0]],
                                     a[cand[:, 1]], b[cand[:, 1]])
        for (ii, jj) in cand[d <= 2 * eps]:
            uf.union(K.edges[int(ii)][0], K.edges[int(jj)][0])
    return [uf.find(i) for i in range(len(K.nodes))]


def exceeds_pattern(K: PolyContinuum, pattern: ConnectivityPattern,
                    eps: float) -> bool:
    """Membership of K in the pattern class at resolution eps."""
    if not pattern.is_admissible():
        raise ValueError("inadmissible pattern")
    if K.component_count() > pattern.class_count():
        return False
    window = pattern.max_winding() + 1
    for lab in pattern.labels:
        if not contains_class(K, lab, eps, window=window):
            return False
    return True


def chains(K: PolyContinuum):
    """Maximal chains of degree-2 interior nodes, as node index lists.

    Chains run between terminal nodes: anchors, junctions (degree > 2) and
    free endpoints (degree 1).
    """
    adj = {}
    for a, b in K.edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    deg = {v: len(ns) for v, ns in adj.items()}
    anchors = set(K.anchor_indices)
    endpoints = [v for v in adj if deg[v] != 2 or v in anchors]
    if not endpoints:
        endpoints = [min(adj)]  # closed loop: break it at an arbitrary node
    seen_edges = set()
    out = []
    for start in sorted(endpoints):
        for nxt in sorted(adj[start]):
            e = frozenset((start, nxt))
            if e in seen_edges:
                continue
            chain = [start, nxt]
            seen_edges.add(e)
            while deg[chain[-1]] == 2 and chain[-1] not in anchors \
                    and chain[-1] not in endpoints:
                a, b = adj[chain[-1]]
                nxt2 = a if b == chain[-2] else b
                if frozenset((chain[-1], nxt2)) in seen_edges:
                    break
                seen_edges.add(frozenset((chain[-1], nxt2)))
                chain.append(nxt2)
            out.append(chain)
    return out


def _directed_hausdorff(points: np.ndarray, K: PolyContinuum) -> float:
    """sup over sample points of the distance to the polyline K."""
    a, b = K.segment_arrays()
    surface = K.surface
    if surface.kind == "torus":
        tau = surface.tau
        d = np.full(points.shape, np.inf)
        for dm in (-1, 0, 1):
            for dn in (-1, 0, 1):
                dz = dm + dn * tau
                d = np.minimum(d, _point_segment_distance(
                    points[:, None], a[None, :] + dz, b[None, :] + dz).min(axis=1))
        return float(d.max())
    d = _point_segment_distance(points[:, None], a[None, :], b[None, :])
    return float(d.min(axis=1).max())


def continuum_hausdorff(K1: PolyContinuum, K2: PolyContinuum,
                        spacing: Optional[float] = None) -> float:
    """Hausdorff distance between two continua (dense samples vs segments)."""
    sp = spacing or min(K1.mesh, K2.mesh) / 2.0
    return max(_directed_hausdorff(K1.sample_points(sp), K2),
               _directed_hausdorff(K2.sample_points(sp), K1))
