"""Vertical trajectories of quadratic differentials, critical graphs, the
S-property and foliation certificates, steepest-descent dissection, the
conformal disk map, and the trajectory-interception comparison check.

Tracing integrates dz/ds = i/v at unit speed in the |v| metric with a
projection step that pins Re(integral of v) along the curve; launches from
zeros and poles step analytically through the singular neighborhood using the
local fractional-power model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import LineString, MultiLineString, Point

from .continua import PolyContinuum, chains
from .equilibrium import CapacityResult
from .quaddiff import QuadDiff
from .surface import Surface, lattice_reduce

__all__ = [
    "Trajectory",
    "CriticalGraph",
    "FoliationSample",
    "trace_vertical",
    "build_critical_graph",
    "graph_to_continuum",
    "s_property_residual",
    "conformal_map_W",
    "find_green_critical_points",
    "dissection",
    "classify_foliation",
    "jip_check",
]


@dataclass
class Trajectory:
    points: np.ndarray
    kind: str = "critical"        # critical | regular
    origin: Optional[complex] = None
    q_length: float = 0.0
    end_flag: str = "landed"      # landed | budget | window | closed
    end_point: Optional[complex] = None

    def verticality_defect(self, qd: QuadDiff) -> float:
        """max |delta Re integral of v| accumulated along the polyline."""
        z = self.points
        mids = (z[:-1] + z[1:]) / 2.0
        v = _sqrt_along(qd, mids)
        re = np.cumsum(np.real(v * np.diff(z)))
        return float(np.abs(re).max()) if len(re) else 0.0


@dataclass
class CriticalGraph:
    vertices: np.ndarray
    vertex_kind: List[str]
    edges: List[Tuple[int, int]]
    trajectories: List[Trajectory]
    extra: List[Trajectory] = field(default_factory=list)

    def valence(self, vid: int) -> int:
        return sum(1 for a, b in self.edges if a == vid or b == vid)


def _sqrt_along(qd: QuadDiff, z: np.ndarray) -> np.ndarray:
    """Principal square roots with sign continuity along the sample order.

    The flip decision compares raw consecutive values; accumulated flips
    cancel out of the distance comparison.
    """
    v = np.sqrt(qd.density(z))
    flip = np.ones(len(v))
    for k in range(1, len(v)):
        if abs(v[k] - v[k - 1]) > abs(v[k] + v[k - 1]):
            flip[k] = -flip[k - 1]
        else:
            flip[k] = flip[k - 1]
    return v * flip


def _branch_near(qd: QuadDiff, z: complex, v_ref: complex) -> complex:
    v = np.sqrt(complex(qd.density(np.array([z]))[0]))
    if abs(v - v_ref) > abs(v + v_ref):
        v = -v
    return v


def launch_directions(qd: QuadDiff, p: complex, radius: float) -> np.ndarray:
    """Outgoing vertical directions at a zero or simple pole.

    At a point of order mu there are mu + 2 rays, the sign changes of
    Re(v e^{i theta}) on a circle around the point.  The circle is traversed
    twice so the continued square root is genuinely periodic (odd-order
    points flip the sheet after one turn); directions are deduped mod 2 pi.
    """
    m = 1440
    theta = np.linspace(0.0, 4 * np.pi, 2 * m + 1)[:-1]
    z = p + radius * np.exp(1j * theta)
    v = _sqrt_along(qd, z)
    g = np.real(v * np.exp(1j * theta))
    sign = np.sign(g)
    idx = np.nonzero(sign[:-1] != sign[1:])[0]
    dirs: List[float] = []
    for i in idx:
        a, b = theta[i], theta[i + 1]
        fa = g[i]
        va = v[i]
        for _ in range(40):
            mid = 0.5 * (a + b)
            zm = p + radius * np.exp(1j * mid)
            vm = _branch_near(qd, zm, va)
            fm = np.real(vm * np.exp(1j * mid))
            if fa * fm <= 0:
                b = mid
            else:
                a, fa, va = mid, fm, vm
        cand = (0.5 * (a + b)) % (2 * np.pi)
        # rays of an order-mu point are 2 pi/(mu+2) apart; anything closer
        # is the same ray found on the second turn
        if all(min(abs(cand - d), 2 * np.pi - abs(cand - d)) > 0.2
               for d in dirs):
            dirs.append(cand)
    return np.array(sorted(dirs))


def trace_vertical(qd: QuadDiff, start: complex, v0: Optional[complex] = None,
                   direction: complex = 1.0 + 0.0j,
                   budget: Optional[float] = None,
                   capture: Optional[np.ndarray] = None,
                   capture_radius: float = 5e-3,
                   window_radius: Optional[float] = None,
                   step_scale: float = 0.05,
                   origin: Optional[complex] = None) -> Trajectory:
    """Trace the vertical trajectory through ``start``.

    ``direction`` picks the initial travel sense; ``capture`` lists singular
    points where the trajectory lands (snapped exactly).  Stops on landing,
    leaving the window, or exhausting the Q-length budget.
    """
    sing = qd.singular_points() if capture is None else np.asarray(capture)
    scale = max(np.abs(sing - sing.mean()).max(), 1.0) if len(sing) else 1.0
    budget = budget if budget is not None else 50.0 * scale
    window_radius = window_radius or 20.0 * scale
    z = complex(start)
    center = sing.mean() if len(sing) else 0.0
    v = _branch_near(qd, z, v0) if v0 is not None else \
        complex(np.sqrt(qd.density(np.array([z]))[0]))
    # choose the sheet so initial motion i/v aligns with `direction`
    if (1j / v * np.conj(direction)).real < 0:
        v = -v
    pts = [z]
    qlen = 0.0
    flag = "budget"
    end_point = None
    min_step = 1e-13 * scale
    guard = 0
    while qlen < budget:
        guard += 1
        if guard > 200000:
            raise ValueError("step collapse near unresolved singularity "
                             f"at {z:.6g}")
        dmin = qd.nearest_singular_distance(np.array([z]))[0]
        if len(sing):
            dcap = np.abs(_reduce_diffs(qd.surface, z - sing))
            j = int(np.argmin(dcap))
            if dcap[j] < capture_radius:
                pts.append(complex(sing[j]))
                flag = "landed"
                end_point = complex(sing[j])
                break
        dz_abs = step_scale * max(dmin, 1e-6)
        if dz_abs < min_step:
            raise ValueError(f"step collapse near unresolved singularity at {z:.6g}")
        # RK4 on dz/ds = i / v with branch continuity inside the stages
        h = dz_abs * abs(v)

        def f(zz, vref):
            vv = _branch_near(qd, zz, vref)
            return 1j / vv, vv

        k1, v1 = f(z, v)
        k2, v2 = f(z + 0.5 * h * k1, v1)
        k3, v3 = f(z + 0.5 * h * k2, v2)
        k4, v4 = f(z + h * k3, v3)
        dz = h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        z_new = z + dz
        v_new = _branch_near(qd, z_new, v3)
        # projection: cancel the drift of Re(int v dz)
        vm = 0.5 * (v + v_new)
        drift = (vm * dz).real
        z_new = z_new - drift * np.conj(v_new) / abs(v_new) ** 2
        v_new = _branch_near(qd, z_new, v_new)
        qlen += abs(vm) * abs(dz)
        z, v = z_new, v_new
        pts.append(z)
        if abs(z - center) > window_radius:
            flag = "window"
            break
        if len(pts) > 12 and abs(z - pts[0]) < 0.5 * dz_abs and qlen > 10 * dz_abs:
            flag = "closed"
            break
    return Trajectory(np.asarray(pts), "critical", origin or complex(start),
                      qlen, flag, end_point)


def _reduce_diffs(surface: Surface, dz):
    if surface.kind == "torus":
        return lattice_reduce(surface.tau, dz)
    return dz


def build_critical_graph(qd: QuadDiff, mesh: float = 0.01,
                         residual_max: Optional[float] = None) -> CriticalGraph:
    """Launch critical trajectories from all zeros and simple poles and
    assemble the landing graph.

    Trajectories that fail to land on a singular point within budget raise
    unless they closed up (level loops of even zeros off the zero level are
    kept as extra data).
    """
    sing = qd.singular_points()
    launch_r = {}
    for kind_pts, mults in ((qd.poles, [-1] * len(qd.poles)),
                            (qd.zeros, list(qd.zero_mults))):
        for p, mu in zip(kind_pts, mults):
            others = sing[np.abs(sing - p) > 1e-12]
            d = np.abs(_reduce_diffs(qd.surface, others - p)).min() if len(others) else 1.0
            launch_r[complex(p)] = min(1e-2, 0.3 * d)
    vertices = list(map(complex, np.concatenate([qd.poles, qd.zeros])
                        if len(qd.zeros) else qd.poles))
    kinds = ["pole"] * len(qd.poles) + ["zero"] * len(qd.zeros)
    capture = np.asarray(vertices, dtype=complex)
    trajs: List[Trajectory] = []
    extras: List[Trajectory] = []
    edges: List[Tuple[int, int]] = []

    def vertex_id(z: complex) -> int:
        d = np.abs(_reduce_diffs(qd.surface, np.asarray(vertices) - z))
        j = int(np.argmin(d))
        if d[j] > 1e-4:
            vertices.append(complex(z))
            kinds.append("merge")
            return len(vertices) - 1
        return j

    for p, mu in list(zip(qd.poles, [-1] * len(qd.poles))) \
            + list(zip(qd.zeros, qd.zero_mults)):
        p = complex(p)
        r0 = launch_r[p]
        dirs = launch_directions(qd, p, r0)
        for th in dirs:
            z0 = p + r0 * np.exp(1j * th)
            tr = trace_vertical(qd, z0, direction=np.exp(1j * th),
                                capture=capture, capture_radius=max(1e-4, r0 / 3),
                                origin=p)
            tr.points = np.concatenate([[p], tr.points])
            if tr.end_flag == "landed":
                trajs.append(tr)
                edges.append((vertex_id(p), vertex_id(tr.end_point)))
            elif tr.end_flag == "closed":
                extras.append(tr)
            else:
                if residual_max is not None and residual_max > 1e-8:
                    raise ValueError(
                        "non-closing trajectory: Boutroux residual too large?")
                extras.append(tr)
    return CriticalGraph(np.asarray(vertices), kinds, edges, trajs, extras)


def _dedupe_edges(graph: CriticalGraph, tol: float = 5e-3):
    """Collapse trajectories traced twice (once from each endpoint).

    Two edges with the same unordered endpoints are duplicates when their
    interior polylines agree to the given tolerance.
    """
    from .continua import _point_segment_distance

    edges, trajs = [], []
    for (a, b), tr in zip(graph.edges, graph.trajectories):
        dup = False
        for (a2, b2), tr2 in zip(edges, trajs):
            if {a, b} != {a2, b2}:
                continue
            z = tr.points
            probes = z[np.linspace(0, len(z) - 1, 9).astype(int)]
            sa, sb = tr2.points[:-1], tr2.points[1:]
            d = _point_segment_distance(probes[:, None], sa[None, :],
                                        sb[None, :]).min(axis=1)
            if d.max() < tol * max(1.0, np.abs(z - z.mean()).max()):
                dup = True
                break
        if not dup:
            edges.append((a, b))
            trajs.append(tr)
    return edges, trajs


def graph_to_continuum(graph: CriticalGraph, qd: QuadDiff,
                       anchor_coords: Sequence[complex], mesh: float) -> PolyContinuum:
    """Level-zero component of the critical graph as a poly-continuum.

    The component containing the anchors is selected; each trajectory is
    resampled at the mesh scale.
    """
    edges, trajs = _dedupe_edges(graph)
    n_v = len(graph.vertices)
    parent = list(range(n_v))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    anchor_ids = []
    for e in anchor_coords:
        d = np.abs(_reduce_diffs(qd.surface, graph.vertices - complex(e)))
        anchor_ids.append(int(np.argmin(d)))
    comps = {find(a) for a in anchor_ids}
    nodes: List[complex] = []
    out_edges: List[Tuple[int, int]] = []
    vmap: Dict[int, int] = {}

    def node_for_vertex(vid: int) -> int:
        if vid not in vmap:
            nodes.append(complex(graph.vertices[vid]))
            vmap[vid] = len(nodes) - 1
        return vmap[vid]

    for (a, b), tr in zip(edges, trajs):
        if find(a) not in comps:
            continue
        pts = _resample_polyline(tr.points, mesh)
        ia = node_for_vertex(a)
        prev = ia
        for z in pts[1:-1]:
            nodes.append(complex(z))
            out_edges.append((prev, len(nodes) - 1))
            prev = len(nodes) - 1
        out_edges.append((prev, node_for_vertex(b)))
    if not out_edges:
        raise ValueError("critical graph has no component containing the anchors")
    anchor_nodes = []
    arr = np.asarray(nodes)
    for e in anchor_coords:
        d = np.abs(_reduce_diffs(qd.surface, arr - complex(e)))
        anchor_nodes.append(int(np.argmin(d)))
    return PolyContinuum(qd.surface, nodes, out_edges, anchor_nodes, mesh)


def _resample_polyline(pts: np.ndarray, h: float) -> np.ndarray:
    seg = np.abs(np.diff(pts))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        return pts[[0, -1]]
    m = max(int(np.ceil(total / h)), 1)
    si = np.linspace(0.0, total, m + 1)
    out = np.interp(si, s, pts.real) + 1j * np.interp(si, s, pts.imag)
    out[0], out[-1] = pts[0], pts[-1]
    return out


# -- boundary samples and one-sided normal derivatives -----------------------

@dataclass
class FoliationSample:
    points: np.ndarray
    normals: np.ndarray
    d_plus: np.ndarray
    d_minus: np.ndarray
    weights: np.ndarray
    classification: List[str]

    def total_mass(self) -> float:
        return float(((self.d_plus + self.d_minus) * self.weights).sum())


def _chain_samples(K: PolyContinuum, per_chain: int = 0,
                   graded: bool = True, end_fraction: float = 0.15,
                   end_nodes: int = 12):
    """Sample points, unit normals and arclength weights along the chains.

    Near terminal nodes the parameter is graded quadratically so the
    square-root edge behavior of the boundary density is integrated
    accurately.
    """
    pts, nrms, wts, chain_ids = [], [], [], []
    for cid, chain in enumerate(chains(K)):
        z = K.nodes[chain]
        seg = np.abs(np.diff(z))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        L = s[-1]
        if L == 0:
            continue
        delta = min(end_fraction * L, max(6 * K.mesh, 0.03 * L))
        mid_n = per_chain or max(int(np.ceil((L - 2 * delta) / (2 * K.mesh))), 8)
        nodes_s, nodes_w = [], []
        # graded end sections: r = delta u^2, midpoint in u
        if graded and delta > 0:
            u = (np.arange(end_nodes) + 0.5) / end_nodes
            r = delta * u ** 2
            w = 2 * delta * u / end_nodes
            nodes_s.extend(r)
            nodes_w.extend(w)
            nodes_s.extend(L - r)
            nodes_w.extend(w)
        su = np.linspace(delta, L - delta, mid_n + 1)
        sm = (su[:-1] + su[1:]) / 2.0
        nodes_s.extend(sm)
        nodes_w.extend(np.diff(su))
        nodes_s = np.asarray(nodes_s)
        nodes_w = np.asarray(nodes_w)
        zp = np.interp(nodes_s, s, z.real) + 1j * np.interp(nodes_s, s, z.imag)
        # tangents by chain interpolation
        k_idx = np.clip(np.searchsorted(s, nodes_s) - 1, 0, len(seg) - 1)
        tang = (z[k_idx + 1] - z[k_idx])
        tang = tang / np.abs(tang)
        pts.append(zp)
        nrms.append(1j * tang)
        wts.append(nodes_w)
        chain_ids.append(np.full(len(zp), cid))
    return (np.concatenate(pts), np.concatenate(nrms),
            np.concatenate(wts), np.concatenate(chain_ids))


def _one_sided_normal(result: CapacityResult, p: np.ndarray, n: np.ndarray,
                      delta: float) -> np.ndarray:
    """Directional derivative of G along n from the n side, Richardson in the
    offset to cancel the linear term of the off-boundary evaluation."""
    v1 = result.vfield(p + delta * n)
    v2 = result.vfield(p + 2 * delta * n)
    d1 = np.real(v1 * n)
    d2 = np.real(v2 * n)
    return 2 * d1 - d2


def classify_foliation(result: CapacityResult, K: PolyContinuum,
                       tie_tol: float = 1e-3) -> FoliationSample:
    """One-sided normal derivatives along K with dominance classification.

    Ties within the relative tolerance are declared dominant on both sides;
    the weighted density integrates the total foliation mass.
    """
    p, n, w, _ = _chain_samples(K)
    # offsets shrink near terminal nodes where the field varies on scale r
    from .continua import _point_segment_distance
    ends = [K.nodes[i] for i, d in _terminal_nodes(K)]
    if ends:
        r = np.min(np.abs(p[:, None] - np.asarray(ends)[None, :]), axis=1)
    else:
        r = np.full(p.shape, np.inf)
    delta = np.minimum(0.25 * K.mesh, 0.2 * r)
    delta = np.maximum(delta, 1e-7)
    dp = _one_sided_normal(result, p, n, delta)
    dm = _one_sided_normal(result, p, -n, delta)
    cls = []
    for a, b in zip(dp, dm):
        m = max(abs(a), abs(b))
        if m == 0 or abs(a - b) <= tie_tol * m:
            cls.append("both-dominant")
        elif a > b:
            cls.append("dominant-plus")
        else:
            cls.append("dominant-minus")
    return FoliationSample(p, n, dp, dm, w, cls)


def _terminal_nodes(K: PolyContinuum):
    deg = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    return [(i, d) for i, d in deg.items() if d != 2]


def s_property_residual(result: CapacityResult, K: PolyContinuum,
                        n_samples: int = 40) -> float:
    """max over smooth interior samples of the relative mismatch of the two
    one-sided normal derivatives of the Green's function.

    Derivatives use one-sided finite differences of G at offsets {h, 2h}
    with Richardson elimination of the first error term.
    """
    h = K.mesh
    p, n, w, _ = _chain_samples(K, graded=False)
    ends = [K.nodes[i] for i, d in _terminal_nodes(K)]
    if ends:
        r = np.min(np.abs(p[:, None] - np.asarray(ends)[None, :]), axis=1)
        keep = r > 3 * h
        p, n = p[keep], n[keep]
    if len(p) > n_samples:
        idx = np.linspace(0, len(p) - 1, n_samples).astype(int)
        p, n = p[idx], n[idx]
    worst = 0.0
    gp1 = result.green(p + h * n)
    gp2 = result.green(p + 2 * h * n)
    gm1 = result.green(p - h * n)
    gm2 = result.green(p - 2 * h * n)
    dp = (4 * gp1 - gp2) / (2 * h)
    dm = (4 * gm1 - gm2) / (2 * h)
    rel = np.abs(dp - dm) / np.maximum(np.maximum(dp, dm), 1e-300)
    return float(rel.max())


# -- Green critical points, dissection, conformal map ------------------------

def find_green_critical_points(result: CapacityResult,
                               region_points: np.ndarray,
                               tol: float = 1e-10) -> np.ndarray:
    """Zeros of the gradient differential by Newton from grid starts."""
    roots: List[complex] = []
    disc = result.discretization
    f_tol = 1e-5
    for z0 in np.asarray(region_points, dtype=complex):
        z = complex(z0)
        best_z, best_f = z, np.inf
        for _ in range(80):
            f = complex(result.vfield(z)[0])
            if abs(f) < best_f:
                best_z, best_f = z, abs(f)
            df = complex((result.vfield(z + 1e-6)[0] - result.vfield(z - 1e-6)[0])
                         / 2e-6)
            if df == 0 or not np.isfinite(abs(df)):
                break
            step = f / df
            z -= step
            if abs(step) < 1e-13:
                break
        if best_f > f_tol:
            continue
        z = best_z
        if result.distance_to_support(np.array([z]))[0] < 2 * disc.mesh:
            continue
        if disc.surface.kind == "torus":
            z = complex(lattice_reduce(disc.surface.tau, z))
        if all(abs(_reduce_diffs(disc.surface, z - r)) > 1e-4 for r in roots):
            roots.append(z)
    return np.asarray(roots, dtype=complex)


def dissection(result: CapacityResult, critical_points: np.ndarray,
               step: float = 2e-3) -> List[Trajectory]:
    """Steepest-descent gradient lines from each critical point of G.

    From a simple critical point two descent rays leave in opposite
    directions; they are traced down to the continuum (or another critical
    point) by explicit descent steps on -grad G.
    """
    out: List[Trajectory] = []
    disc = result.discretization
    for b in np.asarray(critical_points, dtype=complex):
        # local quadratic model: vfield ~ c (z - b) => descent where
        # Re(c (z-b)^2)/2 ... take directions from the phase of c
        c = complex((result.vfield(b + 1e-5)[0] - result.vfield(b - 1e-5)[0]) / 2e-5)
        # G - G(b) ~ Re(c (z-b)^2 / 2); descent rays at angles where
        # cos(arg c + 2 theta) = -1
        th0 = (np.pi - np.angle(c)) / 2.0
        for th in (th0, th0 + np.pi):
            z = b + 5 * step * np.exp(1j * th)
            pts = [complex(b), z]
            for _ in range(100000):
                v = complex(result.vfield(z)[0])
                grad = np.conj(v)
                if abs(grad) == 0:
                    break
                z = z - step * grad / abs(grad)
                pts.append(z)
                if result.distance_to_support(np.array([z]))[0] < disc.mesh:
                    break
                if abs(v) < 1e-8:
                    break
            out.append(Trajectory(np.asarray(pts), "critical", b,
                                  0.0, "landed", z))
    return out


def conformal_map_W(result: CapacityResult, P,
                    sigma: Sequence[Trajectory] = (),
                    n_leg: int = 240) -> np.ndarray:
    """W = exp(-(G + iH)) mapping the exterior to the unit disk.

    H integrates Im(v dz) along a radial approach from the reference point
    followed by a straight leg, with detours around the continuum and the
    dissection; the additive constant is pinned by W ~ z_inf Cap at the
    reference point.
    """
    disc = result.discretization
    surface = disc.surface
    P = np.atleast_1d(np.asarray(P, dtype=complex))
    obstacles = _obstacle_segments(result, sigma)
    out = np.empty(P.shape, dtype=complex)
    if surface.kind == "sphere":
        R_far = 1e7
        R0 = 3.0 * max(np.abs(disc.mid).max(), 1.0)
        for k, p in enumerate(P):
            d = p / abs(p) if abs(p) > 0 else 1.0
            zr = d * R_far
            # H at the far anchor point: g ~ -ln z_inf - ln Cap
            c = complex(surface.chart_coeff)
            H = -np.angle(c / zr)
            # radial leg in log radius
            s = np.linspace(np.log(R_far), np.log(max(abs(p), R0)), n_leg)
            zs = d * np.exp(s)
            H += _imag_leg(result, zs)
            z_mid = d * max(abs(p), R0)
            if abs(p) < R0:
                path = _route(z_mid, p, obstacles)
                for a, b in zip(path[:-1], path[1:]):
                    zs = np.linspace(a, b, n_leg)
                    H += _imag_leg(result, zs)
            G = float(np.atleast_1d(result.green(p))[0])
            out[k] = np.exp(-(G + 1j * H))
        return out
    # torus: approach from a small circle around the reference point
    t = complex(surface.infinity.coord)
    c = complex(surface.chart_coeff)
    r0 = 1e-5
    for k, p in enumerate(P):
        d = (p - t) / abs(p - t)
        z_start = t + r0 * d
        H = -np.angle(c * (z_start - t))
        path = _route(z_start, p, obstacles)
        for a, b in zip(path[:-1], path[1:]):
            zs = np.linspace(a, b, n_leg)
            H += _imag_leg(result, zs)
        G = float(np.atleast_1d(result.green(p))[0])
        out[k] = np.exp(-(G + 1j * H))
    return out


_LEG_NODES, _LEG_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _imag_leg(result: CapacityResult, zs: np.ndarray) -> float:
    """Integral of Im(v dz) along a piecewise-linear path, Gauss-Legendre on
    each piece grouped into a few panels (v is analytic off the obstacles)."""
    total = 0.0
    m = 8
    idx = np.linspace(0, len(zs) - 1, m + 1).astype(int)
    for k in range(m):
        a, b = zs[idx[k]], zs[idx[k + 1]]
        if a == b:
            continue
        pts = (a + b) / 2.0 + (b - a) / 2.0 * _LEG_NODES
        v = result.vfield(pts)
        total += float(np.imag((b - a) / 2.0 * np.sum(_LEG_WEIGHTS * v)))
    return total


def _obstacle_segments(result: CapacityResult, sigma: Sequence[Trajectory]):
    disc = result.discretization
    segs = [np.stack([disc.a, disc.b], axis=1)]
    for tr in sigma:
        z = tr.points
        segs.append(np.stack([z[:-1], z[1:]], axis=1))
    return np.concatenate(segs, axis=0)


def _segments_cross(a, b, segs) -> bool:
    """Whether segment (a, b) properly crosses any obstacle segment."""
    p, q = segs[:, 0], segs[:, 1]

    def orient(u, v, w):
        return np.sign(np.imag(np.conj(v - u) * (w - u)))

    d1 = orient(a, b, p)
    d2 = orient(a, b, q)
    d3 = orient(p, q, np.full(p.shape, a))
    d4 = orient(p, q, np.full(p.shape, b))
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def _route(a: complex, b: complex, obstacles, depth: int = 0) -> List[complex]:
    """Straight path with recursive midpoint detours around obstacles."""
    if not _segments_cross(a, b, obstacles) or depth >= 6:
        return [a, b]
    mid = 0.5 * (a + b)
    n = 1j * (b - a) / abs(b - a)
    for off in (0.6, -0.6, 1.2, -1.2, 2.0, -2.0):
        w = mid + off * abs(b - a) * n
        if not _segments_cross(a, w, obstacles) \
                and not _segments_cross(w, b, obstacles):
            return [a, w, b]
    for off in (0.8, -0.8, 1.6, -1.6):
        w = mid + off * abs(b - a) * n
        left = _route(a, w, obstacles, depth + 1)
        right = _route(w, b, obstacles, depth + 1)
        if left and right:
            return left + right[1:]
    raise ValueError("no crossing-free path to the evaluation point")


# -- trajectory interception --------------------------------------------------

def _k_multiline(K: PolyContinuum) -> MultiLineString:
    surface = K.surface
    lines = []
    shifts = [0.0 + 0.0j]
    if surface.kind == "torus":
        tau = surface.tau
        shifts = [dm + dn * tau for dm in (-1, 0, 1) for dn in (-1, 0, 1)]
    a, b = K.segment_arrays()
    for dz in shifts:
        for za, zb in zip(a + dz, b + dz):
            lines.append(((za.real, za.imag), (zb.real, zb.imag)))
    return MultiLineString(lines)


def jip_check(result_F: CapacityResult, F: PolyContinuum, K: PolyContinuum,
              n_samples: int = 200, step: float = 0.01,
              tol: Optional[float] = None):
    """Interception check: do the dominant gradient lines of F meet K?

    At tie (both-dominant) points one of the two opposite trajectories
    suffices (either labeling is admissible at a tie); at strictly dominant
    points the dominant one must be intercepted.  Returns (ok, report).
    """
    tol = tol if tol is not None else F.mesh / 2.0
    sample = classify_foliation(result_F, F)
    idx = np.linspace(0, len(sample.points) - 1,
                      min(n_samples, len(sample.points))).astype(int)
    target = _k_multiline(K)
    ka, kb = K.segment_arrays()
    report = {"missed": [], "checked": 0}
    # stop once above the largest Green value K attains
    kpts = K.sample_points(K.mesh)
    g_on_k = np.atleast_1d(result_F.green(kpts))
    g_stop = float(g_on_k.max()) + 0.5
    for i in idx:
        p = sample.points[i]
        n = sample.normals[i]
        cls = sample.classification[i]
        report["checked"] += 1
        if float(Point(p.real, p.imag).distance(target)) <= tol:
            continue  # interception at the origin point
        sides = []
        if cls == "both-dominant":
            sides = [+1, -1]
        elif cls == "dominant-plus":
            sides = [+1]
        else:
            sides = [-1]
        hit = False
        for s in sides:
            if _gradient_line_hits(result_F, p + s * 0.5 * F.mesh * n, target,
                                   g_stop, step):
                hit = True
                break
        if not hit:
            report["missed"].append(complex(p))
    return len(report["missed"]) == 0, report


def _gradient_line_hits(result: CapacityResult, z0: complex,
                        target: MultiLineString, g_stop: float,
                        step: float) -> bool:
    z = complex(z0)
    pts = [z]
    for _ in range(4000):
        v = complex(result.vfield(np.array([z]))[0])
        g = np.conj(v)
        if abs(g) == 0:
            break
        z = z + step * g / abs(g)
        pts.append(z)
        if len(pts) % 16 == 0:
            gv = float(np.atleast_1d(result.green(z))[0])
            if gv > g_stop:
                break
    line = LineString([(p.real, p.imag) for p in pts])
    return bool(line.intersects(target) or line.distance(target) < step / 2)
