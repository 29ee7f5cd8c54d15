"""Outer minimization: derivative-free shape descent on capacity over a
connectivity class, cross-validated against the quadratic-differential route.

Descent moves single shape nodes along edge normals (junctions move in the
plane), proposes Steiner-junction births at multi-edge corners, and re-checks
class membership at every accepted step.  Capacity evaluations reuse the
assembled kernel matrix, updating only the panel rows touched by a move.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .continua import (
    AnchorSet,
    ConnectivityPattern,
    PolyContinuum,
    continuum_hausdorff,
    exceeds_pattern,
    refine,
)
from .equilibrium import (
    CapacityResult,
    PanelDiscretization,
    assemble_green_matrix,
    discretize,
    equilibrium_measure,
    green_matrix_rows,
)
from .kernels import BipolarKernel, make_cauchy_context
from .quaddiff import (
    QuadDiff,
    _init_lattice_offset,
    boutroux_residual,
    boutroux_solve,
    schiffer_residual,
)
from .surface import Surface, SurfacePoint
from .trajectories import (
    build_critical_graph,
    graph_to_continuum,
    jip_check,
    s_property_residual,
)

__all__ = [
    "ProblemInstance",
    "Solution",
    "build_initial_continuum",
    "solve_shape_descent",
    "solve_boutroux_route",
    "solve",
    "uniqueness_probe",
]


@dataclass
class ProblemInstance:
    surface: Surface
    anchors: AnchorSet
    pattern: ConnectivityPattern
    mesh: float = 0.0                # panel mesh; 0 => 1% of instance diameter
    route: str = "shape"             # shape | boutroux | both
    capacity_tol: float = 1e-5
    sproperty_tol: float = 2e-2
    boutroux_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not self.pattern.is_admissible():
            raise ValueError("inadmissible pattern")
        self.anchors.validate(self.surface)
        if self.mesh <= 0:
            self.mesh = 0.01 * self.diameter()

    def diameter(self) -> float:
        z = self.anchors.coords()
        d = np.abs(z[:, None] - z[None, :]).max()
        return float(max(d, 0.5))


@dataclass
class Solution:
    minimizer: PolyContinuum
    capacity: CapacityResult
    quaddiff: Optional[QuadDiff] = None
    certificates: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)


# -- initial continuum --------------------------------------------------------

def build_initial_continuum(inst: ProblemInstance,
                            shape_h: Optional[float] = None) -> PolyContinuum:
    """Straight chart segments realizing each pattern label, merged at shared
    anchors and subdivided at the shape-node spacing."""
    surface = inst.surface
    tau = surface.tau if surface.kind == "torus" else None
    E = inst.anchors.coords()
    nodes: List[complex] = list(E)
    anchor_idx = list(range(len(E)))
    edges: List[Tuple[int, int]] = []
    h = shape_h or 4 * inst.mesh
    inf = surface.infinity.coord
    for lab in inst.pattern.labels:
        a = complex(E[lab.i])
        m, n = lab.winding or (0, 0)
        b = complex(E[lab.j]) + ((m + n * tau) if tau is not None else 0.0)
        if lab.i == lab.j and (m, n) == (0, 0):
            continue
        seg_pts = [a, b]
        if inf is not None:
            seg_pts = _avoid_reference_point(a, b, complex(inf), tau,
                                             5 * inst.mesh)
        prev = lab.i
        for k in range(len(seg_pts) - 1):
            za, zb = seg_pts[k], seg_pts[k + 1]
            mseg = max(int(np.ceil(abs(zb - za) / h)), 1)
            for q in range(1, mseg):
                nodes.append(za + (zb - za) * q / mseg)
                edges.append((prev, len(nodes) - 1))
                prev = len(nodes) - 1
            if k == len(seg_pts) - 2:
                edges.append((prev, lab.j))
            else:
                nodes.append(zb)
                edges.append((prev, len(nodes) - 1))
                prev = len(nodes) - 1
    K = PolyContinuum(surface, nodes, edges, anchor_idx, h)
    if not exceeds_pattern(K, inst.pattern, 2 * h):
        raise ValueError("infeasible start")
    return K


def _avoid_reference_point(a, b, inf, tau, clearance):
    """Bow the segment around the reference point when it passes too close."""
    shifts = [0.0] if tau is None else [dm + dn * tau
                                        for dm in (-1, 0, 1) for dn in (-1, 0, 1)]
    ab = b - a
    for dz in shifts:
        p = inf + dz
        t = np.clip(((p - a) * np.conj(ab)).real / abs(ab) ** 2, 0.0, 1.0)
        d = abs(p - (a + t * ab))
        if d < clearance and 0.0 < t < 1.0:
            foot = a + t * ab
            off = foot - p
            direction = off / abs(off) if abs(off) > 0 else 1j * ab / abs(ab)
            return [a, p + direction * 2 * clearance, b]
    return [a, b]


# -- incremental capacity evaluation ------------------------------------------

class _DescentEngine:
    """Capacity evaluations with panel-row updates for single-node moves."""

    def __init__(self, K: PolyContinuum, h_eval: float, kernel: BipolarKernel):
        self.kernel = kernel
        self.h_eval = h_eval
        self.rebuild(K)

    def rebuild(self, K: PolyContinuum):
        self.K = K
        a_list, b_list, owner = [], [], []
        ea, eb = K.segment_arrays()
        self.counts = []
        for idx, (za, zb) in enumerate(zip(ea, eb)):
            L = abs(zb - za)
            m = max(int(np.ceil(L / self.h_eval)), 1)
            self.counts.append(m)
            t = np.arange(m + 1) / m
            pts = za + t * (zb - za)
            a_list.append(pts[:-1])
            b_list.append(pts[1:])
            owner.extend([idx] * m)
        self.disc = PanelDiscretization(K.surface, np.concatenate(a_list),
                                        np.concatenate(b_list), self.h_eval,
                                        source=K)
        self.owner = np.asarray(owner)
        self.G = assemble_green_matrix(self.disc, self.kernel)
        self.result = equilibrium_measure(self.disc, self.kernel, self.G)
        # node -> incident edge ids
        self.incident: Dict[int, List[int]] = {}
        for eid, (na, nb) in enumerate(K.edges):
            self.incident.setdefault(na, []).append(eid)
            self.incident.setdefault(nb, []).append(eid)

    def _panels_of_edges(self, eids) -> np.ndarray:
        return np.nonzero(np.isin(self.owner, eids))[0]

    def evaluate_node_move(self, node: int, newpos: complex):
        """Capacity after moving one node; returns (result, commit_callable)."""
        K = self.K
        eids = self.incident.get(node, [])
        rows = self._panels_of_edges(eids)
        nodes = K.nodes.copy()
        nodes[node] = newpos
        a = self.disc.a.copy()
        b = self.disc.b.copy()
        pos = 0
        for eid, m in enumerate(self.counts):
            if eid in eids:
                za = nodes[K.edges[eid][0]]
                zb = nodes[K.edges[eid][1]]
                t = np.arange(m + 1) / m
                pts = za + t * (zb - za)
                a[pos:pos + m] = pts[:-1]
                b[pos:pos + m] = pts[1:]
            pos += m
        disc = PanelDiscretization(K.surface, a, b, self.h_eval, source=K)
        G = self.G.copy()
        new_rows = green_matrix_rows(disc, self.kernel, rows)
        G[rows, :] = new_rows
        G[:, rows] = new_rows.T
        try:
            res = equilibrium_measure(disc, self.kernel, G)
        except ValueError:
            return None, None

        def commit():
            self.K = K.with_nodes(nodes)
            self.disc = disc
            self.disc.source = self.K
            self.G = G
            self.result = res
            self.incident = self.incident  # unchanged topology

        return res, commit


def _node_normals(K: PolyContinuum) -> np.ndarray:
    tang = np.zeros(len(K.nodes), dtype=complex)
    for a, b in K.edges:
        t = K.nodes[b] - K.nodes[a]
        tang[a] += t
        tang[b] += t
    with np.errstate(invalid="ignore", divide="ignore"):
        n = 1j * tang / np.abs(tang)
    n[~np.isfinite(n)] = 1.0
    return n


def _respace(K: PolyContinuum, h: float) -> PolyContinuum:
    """Arc-length resampling of every chain at spacing h (anchors and
    junctions preserved)."""
    from .continua import chains as chain_list

    deg: Dict[int, int] = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    keep = {i for i in range(len(K.nodes))
            if deg.get(i, 0) != 2 or i in K.anchor_indices}
    new_nodes: List[complex] = []
    remap: Dict[int, int] = {}
    for i in sorted(keep):
        remap[i] = len(new_nodes)
        new_nodes.append(complex(K.nodes[i]))
    new_edges: List[Tuple[int, int]] = []
    for chain in chain_list(K):
        z = K.nodes[chain]
        seg = np.abs(np.diff(z))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        L = s[-1]
        m = max(int(np.ceil(L / h)), 1)
        si = np.linspace(0, L, m + 1)
        zi = np.interp(si, s, z.real) + 1j * np.interp(si, s, z.imag)
        prev = remap[chain[0]]
        for k in range(1, m):
            new_nodes.append(complex(zi[k]))
            new_edges.append((prev, len(new_nodes) - 1))
            prev = len(new_nodes) - 1
        new_edges.append((prev, remap[chain[-1]]))
    anchors = [remap[i] for i in K.anchor_indices]
    return PolyContinuum(K.surface, new_nodes, new_edges, anchors, h)


def _corner_split(K: PolyContinuum, node: int, delta: float) -> Optional[PolyContinuum]:
    """Steiner junction birth at a corner where two or more edges meet."""
    inc = [(eid, e) for eid, e in enumerate(K.edges) if node in e]
    if len(inc) < 2:
        return None
    dirs = []
    for _, (a, b) in inc:
        other = b if a == node else a
        d = K.nodes[other] - K.nodes[node]
        if abs(d) == 0:
            return None
        dirs.append(d / abs(d))
    bis = np.sum(dirs)
    if abs(bis) < 1e-9:
        return None
    bis = bis / abs(bis)
    nodes = list(K.nodes)
    j = len(nodes)
    nodes.append(K.nodes[node] + delta * bis)
    edges = []
    for eid, (a, b) in enumerate(K.edges):
        if node in (a, b):
            other = b if a == node else a
            edges.append((j, other))
        else:
            edges.append((a, b))
    edges.append((node, j))
    try:
        return PolyContinuum(K.surface, nodes, edges, K.anchor_indices, K.mesh)
    except ValueError:
        return None


def solve_shape_descent(inst: ProblemInstance,
                        initial: Optional[PolyContinuum] = None,
                        with_certificates: bool = True) -> Solution:
    """Coordinate descent on capacity over normal node displacements.

    The beta ladder runs on a coarse evaluation mesh; the final capacity and
    certificates are computed at the instance mesh after a polish sweep.
    """
    rng = np.random.default_rng(inst.seed)
    kernel = BipolarKernel(inst.surface)
    diam = inst.diameter()
    beta = 0.08 * diam
    beta_floor = 2e-4 * diam

    def spacing(b):
        return float(np.clip(2 * b, 4 * inst.mesh, diam / 12))

    K = initial if initial is not None else \
        build_initial_continuum(inst, spacing(beta))
    if not exceeds_pattern(K, inst.pattern, 2 * K.mesh):
        raise ValueError("infeasible start")
    h_coarse = max(inst.mesh, K.total_length() / 130)
    engine = _DescentEngine(_respace(K, spacing(beta)), h_coarse, kernel)
    accepted = [engine.result.robin_constant]
    while beta > beta_floor:
        improved = _sweep(engine, inst, beta, rng)
        accepted.append(engine.result.robin_constant)
        if not improved or accepted[-2] - accepted[-1] < inst.capacity_tol:
            beta *= 0.5
            engine.rebuild(_respace(engine.K, spacing(beta)))
        elif improved:
            engine.rebuild(_respace(engine.K, spacing(beta)))
    # chord proposal clears descent-history wiggles; junction search then has
    # a clean landscape; the gradient flow refines the fine shape
    K_cur = _chord_simplify(engine.K, engine.h_eval, kernel, inst.capacity_tol)
    engine.rebuild(K_cur)
    if _has_junctions(engine.K):
        _refine_junctions(engine, inst)
        engine.rebuild(_chord_simplify(engine.K, engine.h_eval, kernel,
                                       inst.capacity_tol))
        _refine_junctions(engine, inst)
    K_cur = _shape_gradient_polish(engine.K, kernel, engine.h_eval,
                                   inst.pattern, iters=40)
    # polish at the instance mesh
    K_final = _respace(K_cur, 4 * inst.mesh)
    K_final = _shape_gradient_polish(K_final, kernel, inst.mesh, inst.pattern,
                                     iters=25)
    result = equilibrium_measure(discretize(K_final, inst.mesh), kernel)
    sol = Solution(K_final, result,
                   metadata={"route": "shape-descent",
                             "homotopy_model": "winding" if
                             inst.surface.kind == "torus" else "partition",
                             "seed": int(inst.seed),
                             "beta_floor": beta_floor,
                             "capacity_tol": inst.capacity_tol,
                             "accepted_robin": accepted})
    if with_certificates:
        _attach_certificates(sol, inst, kernel)
    return sol


def _sweep(engine: _DescentEngine, inst: ProblemInstance, beta: float,
           rng: np.random.Generator, accept_tol: float = 1e-6) -> bool:
    """One descent sweep; returns True when some move was accepted.

    Moves must beat the current capacity by accept_tol, which keeps the
    descent from harvesting quadrature noise with microscopic node jitter.
    """
    K = engine.K
    deg: Dict[int, int] = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    anchors = set(K.anchor_indices)
    normals = _node_normals(K)
    free = [i for i in range(len(K.nodes)) if i not in anchors]
    rng.shuffle(free)
    improved = False
    neighbors: Dict[int, List[int]] = {}
    for a, b in K.edges:
        neighbors.setdefault(a, []).append(b)
        neighbors.setdefault(b, []).append(a)
    for node in free:
        d = deg.get(node, 0)
        if d == 0:
            continue
        base = engine.result.robin_constant
        pos0 = engine.K.nodes[node]
        cands = []
        if d == 2:
            n = normals[node]
            cands = [pos0 + beta * n, pos0 - beta * n]
            # chain smoothing: jitter costs capacity, so averaging is a
            # legitimate descent candidate
            nb = neighbors[node]
            cands.append(0.5 * (engine.K.nodes[nb[0]] + engine.K.nodes[nb[1]]))
        else:
            cands = [pos0 + beta * w for w in (1, -1, 1j, -1j)]
        # greedy slide: keep moving an accepted node while it helps, so a
        # junction walks to its stationary point within one sweep
        for _ in range(60):
            best = None
            for pos in cands:
                res, commit = engine.evaluate_node_move(node, pos)
                if res is None:
                    continue
                if res.robin_constant < base - accept_tol:
                    if best is None or res.robin_constant < best[0]:
                        best = (res.robin_constant, pos, commit)
            if best is None:
                break
            cand_nodes = engine.K.nodes.copy()
            cand_nodes[node] = best[1]
            K_cand = engine.K.with_nodes(cand_nodes)
            if not exceeds_pattern(K_cand, inst.pattern, 2 * engine.K.mesh):
                break
            best[2]()
            improved = True
            base = engine.result.robin_constant
            pos0 = engine.K.nodes[node]
            if d == 2:
                n = normals[node]
                nb = neighbors[node]
                cands = [pos0 + beta * n, pos0 - beta * n,
                         0.5 * (engine.K.nodes[nb[0]] + engine.K.nodes[nb[1]])]
            else:
                cands = [pos0 + beta * w for w in (1, -1, 1j, -1j)]
    # junction birth at multi-edge corners (anchors included)
    if beta >= 2 * engine.h_eval:
        for node in list(anchors):
            if deg.get(node, 0) < 2:
                continue
            K2 = _corner_split(engine.K, node, max(beta, 2 * engine.h_eval))
            if K2 is None:
                continue
            base = engine.result.robin_constant
            try:
                disc2 = discretize(K2, engine.h_eval)
                res2 = equilibrium_measure(disc2, engine.kernel)
            except ValueError:
                continue
            if res2.robin_constant < base - accept_tol \
                    and exceeds_pattern(K2, inst.pattern, 2 * K2.mesh):
                engine.rebuild(K2)
                improved = True
    return improved


def _chord_simplify(K: PolyContinuum, h_eval: float, kernel: BipolarKernel,
                    cap_tol: float) -> PolyContinuum:
    """Propose replacing every chain by its straight chord.

    Accepted when the capacity does not degrade beyond the termination
    tolerance: descent history leaves long-wavelength arc wiggles whose
    removal is worth at most a tolerance-sized capacity change, while a
    genuinely curved optimum rejects the proposal.
    """
    from .continua import chains as chain_list

    base = equilibrium_measure(discretize(K, h_eval), kernel)
    nodes = K.nodes.copy()
    for chain in chain_list(K):
        z = K.nodes[chain]
        seg = np.abs(np.diff(z))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        if s[-1] == 0:
            continue
        frac = s / s[-1]
        nodes[chain] = z[0] + frac * (z[-1] - z[0])
    try:
        K2 = K.with_nodes(nodes)
        r2 = equilibrium_measure(discretize(K2, h_eval), kernel)
    except ValueError:
        return K
    if r2.robin_constant <= base.robin_constant + cap_tol:
        return K2
    return K


def _junction_positions(K: PolyContinuum) -> List[complex]:
    deg: Dict[int, int] = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    anchors = set(K.anchor_indices)
    return [complex(K.nodes[i]) for i, d in sorted(deg.items())
            if d >= 3 and i not in anchors]


def _has_junctions(K: PolyContinuum) -> bool:
    return bool(_junction_positions(K))


def _junction_translate(K: PolyContinuum, node: int,
                        delta: complex) -> Optional[PolyContinuum]:
    """Move a junction with a linearly tapered displacement of its chains,
    avoiding the kink penalty of a lone-node move."""
    from .continua import chains as chain_list

    nodes = K.nodes.copy()
    touched = False
    for chain in chain_list(K):
        if chain[0] == node:
            seq = chain
        elif chain[-1] == node:
            seq = chain[::-1]
        else:
            continue
        touched = True
        z = K.nodes[seq]
        seg = np.abs(np.diff(z))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        L = s[-1]
        if L == 0:
            return None
        taper = 1.0 - s / L
        for k, idx in enumerate(seq[:-1]):
            nodes[idx] = K.nodes[idx] + delta * taper[k]
    if not touched:
        return None
    try:
        return K.with_nodes(nodes)
    except ValueError:
        return None


def _fraction_panels(K: PolyContinuum, counts: List[int]) -> PanelDiscretization:
    """Panels at fixed arc-length fractions per chain.

    With frozen counts the discrete capacity varies smoothly under shape
    moves, free of the jumps a per-edge ceil rule produces when edge lengths
    cross subdivision thresholds.
    """
    from .continua import chains as chain_list

    a_list, b_list = [], []
    for chain, m in zip(chain_list(K), counts):
        z = K.nodes[chain]
        seg = np.abs(np.diff(z))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        si = np.linspace(0.0, s[-1], m + 1)
        pts = np.interp(si, s, z.real) + 1j * np.interp(si, s, z.imag)
        a_list.append(pts[:-1])
        b_list.append(pts[1:])
    return PanelDiscretization(K.surface, np.concatenate(a_list),
                               np.concatenate(b_list), K.mesh, source=K)


def _refine_junctions(engine: _DescentEngine, inst: ProblemInstance,
                      accept_tol: float = 1e-9):
    """Pattern search over junction positions using collective translations.

    Tapered-chain moves carry the full geometric capacity signal; candidates
    are compared on a frozen fractional panel layout so the landscape is
    smooth at the accept tolerance.
    """
    from .continua import chains as chain_list

    deg: Dict[int, int] = {}
    for a, b in engine.K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    anchors = set(engine.K.anchor_indices)
    junctions = [i for i, d in deg.items() if d >= 3 and i not in anchors]
    if not junctions:
        return
    K = engine.K
    counts = []
    for chain in chain_list(K):
        z = K.nodes[chain]
        L = float(np.abs(np.diff(z)).sum())
        counts.append(max(int(np.ceil(L / engine.h_eval)), 2))

    def objective(Kc: PolyContinuum) -> float:
        return equilibrium_measure(_fraction_panels(Kc, counts),
                                   engine.kernel).robin_constant

    base = objective(K)
    dirs = np.exp(2j * np.pi * np.arange(8) / 8)
    beta = 8 * engine.h_eval
    changed = False
    while beta > engine.h_eval / 16:
        moved = False
        for node in junctions:
            for _ in range(60):
                best = None
                for w in dirs:
                    K2 = _junction_translate(K, node, beta * w)
                    if K2 is None:
                        continue
                    try:
                        r2 = objective(K2)
                    except ValueError:
                        continue
                    if r2 < base - accept_tol and (best is None or r2 < best[0]):
                        best = (r2, K2)
                if best is None:
                    break
                if not exceeds_pattern(best[1], inst.pattern, 2 * K.mesh):
                    break
                base, K = best[0], best[1]
                moved = changed = True
        if not moved:
            beta *= 0.5
    if changed:
        engine.rebuild(K)


def _shape_gradient_polish(K: PolyContinuum, kernel: BipolarKernel,
                           h_eval: float, pattern: ConnectivityPattern,
                           iters: int = 40,
                           min_step: float = 1e-6) -> PolyContinuum:
    """Flow the free nodes against the capacity shape gradient.

    The first variation of ln Cap under a normal displacement is proportional
    to the difference of the squared one-sided normal derivatives of the
    Green's function, so moving each node toward the recessive side descends;
    at the S-property configuration the flow is stationary.  Panels are kept
    at frozen arc-length fractions so the objective is smooth.
    """
    from .continua import chains as chain_list

    counts = []
    for chain in chain_list(K):
        z = K.nodes[chain]
        L = float(np.abs(np.diff(z)).sum())
        counts.append(max(int(np.ceil(L / h_eval)), 2))

    def solve_k(Kc):
        return equilibrium_measure(_fraction_panels(Kc, counts), kernel)

    res = solve_k(K)
    deg: Dict[int, int] = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    anchors = set(K.anchor_indices)
    free = np.array([i for i in range(len(K.nodes))
                     if i not in anchors and deg.get(i, 0) == 2])
    junctions = [i for i, d in deg.items() if d >= 3 and i not in anchors]
    if len(free) == 0:
        return K
    eta = 1.0
    for it in range(iters):
        # joint descent: every other iterate steps the junctions along the
        # finite-difference gradient of the frozen-layout objective
        if junctions and it % 2 == 1:
            for node in junctions:
                delta = 0.3 * h_eval
                gx = gy = 0.0
                try:
                    for w, acc in ((1.0, "x"), (1j, "y")):
                        Kp = _junction_translate(K, node, delta * w)
                        Km = _junction_translate(K, node, -delta * w)
                        if Kp is None or Km is None:
                            raise ValueError
                        dgrad = (solve_k(Kp).robin_constant
                                 - solve_k(Km).robin_constant) / (2 * delta)
                        if acc == "x":
                            gx = dgrad
                        else:
                            gy = dgrad
                except ValueError:
                    continue
                g_j = gx + 1j * gy
                if abs(g_j) == 0:
                    continue
                step_j = min(0.5 * h_eval, 2 * abs(g_j))
                while step_j > 1e-5 * h_eval:
                    K2 = _junction_translate(K, node,
                                             -step_j * g_j / abs(g_j))
                    if K2 is not None:
                        try:
                            r2 = solve_k(K2)
                        except ValueError:
                            r2 = None
                        if r2 is not None and \
                                r2.robin_constant < res.robin_constant - 1e-13:
                            K, res = K2, r2
                            break
                    step_j *= 0.5
        nodes = K.nodes
        tang = np.zeros(len(nodes), dtype=complex)
        for a, b in K.edges:
            t = nodes[b] - nodes[a]
            tang[a] += t
            tang[b] += t
        nrm = 1j * tang[free] / np.abs(tang[free])
        p = nodes[free]
        delta = 0.2 * h_eval
        dp = np.real(res.vfield(p + delta * nrm) * nrm)
        dm = np.real(res.vfield(p - delta * nrm) * (-nrm))
        g = dp ** 2 - dm ** 2
        # smooth the raw gradient along the node ordering for stability
        if len(g) > 2:
            g = np.convolve(np.pad(g, 1, mode="edge"),
                            [0.25, 0.5, 0.25], mode="valid")
        scale = np.abs(g).max()
        if scale == 0:
            break
        step = eta * 0.4 * h_eval / scale
        moved = False
        while step * scale > min_step * h_eval:
            cand = nodes.copy()
            cand[free] = nodes[free] - step * g * nrm
            try:
                K2 = K.with_nodes(cand)
                r2 = solve_k(K2)
            except ValueError:
                step *= 0.5
                continue
            if r2.robin_constant < res.robin_constant - 1e-13:
                if not exceeds_pattern(K2, pattern, 2 * K2.mesh):
                    break
                K, res = K2, r2
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return K


def _laplacian_smooth(K: PolyContinuum, passes: int = 3,
                      relax: float = 0.7) -> PolyContinuum:
    """Midpoint relaxation of interior chain nodes (discretization-jitter
    removal; straight chains are fixed points)."""
    deg: Dict[int, int] = {}
    nb: Dict[int, List[int]] = {}
    for a, b in K.edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
        nb.setdefault(a, []).append(b)
        nb.setdefault(b, []).append(a)
    anchors = set(K.anchor_indices)
    nodes = K.nodes.copy()
    for _ in range(passes):
        upd = nodes.copy()
        for i in range(len(nodes)):
            if i in anchors or deg.get(i, 0) != 2:
                continue
            mid = 0.5 * (nodes[nb[i][0]] + nodes[nb[i][1]])
            upd[i] = (1 - relax) * nodes[i] + relax * mid
        nodes = upd
    return K.with_nodes(nodes)


def _attach_certificates(sol: Solution, inst: ProblemInstance,
                         kernel: BipolarKernel):
    res = sol.capacity
    K = sol.minimizer
    sol.certificates["s_property_residual"] = s_property_residual(res, K)
    try:
        rng = np.random.default_rng(inst.seed + 1)
        cctx = make_cauchy_context(inst.surface, inst.anchors.coords(),
                                   avoid=K.nodes, rng=rng)
        probes = _schiffer_probes(inst, K)
        vals = [abs(schiffer_residual(res.measure, kernel, cctx, x))
                for x in probes]
        sol.certificates["schiffer_residual"] = float(max(vals))
    except ValueError:
        sol.certificates["schiffer_residual"] = float("nan")
    if sol.quaddiff is not None:
        r = boutroux_residual(sol.quaddiff)
        sol.certificates["boutroux_residual"] = float(np.abs(np.real(r.periods)).max()) \
            if len(r.periods) else 0.0
        sol.certificates["biresidue_defect"] = abs(r.biresidue_defect)


def _schiffer_probes(inst: ProblemInstance, K: PolyContinuum) -> np.ndarray:
    E = inst.anchors.coords()
    c = E.mean()
    r = max(np.abs(E - c).max(), 0.5)
    if inst.surface.kind == "sphere":
        return c + 1.8 * r * np.exp(1j * np.array([0.4, 2.1, 4.0]))
    # torus: probe between the continuum and the reference point
    t = complex(inst.surface.infinity.coord)
    pts = []
    for lam in (0.45, 0.55):
        for ph in (0.15, -0.2):
            z = c + lam * (t - c) + ph * 1j * (t - c)
            pts.append(z)
    return np.asarray(pts[:3])


# -- quadratic-differential route ---------------------------------------------

def _initial_quaddiff(inst: ProblemInstance,
                      rng: np.random.Generator,
                      perturb: float = 1e-2) -> QuadDiff:
    E = inst.anchors.coords()
    N = len(E)
    surface = inst.surface
    if surface.kind == "sphere":
        n_zero = N - 2
        bary = []
        for lab in inst.pattern.labels:
            bary.append(0.5 * (E[lab.i] + E[lab.j]))
        while len(bary) < n_zero:
            bary.append(E.mean())
        zeros = np.asarray(bary[:n_zero], dtype=complex)
        zeros = zeros + perturb * (rng.standard_normal(len(zeros))
                                   + 1j * rng.standard_normal(len(zeros)))
        return QuadDiff(surface, E, zeros, np.ones(len(zeros), dtype=int))
    if N != 2:
        raise ValueError("torus ansatz implemented for two anchors")
    tau = surface.tau
    t = complex(surface.infinity.coord)
    zeros = np.array([t + 0.5 * (1 + tau), t + 0.5], dtype=complex)
    zeros = zeros + perturb * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
    mults = np.array([2, 2])
    off = _init_lattice_offset(surface, E, zeros, mults)
    return QuadDiff(surface, E, zeros, mults, lattice_offset=off)


def solve_boutroux_route(inst: ProblemInstance, max_starts: int = 10,
                         with_certificates: bool = True) -> Solution:
    """Solve the period conditions, trace the critical graph, and take the
    level-zero component realizing the pattern as the minimizer."""
    rng = np.random.default_rng(inst.seed)
    kernel = BipolarKernel(inst.surface)
    last_exc: Optional[Exception] = None
    for attempt in range(max_starts):
        try:
            qd0 = _initial_quaddiff(inst, rng,
                                    perturb=1e-2 * (1 + attempt))
            qd = boutroux_solve(qd0, tol=inst.boutroux_tol)
            graph = build_critical_graph(qd, mesh=inst.mesh)
            K = graph_to_continuum(graph, qd, inst.anchors.coords(),
                                   max(inst.mesh, 1e-3))
            if not exceeds_pattern(K, inst.pattern, 2 * K.mesh):
                raise ValueError("pattern unreachable from ansatz")
            disc = discretize(K, inst.mesh)
            result = equilibrium_measure(disc, kernel)
            sol = Solution(K, result, quaddiff=qd,
                           metadata={"route": "boutroux",
                                     "seed": int(inst.seed),
                                     "attempt": attempt,
                                     "zeros": [complex(z) for z in qd.zeros],
                                     "homotopy_model": "winding" if
                                     inst.surface.kind == "torus" else "partition"})
            if with_certificates:
                _attach_certificates(sol, inst, kernel)
            return sol
        except ValueError as exc:
            last_exc = exc
            continue
    if last_exc and "pattern" in str(last_exc):
        raise ValueError("pattern unreachable from ansatz") from last_exc
    raise ValueError(f"no quadratic-differential solution found from "
                     f"{max_starts} starts") from last_exc


def solve(inst: ProblemInstance) -> Solution:
    """Dispatch on the requested route; route 'both' cross-validates."""
    if inst.route == "shape":
        return solve_shape_descent(inst)
    if inst.route == "boutroux":
        return solve_boutroux_route(inst)
    if inst.route != "both":
        raise ValueError(f"unknown route {inst.route!r}")
    sol_s = solve_shape_descent(inst)
    sol_b = solve_boutroux_route(inst)
    d_h = continuum_hausdorff(sol_s.minimizer, sol_b.minimizer)
    gap = abs(sol_s.capacity.capacity - sol_b.capacity.capacity)
    sol_s.quaddiff = sol_b.quaddiff
    sol_s.certificates.update({
        "route_capacity_gap": float(gap),
        "route_hausdorff": float(d_h),
        "boutroux_residual": sol_b.certificates.get("boutroux_residual", 0.0),
        "biresidue_defect": sol_b.certificates.get("biresidue_defect", 0.0),
    })
    sol_s.metadata["route"] = "both"
    sol_s.metadata["boutroux_capacity"] = sol_b.capacity.capacity
    sol_s.metadata["zeros"] = sol_b.metadata.get("zeros", [])
    return sol_s


def uniqueness_probe(inst: ProblemInstance, trials: int = 5) -> Dict[str, object]:
    """Multi-start support for uniqueness: restart the descent from randomized
    feasible initializations and report the spread of the minimizers."""
    from .equilibrium import _free_chain_bump

    rng = np.random.default_rng(inst.seed + 777)
    sols: List[Solution] = []
    for k in range(trials):
        K0 = build_initial_continuum(inst)
        if k > 0:
            amp = 0.05 * inst.diameter() * rng.uniform(0.3, 1.0)
            K0 = _free_chain_bump(K0, amp * rng.choice([-1.0, 1.0]))
        inst_k = ProblemInstance(inst.surface, inst.anchors, inst.pattern,
                                 inst.mesh, "shape", inst.capacity_tol,
                                 inst.sproperty_tol, inst.boutroux_tol,
                                 seed=inst.seed + k)
        sols.append(solve_shape_descent(inst_k, initial=K0,
                                        with_certificates=False))
    caps = [s.capacity.capacity for s in sols]
    dmax = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            dmax = max(dmax, continuum_hausdorff(sols[i].minimizer,
                                                 sols[j].minimizer))
    return {"capacities": caps,
            "capacity_spread": float(max(caps) - min(caps)),
            "hausdorff_spread": float(dmax),
            "supports_uniqueness": bool(max(caps) - min(caps)
                                        <= 2 * inst.capacity_tol)}
