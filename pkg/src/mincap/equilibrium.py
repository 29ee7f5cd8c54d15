"""Discrete equilibrium measures, capacity, and Green's function evaluation.

The energy kernel matrix uses the exact double integral of the logarithmic
part over panel pairs near the diagonal (closed form for collinear panels,
tensor Gauss-Legendre otherwise), the exact self-integral ln L - 3/2 on the
diagonal, and midpoint values plus the smooth kernel remainder elsewhere.
The simplex-constrained energy minimization is a KKT solve with an active-set
loop for nonnegativity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .continua import PolyContinuum, continuum_hausdorff
from .kernels import BipolarKernel
from .surface import Surface, lattice_reduce

__all__ = [
    "PanelDiscretization",
    "DiscreteMeasure",
    "CapacityResult",
    "discretize",
    "assemble_green_matrix",
    "green_matrix_rows",
    "energy",
    "equilibrium_measure",
    "green_function",
    "capacity_rescale",
    "continuity_probe",
    "divergence_probe",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass
class PanelDiscretization:
    """Straight panels covering a poly-continuum."""

    surface: Surface
    a: np.ndarray        # panel start points (complex lifts)
    b: np.ndarray        # panel end points
    mesh: float
    source: Optional[PolyContinuum] = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)
        self.b = np.asarray(self.b, dtype=complex)
        self.mid = (self.a + self.b) / 2.0
        self.length = np.abs(self.b - self.a)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.tangent = np.where(self.length > 0,
                                    (self.b - self.a) / np.where(self.length > 0,
                                                                 self.length, 1.0),
                                    1.0 + 0.0j)

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass
class DiscreteMeasure:
    """Probability weights over panels."""

    discretization: PanelDiscretization
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < -1e-12):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        self.weights = w

    def density(self) -> np.ndarray:
        return self.weights / self.discretization.length


def discretize(K: PolyContinuum, h: Optional[float] = None) -> PanelDiscretization:
    """Split edges into panels of near-uniform length at most h."""
    h = float(h or K.mesh)
    a_list, b_list = [], []
    ea, eb = K.segment_arrays()
    for za, zb in zip(ea, eb):
        L = abs(zb - za)
        if L == 0:
            continue
        m = max(int(np.ceil(L / h)), 1)
        t = np.arange(m + 1) / m
        pts = za + t * (zb - za)
        a_list.append(pts[:-1])
        b_list.append(pts[1:])
    if not a_list:
        raise ValueError("degenerate discretization")
    return PanelDiscretization(K.surface, np.concatenate(a_list),
                               np.concatenate(b_list), h, source=K)


# -- quadrature helpers -------------------------------------------------------

def _phi(x):
    """Antiderivative kernel for the collinear log double integral."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** 2 * (2.0 * np.log(x[pos]) - 3.0) / 4.0
    return out


def _collinear_log_avg(p0, p1, q0, q1) -> float:
    """Average of ln|s - t| over two disjoint collinear panels (exact)."""
    d = np.array([abs(q1 - p0), abs(q0 - p1), abs(q1 - p1), abs(q0 - p0)])
    L1, L2 = abs(p1 - p0), abs(q1 - q0)
    val = _phi(d[:2]).sum() - _phi(d[2:]).sum()
    return float(val / (L1 * L2))


def _gl_log_avg(a1, b1, a2, b2) -> float:
    """Tensor Gauss-Legendre average of ln|p - q| over two panels."""
    p = (a1 + b1) / 2.0 + (b1 - a1) / 2.0 * _GL_NODES
    q = (a2 + b2) / 2.0 + (b2 - a2) / 2.0 * _GL_NODES
    vals = np.log(np.abs(p[:, None] - q[None, :]))
    return float(_GL_WEIGHTS @ vals @ _GL_WEIGHTS / 4.0)


def _log_avg_single(p, a, b):
    """Average of ln|p - q| for q on segment [a, b]; vectorized, exact.

    Valid for p off the open segment; principal logs apply because a segment
    subtends an angle below pi from any exterior point.
    """
    u = (b - a)
    L = np.abs(u)
    uhat = u / L
    za = (p - a) * np.conj(uhat)
    zb = (p - b) * np.conj(uhat)
    # integral of ln(zeta - t) over t in [0, L], zeta = za
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(za == 0, 0.0, za * (np.log(za) - 1.0)).real \
            - np.where(zb == 0, 0.0, zb * (np.log(zb) - 1.0)).real
    return val / L


def _inv_avg_single(p, a, b):
    """Average of 1/(p - q) for q on segment [a, b]; vectorized, exact."""
    return np.log((p - a) / (p - b)) / (b - a)


def _pair_reps(surface: Surface, dz):
    """Reduce difference arrays to nearest lattice representatives."""
    if surface.kind == "torus":
        return lattice_reduce(surface.tau, dz)
    return dz


def assemble_green_matrix(disc: PanelDiscretization,
                          kernel: BipolarKernel) -> np.ndarray:
    """Panel-averaged bipolar Green matrix."""
    G = kernel.green(disc.mid[:, None], disc.mid[None, :])
    _apply_near_corrections(G, disc, kernel, rows=None)
    np.fill_diagonal(G, np.log(disc.length) - 1.5 + kernel.diag_smooth(disc.mid))
    return G


def green_matrix_rows(disc: PanelDiscretization, kernel: BipolarKernel,
                      rows: np.ndarray) -> np.ndarray:
    """Rows of the panel-averaged Green matrix for the given panel indices."""
    G = kernel.green(disc.mid[rows, None], disc.mid[None, :])
    _apply_near_corrections(G, disc, kernel, rows=rows)
    diag = np.log(disc.length[rows]) - 1.5 + kernel.diag_smooth(disc.mid[rows])
    for k, i in enumerate(rows):
        G[k, i] = diag[k]
    return G


def _apply_near_corrections(G, disc, kernel, rows=None):
    """Replace the log part by exact/GL panel-pair averages for near pairs."""
    mid, a, b, L = disc.mid, disc.a, disc.b, disc.length
    row_idx = np.arange(disc.n) if rows is None else np.asarray(rows)
    D_raw = mid[row_idx, None] - mid[None, :]
    D = _pair_reps(disc.surface, D_raw)
    joint = (L[row_idx, None] + L[None, :])
    near = np.abs(D) <= 2.5 * joint
    for k in range(len(row_idx)):
        i = int(row_idx[k])
        for j in np.nonzero(near[k])[0]:
            j = int(j)
            if j == i:
                continue
            shift = D_raw[k, j] - D[k, j]  # lattice part of mid_i - mid_j
            a2, b2 = a[j] + shift, b[j] + shift
            cross = abs((np.conj(disc.tangent[i]) * disc.tangent[j]).imag)
            offline = abs(((a2 - mid[i]) * np.conj(disc.tangent[i])).imag)
            if cross < 1e-12 and offline < 1e-12:
                t0 = ((a[i] - mid[i]) * np.conj(disc.tangent[i])).real
                t1 = ((b[i] - mid[i]) * np.conj(disc.tangent[i])).real
                s0 = ((a2 - mid[i]) * np.conj(disc.tangent[i])).real
                s1 = ((b2 - mid[i]) * np.conj(disc.tangent[i])).real
                if max(t0, t1) <= min(s0, s1) + 1e-15 \
                        or max(s0, s1) <= min(t0, t1) + 1e-15:
                    p0, p1 = min(t0, t1), max(t0, t1)
                    q0, q1 = min(s0, s1), max(s0, s1)
                    if p0 > q0:
                        p0, p1, q0, q1 = q0, q1, p0, p1
                    log_avg = _collinear_log_avg(p0, p1, q0, q1)
                else:
                    log_avg = _gl_log_avg(a[i], b[i], a2, b2)
            else:
                log_avg = _gl_log_avg(a[i], b[i], a2, b2)
            G[k, j] += log_avg - np.log(abs(D[k, j]))


# -- capacity result ----------------------------------------------------------

@dataclass
class CapacityResult:
    """Equilibrium measure with capacity and evaluation helpers."""

    capacity: float
    energy: float
    measure: DiscreteMeasure
    robin_constant: float
    kernel: BipolarKernel

    def __post_init__(self):
        if abs(self.capacity - np.exp(-self.energy)) > 1e-12 * max(1.0, self.capacity):
            raise ValueError("capacity must equal exp(-energy)")

    @property
    def discretization(self) -> PanelDiscretization:
        return self.measure.discretization

    def _panel_terms(self, P, func_single, smooth):
        disc = self.discretization
        P = np.atleast_1d(np.asarray(P, dtype=complex))
        D_raw = P[:, None] - disc.mid[None, :]
        D = _pair_reps(disc.surface, D_raw)
        shift = D_raw - D
        a = disc.a[None, :] + shift
        b = disc.b[None, :] + shift
        vals = func_single(P[:, None], a, b) + smooth(P[:, None], disc.mid[None, :], D)
        return vals @ self.measure.weights

    def potential(self, P):
        """U(p) = int G(p, q) dmu(q), exact log part per panel."""
        k = self.kernel
        return self._panel_terms(
            P, _log_avg_single,
            lambda p, q, d: k.green(p, q) - np.log(np.abs(d)))

    def vfield(self, P):
        """Density of 2 d_p G_K(p), the gradient differential of the Green's
        function; analytic panel integrals of the third-kind kernel."""
        k = self.kernel
        return self._panel_terms(
            P, _inv_avg_single,
            lambda p, q, d: k.omega(p, q) - 1.0 / d)

    def distance_to_support(self, P):
        disc = self.discretization
        P = np.atleast_1d(np.asarray(P, dtype=complex))
        from .continua import _point_segment_distance
        d = np.full(P.shape, np.inf)
        if disc.surface.kind == "torus":
            tau = disc.surface.tau
            shifts = [dm + dn * tau for dm in (-1, 0, 1) for dn in (-1, 0, 1)]
        else:
            shifts = [0.0 + 0.0j]
        for dz in shifts:
            d = np.minimum(d, _point_segment_distance(
                P[:, None], disc.a[None, :] + dz, disc.b[None, :] + dz).min(axis=1))
        return d

    def green(self, P, clamp: Optional[float] = None):
        """Green's function of the complement; zero on the continuum.

        Values within (-clamp, 0) are clamped to 0; points within h/2 of the
        support return 0 by the boundary convention.
        """
        P = np.atleast_1d(np.asarray(P, dtype=complex))
        disc = self.discretization
        if clamp is None:
            diam = (disc.source.diameter() if disc.source is not None
                    else max(np.abs(disc.mid - disc.mid.mean()).max(), 1.0))
            clamp = 5e-3 * (disc.mesh / (0.01 * diam))
        vals = self.potential(P) - self.robin_constant
        on_k = self.distance_to_support(P) <= disc.mesh / 2.0
        vals = np.where(on_k, 0.0, vals)
        vals = np.where((vals > -clamp) & (vals < 0.0), 0.0, vals)
        return vals if vals.shape != (1,) else vals

    def panel_potentials(self) -> np.ndarray:
        """U at the panels (panel-averaged), i.e. G_hat @ w."""
        disc = self.discretization
        G = assemble_green_matrix(disc, self.kernel)
        return G @ self.measure.weights


def energy(m: DiscreteMeasure, kernel: Optional[BipolarKernel] = None,
           G: Optional[np.ndarray] = None) -> float:
    """Energy -sum_ij w_i w_j G_hat(i, j) of a discrete measure."""
    disc = m.discretization
    if kernel is None:
        kernel = BipolarKernel(disc.surface)
    inf_d = np.array([kernel._dist_to_infinity(z) for z in disc.mid])
    if inf_d.min() < disc.length[np.argmin(inf_d)] / 2.0:
        raise ValueError("panel contains the reference point")
    if G is None:
        G = assemble_green_matrix(disc, kernel)
    w = m.weights
    return float(-w @ G @ w)


def _kkt_solve(G: np.ndarray, active: np.ndarray) -> Tuple[np.ndarray, float]:
    na = len(active)
    M = np.empty((na + 1, na + 1))
    M[:na, :na] = G[np.ix_(active, active)]
    M[:na, na] = -1.0
    M[na, :na] = 1.0
    M[na, na] = 0.0
    rhs = np.zeros(na + 1)
    rhs[na] = 1.0
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate discretization") from exc
    if not np.all(np.isfinite(sol)):
        raise ValueError("degenerate discretization")
    return sol[:na], float(sol[na])


def equilibrium_measure(disc: PanelDiscretization,
                        kernel: Optional[BipolarKernel] = None,
                        G: Optional[np.ndarray] = None) -> CapacityResult:
    """Minimize the quadratic energy over the probability simplex.

    Interior solutions come from a single KKT solve; panels with negative
    weights are dropped by an active-set loop and re-enter when their
    potential rises above the Robin constant.
    """
    if disc.n < 2:
        raise ValueError("at least two panels are required")
    if kernel is None:
        kernel = BipolarKernel(disc.surface)
    if G is None:
        G = assemble_green_matrix(disc, kernel)
    n = disc.n
    active = np.arange(n)
    w_full = np.zeros(n)
    lam = 0.0
    for _ in range(80):
        w, lam = _kkt_solve(G, active)
        if w.min() < -1e-10:
            keep = w > 1e-14
            if keep.sum() < 2:
                raise ValueError("degenerate discretization")
            active = active[keep]
            continue
        w_full[:] = 0.0
        w_full[active] = np.clip(w, 0.0, None)
        U = G @ w_full
        inactive = np.setdiff1d(np.arange(n), active, assume_unique=False)
        if len(inactive):
            viol = U[inactive] - lam
            worst = np.argmax(viol)
            if viol[worst] > 1e-10:
                active = np.sort(np.append(active, inactive[worst]))
                continue
        break
    w_full = w_full / w_full.sum()
    measure = DiscreteMeasure(disc, w_full)
    robin = float(w_full @ G @ w_full)
    return CapacityResult(capacity=float(np.exp(robin)), energy=-robin,
                          measure=measure, robin_constant=robin, kernel=kernel)


def green_function(result: CapacityResult, p) -> float:
    """Green's function value at a point (scalar convenience wrapper)."""
    return float(np.atleast_1d(result.green(p))[0])


def capacity_rescale(result: CapacityResult, new_chart_coeff: complex) -> CapacityResult:
    """Capacity subordinated to a rescaled chart; the measure is unchanged."""
    c_new = complex(new_chart_coeff)
    if c_new == 0:
        raise ValueError("chart coefficient must be nonzero")
    disc = result.discretization
    old = complex(disc.surface.chart_coeff)
    factor = abs(c_new / old)
    robin = result.robin_constant - np.log(factor)
    new_surface = Surface(disc.surface.kind, disc.surface.modulus,
                          disc.surface.infinity, c_new)
    new_disc = PanelDiscretization(new_surface, disc.a, disc.b, disc.mesh,
                                   source=disc.source)
    new_kernel = BipolarKernel(new_surface)
    measure = DiscreteMeasure(new_disc, result.measure.weights)
    return CapacityResult(capacity=float(np.exp(robin)), energy=-robin,
                          measure=measure, robin_constant=float(robin),
                          kernel=new_kernel)


def _free_chain_bump(K: PolyContinuum, eps: float) -> PolyContinuum:
    """Displace free nodes along edge normals by a smooth bump of size eps."""
    from .continua import chains

    anchors = set(K.anchor_indices)
    deg = np.zeros(len(K.nodes), dtype=int)
    for a, b in K.edges:
        deg[a] += 1
        deg[b] += 1
    nodes = K.nodes.copy()
    # normals from averaged incident tangents
    tang = np.zeros(len(K.nodes), dtype=complex)
    for a, b in K.edges:
        t = K.nodes[b] - K.nodes[a]
        tang[a] += t
        tang[b] += t
    for chain in chains(K):
        m = len(chain)
        if m < 3:
            continue
        for idx, node in enumerate(chain):
            if node in anchors or deg[node] != 2:
                continue
            s = idx / (m - 1)
            t = tang[node]
            if t == 0:
                continue
            normal = 1j * t / abs(t)
            nodes[node] = K.nodes[node] + eps * np.sin(np.pi * s) * normal
    return K.with_nodes(nodes)


def continuity_probe(K: PolyContinuum, eps: float,
                     kernel: Optional[BipolarKernel] = None,
                     h: Optional[float] = None) -> Tuple[float, float]:
    """Hausdorff distance and |delta ln Cap| for a smooth bump of size eps."""
    kernel = kernel or BipolarKernel(K.surface)
    base = equilibrium_measure(discretize(K, h), kernel)
    if eps == 0:
        return 0.0, 0.0
    K2 = _free_chain_bump(K, eps)
    pert = equilibrium_measure(discretize(K2, h), kernel)
    dh = continuum_hausdorff(K, K2)
    return dh, abs(pert.robin_constant - base.robin_constant)


def divergence_probe(continua: Sequence[PolyContinuum],
                     h: Optional[float] = None) -> np.ndarray:
    """Capacities along a sequence of continua (e.g. approaching infinity)."""
    caps = []
    for K in continua:
        kernel = BipolarKernel(K.surface)
        caps.append(equilibrium_measure(discretize(K, h), kernel).capacity)
    return np.array(caps)
