"""Meromorphic quadratic differentials with prescribed simple poles, their
double covers, square-root periods, and the Newton solver for the condition
that all periods are purely imaginary.

Representations: a rational function B(z)/A(z) dz^2 on the sphere (A monic
with the anchor roots) and a Jacobi theta-quotient on the torus, with the
divisor lattice condition enforced by solving for one zero.  The square root
is traced with sign continuity along integration paths; periods between
branch points use a cosine substitution that removes the endpoint
singularities, followed by Gauss-Legendre panels with doubling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kernels import BipolarKernel, CauchyKernelContext
from .surface import Surface, lattice_reduce
from .theta import jacobi_theta1

__all__ = [
    "QuadDiff",
    "DoubleCover",
    "BoutrouxResidual",
    "sqrt_period",
    "boutroux_residual",
    "boutroux_solve",
    "from_critical_measure",
    "schiffer_residual",
    "count_green_zeros",
]

_BRANCH_CLEARANCE = 1e-3


@dataclass
class QuadDiff:
    """Quadratic differential with simple poles at the anchors and a double
    pole with unit bi-residue at the reference point."""

    surface: Surface
    poles: np.ndarray                 # simple poles (anchor positions)
    zeros: np.ndarray                 # zero positions
    zero_mults: np.ndarray            # multiplicities
    scale: complex = 1.0 + 0.0j
    lattice_offset: Tuple[int, int] = (0, 0)   # torus divisor offset m0 + n0*tau

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=complex)
        self.zeros = np.asarray(self.zeros, dtype=complex)
        self.zero_mults = np.asarray(self.zero_mults, dtype=int)
        g = 1 if self.surface.kind == "torus" else 0
        degree = int(self.zero_mults.sum()) - len(self.poles) - 2
        if degree != 4 * g - 4:
            raise ValueError("divisor degree must be 4g - 4")

    # -- evaluation ---------------------------------------------------------

    def density(self, z):
        """Density Q(z) of the differential Q(z) dz^2 in the global chart."""
        z = np.asarray(z, dtype=complex)
        if self.surface.kind == "sphere":
            num = np.ones_like(z)
            for u, m in zip(self.zeros, self.zero_mults):
                num = num * (z - u) ** m
            den = np.ones_like(z)
            for e in self.poles:
                den = den * (z - e)
            return self.scale * num / den
        tau = self.surface.tau
        t = complex(self.surface.infinity.coord)
        m0, n0 = self.lattice_offset
        val = np.exp(-2j * np.pi * n0 * z) * self.scale
        for u, m in zip(self.zeros, self.zero_mults):
            val = val * jacobi_theta1(tau, z - u) ** m
        for e in self.poles:
            val = val / jacobi_theta1(tau, z - e)
        return val / jacobi_theta1(tau, z - t) ** 2

    def singular_points(self) -> np.ndarray:
        t = self.surface.infinity.coord
        pts = list(self.poles) + list(self.zeros)
        if t is not None:
            pts.append(complex(t))
        return np.asarray(pts, dtype=complex)

    def branch_points(self) -> np.ndarray:
        """Odd-order points of the divisor: simple poles and odd zeros."""
        pts = list(self.poles)
        for u, m in zip(self.zeros, self.zero_mults):
            if m % 2 == 1:
                pts.append(u)
        return np.asarray(pts, dtype=complex)

    def biresidue(self) -> complex:
        """Coefficient of w^-2 dw^2 at the reference point, by contour
        extraction in the local chart (independent of the representation)."""
        if self.surface.kind == "sphere":
            if self.surface.infinity.coord is not None:
                raise ValueError(
                    "bi-residue extraction requires the standard reference point")
            sing = np.concatenate([self.poles, self.zeros]) if len(self.zeros) \
                else self.poles
            r = 0.25 / max(np.abs(sing).max(), 1.0)

            def qw(w):
                return self.density(1.0 / w) / w ** 4
        else:
            t = complex(self.surface.infinity.coord)
            sing = np.concatenate([self.poles, self.zeros])
            d = np.abs(lattice_reduce(self.surface.tau, sing - t))
            r = min(0.2, 0.4 * d.min())

            def qw(w):
                return self.density(t + w)
        # (1/2pi i) oint w Q(w) dw with dw = i w dtheta reduces to mean(w^2 Q)
        val = None
        n = 64
        for _ in range(8):
            th = 2 * np.pi * np.arange(n) / n
            w = r * np.exp(1j * th)
            new = np.mean(w ** 2 * qw(w))
            if val is not None and abs(new - val) < 1e-12 * max(1.0, abs(new)):
                return complex(new)
            val = new
            n *= 2
        return complex(val)

    def nearest_singular_distance(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        sing = self.singular_points()
        if self.surface.kind == "torus":
            tau = self.surface.tau
            d = np.abs(lattice_reduce(tau, z[:, None] - sing[None, :]))
        else:
            d = np.abs(z[:, None] - sing[None, :])
        return d.min(axis=1)


@dataclass
class DoubleCover:
    """Double cover v^2 = Q with branch data and a cycle basis."""

    base: QuadDiff
    branch_points: np.ndarray
    cycles: List[tuple] = field(default_factory=list)

    def infinity_residues(self) -> Tuple[complex, complex]:
        """Residues of v at the two lifts of the reference point."""
        s = np.sqrt(self.base.biresidue())
        return (s, -s)


def make_double_cover(qd: QuadDiff) -> DoubleCover:
    """Assemble branch points and a homology cycle description.

    Pair cycles join the first branch point to each other one.  On the torus
    the two lattice loops are added; when a loop lift changes sheet it is
    closed up by a crossing leg around the first branch point.
    """
    bp = qd.branch_points()
    cycles: List[tuple] = []
    for k in range(1, len(bp)):
        cycles.append(("pair", complex(bp[0]), complex(bp[k])))
    if qd.surface.kind == "torus":
        tau = qd.surface.tau
        base = _loop_base_point(qd)
        cross = complex(bp[0]) if len(bp) else None
        cycles.append(("loop", base, 1.0 + 0.0j, cross))
        cycles.append(("loop", base, tau, cross))
    return DoubleCover(qd, bp, cycles)


def _loop_base_point(qd: QuadDiff) -> complex:
    """A cell point whose straight a/b loop paths stay clear of singularities."""
    tau = qd.surface.tau
    sing = qd.singular_points()
    rng = np.random.default_rng(12345)
    tgrid = np.linspace(0, 1, 33)
    best, best_d = 0.0 + 0.0j, -1.0
    for _ in range(200):
        z = rng.uniform(0, 1) + rng.uniform(0, 1) * tau
        d1 = np.abs(lattice_reduce(tau, (z + tgrid)[:, None] - sing[None, :])).min()
        d2 = np.abs(lattice_reduce(tau, (z + tgrid * tau)[:, None] - sing[None, :])).min()
        d = min(d1, d2)
        if d > best_d:
            best, best_d = z, d
    return complex(best)


# -- square-root continuation and periods ------------------------------------

def _continued_sqrt(Q: np.ndarray, v0: Optional[complex] = None) -> np.ndarray:
    """Square root of a sampled analytic function with sign continuity."""
    v = np.sqrt(Q)
    if v0 is not None and abs(v[0] + v0) < abs(v[0] - v0):
        v = -v
    flip = np.ones(len(v))
    for k in range(1, len(v)):
        if abs(v[k] * flip[k - 1] - v[k - 1] * flip[k - 1]) > \
                abs(v[k] * flip[k - 1] + v[k - 1] * flip[k - 1]):
            flip[k] = -flip[k - 1]
        else:
            flip[k] = flip[k - 1]
    return v * flip


class _SignMemory:
    """Remembers the starting branch of v per labelled integration path, so
    residual components keep a consistent sign across Newton iterates."""

    def __init__(self):
        self.start: Dict[object, complex] = {}

    def anchor(self, key, v_start: complex) -> complex:
        ref = self.start.get(key)
        if ref is None or abs(ref) == 0:
            self.start[key] = v_start
            return v_start
        if abs(v_start - ref) > abs(v_start + ref):
            v_start = -v_start
        self.start[key] = v_start
        return v_start


def _gl_path_integral(qd: QuadDiff, zfun: Callable[[np.ndarray], np.ndarray],
                      dzfun: Callable[[np.ndarray], np.ndarray],
                      sign_memory: Optional[_SignMemory] = None,
                      key=None, tol: float = 1e-11,
                      return_ends: bool = False,
                      start_hint: Optional[complex] = None):
    """Integral of v = sqrt(Q) along a parametrized path on [0, 1].

    Gauss-Legendre with node doubling.  The starting branch is taken from the
    sign memory (keeps residual components continuous across Newton iterates)
    or from an explicit hint when continuing across composite-path legs.
    """
    prev = None
    v = np.array([0.0j])
    val = 0.0j
    for n in (96, 192, 384, 768, 1536, 3072):
        x, w = np.polynomial.legendre.leggauss(n)
        u = (x + 1.0) / 2.0
        z = zfun(u)
        dz = dzfun(u)
        v = _continued_sqrt(qd.density(z))
        ref = None
        if start_hint is not None:
            ref = start_hint
        elif sign_memory is not None:
            ref = sign_memory.anchor(key, complex(v[0]))
        if ref is not None and abs(v[0] - ref) > abs(v[0] + ref):
            v = -v
        val = complex(np.sum(w / 2.0 * v * dz))
        if prev is not None and abs(val - prev) < tol * max(1.0, abs(val)):
            break
        prev = val
    if return_ends:
        return val, complex(v[0]), complex(v[-1])
    return val


def _composite_period(qd: QuadDiff, legs, sign_memory, key):
    """Integral of v over a chain of legs with branch continuity across legs.

    Returns (value, v_at_start, v_at_end); consecutive legs must start where
    the previous one ends (modulo the lattice for an elliptic density).
    """
    total = 0.0j
    hint = None
    v_first = None
    for idx, (zfun, dzfun) in enumerate(legs):
        mem = sign_memory if idx == 0 else None
        val, v0, v1 = _gl_path_integral(qd, zfun, dzfun, sign_memory=mem,
                                        key=key, return_ends=True,
                                        start_hint=hint)
        if v_first is None:
            v_first = v0
        total += val
        hint = v1
    return total, v_first, hint


def _pair_path(qd: QuadDiff, a: complex, b: complex):
    """Cosine-substituted straight path from a to b, bending away from any
    third singular point that sits too close."""
    sing = qd.singular_points()
    mids = 0.5 * (a + b)
    d = np.abs(sing - mids)
    # detour control point if some other singularity is near the chord
    ctrl = None
    for s in sing:
        if abs(s - a) < 1e-12 or abs(s - b) < 1e-12:
            continue
        # distance from s to segment
        ab = b - a
        t = np.clip(((s - a) * np.conj(ab)).real / abs(ab) ** 2, 0, 1)
        dist = abs(s - (a + t * ab))
        if dist < 0.1 * abs(ab):
            off = (s - (a + t * ab))
            direction = -off / abs(off) if abs(off) > 0 else 1j * ab / abs(ab)
            ctrl = mids + direction * 0.3 * abs(ab)
    def zfun(u):
        s = 0.5 * (1.0 - np.cos(np.pi * u))
        if ctrl is None:
            return a + s * (b - a)
        return (1 - s) ** 2 * a + 2 * s * (1 - s) * ctrl + s ** 2 * b

    def dzfun(u):
        ds = 0.5 * np.pi * np.sin(np.pi * u)
        if ctrl is None:
            return (b - a) * ds
        s = 0.5 * (1.0 - np.cos(np.pi * u))
        return (2 * (1 - s) * (ctrl - a) + 2 * s * (b - ctrl)) * ds

    return zfun, dzfun


def sqrt_period(dc: DoubleCover, cycle_index: int,
                sign_memory: Optional[_SignMemory] = None) -> complex:
    """Period of v over the indexed cycle of the double cover.

    Pair cycles integrate twice the branch-point-to-branch-point integral;
    loop cycles on the torus return the period when the continuation closes
    up on the same sheet and 0 when it closes on the opposite sheet (the
    doubled cycle is then trivial for the residual).
    """
    qd = dc.base
    kind = dc.cycles[cycle_index][0]
    if kind == "pair":
        _, a, b = dc.cycles[cycle_index]
        zfun, dzfun = _pair_path(qd, a, b)
        val = _gl_path_integral(qd, zfun, dzfun, sign_memory,
                                key=("pair", cycle_index))
        return 2.0 * val
    _, z0, omega, cross = dc.cycles[cycle_index]
    line = (lambda u: z0 + u * omega,
            lambda u: np.full_like(u, omega, dtype=complex))
    val, v0, v1 = _composite_period(qd, [line], sign_memory,
                                    key=("loop", cycle_index))
    if abs(v1 - v0) <= abs(v1 + v0):
        # the straight loop lifts to a closed cycle
        return val
    if cross is None:
        return 0.0 + 0.0j
    # close up through a crossing leg: out to the branch point, once around
    # it (flipping the sheet a second time), and back
    sing = qd.singular_points()
    others = sing[np.abs(sing - cross) > 1e-12]
    r = 0.25 * np.abs(others - cross).min() if len(others) else 0.1
    c = cross + r * (z0 - cross) / abs(z0 - cross)
    theta0 = np.angle(c - cross)
    out_leg = _pair_path(qd, z0, c)
    circ = (lambda u: cross + r * np.exp(1j * (theta0 + 2 * np.pi * u)),
            lambda u: 2j * np.pi * r * np.exp(1j * (theta0 + 2 * np.pi * u)))
    back_leg = _pair_path(qd, c, z0)
    legs = [line, out_leg, circ, back_leg]
    val, v0, v1 = _composite_period(qd, legs, sign_memory,
                                    key=("loop", cycle_index))
    return val


@dataclass
class BoutrouxResidual:
    """Real parts of basis periods plus the bi-residue defect."""

    periods: np.ndarray
    biresidue_defect: complex

    def vector(self) -> np.ndarray:
        return np.concatenate([np.real(self.periods),
                               [self.biresidue_defect.real,
                                self.biresidue_defect.imag]])

    def max_norm(self) -> float:
        return float(np.abs(self.vector()).max())


def boutroux_residual(qd: QuadDiff,
                      sign_memory: Optional[_SignMemory] = None,
                      dc: Optional[DoubleCover] = None) -> BoutrouxResidual:
    """Assemble Re(periods) over the cycle basis and the bi-residue defect."""
    dc = dc or make_double_cover(qd)
    sign_memory = sign_memory or _SignMemory()
    periods = np.array([sqrt_period(dc, k, sign_memory)
                        for k in range(len(dc.cycles))])
    defect = qd.biresidue() - 1.0
    return BoutrouxResidual(periods, complex(defect))


def _normalize_scale(qd: QuadDiff) -> QuadDiff:
    """Rescale so the bi-residue is exactly one."""
    b = qd.biresidue()
    if abs(b) < 1e-300:
        raise ValueError("degenerate configuration (coalescing zeros?)")
    return QuadDiff(qd.surface, qd.poles, qd.zeros, qd.zero_mults,
                    scale=qd.scale / b, lattice_offset=qd.lattice_offset)


def _pack_free_zeros(qd: QuadDiff) -> np.ndarray:
    zeros = qd.zeros
    if qd.surface.kind == "torus" and len(zeros) >= 1:
        zeros = zeros[:-1]
    return np.concatenate([zeros.real, zeros.imag]) if len(zeros) else np.array([])


def _unpack_free_zeros(qd: QuadDiff, x: np.ndarray) -> QuadDiff:
    n_free = len(x) // 2
    free = x[:n_free] + 1j * x[n_free:]
    if qd.surface.kind == "torus":
        tau = qd.surface.tau
        t = complex(qd.surface.infinity.coord)
        m0, n0 = qd.lattice_offset
        target = qd.poles.sum() + 2 * t + (m0 + n0 * tau)
        mlast = qd.zero_mults[-1]
        last = (target - (free * qd.zero_mults[:-1]).sum()) / mlast
        zeros = np.concatenate([free, [last]])
    else:
        zeros = free
    return QuadDiff(qd.surface, qd.poles, zeros, qd.zero_mults,
                    scale=qd.scale, lattice_offset=qd.lattice_offset)


def _init_lattice_offset(surface: Surface, poles, zeros, mults) -> Tuple[int, int]:
    """Nearest lattice point to the divisor sum, fixing the torus family."""
    if surface.kind != "torus":
        return (0, 0)
    tau = surface.tau
    t = complex(surface.infinity.coord)
    D = (np.asarray(zeros) * np.asarray(mults)).sum() - np.asarray(poles).sum() - 2 * t
    n0 = int(round(D.imag / tau.imag))
    m0 = int(round(D.real - n0 * tau.real))
    return (m0, n0)


def boutroux_solve(initial: QuadDiff, tol: float = 1e-9,
                   max_steps: int = 50, fd_step: float = 1e-6) -> QuadDiff:
    """Gauss-Newton iteration on the zero positions driving all Re(periods)
    and the bi-residue defect below tol in max-norm.

    The scale is renormalized analytically from the bi-residue each iterate.
    Jacobian by central finite differences.
    """
    sign_memory = _SignMemory()
    qd = _normalize_scale(initial)
    x = _pack_free_zeros(qd)

    def residual(xv: np.ndarray) -> np.ndarray:
        q = _normalize_scale(_unpack_free_zeros(qd, xv))
        return boutroux_residual(q, sign_memory).vector()

    if len(x) == 0:
        r = residual(x)
        if np.abs(r).max() > tol:
            raise ValueError(
                f"no convergence: residual {np.abs(r).max():.3e} with no unknowns")
        return _normalize_scale(qd)

    r = residual(x)
    for _ in range(max_steps):
        if np.abs(r).max() <= tol:
            break
        J = np.empty((len(r), len(x)))
        for j in range(len(x)):
            xp = x.copy()
            xp[j] += fd_step
            xm = x.copy()
            xm[j] -= fd_step
            J[:, j] = (residual(xp) - residual(xm)) / (2 * fd_step)
        rank = np.linalg.matrix_rank(J, tol=1e-10 * max(1.0, np.abs(J).max()))
        if rank < min(J.shape):
            if np.abs(r).max() > tol:
                raise ValueError("degenerate configuration (coalescing zeros?)")
            break
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        lam = 1.0
        for _ in range(10):
            x_new = x + lam * step
            r_new = residual(x_new)
            if np.abs(r_new).max() < np.abs(r).max():
                x, r = x_new, r_new
                break
            lam *= 0.5
        else:
            break
    if np.abs(r).max() > tol:
        raise ValueError(f"no convergence in {max_steps} steps: "
                         f"residual {np.abs(r).max():.3e}")
    return _normalize_scale(_unpack_free_zeros(qd, x))


# -- construction from a critical measure ------------------------------------

def _omega_matrix(measure, kernel: BipolarKernel):
    """S_i = sum_j w_j Omega(p_i, p_j) with the regularized diagonal."""
    disc = measure.discretization
    mid = disc.mid
    w = measure.weights
    D_raw = mid[:, None] - mid[None, :]
    if disc.surface.kind == "torus":
        D = lattice_reduce(disc.surface.tau, D_raw)
    else:
        D = D_raw
    with np.errstate(divide="ignore", invalid="ignore"):
        Om = kernel.omega(mid[:, None], mid[None, :])
    np.fill_diagonal(Om, kernel.omega_reg_diag(mid))
    return Om @ w


def quaddiff_from_measure_values(measure, kernel: BipolarKernel,
                                 cctx: CauchyKernelContext, X) -> np.ndarray:
    """Values of the quadratic-differential density from the double integral
    of the F kernel against the measure, at probe points X."""
    disc = measure.discretization
    mid = disc.mid
    w = measure.weights
    S = _omega_matrix(measure, kernel)
    X = np.atleast_1d(np.asarray(X, dtype=complex))
    out = np.empty(X.shape, dtype=complex)
    delta = 1e-6
    for k, x in enumerate(X):
        Cv = cctx.evaluate(x, mid)
        dC = (cctx.evaluate(x, mid + delta) - cctx.evaluate(x, mid - delta)) \
            / (2 * delta)
        V = complex(((kernel.omega(x, mid)) * w).sum())
        out[k] = -2.0 * (w * Cv * S).sum() - (w ** 2 * dC).sum() + V ** 2
    return out


def schiffer_residual(measure, kernel: BipolarKernel,
                      cctx: CauchyKernelContext, x: complex) -> complex:
    """Variational derivative of the energy along the kernel vector field
    h(p) = C(x, p); near zero exactly at a critical measure."""
    disc = measure.discretization
    mid = disc.mid
    w = measure.weights
    d = np.min(np.abs(mid - complex(x)))
    if d < disc.mesh / 2:
        raise ValueError("probe point lies on the continuum")
    S = _omega_matrix(measure, kernel)
    delta = 1e-6
    hv = cctx.evaluate(x, mid)
    dh = (cctx.evaluate(x, mid + delta) - cctx.evaluate(x, mid - delta)) \
        / (2 * delta)
    return complex(2.0 * (w * hv * S).sum() + (w ** 2 * dh).sum())


def from_critical_measure(measure, kernel: BipolarKernel,
                          cctx: CauchyKernelContext, X,
                          expected_zero_mults: Optional[Sequence[int]] = None,
                          fit_tol: float = 1e-3):
    """Fit the parametric representation to the F-kernel double integral.

    Returns (QuadDiff, fit_residual); emits a warning-level residual when the
    measure is not critical at this mesh.
    """
    import warnings

    surface = measure.discretization.surface
    X = np.atleast_1d(np.asarray(X, dtype=complex))
    Qv = quaddiff_from_measure_values(measure, kernel, cctx, X)
    anchors = np.asarray(cctx.anchors, dtype=complex)
    N = len(anchors)
    if surface.kind == "sphere":
        A = np.prod(X[:, None] - anchors[None, :], axis=1)
        y = Qv * A
        deg = N - 2
        V = np.vander(X, deg + 1, increasing=False)
        coef, *_ = np.linalg.lstsq(V, y, rcond=None)
        fit = V @ coef
        resid = float(np.abs(fit - y).max() / max(1.0, np.abs(y).max()))
        zeros = np.roots(coef) if deg > 0 else np.array([])
        scale = coef[0]
        qd = QuadDiff(surface, anchors, zeros, np.ones(len(zeros), dtype=int),
                      scale=scale)
    else:
        mults = np.asarray(expected_zero_mults if expected_zero_mults is not None
                           else [2, 2], dtype=int)
        qd0 = _default_torus_ansatz(surface, anchors, mults)
        qd = _fit_torus_representation(qd0, X, Qv)
        fit_vals = qd.density(X)
        resid = float(np.abs(fit_vals - Qv).max() / max(1.0, np.abs(Qv).max()))
    if resid > fit_tol:
        warnings.warn(f"measure not critical at this mesh (fit residual {resid:.2e})")
    return qd, resid


def _default_torus_ansatz(surface: Surface, anchors, mults) -> QuadDiff:
    tau = surface.tau
    t = complex(surface.infinity.coord)
    guesses = [t + 0.5 * (1 + tau), t + 0.5]
    zeros = np.array(guesses[: len(mults)], dtype=complex)
    off = _init_lattice_offset(surface, anchors, zeros, mults)
    return QuadDiff(surface, anchors, zeros, mults, scale=1.0,
                    lattice_offset=off)


def _fit_torus_representation(qd0: QuadDiff, X, Qv) -> QuadDiff:
    """Least-squares fit of free zero positions and scale to sampled values."""
    x0 = _pack_free_zeros(qd0)
    state = {"qd": qd0}

    def model(x):
        q = _unpack_free_zeros(qd0, x)
        vals = q.density(X)
        # scale linearly by least squares
        s = (np.conj(vals) @ Qv) / max((np.conj(vals) @ vals).real, 1e-300)
        state["qd"] = QuadDiff(q.surface, q.poles, q.zeros, q.zero_mults,
                               scale=q.scale * s, lattice_offset=q.lattice_offset)
        r = vals * s - Qv
        return np.concatenate([r.real, r.imag])

    x = x0.copy()
    r = model(x)
    for _ in range(60):
        J = np.empty((len(r), len(x)))
        for j in range(len(x)):
            xp = x.copy(); xp[j] += 1e-6
            xm = x.copy(); xm[j] -= 1e-6
            J[:, j] = (model(xp) - model(xm)) / 2e-6
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        moved = False
        lam = 1.0
        for _ in range(8):
            xn = x + lam * step
            rn = model(xn)
            if np.linalg.norm(rn) < np.linalg.norm(r):
                x, r = xn, rn
                moved = True
                break
            lam *= 0.5
        if not moved or np.linalg.norm(step) < 1e-12:
            break
    model(x)
    return state["qd"]


# -- argument-principle counting ---------------------------------------------

def count_green_zeros(result, contour: np.ndarray) -> int:
    """Winding number of the Green's gradient differential along a closed
    contour = zeros minus poles enclosed (argument principle).

    ``contour`` is an array of complex points tracing the closed curve.
    Sampling is refined by bisection until consecutive phase steps stay below
    pi/2; a non-integer winding beyond 0.1 raises.
    """
    pts = np.asarray(contour, dtype=complex)
    if abs(pts[0] - pts[-1]) > 1e-12:
        pts = np.append(pts, pts[0])
    for _ in range(12):
        f = result.vfield(pts)
        ph = np.angle(f)
        dph = np.diff(ph)
        dph = (dph + np.pi) % (2 * np.pi) - np.pi
        if np.abs(dph).max() < np.pi / 2:
            total = dph.sum() / (2 * np.pi)
            if abs(total - round(total)) > 0.1:
                raise ValueError("contour too close to a zero")
            return int(round(total))
        # refine where steps are large
        mid = (pts[:-1] + pts[1:]) / 2.0
        out = np.empty(len(pts) + len(mid), dtype=complex)
        out[0::2] = pts
        out[1::2] = mid
        pts = out
    raise ValueError("contour too close to a zero")
