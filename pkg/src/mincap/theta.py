"""Riemann theta functions with characteristics, and the genus-1 Jacobi theta.

The lattice sum is evaluated after reducing the argument to the fundamental
cell of the period lattice, which keeps it well conditioned for arguments with
large imaginary part.  Truncation radii come from a Gaussian tail bound so the
absolute error is certified below the context's target.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ThetaContext",
    "Characteristic",
    "theta",
    "theta_gradient",
    "jacobi_theta1",
    "jacobi_theta1_dlog",
    "jacobi_theta1_prime0",
    "omega_delta",
    "odd_nonsingular_characteristic",
]

_SYM_TOL = 1e-12


def _validate_period_matrix(tau: np.ndarray) -> float:
    """Return the smallest eigenvalue of Im(tau); raise if tau is invalid."""
    tau = np.asarray(tau, dtype=complex)
    if tau.ndim != 2 or tau.shape[0] != tau.shape[1]:
        raise ValueError("invalid period matrix")
    if np.max(np.abs(tau - tau.T)) > _SYM_TOL:
        raise ValueError("invalid period matrix")
    lam = np.linalg.eigvalsh(tau.imag)
    if lam[0] <= 0:
        raise ValueError("invalid period matrix")
    return float(lam[0])


@dataclass(frozen=True)
class Characteristic:
    """Theta characteristic [alpha, beta]; parity defined for integer entries."""

    alpha: Tuple[float, ...]
    beta: Tuple[float, ...]

    @staticmethod
    def of(alpha: Sequence[float], beta: Sequence[float]) -> "Characteristic":
        return Characteristic(tuple(float(a) for a in alpha),
                              tuple(float(b) for b in beta))

    @property
    def is_integer(self) -> bool:
        return all(float(a).is_integer() for a in self.alpha + self.beta)

    @property
    def odd(self) -> bool:
        if not self.is_integer:
            raise ValueError("parity is defined for integer characteristics")
        return int(round(np.dot(self.alpha, self.beta))) % 2 == 1


@dataclass(frozen=True)
class ThetaContext:
    """Evaluation context: genus, period matrix and certified truncation."""

    period_matrix: np.ndarray
    target_abs_error: float = 1e-13
    truncation_radius: int = field(default=0)

    def __post_init__(self):
        tau = np.atleast_2d(np.asarray(self.period_matrix, dtype=complex))
        object.__setattr__(self, "period_matrix", tau)
        lam_min = _validate_period_matrix(tau)
        object.__setattr__(self, "_lam_min", lam_min)
        if self.truncation_radius <= 0:
            radius = int(np.ceil(3 + np.sqrt(abs(np.log(self.target_abs_error))
                                             / (np.pi * lam_min))))
            object.__setattr__(self, "truncation_radius", radius)

    @property
    def genus(self) -> int:
        return self.period_matrix.shape[0]

    def lattice(self) -> np.ndarray:
        """Integer points of the truncated cube [-R, R]^g, shape (N, g)."""
        R = self.truncation_radius
        rng = range(-R, R + 1)
        return np.array(list(itertools.product(rng, repeat=self.genus)),
                        dtype=float)


def _reduce_argument(ctx: ThetaContext, ch: Characteristic, z: np.ndarray):
    """Split z = z0 + m + tau k and return (z0, prefactor) with
    theta(z) = prefactor * theta(z0)."""
    tau = ctx.period_matrix
    alpha = np.asarray(ch.alpha, dtype=float)
    beta = np.asarray(ch.beta, dtype=float)
    k = np.round(np.linalg.solve(tau.imag, z.imag))
    m = np.round(z.real - (tau @ k).real)
    z0 = z - m - tau @ k
    phase = (alpha @ m - beta @ k) / 2.0 - k @ z0 - 0.5 * k @ (tau @ k)
    return z0, np.exp(2j * np.pi * phase)


def _theta_terms(ctx: ThetaContext, ch: Characteristic, z0: np.ndarray):
    tau = ctx.period_matrix
    n = ctx.lattice() + 0.5 * np.asarray(ch.beta, dtype=float)
    w = z0 + 0.5 * np.asarray(ch.alpha, dtype=float)
    quad = np.einsum("ij,jk,ik->i", n, tau, n)
    lin = n @ w
    return n, np.exp(1j * np.pi * quad + 2j * np.pi * lin)


def theta(ctx: ThetaContext, ch: Characteristic, z) -> complex:
    """Theta with characteristic at z (complex g-vector), error <= target."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.shape != (ctx.genus,):
        raise ValueError(f"argument must be a complex {ctx.genus}-vector")
    z0, pref = _reduce_argument(ctx, ch, z)
    _, terms = _theta_terms(ctx, ch, z0)
    return complex(pref * terms.sum())


def theta_gradient(ctx: ThetaContext, ch: Characteristic, z) -> np.ndarray:
    """Gradient of theta(ctx, ch, .) at z, term-by-term differentiation."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.shape != (ctx.genus,):
        raise ValueError(f"argument must be a complex {ctx.genus}-vector")
    tau = ctx.period_matrix
    alpha = np.asarray(ch.alpha, dtype=float)
    beta = np.asarray(ch.beta, dtype=float)
    k = np.round(np.linalg.solve(tau.imag, z.imag))
    m = np.round(z.real - (tau @ k).real)
    z0 = z - m - tau @ k
    phase = (alpha @ m - beta @ k) / 2.0 - k @ z0 - 0.5 * k @ (tau @ k)
    pref = np.exp(2j * np.pi * phase)
    n, terms = _theta_terms(ctx, ch, z0)
    val = terms.sum()
    grad0 = 2j * np.pi * (n.T @ terms)
    # d/dz of prefactor contributes -2i pi k * theta(z0) via the phase
    return pref * (grad0 - 2j * np.pi * k * val)


def odd_nonsingular_characteristic(ctx: ThetaContext,
                                   threshold: float = 1e-10) -> Characteristic:
    """First odd integer characteristic (entries in {0,1}, fixed enumeration
    order) whose theta gradient at 0 is above the singularity threshold."""
    g = ctx.genus
    for a in itertools.product((0, 1), repeat=g):
        for b in itertools.product((0, 1), repeat=g):
            ch = Characteristic.of(a, b)
            if not ch.odd:
                continue
            if np.linalg.norm(theta_gradient(ctx, ch, np.zeros(g))) > threshold:
                return ch
    raise ValueError("singular characteristic")


def omega_delta(ctx: ThetaContext, ch: Characteristic) -> np.ndarray:
    """Coefficient vector of the odd-characteristic holomorphic differential.

    Returns the gradient of theta at 0; raises for non-odd or singular
    characteristics (gradient below 1e-10).
    """
    if not ch.odd:
        raise ValueError("characteristic must be odd")
    grad = theta_gradient(ctx, ch, np.zeros(ctx.genus))
    if np.linalg.norm(grad) <= 1e-10:
        raise ValueError("singular characteristic")
    return grad


# -- genus 1: Jacobi theta_1 (vectorized) ----------------------------------

def _theta1_radius(tau: complex, eps: float = 1e-14) -> int:
    return int(np.ceil(3 + np.sqrt(abs(np.log(eps)) / (np.pi * tau.imag))))


def _theta1_reduce(tau: complex, z):
    """z = z0 + m + k*tau with theta1(z) = pref * theta1(z0)."""
    z = np.asarray(z, dtype=complex)
    k = np.round(z.imag / tau.imag)
    m = np.round(z.real - k * tau.real)
    z0 = z - m - k * tau
    pref = ((-1.0) ** (m + k)) * np.exp(-1j * np.pi * tau * k * k
                                        - 2j * np.pi * k * z0)
    return z0, pref


def jacobi_theta1(tau: complex, z):
    """Jacobi theta_1 normalized to vanish exactly on Z + tau Z.

    Accepts scalars or arrays; series truncation error below 1e-13 after
    argument reduction.
    """
    tau = complex(tau)
    if tau.imag <= 0:
        raise ValueError("invalid period matrix")
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z0, pref = _theta1_reduce(tau, np.atleast_1d(z).ravel())
    R = _theta1_radius(tau)
    half = np.arange(-R, R + 1) + 0.5
    expo = (1j * np.pi * tau * half**2)[:, None] \
        + 2j * np.pi * half[:, None] * (z0[None, :] + 0.5)
    val = -pref * np.exp(expo).sum(axis=0)
    return complex(val[0]) if scalar else val.reshape(z.shape)


def jacobi_theta1_dlog(tau: complex, z):
    """Logarithmic derivative theta1'(z)/theta1(z); simple pole 1/z at lattice."""
    tau = complex(tau)
    if tau.imag <= 0:
        raise ValueError("invalid period matrix")
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    flat = np.atleast_1d(z).ravel()
    z0, _ = _theta1_reduce(tau, flat)
    k = np.round(flat.imag / tau.imag)
    R = _theta1_radius(tau)
    half = np.arange(-R, R + 1) + 0.5
    expo = (1j * np.pi * tau * half**2)[:, None] \
        + 2j * np.pi * half[:, None] * (z0[None, :] + 0.5)
    terms = np.exp(expo)
    num = (2j * np.pi * half[:, None] * terms).sum(axis=0)
    den = terms.sum(axis=0)
    # theta1(z0 + m + k tau): d/dz log adds -2i pi k from the prefactor
    val = num / den - 2j * np.pi * k
    return complex(val[0]) if scalar else val.reshape(z.shape)


def jacobi_theta1_prime0(tau: complex) -> complex:
    """theta1'(0)."""
    tau = complex(tau)
    if tau.imag <= 0:
        raise ValueError("invalid period matrix")
    R = _theta1_radius(tau)
    n = np.arange(-R, R + 1)
    half = n + 0.5
    terms = np.exp(1j * np.pi * tau * half**2 + 1j * np.pi * half)
    return complex(-(2j * np.pi * half * terms).sum())
