"""Discrete LPS operators on a point cloud.

All sums run over the directed bond list of the cloud (grouped by the
source point), with K(r) = 1/r and the weighted volume m = 2πδ³/3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Frames, PointCloud

D = 2
C_ALPHA = 2.0
C_BETA = 16.0
PINV_COND = 1e12


@dataclass(frozen=True)
class KernelSpec:
    delta: float

    @property
    def m(self) -> float:
        return 2.0 * np.pi * self.delta**3 / 3.0

    d: int = D
    c_alpha: float = C_ALPHA
    c_beta: float = C_BETA

    @staticmethod
    def K(r):
        return 1.0 / r


@dataclass(frozen=True)
class Material:
    lam: float
    mu: float
    rho: float = 1.0
    G0: float = 0.0

    @classmethod
    def from_youngs(cls, E, nu, rho=1.0, G0=0.0, plane="strain"):
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        if plane == "stress":
            lam = 2 * lam * mu / (lam + 2 * mu)
        elif plane != "strain":
            raise ValueError(f"unknown plane assumption {plane!r}")
        return cls(lam, mu, rho, G0)

    def __post_init__(self):
        if not (self.mu > 0 and self.lam + self.mu > 0):
            raise ValueError("material requires mu > 0 and lambda + mu > 0")


def harmonic_mean(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    s = a + b
    same = a == b
    out = np.where(s != 0, 2 * a * b / np.where(s != 0, s, 1.0), 0.0)
    return np.where(same, a, out)


@dataclass
class MaterialField:
    """Per-point moduli with harmonic two-point averages."""

    lam: np.ndarray
    mu: np.ndarray
    rho: np.ndarray

    @classmethod
    def uniform(cls, material: Material, n: int):
        return cls(np.full(n, material.lam), np.full(n, material.mu), np.full(n, material.rho))

    @classmethod
    def from_materials(cls, materials):
        return cls(np.array([m.lam for m in materials]), np.array([m.mu for m in materials]),
                   np.array([m.rho for m in materials]))

    def pair(self, i, j):
        return harmonic_mean(self.lam[i], self.lam[j]), harmonic_mean(self.mu[i], self.mu[j])


@dataclass
class BondGeometry:
    """Reference bond vectors ξ = x_j − x_i, lengths and K/m."""

    bi: np.ndarray
    bj: np.ndarray
    xi: np.ndarray
    r: np.ndarray
    k_over_m: np.ndarray
    n_points: int

    @classmethod
    def of(cls, cloud: PointCloud):
        bi, bj = cloud.bonds()
        xi = cloud.positions[bj] - cloud.positions[bi]
        r = np.linalg.norm(xi, axis=1)
        m = KernelSpec(cloud.delta).m
        return cls(bi, bj, xi, r, 1.0 / (r * m), cloud.n_points)

    def sum(self, values):
        """Per-point sums of bond values (1-d or (nb, k))."""
        values = np.asarray(values, float)
        if values.ndim == 1:
            return np.bincount(self.bi, weights=values, minlength=self.n_points)
        flat = values.reshape(len(values), -1)
        out = np.stack([np.bincount(self.bi, weights=flat[:, c], minlength=self.n_points)
                        for c in range(flat.shape[1])], axis=1)
        return out.reshape((self.n_points,) + values.shape[1:])


def dilatation(bonds: BondGeometry, weights, u):
    """Plain dilatation (d/m) Σ K ξ·(u_j − u_i) ω over the full ball."""
    du = u[bonds.bj] - u[bonds.bi]
    vals = D * bonds.k_over_m * np.einsum("ij,ij->i", bonds.xi, du) * weights
    return bonds.sum(vals)


def correction_tensors(bonds: BondGeometry, w_intact):
    """M_i = [(d/m) Σ K ξ⊗ξ ω̃]^-1 with a pseudo-inverse for ill-conditioned
    or empty moment matrices.  Returns (M, pinv_used)."""
    outer = bonds.xi[:, :, None] * bonds.xi[:, None, :]
    S = bonds.sum(D * (bonds.k_over_m * w_intact)[:, None, None] * outer)
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    ev = np.linalg.eigvalsh(S)
    big = np.abs(ev).max(axis=1)
    small = np.abs(ev).min(axis=1)
    ill = ~(small * PINV_COND > big) | (big == 0)
    M = np.empty_like(S)
    ok = ~ill
    if np.any(ok):
        M[ok] = np.linalg.inv(S[ok])
    if np.any(ill):
        M[ill] = np.linalg.pinv(S[ill], rcond=1.0 / PINV_COND, hermitian=True)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    return M, ill


def corrected_dilatation(bonds: BondGeometry, w_intact, u, M=None):
    """(d/m) Σ K ξᵀ M_i (u_j − u_i) ω̃ with M_i from the intact weights."""
    if M is None:
        M, _ = correction_tensors(bonds, w_intact)
    du = u[bonds.bj] - u[bonds.bi]
    Mxi = np.einsum("iab,ib->ia", M[bonds.bi], bonds.xi)
    vals = D * bonds.k_over_m * np.einsum("ij,ij->i", Mxi, du) * w_intact
    return bonds.sum(vals)


def _bond_moduli(bonds, mfield):
    return mfield.pair(bonds.bi, bonds.bj)


def apply_interior(bonds: BondGeometry, weights, mfield: MaterialField, u, theta):
    """Interior LPS force density with two-point (harmonic) moduli."""
    lam, mu = _bond_moduli(bonds, mfield)
    xi = bonds.xi
    ts = theta[bonds.bi] + theta[bonds.bj]
    a = -C_ALPHA * (lam - mu) * bonds.k_over_m * ts * weights
    du = u[bonds.bj] - u[bonds.bi]
    proj = np.einsum("ij,ij->i", xi, du) / bonds.r**2
    b = -C_BETA * mu * bonds.k_over_m * proj * weights
    return bonds.sum((a + b)[:, None] * xi)


def broken_theta_coefficients(bonds: BondGeometry, w_broken, mfield: MaterialField, frames: Frames):
    """Per-point vector multiplying θ_i in the broken-bond correction."""
    i = bonds.bi
    lam = mfield.lam[i]
    mu = mfield.mu[i]
    n = frames.normal[i]
    p = frames.tangent[i]
    xi = bonds.xi
    xn = np.einsum("ij,ij->i", xi, n)
    xp = np.einsum("ij,ij->i", xi, p)
    r2 = bonds.r**2
    active = w_broken != 0
    kw = np.where(active, bonds.k_over_m * w_broken, 0.0)
    n = np.where(active[:, None], n, 0.0)
    term = (-2 * C_ALPHA * (lam - mu))[:, None] * xi
    term = term + ((-C_BETA * (lam + 2 * mu) / 2 * xn * xp**2 + C_BETA * lam / 2 * xn**3) / r2)[:, None] * n
    return bonds.sum(kw[:, None] * term)


def apply_neumann(bonds: BondGeometry, w_intact, w_broken, mfield: MaterialField, frames: Frames, u, theta):
    """Neumann-corrected force density: intact interior sums plus the
    θ-weighted broken-bond terms."""
    out = apply_interior(bonds, w_intact, mfield, u, theta)
    return out + broken_theta_coefficients(bonds, w_broken, mfield, frames) * theta[:, None]


def traction_forcing(bonds: BondGeometry, w_broken, frames: Frames, traction, f=None):
    """f_i plus the broken-bond traction terms.

    ``traction`` is an (n, 2) array of T(x̄_i) (rows for points without
    broken bonds are ignored).
    """
    i = bonds.bi
    active = w_broken != 0
    n = np.where(active[:, None], frames.normal[i], 0.0)
    p = np.where(active[:, None], frames.tangent[i], 0.0)
    T = np.where(active[:, None], traction[i], 0.0)
    Tn = np.einsum("ij,ij->i", T, n)
    Tp = np.einsum("ij,ij->i", T, p)
    xi = bonds.xi
    xn = np.einsum("ij,ij->i", xi, n)
    xp = np.einsum("ij,ij->i", xi, p)
    r2 = bonds.r**2
    kw = np.where(active, bonds.k_over_m * w_broken, 0.0)
    vals = (C_BETA * Tp * xn * xp**2 / r2)[:, None] * p + (C_BETA * Tn / 2 * xn * (xn**2 - xp**2) / r2)[:, None] * n
    out = bonds.sum(kw[:, None] * vals)
    if f is not None:
        out = out + f
    return out


def local_operator_oracle(hessian, lam, mu):
    """Local Navier operator −(λ+μ)∇(∇·u) − μΔu from a Hessian callable.

    ``hessian(x)`` returns H[..., k, a, b] = ∂²u_k/∂x_a∂x_b.
    """

    def force(x):
        H = np.asarray(hessian(x), float)
        grad_div = H[..., 0, 0, :] + H[..., 1, 1, :]
        lap = H[..., :, 0, 0] + H[..., :, 1, 1]
        return -(lam + mu) * grad_div - mu * lap

    return force
