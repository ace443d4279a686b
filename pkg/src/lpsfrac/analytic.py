"""Closed-form elasticity solutions used as benchmark references.

Every field exposes ``displacement(x)``, ``divergence(x)`` and, where a
traction boundary needs it, ``stress(x)``; ``x`` is an (n, 2) array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _pts(x):
    return np.asarray(x, float).reshape(-1, 2)


def plane_strain(E, nu):
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return lam, mu


@dataclass(frozen=True)
class PatchField:
    """Linear field u = D x; the default D gives (3x + 2y, −x + 2y)."""

    lam: float
    mu: float
    D: tuple = ((3.0, 2.0), (-1.0, 2.0))

    def displacement(self, x):
        return _pts(x) @ np.asarray(self.D).T

    def divergence(self, x):
        return np.full(len(_pts(x)), np.trace(np.asarray(self.D)))

    def stress(self, x):
        Dm = np.asarray(self.D)
        E = 0.5 * (Dm + Dm.T)
        s = self.lam * np.trace(E) * np.eye(2) + 2 * self.mu * E
        return np.broadcast_to(s, (len(_pts(x)), 2, 2)).copy()

    def hessian(self, x):
        return np.zeros((len(_pts(x)), 2, 2, 2))

    def body_force(self, x):
        return np.zeros((len(_pts(x)), 2))


@dataclass(frozen=True)
class ManufacturedField:
    """u = (sin Ax sin Ay, −cos Ax cos Ay) with its consistent body load."""

    lam: float
    mu: float
    A: float = 0.4

    def displacement(self, x):
        x = _pts(x)
        a = self.A
        return np.column_stack([np.sin(a * x[:, 0]) * np.sin(a * x[:, 1]),
                                -np.cos(a * x[:, 0]) * np.cos(a * x[:, 1])])

    def divergence(self, x):
        x = _pts(x)
        return 2 * self.A * np.cos(self.A * x[:, 0]) * np.sin(self.A * x[:, 1])

    def stress(self, x):
        x = _pts(x)
        a, lam, mu = self.A, self.lam, self.mu
        cs = np.cos(a * x[:, 0]) * np.sin(a * x[:, 1])
        sc = np.sin(a * x[:, 0]) * np.cos(a * x[:, 1])
        s = np.empty((len(x), 2, 2))
        s[:, 0, 0] = s[:, 1, 1] = 2 * a * (lam + mu) * cs
        s[:, 0, 1] = s[:, 1, 0] = 2 * a * mu * sc
        return s

    def body_force(self, x):
        x = _pts(x)
        a = self.A
        c = 2 * (self.lam + 2 * self.mu) * a * a
        return np.column_stack([c * np.sin(a * x[:, 0]) * np.sin(a * x[:, 1]),
                                -c * np.cos(a * x[:, 0]) * np.cos(a * x[:, 1])])

    def hessian(self, x):
        x = _pts(x)
        a = self.A
        ss = np.sin(a * x[:, 0]) * np.sin(a * x[:, 1])
        cc = np.cos(a * x[:, 0]) * np.cos(a * x[:, 1])
        H = np.empty((len(x), 2, 2, 2))
        H[:, 0, 0, 0] = H[:, 0, 1, 1] = -a * a * ss
        H[:, 0, 0, 1] = H[:, 0, 1, 0] = a * a * cc
        H[:, 1, 0, 0] = H[:, 1, 1, 1] = a * a * cc
        H[:, 1, 0, 1] = H[:, 1, 1, 0] = -a * a * ss
        return H


@dataclass(frozen=True)
class HoleField:
    """Uniaxial tension σ0 along x of an infinite plane with a hole of radius a."""

    lam: float
    mu: float
    sigma0: float = 1.0
    a: float = 0.2

    @property
    def kappa(self):
        nu = self.lam / (2 * (self.lam + self.mu))
        return 3 - 4 * nu

    def displacement(self, x):
        x = _pts(x)
        r = np.linalg.norm(x, axis=1)
        t = np.arctan2(x[:, 1], x[:, 0])
        a, k = self.a, self.kappa
        c = self.sigma0 * a / (8 * self.mu)
        ux = c * ((r / a) * (k + 1) * np.cos(t) + (2 * a / r) * ((1 + k) * np.cos(t) + np.cos(3 * t))
                  - (2 * a**3 / r**3) * np.cos(3 * t))
        uy = c * ((r / a) * (k - 3) * np.sin(t) + (2 * a / r) * ((1 - k) * np.sin(t) + np.sin(3 * t))
                  - (2 * a**3 / r**3) * np.sin(3 * t))
        return np.column_stack([ux, uy])

    def divergence(self, x):
        # trace of the Kirsch stress over 2(λ+μ) under plane strain
        x = _pts(x)
        r2 = np.sum(x**2, axis=1)
        cos2t = (x[:, 0] ** 2 - x[:, 1] ** 2) / r2
        return self.sigma0 * (1 - 2 * self.a**2 / r2 * cos2t) / (2 * (self.lam + self.mu))

    def body_force(self, x):
        return np.zeros((len(_pts(x)), 2))


@dataclass(frozen=True)
class DiskField:
    """Thick cylinder R0 < r < R1 under internal pressure p0 (plane strain)."""

    E: float
    nu: float
    p0: float = 0.1
    R0: float = 1.0
    R1: float = 1.5

    @property
    def coefficients(self):
        E, nu, p0, R0, R1 = self.E, self.nu, self.p0, self.R0, self.R1
        A = (1 + nu) * (1 - 2 * nu) * p0 * R0**2 / (E * (R1**2 - R0**2))
        B = (1 + nu) * p0 * R0**2 * R1**2 / (E * (R1**2 - R0**2))
        return A, B

    def displacement(self, x):
        x = _pts(x)
        A, B = self.coefficients
        r2 = np.sum(x**2, axis=1)
        return x * (A + B / r2)[:, None]

    def divergence(self, x):
        A, _ = self.coefficients
        return np.full(len(_pts(x)), 2 * A)

    def stress(self, x):
        x = _pts(x)
        A, B = self.coefficients
        lam, mu = plane_strain(self.E, self.nu)
        r2 = np.sum(x**2, axis=1)
        grad = (A + B / r2)[:, None, None] * np.eye(2) - 2 * B * x[:, :, None] * x[:, None, :] / (r2**2)[:, None, None]
        return 2 * lam * A * np.eye(2) + 2 * mu * grad

    def hessian(self, x):
        x = _pts(x)
        _, B = self.coefficients
        r2 = np.sum(x**2, axis=1)
        # u_k = A x_k + B x_k / r²
        H = np.zeros((len(x), 2, 2, 2))
        eye = np.eye(2)
        for k in range(2):
            for a in range(2):
                for b in range(2):
                    H[:, k, a, b] = B * (
                        -2 * (eye[k, a] * x[:, b] + eye[k, b] * x[:, a] + eye[a, b] * x[:, k]) / r2**2
                        + 8 * x[:, k] * x[:, a] * x[:, b] / r2**3
                    )
        return H

    def body_force(self, x):
        return np.zeros((len(_pts(x)), 2))


@dataclass(frozen=True)
class InclusionField:
    """Circular inclusion (phase 1, r < a) in a matrix (phase 2) under
    hydrostatic loading P."""

    lam1: float
    mu1: float
    lam2: float
    mu2: float
    a: float = 0.2
    P: float = 1.0

    @property
    def coefficients(self):
        l1, m1, l2, m2, a, P = self.lam1, self.mu1, self.lam2, self.mu2, self.a, self.P
        CA = P / (2 * (l1 + m1))
        CB = P * (l1 + m1 + m2) / (2 * (l1 + m1) * (l2 + 2 * m2))
        CC = -P * a**2 * (l1 - l2 + m1 - m2) / (2 * (l1 + m1) * (l2 + 2 * m2))
        return CA, CB, CC

    def radial(self, r):
        r = np.asarray(r, float)
        CA, CB, CC = self.coefficients
        with np.errstate(divide="ignore", invalid="ignore"):
            outside = CB * r + CC / r
        return np.where(r < self.a, CA * r, outside)

    def displacement(self, x):
        x = _pts(x)
        CA, CB, CC = self.coefficients
        r2 = np.sum(x**2, axis=1)
        inner = r2 < self.a**2
        factor = np.where(inner, CA, CB + CC / np.where(r2 > 0, r2, 1.0))
        return x * factor[:, None]

    def divergence(self, x):
        x = _pts(x)
        CA, CB, _ = self.coefficients
        r2 = np.sum(x**2, axis=1)
        return np.where(r2 < self.a**2, 2 * CA, 2 * CB)

    def body_force(self, x):
        return np.zeros((len(_pts(x)), 2))

    def phase(self, x):
        """1 inside the inclusion, 2 in the matrix."""
        x = _pts(x)
        return np.where(np.sum(x**2, axis=1) < self.a**2, 1, 2)
