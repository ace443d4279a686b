"""Assembly and solution of the mixed displacement/traction LPS system.

Unknowns are ordered [u_1..u_n, v_1..v_n, θ_1..θ_m].  Displacements are
unknown at interior points; θ is unknown at interior points and at the
collar points that interior points see through intact bonds.  Prescribed
collar displacements are moved to the right-hand side.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolveFailed
from .geometry import Frames, PointCloud
from .lps import (C_ALPHA, C_BETA, D, BondGeometry, MaterialField, broken_theta_coefficients, correction_tensors,
                  traction_forcing)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


def _zero_field(x):
    return np.zeros((len(np.atleast_2d(x)), 2))


def _zero_traction(xbar, n):
    return np.zeros((len(np.atleast_2d(xbar)), 2))


@dataclass
class BoundaryConditionSet:
    """Prescribed collar displacement, traction T(x̄, n) and body load f(x)."""

    dirichlet: Callable = _zero_field
    traction: Callable = _zero_traction
    body_force: Callable = _zero_field


@dataclass
class LpsSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    u_points: np.ndarray
    theta_points: np.ndarray
    u_col: np.ndarray
    theta_col: np.ndarray
    known_u: np.ndarray
    neumann_points: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_u(self):
        return len(self.u_points)


@dataclass
class Solution:
    u: np.ndarray
    theta: np.ndarray
    residual: float


def broken_points(cloud: PointCloud, weights, gamma) -> np.ndarray:
    """Interior points with at least one broken weighted bond."""
    bi, _ = cloud.bonds()
    flag = cloud.inside[bi] & ~np.asarray(gamma, dtype=bool) & (weights != 0)
    return np.nonzero(np.bincount(bi, weights=flag.astype(float), minlength=cloud.n_points) > 0)[0]


def _triplets():
    return [], [], []


def assemble(cloud: PointCloud, weights: np.ndarray, gamma: np.ndarray, frames: Frames,
             mfield: MaterialField, bcs: BoundaryConditionSet, bonds: BondGeometry | None = None,
             mass: np.ndarray | None = None, extra_rhs: np.ndarray | None = None,
             time: float | None = None, traction_points: np.ndarray | None = None) -> LpsSystem:
    """Assemble K η = F.

    ``mass`` (per point) adds a diagonal term to the momentum rows and
    ``extra_rhs`` (n, 2) is added to their right-hand side; both are used by
    the implicit time integrator.  ``time`` is forwarded to time-dependent
    traction and body-load callables.  ``traction_points`` (bool mask)
    restricts the traction load to those points; other points with broken
    bonds are treated as free surfaces.
    """
    if bonds is None:
        bonds = BondGeometry.of(cloud)
    n = cloud.n_points
    bi, bj, xi, r, km = bonds.bi, bonds.bj, bonds.xi, bonds.r, bonds.k_over_m
    gamma = np.asarray(gamma, dtype=bool)
    w_int = np.where(gamma, weights, 0.0)
    w_brk = np.where(gamma, 0.0, weights)

    inside = cloud.inside
    u_points = np.nonzero(inside)[0]
    n_u = len(u_points)
    u_col = np.full(n, -1, dtype=np.int64)
    u_col[u_points] = np.arange(n_u)

    # interior points with any broken bond use the traction-corrected rows
    src_inside = inside[bi]
    broken_here = np.bincount(bi, weights=(src_inside & ~gamma & (weights != 0)).astype(float), minlength=n) > 0
    neumann = inside & broken_here

    intact_out = src_inside & gamma & ~inside[bj]
    collar_theta = np.zeros(n, dtype=bool)
    collar_theta[bj[intact_out]] = True
    theta_points = np.concatenate([u_points, np.nonzero(collar_theta)[0]])
    theta_col = np.full(n, -1, dtype=np.int64)
    theta_col[theta_points] = 2 * n_u + np.arange(len(theta_points))
    n_theta = len(theta_points)

    known = cloud.has_dirichlet_value
    known_u = np.full((n, 2), np.nan)
    if np.any(known):
        known_u[known] = bcs.dirichlet(cloud.positions[known])

    size = 2 * n_u + n_theta
    rows, cols, vals = _triplets()
    rhs = np.zeros(size)

    # ---- momentum rows -------------------------------------------------
    row_x = u_col  # x-momentum row of point i is u_col[i], y-row is n_u + u_col[i]
    lam_b, mu_b = mfield.pair(bi, bj)
    mom = src_inside & (w_int != 0)
    b = np.nonzero(mom)[0]
    i_b, j_b = bi[b], bj[b]
    # θ couplings
    ca = -C_ALPHA * (lam_b[b] - mu_b[b]) * km[b] * w_int[b]
    for comp in (0, 1):
        rr = row_x[i_b] + comp * n_u
        c = ca * xi[b, comp]
        rows += [rr, rr]
        cols += [theta_col[i_b], theta_col[j_b]]
        vals += [c, c]
    if np.any(theta_col[j_b] < 0):
        raise SolveFailed("intact neighbor without a dilatation unknown")
    # displacement couplings
    cb = -C_BETA * mu_b[b] * km[b] * w_int[b] / r[b] ** 2
    j_unknown = u_col[j_b] >= 0
    j_known = ~j_unknown
    if np.any(j_known & ~known[j_b]):
        raise SolveFailed("intact neighbor without a displacement value")
    for a in (0, 1):
        rr = row_x[i_b] + a * n_u
        for c_ in (0, 1):
            coef = cb * xi[b, a] * xi[b, c_]
            # -coef on u_i, +coef on u_j
            rows += [rr, rr[j_unknown]]
            cols += [u_col[i_b] + c_ * n_u, u_col[j_b[j_unknown]] + c_ * n_u]
            vals += [-coef, coef[j_unknown]]
            if np.any(j_known):
                np.add.at(rhs, rr[j_known], -coef[j_known] * known_u[j_b[j_known], c_])

    # broken-bond θ corrections and traction forcing
    if np.any(neumann):
        ctheta = broken_theta_coefficients(bonds, np.where(src_inside, w_brk, 0.0), mfield, frames)
        npts = np.nonzero(neumann)[0]
        for comp in (0, 1):
            rows.append(row_x[npts] + comp * n_u)
            cols.append(theta_col[npts])
            vals.append(ctheta[npts, comp])
        T = np.zeros((n, 2))
        if traction_points is not None:
            npts = npts[np.asarray(traction_points, dtype=bool)[npts]]
        if len(npts):
            T[npts] = _call(bcs.traction, frames.xbar[npts], frames.normal[npts], time)
        npts = np.nonzero(neumann)[0]
        ft = traction_forcing(bonds, np.where(src_inside, w_brk, 0.0), frames, T)
        rhs[row_x[npts]] += ft[npts, 0]
        rhs[row_x[npts] + n_u] += ft[npts, 1]

    f = _call1(bcs.body_force, cloud.positions[u_points], time)
    rhs[:n_u] += f[:, 0]
    rhs[n_u : 2 * n_u] += f[:, 1]

    if mass is not None:
        mrow = np.concatenate([np.arange(n_u), n_u + np.arange(n_u)])
        mval = np.concatenate([mass[u_points], mass[u_points]])
        rows.append(mrow)
        cols.append(mrow)
        vals.append(mval)
    if extra_rhs is not None:
        rhs[:n_u] += extra_rhs[u_points, 0]
        rhs[n_u : 2 * n_u] += extra_rhs[u_points, 1]

    # ---- dilatation rows ----------------------------------------------
    trow = theta_col[theta_points]
    rows.append(trow)
    cols.append(trow)
    vals.append(np.ones(n_theta))

    is_theta = theta_col[bi] >= 0
    corrected_src = neumann[bi]
    M, _ = correction_tensors(bonds, np.where(neumann[bi], w_int, 0.0))
    wt = np.where(corrected_src, w_int, weights)
    tb = np.nonzero(is_theta & (wt != 0))[0]
    i_b, j_b = bi[tb], bj[tb]
    g = D * km[tb, None] * xi[tb] * wt[tb, None]
    corr = corrected_src[tb]
    g[corr] = np.einsum("iab,ib->ia", M[i_b[corr]], xi[tb][corr]) * (D * km[tb][corr] * wt[tb][corr])[:, None]
    rr = theta_col[i_b]
    j_unknown = u_col[j_b] >= 0
    i_unknown = u_col[i_b] >= 0
    if np.any(~j_unknown & ~known[j_b]) or np.any(~i_unknown & ~known[i_b]):
        raise SolveFailed("dilatation stencil reaches a point without a displacement value")
    for c_ in (0, 1):
        gc = g[:, c_]
        rows += [rr[j_unknown], rr[i_unknown]]
        cols += [u_col[j_b[j_unknown]] + c_ * n_u, u_col[i_b[i_unknown]] + c_ * n_u]
        vals += [-gc[j_unknown], gc[i_unknown]]
        np.add.at(rhs, rr[~j_unknown], gc[~j_unknown] * known_u[j_b[~j_unknown], c_])
        np.add.at(rhs, rr[~i_unknown], -gc[~i_unknown] * known_u[i_b[~i_unknown], c_])

    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    return LpsSystem(K, rhs, u_points, theta_points, u_col, theta_col, known_u, np.nonzero(neumann)[0])


def _call(fn, xbar, normal, time):
    if time is None:
        return np.asarray(fn(xbar, normal), float).reshape(-1, 2)
    return np.asarray(fn(xbar, normal, time), float).reshape(-1, 2)


def _call1(fn, x, time):
    if time is None:
        return np.asarray(fn(x), float).reshape(-1, 2)
    return np.asarray(fn(x, time), float).reshape(-1, 2)


def row_scale(system: LpsSystem) -> np.ndarray:
    """Inverse max-abs row norms, cached on the system.

    Momentum rows (with inertia especially) and dilatation rows differ by
    many orders of magnitude; factorizing and measuring residuals on the
    equilibrated system keeps errors in the small rows visible.
    """
    d = system.meta.get("row_scale")
    if d is None:
        amax = abs(system.matrix).max(axis=1).toarray().ravel()
        d = np.divide(1.0, amax, out=np.ones_like(amax), where=amax > 0)
        system.meta["row_scale"] = d
    return d


def factorize(system: LpsSystem):
    """splu of the row-equilibrated matrix; solve with ``lu.solve(d * F)``."""
    d = row_scale(system)
    try:
        return spla.splu((sp.diags(d) @ system.matrix).tocsc())
    except RuntimeError as exc:
        raise SolveFailed(f"sparse factorization failed ({exc}); "
                          "isolated points or unconstrained rigid modes are likely") from exc


def solve(system: LpsSystem, factor=None) -> Solution:
    """Direct sparse solve with a relative residual check.

    ``factor`` may be a factorization from :func:`factorize` for the same
    matrix.
    """
    lu = factor if factor is not None else factorize(system)
    eta = lu.solve(row_scale(system) * system.rhs)
    return unpack(system, eta, check=True)


def unpack(system: LpsSystem, eta, check=True) -> Solution:
    K, F = system.matrix, system.rhs
    d = row_scale(system)
    fnorm = np.linalg.norm(d * F)
    res = np.linalg.norm(d * (K @ eta - F))
    rel = res / fnorm if fnorm > 0 else res
    if check and not (rel <= RESIDUAL_TOL or res == 0.0):
        raise SolveFailed(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}")
    n = len(system.u_col)
    n_u = system.n_u
    u = system.known_u.copy()
    u[system.u_points, 0] = eta[:n_u]
    u[system.u_points, 1] = eta[n_u : 2 * n_u]
    theta = np.full(n, np.nan)
    theta[system.theta_points] = eta[2 * n_u :]
    return Solution(u, theta, float(rel))


def l2_error(cloud: PointCloud, numeric, exact, points=None) -> float:
    """sqrt(Σ_i cell_measure_i |num_i − exact_i|²) over interior points."""
    if points is None:
        points = np.nonzero(cloud.inside)[0]
    diff = np.asarray(numeric, float)[points] - np.asarray(exact, float)[points]
    sq = diff**2 if diff.ndim == 1 else np.sum(diff**2, axis=1)
    return float(np.sqrt(np.sum(cloud.cell_measure[points] * sq)))


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, float)
    err = np.asarray(err, float)
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class ConvergenceTable:
    h: list
    delta: list
    err_u: list
    err_theta: list

    @property
    def slope_u(self):
        return fit_slope(self.h, self.err_u)

    @property
    def slope_theta(self):
        return fit_slope(self.h, self.err_theta)

    def rows(self):
        return list(zip(self.h, self.delta, self.err_u, self.err_theta))


def convergence_study(run_one: Callable, h_list, m_ratio: float, **kwargs) -> ConvergenceTable:
    """Run ``run_one(h, delta, **kwargs)`` -> (err_u, err_theta) per resolution."""
    if len(h_list) < 3:
        raise ValueError("a convergence study needs at least three resolutions")
    table = ConvergenceTable([], [], [], [])
    for h in h_list:
        delta = m_ratio * h
        eu, et = run_one(h, delta, **kwargs)
        table.h.append(float(h))
        table.delta.append(float(delta))
        table.err_u.append(float(eu))
        table.err_theta.append(float(et))
    return table


def write_convergence_csv(path, table: ConvergenceTable, header: str = ""):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["h", "delta", "err_u_l2", "err_theta_l2"])
        for row in table.rows():
            w.writerow([repr(v) for v in row])


def write_field_csv(path, cloud: PointCloud, solution: Solution, header: str = ""):
    pts = np.nonzero(cloud.inside)[0]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "ux", "uy", "theta"])
        for i in pts:
            x, y = cloud.positions[i]
            w.writerow([repr(float(x)), repr(float(y)), repr(float(solution.u[i, 0])),
                        repr(float(solution.u[i, 1])), repr(float(solution.theta[i]))])
