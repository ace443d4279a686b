"""Optimization-based quadrature weights over horizon balls.

Each point gets the minimum-norm weight vector that integrates the 18
singular monomials y^(a,b)/|y|^3, 2 <= a+b <= 5, exactly over its horizon
ball.  Bond masks split the weights into intact and broken parts.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonIntegrable, WeightsSingular
from .geometry import Domain, PointCloud, Region

log = logging.getLogger(__name__)

EXPONENTS = tuple((a, deg - a) for deg in range(2, 6) for a in range(deg, -1, -1))
SVD_RTOL = 1e-10
RESIDUAL_TOL = 1e-9


def _double_factorial(n: int) -> int:
    if n <= 0:
        return 1
    return math.prod(range(n, 0, -2))


def exact_ball_moment(a: int, b: int, delta: float, scaled: bool = False) -> float:
    """∫_{B_δ(0)} y1^a y2^b / |y|^3 dy.

    With ``scaled`` the monomial is taken in y/δ, which divides the result
    by δ^(a+b).
    """
    if a < 0 or b < 0 or a + b < 2:
        raise NonIntegrable(f"y^({a},{b})/|y|^3 is not integrable over a ball")
    if a % 2 or b % 2:
        return 0.0
    ang = 2 * math.pi * _double_factorial(a - 1) * _double_factorial(b - 1) / _double_factorial(a + b)
    k = a + b
    val = ang * delta ** (k - 1) / (k - 1)
    return val / delta**k if scaled else val


def basis_values(offsets: np.ndarray, delta: float) -> np.ndarray:
    """Scaled basis members at the offsets; shape (..., 18) for offsets (..., 2).

    Zero offsets (padding) map to zero columns.
    """
    offsets = np.asarray(offsets, float)
    r = np.linalg.norm(offsets, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    z1 = offsets[..., 0] / delta
    z2 = offsets[..., 1] / delta
    inv = np.where(r > 0, 1.0 / safe**3, 0.0)
    return np.stack([z1**a * z2**b * inv for a, b in EXPONENTS], axis=-1)


def moment_vector(delta: float) -> np.ndarray:
    return np.array([exact_ball_moment(a, b, delta, scaled=True) for a, b in EXPONENTS])


@dataclass
class QuadratureRule:
    """Weights aligned with the cloud's CSR neighbor lists.

    ``has_weights`` marks the points whose stencils were solved; all other
    rows hold zeros.
    """

    weights: np.ndarray
    has_weights: np.ndarray
    delta: float

    def split(self, gamma):
        return split_weights(self.weights, gamma)


def _solve_batch(offsets: np.ndarray, delta: float):
    """Min-norm solves for a stack of padded stencils (n, k, 2)."""
    B = np.swapaxes(basis_values(offsets, delta), -1, -2)  # (n, 18, k)
    g = moment_vector(delta)
    pinv = np.linalg.pinv(B, rcond=SVD_RTOL)
    w = pinv @ g
    res = np.linalg.norm(np.einsum("nkj,nj->nk", B, w) - g, axis=-1) / np.linalg.norm(g)
    return w, res


def solve_weights(cloud: PointCloud, i: int) -> np.ndarray:
    """Minimum-norm weights for the neighbors of point ``i``."""
    nb = cloud.neighbors(i)
    if len(nb) < len(EXPONENTS):
        raise WeightsSingular(i)
    off = cloud.positions[nb] - cloud.positions[i]
    w, res = _solve_batch(off[None], cloud.delta)
    if not res[0] <= RESIDUAL_TOL:
        raise WeightsSingular(i, float(res[0]))
    return w[0]


def points_needing_weights(cloud: PointCloud) -> np.ndarray:
    """Interior points plus collar points within δ of the domain."""
    collar = (cloud.region == Region.DIRICHLET_COLLAR) & (cloud.sdf <= cloud.delta * (1 + 1e-9))
    return np.nonzero(cloud.inside | collar)[0]


def build_rule(cloud: PointCloud, points=None, chunk: int = 4096) -> QuadratureRule:
    """Solve all stencils (batched, padded to a common width)."""
    if points is None:
        points = points_needing_weights(cloud)
    points = np.asarray(points, dtype=np.int64)
    counts = cloud.neighbor_counts()
    weights = np.zeros(len(cloud.indices))
    has = np.zeros(cloud.n_points, dtype=bool)
    short = points[counts[points] < len(EXPONENTS)]
    if len(short):
        raise WeightsSingular(int(short[0]))
    for start in range(0, len(points), chunk):
        sel = points[start : start + chunk]
        width = int(counts[sel].max())
        off = np.zeros((len(sel), width, 2))
        cols = np.arange(width)
        valid = cols[None, :] < counts[sel][:, None]
        flat = cloud.indptr[sel][:, None] + cols[None, :]
        flat = np.where(valid, flat, 0)
        nb = cloud.indices[flat]
        off[valid] = (cloud.positions[nb] - cloud.positions[sel][:, None, :])[valid]
        w, res = _solve_batch(off, cloud.delta)
        bad = np.nonzero(~(res <= RESIDUAL_TOL))[0]
        if len(bad):
            raise WeightsSingular(int(sel[bad[0]]), float(res[bad[0]]))
        weights[flat[valid]] = w[valid]
        has[sel] = True
    neg = np.sum(weights[np.repeat(has, counts)] < 0)
    log.debug("negative weights: %d of %d", neg, int(counts[has].sum()))
    return QuadratureRule(weights=weights, has_weights=has, delta=cloud.delta)


def mask_from_domain(cloud: PointCloud, domain: Domain) -> np.ndarray:
    """Static bond mask: γ = 0 for bonds into the traction-side exterior or
    crossing a traction boundary, 1 otherwise."""
    bi, bj = cloud.bonds()
    ok_target = (cloud.region[bj] != Region.EXTERIOR_NEUMANN) & (cloud.region[bj] != Region.UNUSED)
    gamma = ok_target.copy()
    if domain.neumann_parts:
        cand = np.nonzero(gamma)[0]
        near = (cloud.dist_neumann[bi[cand]] <= cloud.delta) | (cloud.dist_neumann[bj[cand]] <= cloud.delta)
        cand = cand[near]
        if len(cand):
            cross = domain.crosses_neumann(cloud.positions[bi[cand]], cloud.positions[bj[cand]])
            gamma[cand[cross]] = False
    return gamma


def split_weights(weights: np.ndarray, gamma: np.ndarray):
    g = np.asarray(gamma, dtype=float)
    w_int = weights * g
    return w_int, weights - w_int


def write_weights_csv(path, cloud: PointCloud, rule: QuadratureRule, gamma, header: str = ""):
    bi, bj = cloud.bonds()
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j", "omega", "gamma"])
        for a, b, om, ga in zip(bi, bj, rule.weights, np.asarray(gamma, dtype=int)):
            w.writerow([int(a), int(b), repr(float(om)), int(ga)])
