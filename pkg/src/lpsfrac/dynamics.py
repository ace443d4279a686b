"""Implicit Newmark dynamics with critical-stretch bond breaking.

The average-acceleration scheme is solved for u at the new time level,
with the dilatation rows kept in the system.  Bonds whose stretch exceeds
s0 are broken in sweeps (every bond over the threshold at once) and the
step is re-solved until no new bond breaks.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.sparse.csgraph import connected_components

from .errors import CriterionInvalid, SolveFailed, SubiterationDiverged
from .geometry import ESTIMATED, Domain, Frames, PointCloud, build_frames
from .lps import BondGeometry, Material, MaterialField
from .static_solver import BoundaryConditionSet, LpsSystem, assemble, broken_points, factorize, row_scale, unpack

log = logging.getLogger(__name__)

CRACK_THRESHOLD = 0.35
SUBITERATION_CAP = 50
BETA_PRIME = 0.23873


# ---------------------------------------------------------------------------
# fracture criterion
# ---------------------------------------------------------------------------


def critical_stretch(material: Material, delta: float) -> float:
    """s0 = sqrt(G0 / (4(λ−μ)β′ + 8μβ)) with β = 3δ/(4π), β′ = 0.23873 δ."""
    beta = 3 * delta / (4 * math.pi)
    beta_p = BETA_PRIME * delta
    rad = 4 * (material.lam - material.mu) * beta_p + 8 * material.mu * beta
    if not rad > 0:
        raise CriterionInvalid(f"critical stretch radicand {rad:.3e} is not positive")
    if material.G0 < 0:
        raise CriterionInvalid("fracture energy must be non-negative")
    return math.sqrt(material.G0 / rad)


@dataclass(frozen=True)
class FractureCriterion:
    s0: float

    @classmethod
    def from_material(cls, material: Material, delta: float) -> "FractureCriterion":
        return cls(critical_stretch(material, delta))

    def __post_init__(self):
        if not self.s0 > 0:
            raise CriterionInvalid("critical stretch must be positive")


def bond_strain(positions, u, i, j) -> float:
    xi = np.asarray(positions[j], float) - np.asarray(positions[i], float)
    eta = np.asarray(u[j], float) - np.asarray(u[i], float)
    r = np.linalg.norm(xi)
    return float((np.linalg.norm(xi + eta) - r) / r)


def bond_strains(bonds: BondGeometry, u) -> np.ndarray:
    """Stretch of every directed bond for displacement ``u`` (n, 2)."""
    eta = u[bonds.bj] - u[bonds.bi]
    return (np.linalg.norm(bonds.xi + eta, axis=1) - bonds.r) / bonds.r


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class FractureState:
    """Kinematic fields, bond state and damage at time ``t``."""

    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    damage: np.ndarray
    t: float = 0.0
    step: int = 0
    solves: int = 0

    def copy(self) -> "FractureState":
        return replace(self, u=self.u.copy(), v=self.v.copy(), a=self.a.copy(), theta=self.theta.copy(),
                       gamma=self.gamma.copy(), damage=self.damage.copy())


def damage_field(cloud: PointCloud, gamma_ref, gamma) -> np.ndarray:
    """φ_i = broken / total over the bonds intact in the reference state."""
    bi, _ = cloud.bonds()
    ref = np.asarray(gamma_ref, dtype=bool)
    total = np.bincount(bi, weights=ref.astype(float), minlength=cloud.n_points)
    broken = np.bincount(bi, weights=(ref & ~np.asarray(gamma, dtype=bool)).astype(float),
                         minlength=cloud.n_points)
    return np.divide(broken, total, out=np.zeros(cloud.n_points), where=total > 0)


@dataclass
class DynamicLoad:
    """Load pattern scaled by a time amplitude.

    ``traction(xbar, n)`` and ``body_force(x)`` give the unit-amplitude
    load; ``amplitude(t)`` scales the whole right-hand side.  Traction acts
    only on ``traction_points`` (the reference traction boundary); crack
    faces created during the run stay free.
    """

    traction: Callable | None = None
    body_force: Callable | None = None
    amplitude: Callable[[float], float] = lambda t: 1.0
    traction_points: np.ndarray | None = None
    dirichlet: Callable | None = None

    def bcs(self) -> BoundaryConditionSet:
        kw = {}
        if self.traction is not None:
            kw["traction"] = self.traction
        if self.body_force is not None:
            kw["body_force"] = self.body_force
        if self.dirichlet is not None:
            kw["dirichlet"] = self.dirichlet
        return BoundaryConditionSet(**kw)


# ---------------------------------------------------------------------------
# linear solvers
# ---------------------------------------------------------------------------


class DirectSolver:
    """Row-equilibrated splu factorization, reused until the matrix changes."""

    def __init__(self, system: LpsSystem):
        self.lu = factorize(system)
        self.d = row_scale(system)

    def __call__(self, system: LpsSystem, rhs, guess=None):
        return self.lu.solve(self.d * rhs)


class SchurSolver:
    """Eliminates the dilatation unknowns and runs Jacobi-preconditioned GMRES.

    The dilatation rows carry an identity block, so θ = c − G u exactly and
    the remaining displacement system (A − B G) u = f − B c is applied
    matrix-free.  Works well when the inertia term dominates the diagonal.
    """

    def __init__(self, system: LpsSystem, rtol: float = 1e-13, maxiter: int = 500):
        K = system.matrix.tocsr()
        n2 = 2 * system.n_u
        self.n2 = n2
        self.A = K[:n2, :n2].tocsr()
        self.B = K[:n2, n2:].tocsr()
        self.G = K[n2:, :n2].tocsr()
        eye = K[n2:, n2:]
        if eye.nnz != eye.shape[0] or not np.allclose(eye.diagonal(), 1.0):
            raise SolveFailed("dilatation block is not the identity")
        diag = self.A.diagonal() - np.asarray(self.B.multiply(self.G.T).sum(axis=1)).ravel()
        if np.any(diag == 0):
            raise SolveFailed("zero diagonal in the reduced displacement system")
        self.inv_diag = inv_diag = 1.0 / diag
        self.rtol = rtol
        self.maxiter = maxiter
        # closures over locals, not self: a self-referencing cycle keeps the
        # old matrices alive until the cyclic collector happens to run
        A, B, G = self.A, self.B, self.G
        self.op = spla.LinearOperator((n2, n2), matvec=lambda x: A @ x - B @ (G @ x))
        self.prec = spla.LinearOperator((n2, n2), matvec=lambda x: inv_diag * x)

    def __call__(self, system: LpsSystem, rhs, guess=None):
        n2 = self.n2
        f, c = rhs[:n2], rhs[n2:]
        b = f - self.B @ c
        x, info = spla.gmres(self.op, b, x0=guess, rtol=self.rtol, atol=0.0, restart=60,
                             maxiter=self.maxiter, M=self.prec)
        if info != 0:
            raise SolveFailed(f"GMRES did not converge (info={info})")
        return np.concatenate([x, c - self.G @ x])


SOLVERS = {"direct": DirectSolver, "iterative": SchurSolver}


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    t: float
    step: int
    u: np.ndarray
    damage: np.ndarray


class NewmarkIntegrator:
    """Average-acceleration Newmark stepping of ρü + L u = f with fracture.

    With ``criterion=None`` bonds never break and each step is a single
    linear solve with a reused factorization.
    """

    def __init__(self, cloud: PointCloud, weights: np.ndarray, gamma: np.ndarray, mfield: MaterialField,
                 load: DynamicLoad, dt: float, criterion: FractureCriterion | None = None,
                 domain: Domain | None = None, solver: str = "direct", normals: str = ESTIMATED):
        if not dt > 0:
            raise ValueError("time step must be positive")
        if solver not in SOLVERS:
            raise ValueError(f"unknown solver {solver!r}")
        self.cloud = cloud
        # weights stay fixed for the whole run; a read-only copy guards that
        self.weights = np.array(weights, dtype=float)
        self.weights.setflags(write=False)
        self.gamma_ref = np.asarray(gamma, dtype=bool).copy()
        self.mfield = mfield
        self.load = load
        self.bcs = load.bcs()
        self.dt = float(dt)
        self.criterion = criterion
        self.domain = domain
        self.solver_kind = solver
        self.normals = normals
        self.bonds = BondGeometry.of(cloud)
        self.inside = cloud.inside
        bi, bj = self.bonds.bi, self.bonds.bj
        self.breakable = self.gamma_ref & self.inside[bi] & self.inside[bj]
        self.mass = 4.0 * mfield.rho / self.dt**2
        self._frames: Frames | None = None
        self._system: LpsSystem | None = None
        self._solver = None
        self._gamma_key: bytes | None = None
        self.rebuilds = 0

    # -- system management -------------------------------------------------
    def initial_state(self, u0=None, v0=None, a0=None) -> FractureState:
        n = self.cloud.n_points
        z = np.zeros((n, 2))
        u = z.copy() if u0 is None else np.array(u0, float)
        v = z.copy() if v0 is None else np.array(v0, float)
        a = z.copy() if a0 is None else np.array(a0, float)
        gamma = self.gamma_ref.copy()
        return FractureState(u, v, a, np.zeros(n), gamma, damage_field(self.cloud, self.gamma_ref, gamma))

    def _prepare(self, gamma):
        key = np.packbits(gamma).tobytes()
        if key == self._gamma_key:
            return
        w_int = np.where(gamma, self.weights, 0.0)
        npts = broken_points(self.cloud, self.weights, gamma)
        self._frames = build_frames(self.cloud, npts, w_int, self.domain, mode=self.normals,
                                    previous=self._frames)
        self._system = assemble(self.cloud, self.weights, gamma, self._frames, self.mfield, self.bcs,
                                bonds=self.bonds, mass=self.mass, traction_points=self.load.traction_points)
        self._solver = SOLVERS[self.solver_kind](self._system)
        self._gamma_key = key
        self.rebuilds += 1

    def _solve(self, t_new, predictor):
        system = self._system
        rhs = self.load.amplitude(t_new) * system.rhs
        n_u = system.n_u
        pts = system.u_points
        extra = self.mass[pts, None] * predictor[pts]
        rhs = rhs.copy()
        rhs[:n_u] += extra[:, 0]
        rhs[n_u : 2 * n_u] += extra[:, 1]
        guess = np.concatenate([predictor[pts, 0], predictor[pts, 1]])
        eta = self._solver(system, rhs, guess)
        probe = replace(system, rhs=rhs)
        return unpack(probe, eta, check=True)

    # -- stepping ----------------------------------------------------------
    def step(self, state: FractureState) -> FractureState:
        """One Newmark step with bond-breaking subiterations."""
        dt = self.dt
        t_new = state.t + dt
        predictor = state.u + dt * state.v + 0.25 * dt * dt * state.a
        gamma = state.gamma.copy()
        solves = 0
        for _ in range(SUBITERATION_CAP):
            self._prepare(gamma)
            try:
                sol = self._solve(t_new, predictor)
            except SolveFailed as exc:
                raise SolveFailed(f"step {state.step + 1}: {exc}") from exc
            solves += 1
            if self.criterion is None:
                break
            u_eval = np.where(self.inside[:, None], sol.u, 0.0)
            s = bond_strains(self.bonds, u_eval)
            newly = gamma & self.breakable & (s > self.criterion.s0)
            if not np.any(newly):
                break
            gamma &= ~newly
        else:
            raise SubiterationDiverged(f"bond breaking did not settle within {SUBITERATION_CAP} sweeps "
                                       f"at step {state.step + 1}")
        u_new = np.where(self.inside[:, None], sol.u, 0.0)
        a_new = 4.0 / dt**2 * (u_new - state.u - dt * state.v) - state.a
        v_new = state.v + 0.5 * dt * (state.a + a_new)
        keep = self.inside[:, None]
        a_new = np.where(keep, a_new, 0.0)
        v_new = np.where(keep, v_new, 0.0)
        theta = np.where(np.isfinite(sol.theta), sol.theta, 0.0)
        return FractureState(u_new, v_new, a_new, theta, gamma, damage_field(self.cloud, self.gamma_ref, gamma),
                             t=t_new, step=state.step + 1, solves=state.solves + solves)

    def run(self, state: FractureState, n_steps: int, snapshot_every: int = 0,
            callback: Callable | None = None) -> tuple[FractureState, list[Snapshot]]:
        snaps = []
        if snapshot_every:
            snaps.append(Snapshot(state.t, state.step, state.u.copy(), state.damage.copy()))
        for _ in range(n_steps):
            state = self.step(state)
            if snapshot_every and state.step % snapshot_every == 0:
                snaps.append(Snapshot(state.t, state.step, state.u.copy(), state.damage.copy()))
            if callback is not None:
                callback(state)
        return state, snaps


def kinetic_energy(cloud: PointCloud, mfield: MaterialField, v) -> float:
    pts = cloud.inside
    return float(0.5 * np.sum(mfield.rho[pts] * cloud.cell_measure[pts] * np.sum(v[pts] ** 2, axis=1)))


def linear_momentum(cloud: PointCloud, mfield: MaterialField, v) -> np.ndarray:
    pts = cloud.inside
    return np.sum((mfield.rho[pts] * cloud.cell_measure[pts])[:, None] * v[pts], axis=0)


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------


def count_fragments(cloud: PointCloud, gamma, large_fraction: float = 0.01) -> tuple[int, int]:
    """Large and small fragments of the intact-bond graph over in-domain points.

    Components holding at least ``large_fraction`` of the points are large;
    isolated single points are not counted.
    """
    pts = np.nonzero(cloud.inside)[0]
    local = np.full(cloud.n_points, -1)
    local[pts] = np.arange(len(pts))
    bi, bj = cloud.bonds()
    keep = np.asarray(gamma, dtype=bool) & (local[bi] >= 0) & (local[bj] >= 0)
    graph = sp.coo_matrix((np.ones(int(keep.sum())), (local[bi[keep]], local[bj[keep]])),
                          shape=(len(pts), len(pts)))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    large = int(np.sum(sizes >= large_fraction * len(pts)))
    small = int(np.sum((sizes < large_fraction * len(pts)) & (sizes > 1)))
    return large, small


@dataclass
class CrackFeatures:
    times: list = field(default_factory=list)
    tip_x: list = field(default_factory=list)
    tip_y: list = field(default_factory=list)
    speed: list = field(default_factory=list)
    branched: bool = False
    branch_time: float | None = None
    branch_x: float | None = None
    branch_y: float | None = None
    branch_angle: float | None = None

    @property
    def max_speed(self) -> float:
        vals = [s for s in self.speed if s is not None and np.isfinite(s)]
        return max(vals) if vals else float("nan")

    def as_dict(self) -> dict:
        return {
            "branched": self.branched,
            "branch_time": self.branch_time,
            "branch_x": self.branch_x,
            "branch_y": self.branch_y,
            "branch_angle_deg": self.branch_angle,
            "max_speed": None if not self.speed else self.max_speed,
            "times": list(self.times),
            "tip_x": list(self.tip_x),
            "tip_y": list(self.tip_y),
            "speed": list(self.speed),
        }


def _lattice_image(lattice, mask):
    lat = lattice[mask]
    lo = lattice.min(axis=0)
    shape = tuple(lattice.max(axis=0) - lo + 1)
    img = np.zeros(shape, dtype=bool)
    img[tuple((lat - lo).T)] = True
    return img, lo


def _components(lattice, idx):
    """8-connected labels of the lattice points ``idx`` (labels aligned with idx)."""
    if len(idx) == 0:
        return np.zeros(0, dtype=int), 0
    sel = np.zeros(len(lattice), dtype=bool)
    sel[idx] = True
    img, lo = _lattice_image(lattice, sel)
    labels, count = ndimage.label(img, structure=np.ones((3, 3), dtype=int))
    lab = labels[tuple((lattice[idx] - lo).T)]
    return lab, count


def _line_direction(points):
    pts = np.asarray(points, float)
    c = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    d = vt[0]
    # orient along the propagation direction (+x)
    return d if d[0] >= 0 else -d


def extract_crack_features(cloud: PointCloud, times, damages, threshold: float = CRACK_THRESHOLD,
                           smooth: int = 1, fit_points: int = 20, min_strip: int = 2) -> CrackFeatures:
    """Crack tip history, speed and branching from damage snapshots.

    Tips are the damaged points (φ > threshold) with maximal x.  Speeds are
    least-squares slopes of tip x over ``2*smooth+1`` snapshots (``smooth=0``
    gives plain forward differences).  Branching is the first snapshot where
    the damaged points inside the strip between the previous and the current
    tip (at least ``min_strip`` lattice columns wide) form two or more
    8-connected components; the branch angle is the angle between lines
    fitted through the branch point and up to ``fit_points`` later tips of
    the two branches.
    """
    feats = CrackFeatures()
    lat = cloud.lattice
    x = cloud.positions
    h = cloud.h
    times = [float(t) for t in times]
    masks = [np.asarray(dmg) > threshold for dmg in damages]
    masks = [m & cloud.inside for m in masks]
    tips = []
    for t, m in zip(times, masks):
        idx = np.nonzero(m)[0]
        if len(idx) == 0:
            continue
        k = idx[np.argmax(x[idx, 0])]
        feats.times.append(t)
        feats.tip_x.append(float(x[k, 0]))
        feats.tip_y.append(float(x[k, 1]))
        tips.append(k)
    if not feats.times:
        return feats
    tt = np.asarray(feats.times)
    tx = np.asarray(feats.tip_x)
    for q in range(len(tt)):
        if smooth <= 0:
            feats.speed.append(float((tx[q] - tx[q - 1]) / (tt[q] - tt[q - 1])) if q > 0 else None)
            continue
        lo, hi = max(0, q - smooth), min(len(tt), q + smooth + 1)
        if hi - lo < 2:
            feats.speed.append(None)
        else:
            feats.speed.append(float(np.polyfit(tt[lo:hi], tx[lo:hi], 1)[0]))

    # branching (damage is monotone, so every snapshot after the first damaged one has a tip)
    first = next(q for q, m in enumerate(masks) if np.any(m))
    for q in range(first + 1, len(masks)):
        prev_tip = feats.tip_x[q - 1 - first]
        cur_tip = feats.tip_x[q - first]
        lo_x = min(prev_tip, cur_tip - min_strip * h)
        idx = np.nonzero(masks[q] & (x[:, 0] >= lo_x - 1e-12) & (x[:, 0] <= cur_tip + 1e-12))[0]
        _, count = _components(lat, idx)
        if count >= 2:
            feats.branched = True
            feats.branch_time = times[q]
            bx, by = _branch_point(cloud, masks[q], lo_x)
            feats.branch_x, feats.branch_y = bx, by
            feats.branch_angle = _branch_angle(cloud, masks[q:], (bx, by), fit_points)
            break
    return feats


def _branch_point(cloud: PointCloud, mask, start_x):
    """Walk left from ``start_x`` to the last lattice column holding one damaged run."""
    x = cloud.positions
    lat = cloud.lattice
    idx = np.nonzero(mask)[0]
    cols = lat[idx, 0]
    col_x = {}
    for c in np.unique(cols):
        col_x[c] = float(np.mean(x[idx[cols == c], 0]))
    start_col = min(col_x, key=lambda c: abs(col_x[c] - start_x))
    c = start_col
    while c in col_x:
        rows = np.sort(lat[idx[cols == c], 1])
        runs = 1 + int(np.sum(np.diff(rows) > 1))
        if runs == 1:
            sel = idx[cols == c]
            return col_x[c], float(np.mean(x[sel, 1]))
        c -= 1
    sel = idx[cols == start_col]
    return col_x[start_col], float(np.mean(x[sel, 1]))


def _branch_angle(cloud: PointCloud, masks, point, fit_points):
    """Angle (degrees) between the two largest branches ahead of ``point``."""
    x = cloud.positions
    bx, by = point
    tips = {0: [], 1: []}
    for m in masks[: fit_points + 1]:
        idx = np.nonzero(m & (x[:, 0] > bx + 0.5 * cloud.h))[0]
        lab, count = _components(cloud.lattice, idx)
        if count < 2:
            continue
        sizes = np.bincount(lab)[1:]
        big = np.argsort(sizes)[::-1][:2] + 1
        found = []
        for b in big:
            sel = idx[lab == b]
            k = sel[np.argmax(x[sel, 0])]
            found.append(x[k])
        found.sort(key=lambda p: p[1])
        tips[0].append(found[1])  # upper
        tips[1].append(found[0])  # lower
    if not tips[0]:
        return None
    dirs = [_line_direction([point] + tips[b]) for b in (0, 1)]
    cosang = np.clip(np.dot(dirs[0], dirs[1]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)))


def write_snapshot_csv(path, cloud: PointCloud, snap: Snapshot, header: str = ""):
    pts = np.nonzero(cloud.inside)[0]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "ux", "uy", "damage"])
        for i in pts:
            w.writerow([repr(float(cloud.positions[i, 0])), repr(float(cloud.positions[i, 1])),
                        repr(float(snap.u[i, 0])), repr(float(snap.u[i, 1])), repr(float(snap.damage[i]))])
