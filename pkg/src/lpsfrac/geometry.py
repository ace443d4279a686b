"""Domains, point clouds, region tags, neighbor search and boundary frames.

Domains are described by a signed distance function (negative inside) and a
list of boundary primitives, each carrying a boundary-condition kind.  The
primitives give unsigned distances to the Dirichlet and Neumann parts of the
boundary, closest-point projections, outward normals and the segment
crossing tests used to break bonds across traction boundaries.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, FrameDegenerate

log = logging.getLogger(__name__)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# boundary membership tolerance, relative to the lattice spacing
INSIDE_TOL = 1e-9
TIE_TOL = 1e-12


class Region(IntEnum):
    INTERIOR_BULK = 0
    INTERIOR_NEAR_NEUMANN = 1
    DIRICHLET_COLLAR = 2
    EXTERIOR_NEUMANN = 3
    UNUSED = 4


REGION_NAMES = {
    Region.INTERIOR_BULK: "InteriorBulk",
    Region.INTERIOR_NEAR_NEUMANN: "InteriorNearNeumann",
    Region.DIRICHLET_COLLAR: "DirichletCollar",
    Region.EXTERIOR_NEUMANN: "ExteriorNeumann",
    Region.UNUSED: "Unused",
}


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 2)


def _orient(a, b, c):
    """Twice the signed area of triangles (a, b, c), broadcasting over rows."""
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
        b[..., 1] - a[..., 1]
    ) * (c[..., 0] - a[..., 0])


# ---------------------------------------------------------------------------
# Boundary primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Straight boundary piece from ``a`` to ``b``.

    ``normal`` is the outward normal used for points lying on the segment.
    Two-sided pieces (slits, pre-cracks) set ``two_sided`` so the outward
    normal seen by a point is the direction from the point to the slit.
    """

    a: tuple
    b: tuple
    kind: str
    normal: tuple = (0.0, 1.0)
    two_sided: bool = False

    def closest(self, x):
        x = _as_points(x)
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        ab = b - a
        t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
        return a + t[:, None] * ab

    def distance(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.closest(x), axis=1)

    def outward_normal(self, x, xbar):
        x = _as_points(x)
        n = np.tile(np.asarray(self.normal, float), (len(x), 1))
        if self.two_sided:
            a = np.asarray(self.a, float)
            side = (x - a) @ np.asarray(self.normal, float)
            n[side > 0] *= -1.0
        return n

    def across(self, x, tol):
        """Strictly on the outer side of the supporting line."""
        x = _as_points(x)
        side = (x - np.asarray(self.a, float)) @ np.asarray(self.normal, float)
        if self.two_sided:
            return np.abs(side) > tol
        return side > tol

    def crosses(self, p, q):
        """True where segment p->q properly crosses this piece.

        Touching (an endpoint on the piece, or collinear overlap) is not a
        crossing.
        """
        p = _as_points(p)
        q = _as_points(q)
        a = np.asarray(self.a, float)[None, :]
        b = np.asarray(self.b, float)[None, :]
        scale = np.linalg.norm(b - a) * np.maximum(np.linalg.norm(q - p, axis=1), 1e-300)
        eps = 1e-12 * scale
        o1 = _orient(a, b, p)
        o2 = _orient(a, b, q)
        o3 = _orient(p, q, a)
        o4 = _orient(p, q, b)
        s1 = np.where(np.abs(o1) <= eps, 0, np.sign(o1))
        s2 = np.where(np.abs(o2) <= eps, 0, np.sign(o2))
        s3 = np.where(np.abs(o3) <= eps, 0, np.sign(o3))
        s4 = np.where(np.abs(o4) <= eps, 0, np.sign(o4))
        return (s1 * s2 < 0) & (s3 * s4 < 0)


@dataclass(frozen=True)
class Circle:
    """Full circle boundary.  ``hole`` means Ω lies outside the circle."""

    center: tuple
    radius: float
    kind: str
    hole: bool = True

    def closest(self, x):
        x = _as_points(x)
        c = np.asarray(self.center, float)
        d = x - c
        r = np.linalg.norm(d, axis=1)
        safe = np.where(r > 0, r, 1.0)
        dirs = d / safe[:, None]
        dirs[r == 0] = (1.0, 0.0)
        return c + self.radius * dirs

    def distance(self, x):
        x = _as_points(x)
        r = np.linalg.norm(x - np.asarray(self.center, float), axis=1)
        return np.abs(r - self.radius)

    def outward_normal(self, x, xbar):
        radial = (_as_points(xbar) - np.asarray(self.center, float)) / self.radius
        return -radial if self.hole else radial

    def across(self, x, tol):
        r = np.linalg.norm(_as_points(x) - np.asarray(self.center, float), axis=1)
        return r < self.radius - tol if self.hole else r > self.radius + tol

    def crosses(self, p, q):
        """True where p->q passes through the exterior side of the circle.

        For a hole that is the open disk; for an outer boundary it is the
        region beyond the circle.  Tangent segments and segments that only
        touch the circle at an endpoint are not crossings.
        """
        p = _as_points(p)
        q = _as_points(q)
        c = np.asarray(self.center, float)
        d = q - p
        f = p - c
        A = np.einsum("ij,ij->i", d, d)
        B = 2.0 * np.einsum("ij,ij->i", f, d)
        C = np.einsum("ij,ij->i", f, f) - self.radius**2
        disc = B * B - 4 * A * C
        ok = (disc > 1e-14 * (B * B + np.abs(4 * A * C))) & (A > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        A_safe = np.where(A > 0, A, 1.0)
        t1 = (-B - sq) / (2 * A_safe)
        t2 = (-B + sq) / (2 * A_safe)
        tol = 1e-12
        if self.hole:
            lo = np.maximum(t1, 0.0)
            hi = np.minimum(t2, 1.0)
            return ok & (hi - lo > tol)
        # outer boundary: parts of [0,1] outside (t1, t2)
        out_before = np.minimum(t1, 1.0) - 0.0 > tol
        out_after = 1.0 - np.maximum(t2, 0.0) > tol
        return ok & (out_before | out_after) | (~ok & (C > 0))


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


@dataclass
class Domain:
    """Signed-distance domain with a Dirichlet/Neumann boundary partition."""

    name: str
    sdf: Callable[[np.ndarray], np.ndarray]
    boundary: Sequence
    bbox: tuple

    def _distance(self, x, kind):
        x = _as_points(x)
        parts = [p for p in self.boundary if p.kind == kind]
        if not parts:
            return np.full(len(x), np.inf)
        return np.min([p.distance(x) for p in parts], axis=0)

    def dirichlet_distance(self, x):
        return self._distance(x, DIRICHLET)

    def neumann_distance(self, x):
        return self._distance(x, NEUMANN)

    @property
    def neumann_parts(self):
        return [p for p in self.boundary if p.kind == NEUMANN]

    def across_nearest_neumann(self, x, tol):
        """True where a closest Neumann piece has x strictly on its outer side."""
        x = _as_points(x)
        parts = self.neumann_parts
        out = np.zeros(len(x), dtype=bool)
        if not parts:
            return out
        dists = np.array([p.distance(x) for p in parts])
        dmin = dists.min(axis=0)
        for k, part in enumerate(parts):
            out |= (dists[k] <= dmin + tol) & part.across(x, tol)
        return out

    def crosses_neumann(self, p, q):
        p = _as_points(p)
        out = np.zeros(len(p), dtype=bool)
        for part in self.neumann_parts:
            out |= part.crosses(p, q)
        return out

    def project_neumann(self, x):
        """Closest point on the Neumann boundary, its outward normal and
        the number of Neumann pieces with distinct normals within ``reach``."""
        x = _as_points(x)
        parts = self.neumann_parts
        if not parts:
            raise ConfigurationError(f"domain {self.name} has no Neumann boundary")
        dists = np.array([p.distance(x) for p in parts])
        best = np.argmin(dists, axis=0)
        xbar = np.empty_like(x)
        normal = np.empty_like(x)
        for k, part in enumerate(parts):
            sel = best == k
            if np.any(sel):
                xb = part.closest(x[sel])
                xbar[sel] = xb
                normal[sel] = part.outward_normal(x[sel], xb)
        return xbar, normal, dists


def box_sdf(x0, y0, x1, y1):
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)

    def sdf(x):
        x = _as_points(x)
        qx = np.abs(x[:, 0] - cx) - hx
        qy = np.abs(x[:, 1] - cy) - hy
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        return outside + np.minimum(np.maximum(qx, qy), 0.0)

    return sdf


def _box_edges(x0, y0, x1, y1, kinds: dict):
    return [
        Segment((x0, y0), (x1, y0), kinds.get("bottom", DIRICHLET), (0.0, -1.0)),
        Segment((x1, y0), (x1, y1), kinds.get("right", DIRICHLET), (1.0, 0.0)),
        Segment((x1, y1), (x0, y1), kinds.get("top", DIRICHLET), (0.0, 1.0)),
        Segment((x0, y1), (x0, y0), kinds.get("left", DIRICHLET), (-1.0, 0.0)),
    ]


def square_domain(half_width=np.pi / 2, neumann_edges=(), name="square"):
    """Square [-w, w]^2; listed edges ('top', 'right', ...) carry tractions."""
    w = float(half_width)
    kinds = {e: NEUMANN for e in neumann_edges}
    return Domain(name, box_sdf(-w, -w, w, w), _box_edges(-w, -w, w, w, kinds), (-w, -w, w, w))


def square_with_hole(half_width=0.5, radius=0.2, name="hole"):
    """Dirichlet square perimeter with a traction-free circular hole."""
    w = float(half_width)
    outer = box_sdf(-w, -w, w, w)

    def sdf(x):
        x = _as_points(x)
        return np.maximum(outer(x), radius - np.linalg.norm(x, axis=1))

    parts = _box_edges(-w, -w, w, w, {}) + [Circle((0.0, 0.0), radius, NEUMANN, hole=True)]
    return Domain(name, sdf, parts, (-w, -w, w, w))


def annulus_domain(r_in, r_out, inner_kind=NEUMANN, outer_kind=DIRICHLET, name="annulus"):
    def sdf(x):
        r = np.linalg.norm(_as_points(x), axis=1)
        return np.maximum(r - r_out, r_in - r)

    parts = [
        Circle((0.0, 0.0), r_in, inner_kind, hole=True),
        Circle((0.0, 0.0), r_out, outer_kind, hole=False),
    ]
    return Domain(name, sdf, parts, (-r_out, -r_out, r_out, r_out))


def plate_with_slit(width, height, crack_length, name="plate"):
    """Traction plate [0, W] x [0, H] with a slit from the left edge at mid-height."""
    parts = _box_edges(0.0, 0.0, width, height, {e: NEUMANN for e in ("top", "bottom", "left", "right")})
    yc = 0.5 * height
    parts.append(Segment((0.0, yc), (crack_length, yc), NEUMANN, (0.0, 1.0), two_sided=True))
    return Domain(name, box_sdf(0.0, 0.0, width, height), parts, (0.0, 0.0, width, height))


def polygon_sdf(vertices):
    v = np.asarray(vertices, float)
    edges = [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    def sdf(x):
        x = _as_points(x)
        d = np.full(len(x), np.inf)
        inside = np.zeros(len(x), dtype=bool)
        for a, b in edges:
            ab = b - a
            t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.minimum(d, np.linalg.norm(x - (a + t[:, None] * ab), axis=1))
            # even-odd ray cast toward +x
            cond = (a[1] > x[:, 1]) != (b[1] > x[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = a[0] + (x[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (x[:, 0] < xc)
        return np.where(inside, -d, d)

    return sdf


def polygon_domain(vertices, kinds=None, name="polygon"):
    """Simple polygon listed counterclockwise; ``kinds`` per edge (default Neumann)."""
    v = np.asarray(vertices, float)
    n = len(v)
    kinds = kinds or [NEUMANN] * n
    parts = []
    for k in range(n):
        a, b = v[k], v[(k + 1) % n]
        t = b - a
        normal = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        parts.append(Segment(tuple(a), tuple(b), kinds[k], tuple(normal)))
    bbox = (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())
    return Domain(name, polygon_sdf(v), parts, bbox)


# ---------------------------------------------------------------------------
# Point cloud
# ---------------------------------------------------------------------------


@dataclass
class PointCloud:
    positions: np.ndarray
    region: np.ndarray
    cell_measure: np.ndarray
    h: float
    delta: float
    sdf: np.ndarray
    dist_dirichlet: np.ndarray
    dist_neumann: np.ndarray
    lattice: np.ndarray
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return len(self.positions)

    @property
    def inside(self) -> np.ndarray:
        return (self.region == Region.INTERIOR_BULK) | (self.region == Region.INTERIOR_NEAR_NEUMANN)

    @property
    def has_dirichlet_value(self) -> np.ndarray:
        """Exterior points where a prescribed displacement is available."""
        return (~self.inside) & (self.dist_dirichlet < 2 * self.delta)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def bonds(self):
        """Flat (i, j) arrays over all directed bonds, grouped by i."""
        counts = np.diff(self.indptr)
        return np.repeat(np.arange(self.n_points), counts), self.indices

    def neighbor_counts(self):
        return np.diff(self.indptr)


def classify_regions(cloud: PointCloud, domain: Domain) -> PointCloud:
    """Assign region tags from the signed distance and boundary distances.

    Exterior points closer to the traction boundary than to the Dirichlet
    boundary are exterior-Neumann points; their bonds to the interior are
    broken.  Equidistant points (the region beyond a corner where the two
    parts meet) go to the traction side only when they lie strictly beyond
    a closest traction piece, so points on the extension of a traction edge
    stay in the Dirichlet collar.  Exterior points within 2δ of the
    Dirichlet boundary keep a prescribed value regardless of their tag.
    """
    x = cloud.positions
    delta = cloud.delta
    sdf = domain.sdf(x)
    dD = domain.dirichlet_distance(x)
    dN = domain.neumann_distance(x)
    inside = sdf <= INSIDE_TOL * cloud.h
    scale = max(abs(v) for v in domain.bbox) + delta
    tie = np.abs(dN - dD) <= TIE_TOL * scale
    across = domain.across_nearest_neumann(x, TIE_TOL * scale)
    neumann_side = ((dN < dD) & ~tie) | (tie & across)
    n_tie = int(np.sum(tie & ~inside & (dN < delta) & np.isfinite(dD)))
    if n_tie:
        log.info("%d exterior points equidistant from both boundary parts; %d assigned to the traction side",
                 n_tie, int(np.sum(tie & across & ~inside & (dN < delta))))
    region = np.full(len(x), Region.UNUSED, dtype=np.int8)
    region[inside & (dN < delta)] = Region.INTERIOR_NEAR_NEUMANN
    region[inside & ~(dN < delta)] = Region.INTERIOR_BULK
    out = ~inside
    ext_n = out & neumann_side & (dN < delta)
    collar = out & ~ext_n & (dD < 2 * delta)
    region[ext_n] = Region.EXTERIOR_NEUMANN
    region[collar] = Region.DIRICHLET_COLLAR
    region[out & ~ext_n & ~collar & (dN < delta)] = Region.EXTERIOR_NEUMANN
    return replace(cloud, region=region, sdf=sdf, dist_dirichlet=dD, dist_neumann=dN)


def generate_grid(domain: Domain, h: float, delta: float, perturb_r: float = 0.0, seed: int = 0,
                  offset: float = 0.0) -> PointCloud:
    """Lattice cloud at spacing h over the bounding box inflated by 2δ.

    The lattice is anchored at the lower-left bbox corner shifted by
    ``offset*h`` in both directions (``offset=0.5`` gives cell centers).
    Every lattice point receives a uniform perturbation in
    [-perturb_r*h, perturb_r*h]^2 drawn from ``seed``; points classified as
    unused are then dropped.
    """
    if not h > 0 or not delta > 0:
        raise ConfigurationError("h and delta must be positive")
    if not 0.0 <= perturb_r <= 0.2:
        raise ConfigurationError("perturbation ratio must lie in [0, 0.2]")
    x0, y0, x1, y1 = domain.bbox
    if h > min(x1 - x0, y1 - y0):
        raise ConfigurationError("grid spacing larger than the domain")
    pad = int(np.ceil(2 * delta / h)) + 1
    nx = int(np.floor((x1 - x0) / h + 1e-9)) + 1
    ny = int(np.floor((y1 - y0) / h + 1e-9)) + 1
    kx = np.arange(-pad, nx + pad)
    ky = np.arange(-pad, ny + pad)
    KX, KY = np.meshgrid(kx, ky, indexing="xy")
    lattice = np.column_stack([KX.ravel(), KY.ravel()])
    pts = np.column_stack([x0 + (lattice[:, 0] + offset) * h, y0 + (lattice[:, 1] + offset) * h])
    if perturb_r > 0:
        rng = np.random.default_rng(seed)
        pts = pts + rng.uniform(-perturb_r * h, perturb_r * h, size=pts.shape)
    n = len(pts)
    cloud = PointCloud(
        positions=pts,
        region=np.zeros(n, np.int8),
        cell_measure=np.full(n, h * h),
        h=float(h),
        delta=float(delta),
        sdf=np.zeros(n),
        dist_dirichlet=np.zeros(n),
        dist_neumann=np.zeros(n),
        lattice=lattice,
        meta={"domain": domain.name, "perturb_r": perturb_r, "seed": seed, "offset": offset},
    )
    cloud = classify_regions(cloud, domain)
    keep = cloud.region != Region.UNUSED
    if not np.any(cloud.inside):
        raise ConfigurationError("no points inside the domain")
    cloud = subset(cloud, keep)
    return build_neighbors(cloud)


def subset(cloud: PointCloud, keep: np.ndarray) -> PointCloud:
    """Restrict per-point arrays to ``keep`` (neighbor lists are dropped)."""
    return replace(
        cloud,
        positions=cloud.positions[keep],
        region=cloud.region[keep],
        cell_measure=cloud.cell_measure[keep],
        sdf=cloud.sdf[keep],
        dist_dirichlet=cloud.dist_dirichlet[keep],
        dist_neumann=cloud.dist_neumann[keep],
        lattice=cloud.lattice[keep],
        indptr=None,
        indices=None,
    )


def build_neighbors(cloud: PointCloud) -> PointCloud:
    """Symmetric neighbor lists within δ via uniform bins of size δ."""
    x = cloud.positions
    n = len(x)
    delta = cloud.delta
    if n == 0:
        return replace(cloud, indptr=np.zeros(1, np.int64), indices=np.zeros(0, np.int64))
    lo = x.min(axis=0)
    cell = np.floor((x - lo) / delta).astype(np.int64)
    ncx, ncy = cell.max(axis=0) + 1
    cid = cell[:, 0] * ncy + cell[:, 1]
    order = np.argsort(cid, kind="stable")
    sorted_cid = cid[order]
    starts = np.searchsorted(sorted_cid, np.arange(ncx * ncy), side="left")
    ends = np.searchsorted(sorted_cid, np.arange(ncx * ncy), side="right")
    occ = ends - starts
    width = int(occ.max())
    table = np.full((ncx * ncy, width), -1, dtype=np.int64)
    slot = np.arange(n) - starts[sorted_cid]
    table[sorted_cid, slot] = order
    r2max = delta * delta * (1 + 1e-10)
    src_list, dst_list = [], []
    cx, cy = np.divmod(np.arange(ncx * ncy), ncy)
    occupied = occ > 0
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            tx, ty = cx + ox, cy + oy
            valid = occupied & (tx >= 0) & (tx < ncx) & (ty >= 0) & (ty < ncy)
            a_cells = np.nonzero(valid)[0]
            b_cells = tx[valid] * ncy + ty[valid]
            A = table[a_cells][:, :, None]
            B = table[b_cells][:, None, :]
            A, B = np.broadcast_arrays(A, B)
            ok = (A >= 0) & (B >= 0) & (A != B)
            ai, bj = A[ok], B[ok]
            d = x[bj] - x[ai]
            close = np.einsum("ij,ij->i", d, d) <= r2max
            src_list.append(ai[close])
            dst_list.append(bj[close])
    src = np.concatenate(src_list)
    dst = np.concatenate(dst_list)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return replace(cloud, indptr=indptr, indices=dst)


def write_cloud_csv(path, cloud: PointCloud, header: str = ""):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "region", "cell_measure"])
        for (px, py), reg, cm in zip(cloud.positions, cloud.region, cloud.cell_measure):
            w.writerow([repr(float(px)), repr(float(py)), REGION_NAMES[Region(reg)], repr(float(cm))])


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

ESTIMATED = "estimated"
EXACT = "exact"


@dataclass
class Frame:
    normal: np.ndarray
    tangent: np.ndarray
    xbar: np.ndarray
    source: str


@dataclass
class Frames:
    """Per-point boundary frames; rows for points without a frame are nan."""

    normal: np.ndarray
    tangent: np.ndarray
    xbar: np.ndarray
    source: np.ndarray  # object array of ESTIMATED / EXACT / ""

    def __getitem__(self, i) -> Frame:
        return Frame(self.normal[i], self.tangent[i], self.xbar[i], self.source[i])

    @classmethod
    def empty(cls, n):
        nan = np.full((n, 2), np.nan)
        return cls(nan.copy(), nan.copy(), nan.copy(), np.full(n, "", dtype=object))


def rotate_ccw(v):
    v = np.asarray(v, float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def intact_first_moment(cloud: PointCloud, w_intact: np.ndarray) -> np.ndarray:
    """Σ_j (x_j − x_i) ω̃_{j,i} for every point."""
    bi, bj = cloud.bonds()
    xi = cloud.positions[bj] - cloud.positions[bi]
    out = np.zeros((cloud.n_points, 2))
    out[:, 0] = np.bincount(bi, weights=xi[:, 0] * w_intact, minlength=cloud.n_points)
    out[:, 1] = np.bincount(bi, weights=xi[:, 1] * w_intact, minlength=cloud.n_points)
    return out


def _normalise(s, cloud, idx):
    norm = np.linalg.norm(s, axis=1)
    # a vanishing sum relative to its natural scale means no usable direction
    scale = cloud.delta**3
    bad = norm <= 1e-12 * scale
    n = -s / np.where(bad, 1.0, norm)[:, None]
    return n, bad


def estimate_frame(cloud: PointCloud, i: int, w_intact: np.ndarray, domain: Domain | None = None) -> Frame:
    """Frame at point ``i`` from the intact-bond first moment.

    n = −Σ(x_j − x_i)ω̃ / |·|, p = n rotated by +90°, and x̄ = x + d_N(x) n.
    """
    s = intact_first_moment_point(cloud, i, w_intact)
    n, bad = _normalise(s[None, :], cloud, i)
    if bad[0]:
        raise FrameDegenerate(f"no intact first moment at point {i}")
    n = n[0]
    xbar = cloud.positions[i] + cloud.dist_neumann[i] * n
    return Frame(n, rotate_ccw(n), xbar, ESTIMATED)


def intact_first_moment_point(cloud, i, w_intact):
    lo, hi = cloud.indptr[i], cloud.indptr[i + 1]
    nb = cloud.indices[lo:hi]
    xi = cloud.positions[nb] - cloud.positions[i]
    return (xi * w_intact[lo:hi, None]).sum(axis=0)


def build_frames(cloud: PointCloud, points: np.ndarray, w_intact: np.ndarray, domain: Domain | None,
                 mode: str = ESTIMATED, previous: Frames | None = None) -> Frames:
    """Frames for the listed points.

    Estimated frames come from the intact-bond first moment.  Exact frames
    project onto the closest Neumann piece; points within δ of two Neumann
    pieces with different normals (corners) keep the estimated frame and use
    x̄ = x.  Degenerate estimates fall back to ``previous`` when available.
    """
    n_pts = cloud.n_points
    frames = Frames.empty(n_pts) if previous is None else Frames(
        previous.normal.copy(), previous.tangent.copy(), previous.xbar.copy(), previous.source.copy())
    points = np.asarray(points, dtype=np.int64)
    if len(points) == 0:
        return frames
    s = intact_first_moment(cloud, w_intact)[points]
    n_est, bad = _normalise(s, cloud, points)
    x = cloud.positions[points]
    corner = np.zeros(len(points), dtype=bool)
    xbar_exact = normal_exact = None
    if domain is not None and domain.neumann_parts:
        xbar_exact, normal_exact, dists = domain.project_neumann(x)
        parts = domain.neumann_parts
        near = dists < cloud.delta
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                both = near[a] & near[b]
                if not np.any(both):
                    continue
                na = parts[a].outward_normal(x[both], parts[a].closest(x[both]))
                nb = parts[b].outward_normal(x[both], parts[b].closest(x[both]))
                distinct = np.abs(np.einsum("ij,ij->i", na, nb)) < 1 - 1e-9
                idx = np.nonzero(both)[0][distinct]
                corner[idx] = True
    if mode == EXACT and xbar_exact is not None:
        use_exact = ~corner
    else:
        use_exact = np.zeros(len(points), dtype=bool)
    dN = cloud.dist_neumann[points]
    dN = np.where(np.isfinite(dN), dN, 0.0)
    xbar_est = np.where(corner[:, None], x, x + dN[:, None] * n_est)
    for k, i in enumerate(points):
        if use_exact[k]:
            nrm = normal_exact[k]
            frames.normal[i] = nrm
            frames.tangent[i] = rotate_ccw(nrm)
            frames.xbar[i] = xbar_exact[k]
            frames.source[i] = EXACT
        elif not bad[k]:
            frames.normal[i] = n_est[k]
            frames.tangent[i] = rotate_ccw(n_est[k])
            frames.xbar[i] = xbar_est[k]
            frames.source[i] = ESTIMATED
        elif previous is None or not np.all(np.isfinite(frames.normal[i])):
            # no history available: any unit frame works, the caller only
            # reaches this for points whose intact bonds have all vanished
            frames.normal[i] = (1.0, 0.0)
            frames.tangent[i] = (0.0, 1.0)
            frames.xbar[i] = cloud.positions[i]
            frames.source[i] = ESTIMATED
    return frames
