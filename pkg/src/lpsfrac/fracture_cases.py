"""Dynamic fracture benchmarks: pre-cracked glass plate, V-notched plate
under impact, and a pressurized steel ring."""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (CrackFeatures, DynamicLoad, FractureCriterion, FractureState, NewmarkIntegrator, Snapshot,
                       count_fragments, extract_crack_features)
from .errors import ConfigurationError
from .geometry import NEUMANN, Domain, PointCloud, annulus_domain, generate_grid, plate_with_slit, polygon_domain
from .lps import Material, MaterialField
from .quadrature import build_rule, mask_from_domain

log = logging.getLogger(__name__)

GLASS = Material.from_youngs(72e9, 0.23, rho=2440.0, G0=3.8)
GLASS_VNOTCH = Material.from_youngs(70e9, 0.22, rho=2500.0, G0=8.0, plane="stress")
STEEL = Material.from_youngs(200e9, 0.3, rho=7800.0, G0=1.125e5)
RAYLEIGH_GLASS = 3102.0


@dataclass
class FractureCase:
    name: str
    domain: Domain
    cloud: PointCloud
    weights: np.ndarray
    gamma: np.ndarray
    material: Material
    load: DynamicLoad
    dt: float
    n_steps: int
    snapshot_every: int
    meta: dict = field(default_factory=dict)

    @property
    def criterion(self) -> FractureCriterion:
        return FractureCriterion.from_material(self.material, self.cloud.delta)

    def integrator(self, solver: str = "direct", breaking: bool = True) -> NewmarkIntegrator:
        mfield = MaterialField.uniform(self.material, self.cloud.n_points)
        return NewmarkIntegrator(self.cloud, self.weights, self.gamma, mfield, self.load, self.dt,
                                 criterion=self.criterion if breaking else None, domain=self.domain,
                                 solver=solver)


def _discretize(domain, h, delta, perturb=0.0, seed=0):
    cloud = generate_grid(domain, h, delta, perturb, seed, offset=0.5)
    rule = build_rule(cloud)
    gamma = mask_from_domain(cloud, domain)
    return cloud, rule.weights, gamma


def _steps(dt, t_end):
    if not (dt > 0 and t_end > 0):
        raise ConfigurationError("time step and end time must be positive")
    return int(round(t_end / dt))


def glass_case(h=5e-4, m_ratio=4.0, dt=6.25e-8, t_end=42e-6, sigma=2e6, width=0.1, height=0.04,
               crack_length=0.05, snapshot_dt=1e-6, perturb=0.0, seed=0) -> FractureCase:
    """Pre-cracked plate pulled by a constant traction σ on top and bottom."""
    domain = plate_with_slit(width, height, crack_length, name="glass_branch")
    delta = m_ratio * h
    cloud, w, gamma = _discretize(domain, h, delta, perturb, seed)
    y = cloud.positions[:, 1]
    loaded = cloud.inside & ((y > height - delta) | (y < delta))

    def traction(xbar, n):
        sign = np.where(xbar[:, 1] > 0.5 * height, 1.0, -1.0)
        return np.column_stack([np.zeros(len(xbar)), sign * sigma])

    load = DynamicLoad(traction=traction, traction_points=loaded)
    every = max(1, int(round(snapshot_dt / dt)))
    return FractureCase("glass_branch", domain, cloud, w, gamma, GLASS, load, dt, _steps(dt, t_end), every,
                        {"h": h, "delta": delta, "sigma": sigma})


def ring_case(particles=3124, m_ratio=4.0, dt=5e-8, t_end=2e-4, p0=2.5e9, t0=1e-5, r_in=0.08, r_out=0.15,
              perturb=0.2, seed=0, snapshot_dt=1e-5) -> FractureCase:
    """Steel ring under an exponentially decaying internal pressure p0·exp(−t/t0)."""
    area = math.pi * (r_out**2 - r_in**2)
    h = math.sqrt(area / particles)
    delta = m_ratio * h
    domain = annulus_domain(r_in, r_out, NEUMANN, NEUMANN, name="ring")
    cloud, w, gamma = _discretize(domain, h, delta, perturb, seed)
    r = np.linalg.norm(cloud.positions, axis=1)
    loaded = cloud.inside & (r < r_in + delta)

    def traction(xbar, n):
        # pressure pushes against the outward normal of the inner surface
        return -np.asarray(n, float)

    load = DynamicLoad(traction=traction, amplitude=lambda t: p0 * math.exp(-t / t0), traction_points=loaded)
    every = max(1, int(round(snapshot_dt / dt)))
    return FractureCase("ring", domain, cloud, w, gamma, STEEL, load, dt, _steps(dt, t_end), every,
                        {"h": h, "delta": delta, "particles": int(cloud.inside.sum()), "p0": p0, "t0": t0})


def vnotch_domain(width=0.15, height=0.1, depth=0.01, opening_deg=60.0) -> Domain:
    """Plate with a V-notch cut into the middle of the left edge."""
    yc = 0.5 * height
    hw = depth * math.tan(math.radians(0.5 * opening_deg))
    verts = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height), (0.0, yc + hw), (depth, yc), (0.0, yc - hw)]
    return polygon_domain(verts, name="vnotch")


def piecewise_linear(knots_t, knots_v):
    kt = np.asarray(knots_t, float)
    kv = np.asarray(knots_v, float)
    return lambda t: float(np.interp(t, kt, kv, left=kv[0], right=kv[-1]))


def vnotch_case(h=5e-4, m_ratio=4.0, dt=1.25e-7, t_end=60e-6, width=0.15, height=0.1, depth=0.01,
                opening_deg=60.0, peak=60e6, rise=20e-6, fall=60e-6, snapshot_dt=1e-6, perturb=0.0,
                seed=0) -> FractureCase:
    """V-notched plate loaded by a normal pressure on both notch faces.

    The pressure history is piecewise linear: 0 → ``peak`` at ``rise``,
    back to 0 at ``fall``.
    """
    domain = vnotch_domain(width, height, depth, opening_deg)
    delta = m_ratio * h
    cloud, w, gamma = _discretize(domain, h, delta, perturb, seed)
    faces = domain.boundary[4:6]
    dface = np.min([f.distance(cloud.positions) for f in faces], axis=0)
    loaded = cloud.inside & (dface < delta) & (cloud.positions[:, 0] < depth + delta)

    def traction(xbar, n):
        return -np.asarray(n, float)

    amp = piecewise_linear([0.0, rise, fall], [0.0, peak, 0.0])
    load = DynamicLoad(traction=traction, amplitude=amp, traction_points=loaded)
    every = max(1, int(round(snapshot_dt / dt)))
    return FractureCase("vnotch", domain, cloud, w, gamma, GLASS_VNOTCH, load, dt, _steps(dt, t_end), every,
                        {"h": h, "delta": delta, "width": width, "height": height, "depth": depth,
                         "opening_deg": opening_deg, "peak": peak})


@dataclass
class FractureResult:
    case: FractureCase
    state: FractureState
    snapshots: list
    features: CrackFeatures
    fragments: tuple
    wall_time: float
    rebuilds: int

    def summary(self) -> dict:
        out = {"problem": self.case.name, "steps": self.state.step, "t_end": self.state.t,
               "solves": self.state.solves, "rebuilds": self.rebuilds, "wall_time_s": self.wall_time,
               "n_points": int(self.case.cloud.inside.sum()), "s0": self.case.criterion.s0,
               "large_fragments": self.fragments[0], "small_fragments": self.fragments[1],
               "broken_bonds": int(np.sum(self.case.gamma & ~self.state.gamma))}
        out.update(self.features.as_dict())
        out.update({f"meta_{k}": v for k, v in self.case.meta.items()})
        return out


def run_fracture(case: FractureCase, solver: str = "direct", n_steps: int | None = None,
                 snapshot_every: int | None = None, progress: bool = False, smooth: int = 1) -> FractureResult:
    integ = case.integrator(solver)
    state = integ.initial_state()
    steps = case.n_steps if n_steps is None else n_steps
    every = case.snapshot_every if snapshot_every is None else snapshot_every
    t0 = _time.time()

    def report(st):
        if progress and st.step % max(1, every) == 0:
            log.info("%s step %d t=%.3e broken=%d solves=%d", case.name, st.step, st.t,
                     int(np.sum(case.gamma & ~st.gamma)), st.solves)

    state, snaps = integ.run(state, steps, snapshot_every=every, callback=report)
    # features always use the case cadence, extra snapshots are only for output
    use = [s for s in snaps if s.step % case.snapshot_every == 0] if every % case.snapshot_every == 0 or \
        case.snapshot_every % every == 0 else snaps
    feats = extract_crack_features(case.cloud, [s.t for s in use], [s.damage for s in use], smooth=smooth)
    frags = count_fragments(case.cloud, state.gamma)
    return FractureResult(case, state, snaps, feats, frags, _time.time() - t0, integ.rebuilds)


__all__ = ["FractureCase", "FractureResult", "glass_case", "ring_case", "vnotch_case", "vnotch_domain",
           "run_fracture", "Snapshot", "RAYLEIGH_GLASS"]
