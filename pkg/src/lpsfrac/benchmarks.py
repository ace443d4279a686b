"""Benchmark problem definitions and runners.

Static problems are described by a :class:`StaticCase` (domain, material
layout, boundary data, reference solution).  Dynamic fracture problems live
in :mod:`lpsfrac.fracture_cases`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import analytic
from .errors import ConfigurationError
from .geometry import (ESTIMATED, EXACT, Domain, PointCloud, annulus_domain, build_frames, generate_grid,
                       square_domain, square_with_hole)
from .lps import BondGeometry, Material, MaterialField
from .quadrature import build_rule, mask_from_domain, split_weights
from .static_solver import (BoundaryConditionSet, ConvergenceTable, Solution, assemble, broken_points,
                            convergence_study, l2_error, solve)

log = logging.getLogger(__name__)

STATIC_PROBLEMS = ("patch1", "patch2", "patch3", "manufactured1", "manufactured2", "manufactured3",
                   "hole", "disk", "composite")
DYNAMIC_PROBLEMS = ("glass_branch", "vnotch", "ring")
PROBLEMS = STATIC_PROBLEMS + DYNAMIC_PROBLEMS

_STATIC_DEFAULTS = {"m_ratio": 3.5}
PROBLEM_DEFAULTS = {
    **{p: {**_STATIC_DEFAULTS, "h": float(np.pi / 16)} for p in STATIC_PROBLEMS[:6]},
    "hole": {**_STATIC_DEFAULTS, "h": 1 / 40},
    "disk": {**_STATIC_DEFAULTS, "h": 1 / 16},
    "composite": {**_STATIC_DEFAULTS, "h": 1 / 20},
    "glass_branch": {"h": 5e-4, "m_ratio": 4.0, "dt": 6.25e-8, "t_end": 42e-6},
    "vnotch": {"h": 5e-4, "m_ratio": 4.0, "dt": 1.25e-7, "t_end": 60e-6},
    "ring": {"m_ratio": 4.0, "dt": 5e-8, "t_end": 2e-4, "particles": 3124},
}

SETTING_EDGES = {1: (), 2: ("top",), 3: ("top", "right")}


@dataclass
class BenchmarkSpec:
    """Flat description of one benchmark run.

    Dynamic-only fields (``dt``, ``t_end``, ``particles``, ``dump_every``)
    are ignored by static problems.  ``h_list`` turns a static run into a
    convergence study.  Zero for ``h``, ``m_ratio``, ``dt``, ``t_end`` or
    ``particles`` selects the problem default (see :meth:`resolved`).
    """

    problem: str = "patch1"
    h: float = 0.0
    m_ratio: float = 0.0
    nu: float = 0.3
    youngs: float = 1.0
    perturb: float = 0.0
    seed: int = 0
    normals: str = ESTIMATED
    dt: float = 0.0
    t_end: float = 0.0
    out: str = "out"
    h_list: tuple = ()
    nu2: float = -1.0
    bulk_ratio: float = 2.0
    particles: int = 0
    dump_every: int = 0
    solver: str = "auto"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.m_ratio != 0 and not 3.0 <= self.m_ratio <= 4.5:
            raise ConfigurationError("horizon ratio must lie in [3, 4.5]")
        if not self.nu < 0.5 or (self.nu2 >= 0.5):
            raise ConfigurationError("Poisson ratio must be below 0.5")
        if not (self.h >= 0 and self.youngs > 0 and self.dt >= 0 and self.t_end >= 0):
            raise ConfigurationError("lengths, times and moduli must be positive")
        if self.particles < 0 or self.dump_every < 0:
            raise ConfigurationError("particle count and dump interval must be non-negative")
        if self.solver not in ("auto", "direct", "iterative"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if any(h <= 0 for h in self.h_list):
            raise ConfigurationError("all grid spacings must be positive")
        if not self.bulk_ratio > 0:
            raise ConfigurationError("bulk modulus ratio must be positive")
        if self.normals not in (ESTIMATED, EXACT):
            raise ConfigurationError(f"normals must be {ESTIMATED!r} or {EXACT!r}")
        if not 0 <= self.perturb <= 0.2:
            raise ConfigurationError("perturbation ratio must lie in [0, 0.2]")

    # flat key = value config -------------------------------------------------
    def to_config(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "BenchmarkSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"malformed config line: {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigurationError(f"unknown config key {key!r}")
            proto = getattr(defaults, key)
            values[key] = _parse_value(proto, val)
        return cls(**values)

    @property
    def is_dynamic(self) -> bool:
        return self.problem in DYNAMIC_PROBLEMS

    def resolved(self) -> "BenchmarkSpec":
        """Copy with the problem defaults filled in."""
        d = PROBLEM_DEFAULTS[self.problem]
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("h", "m_ratio", "dt", "t_end", "particles"):
            if not vals[key] and key in d:
                vals[key] = d[key]
        if vals["solver"] == "auto":
            vals["solver"] = "iterative" if self.is_dynamic else "direct"
        return BenchmarkSpec(**vals)

    def describe(self) -> str:
        return " ".join(line.replace(" = ", "=") for line in self.to_config().splitlines())


def _parse_value(proto, val: str):
    if isinstance(proto, tuple):
        return tuple(float(x) for x in val.split(",") if x.strip())
    if isinstance(proto, bool):
        return val.lower() in ("1", "true", "yes")
    if isinstance(proto, int):
        return int(val)
    if isinstance(proto, float):
        return float(val)
    return val


# ---------------------------------------------------------------------------
# Static cases
# ---------------------------------------------------------------------------


@dataclass
class StaticCase:
    domain: Domain
    exact: object
    bcs: BoundaryConditionSet
    material_of: Callable  # positions -> MaterialField
    lattice_offset: float = 0.0
    label: str = ""


def _stress_traction(field_):
    def traction(xbar, n):
        return np.einsum("iab,ib->ia", field_.stress(xbar), n)

    return traction


def static_case(spec: BenchmarkSpec) -> StaticCase:
    """Reference problem for a static benchmark id."""
    prob = spec.problem
    E, nu = spec.youngs, spec.nu
    mat = Material.from_youngs(E, nu)
    uniform = lambda x: MaterialField.uniform(mat, len(x))  # noqa: E731
    if prob.startswith("patch") or prob.startswith("manufactured"):
        setting = int(prob[-1])
        dom = square_domain(np.pi / 2, SETTING_EDGES[setting], name=prob)
        if prob.startswith("patch"):
            fld = analytic.PatchField(mat.lam, mat.mu)
        else:
            fld = analytic.ManufacturedField(mat.lam, mat.mu, A=0.4)
        bcs = BoundaryConditionSet(fld.displacement, _stress_traction(fld), fld.body_force)
        return StaticCase(dom, fld, bcs, uniform, label=prob)
    if prob == "hole":
        dom = square_with_hole(0.5, 0.2)
        fld = analytic.HoleField(mat.lam, mat.mu, sigma0=1.0, a=0.2)
        bcs = BoundaryConditionSet(fld.displacement, body_force=fld.body_force)
        return StaticCase(dom, fld, bcs, uniform, label=prob)
    if prob == "disk":
        dom = annulus_domain(1.0, 1.5)
        fld = analytic.DiskField(E, nu, p0=0.1, R0=1.0, R1=1.5)
        bcs = BoundaryConditionSet(fld.displacement, _stress_traction(fld), fld.body_force)
        return StaticCase(dom, fld, bcs, uniform, label=prob)
    if prob == "composite":
        nu2 = nu if spec.nu2 < 0 else spec.nu2
        K2 = bulk_modulus(E, nu2)
        return composite_case(K1=spec.bulk_ratio * K2, nu1=nu, K2=K2, nu2=nu2)
    raise ConfigurationError(f"{prob} is not a static benchmark")


def bulk_modulus(E, nu):
    """Plane-strain bulk modulus λ + μ."""
    return E / (2 * (1 + nu) * (1 - 2 * nu))


def youngs_from_bulk(K, nu):
    return 2 * K * (1 + nu) * (1 - 2 * nu)


def composite_case(K1, nu1, K2, nu2, a=0.2, half_width=0.5, P=1.0) -> StaticCase:
    """Circular inclusion (bulk K1, ν1) of radius a in a matrix (K2, ν2)."""
    m1 = Material.from_youngs(youngs_from_bulk(K1, nu1), nu1)
    m2 = Material.from_youngs(youngs_from_bulk(K2, nu2), nu2)
    fld = analytic.InclusionField(m1.lam, m1.mu, m2.lam, m2.mu, a=a, P=P)
    dom = square_domain(half_width, (), name="composite")

    def material_of(x):
        inner = fld.phase(x) == 1
        lam = np.where(inner, m1.lam, m2.lam)
        mu = np.where(inner, m1.mu, m2.mu)
        return MaterialField(lam, mu, np.ones(len(x)))

    bcs = BoundaryConditionSet(fld.displacement, body_force=fld.body_force)
    return StaticCase(dom, fld, bcs, material_of, label="composite")


@dataclass
class StaticRun:
    cloud: PointCloud
    solution: Solution
    err_u: float
    err_theta: float
    meta: dict = field(default_factory=dict)


def run_static_case(case: StaticCase, h: float, delta: float, perturb: float = 0.0, seed: int = 0,
                    normals: str = ESTIMATED) -> StaticRun:
    """Discretize, solve and measure L² errors against the reference field."""
    cloud = generate_grid(case.domain, h, delta, perturb, seed, offset=case.lattice_offset)
    rule = build_rule(cloud)
    gamma = mask_from_domain(cloud, case.domain)
    bonds = BondGeometry.of(cloud)
    w_int, _ = split_weights(rule.weights, gamma)
    npts = broken_points(cloud, rule.weights, gamma)
    frames = build_frames(cloud, npts, w_int, case.domain, mode=normals)
    mfield = case.material_of(cloud.positions)
    system = assemble(cloud, rule.weights, gamma, frames, mfield, case.bcs, bonds=bonds)
    sol = solve(system)
    x = cloud.positions
    err_u = l2_error(cloud, sol.u, case.exact.displacement(x))
    err_t = l2_error(cloud, sol.theta, case.exact.divergence(x))
    return StaticRun(cloud, sol, err_u, err_t, {"residual": sol.residual, "dof": system.n_u,
                                                   "size": system.matrix.shape[0]})


def default_h_list(problem: str):
    if problem.startswith("patch") or problem.startswith("manufactured"):
        return (np.pi / 16, np.pi / 32, np.pi / 64)
    if problem == "hole":
        return (1 / 40, 1 / 80, 1 / 160)
    if problem == "disk":
        return (1 / 16, 1 / 32, 1 / 64)
    if problem == "composite":
        return (1 / 20, 1 / 40, 1 / 80)
    raise ConfigurationError(f"no default resolutions for {problem}")


def static_convergence(spec: BenchmarkSpec, h_list=None) -> ConvergenceTable:
    spec = spec.resolved()
    case = static_case(spec)
    h_list = tuple(h_list or spec.h_list or default_h_list(spec.problem))

    def run_one(h, delta):
        run = run_static_case(case, h, delta, spec.perturb, spec.seed, spec.normals)
        return run.err_u, run.err_theta

    return convergence_study(run_one, h_list, spec.m_ratio)


def inclusion_profile(Q: float, h: float, m_ratio: float = 3.5, K1: float = 2.0, nu: float = 0.25,
                      a: float = np.pi / 4, half_width: float = np.pi / 2):
    """u_x along y = 0, x > 0 for an inclusion with bulk ratio Q = K2/K1.

    Returns (x, numeric, exact, delta) sorted by x.
    """
    case = composite_case(K1=K1, nu1=nu, K2=Q * K1, nu2=nu, a=a, half_width=half_width)
    delta = m_ratio * h
    run = run_static_case(case, h, delta)
    x = run.cloud.positions
    line = np.nonzero(run.cloud.inside & (np.abs(x[:, 1]) < 1e-9 * half_width) & (x[:, 0] > 0))[0]
    line = line[np.argsort(x[line, 0])]
    return x[line, 0], run.solution.u[line, 0], case.exact.displacement(x[line])[:, 0], delta
