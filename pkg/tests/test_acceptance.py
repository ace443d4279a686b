"""Acceptance criteria, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` for the summary lines alone, or
``pytest -m slow tests/test_acceptance.py`` for the long fracture runs.
"""

import time

import numpy as np
import pytest

from lpsfrac.benchmarks import BenchmarkSpec, inclusion_profile, static_case, run_static_case, static_convergence
from lpsfrac.dynamics import DynamicLoad, NewmarkIntegrator, damage_field
from lpsfrac.fracture_cases import glass_case, ring_case, run_fracture, vnotch_case
from lpsfrac.geometry import generate_grid, square_domain
from lpsfrac.lps import BondGeometry, Material, MaterialField, apply_interior, correction_tensors, dilatation
from lpsfrac.quadrature import _solve_batch, basis_values, build_rule, moment_vector, split_weights

# the coarsest level π/16 is still pre-asymptotic for ν = 0.49 and the traction settings
MANUFACTURED_H = (np.pi / 32, np.pi / 64, np.pi / 128)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {detail}", flush=True)


def within(value, target, tol):
    return abs(value - target) <= tol


def slopes_line(label, t):
    return f"{label}: u {t.slope_u:.3f}, θ {t.slope_theta:.3f}"


# ---------------------------------------------------------------------------


def test_criterion_01_quadrature_exactness(capsys):
    rng = np.random.default_rng(2024)
    h = np.pi / 32
    delta = 3.5 * h
    g = moment_vector(delta)
    scale = np.abs(g).max()
    worst = {}
    for r in (0.0, 0.2):
        cloud = generate_grid(square_domain(np.pi / 2, ()), h, delta, perturb_r=r, seed=5)
        rule = build_rule(cloud)
        pool = np.nonzero(cloud.sdf < -delta)[0]
        pick = rng.choice(pool, size=200, replace=False)
        err = 0.0
        for i in pick:
            lo, hi = cloud.indptr[i], cloud.indptr[i + 1]
            off = cloud.positions[cloud.indices[lo:hi]] - cloud.positions[i]
            got = basis_values(off, delta).T @ rule.weights[lo:hi]
            # relative to the moment itself, or to the largest moment where it vanishes
            denom = np.where(g != 0, np.abs(g), scale)
            err = max(err, float(np.max(np.abs(got - g) / denom)))
        worst[r] = err
    ok = all(e <= 1e-9 for e in worst.values())
    report(capsys, 1, ok, f"max rel error uniform {worst[0.0]:.1e}, perturbed {worst[0.2]:.1e} (≤ 1e-9)")
    assert ok


def test_criterion_02_linear_patch_exact(capsys):
    rows = []
    for problem in ("patch1", "patch2"):
        case = static_case(BenchmarkSpec(problem=problem).resolved())
        for h in (np.pi / 16, np.pi / 32):
            run = run_static_case(case, h, 3.5 * h)
            rows.append((problem, h, run.err_u, run.err_theta))
    worst = max(max(r[2], r[3]) for r in rows)
    ok = worst <= 1e-10
    report(capsys, 2, ok, f"max L2 error {worst:.1e} over Settings 1-2, h = π/16, π/32 (≤ 1e-10)")
    assert ok


def test_criterion_03_linear_patch_corner(capsys):
    uni = static_convergence(BenchmarkSpec(problem="patch3"))
    non = static_convergence(BenchmarkSpec(problem="patch3", perturb=0.2))
    checks = [within(uni.slope_u, 1.0, 0.25), within(uni.slope_theta, 1.0, 0.25),
              within(non.slope_u, 0.75, 0.25), within(non.slope_theta, 0.5, 0.25)]
    ok = all(checks)
    report(capsys, 3, ok, f"{slopes_line('uniform', uni)} (1.0±0.25); "
                          f"{slopes_line('non-uniform', non)} (0.75/0.5±0.25)")
    assert ok


def test_criterion_04_manufactured_solution(capsys):
    t0 = time.time()
    bad, lines = [], []
    for setting in (1, 2, 3):
        target = 2.0 if setting == 1 else 1.0
        for perturb in (0.0, 0.2):
            for nu in (0.3, 0.49):
                for M in (3.5, 3.9):
                    spec = BenchmarkSpec(problem=f"manufactured{setting}", nu=nu, m_ratio=M, perturb=perturb)
                    t = static_convergence(spec, MANUFACTURED_H)
                    tag = f"S{setting} r={perturb} ν={nu} M={M}"
                    lines.append(f"{tag}: {t.slope_u:.2f}/{t.slope_theta:.2f}")
                    if not (within(t.slope_u, target, 0.3) and within(t.slope_theta, target, 0.3)):
                        bad.append(f"{tag} u {t.slope_u:.2f} θ {t.slope_theta:.2f} (want {target}±0.3)")
    elapsed = time.time() - t0
    ok = not bad and elapsed <= 600
    detail = f"{24 - len(bad)}/24 configurations in band, {elapsed:.0f} s (≤ 600 s)"
    if bad:
        detail += "; out of band: " + "; ".join(bad)
    report(capsys, 4, ok, detail)
    with capsys.disabled():
        print("    slopes u/θ: " + ", ".join(lines))
    assert ok


def test_criterion_05_hole_and_disk(capsys):
    hole = static_convergence(BenchmarkSpec(problem="hole"))
    d3 = static_convergence(BenchmarkSpec(problem="disk", nu=0.3))
    d49 = static_convergence(BenchmarkSpec(problem="disk", nu=0.49))
    checks = [within(hole.slope_u, 1.0, 0.3), within(hole.slope_theta, 0.7, 0.3),
              within(d3.slope_u, 1.0, 0.3), within(d3.slope_theta, 0.65, 0.3),
              within(d49.slope_u, 1.0, 0.3), within(d49.slope_theta, 1.0, 0.3)]
    ok = all(checks)
    report(capsys, 5, ok, f"{slopes_line('hole', hole)} (1.0/0.7); {slopes_line('disk ν=0.3', d3)} (1.0/0.65); "
                          f"{slopes_line('disk ν=0.49', d49)} (1.0/1.0), all ±0.3")
    assert ok


def oscillation_excess(x, num, exact, a, delta):
    """Total variation added by the numerical profile near the interface,
    relative to the local amplitude of the exact profile."""
    band = np.abs(x - a) <= 2 * delta
    tv = lambda v: float(np.sum(np.abs(np.diff(v))))  # noqa: E731
    amp = float(np.ptp(exact[band]))
    return (tv(num[band]) - tv(exact[band])) / amp


def test_criterion_06_composite(capsys):
    tables = {pair: static_convergence(BenchmarkSpec(problem="composite", nu=pair[0], nu2=pair[1]))
              for pair in ((0.25, 0.25), (0.49, 0.49), (0.49, 0.25))}
    conv_ok = all(within(t.slope_u, 1.0, 0.3) and within(t.slope_theta, 0.5, 0.3) for t in tables.values())
    a, h = np.pi / 4, np.pi / 64
    osc = {}
    for k in range(-8, 9):
        x, num, exact, delta = inclusion_profile(2.0**k, h, a=a)
        osc[k] = oscillation_excess(x, num, exact, a, delta)
    sweep_ok = all(v <= 0.05 for v in osc.values())
    worst_k = max(osc, key=osc.get)
    ok = conv_ok and sweep_ok
    conv = "; ".join(slopes_line(f"ν={p}", t) for p, t in tables.items())
    report(capsys, 6, ok, f"{conv} (1.0/0.5±0.3); Q sweep 2^-8..2^8 max oscillation "
                          f"{osc[worst_k]:.3f} at Q=2^{worst_k} (≤ 0.05)")
    assert ok


def test_criterion_07_property_suite(capsys):
    checks = {}
    h = np.pi / 24
    cloud = generate_grid(square_domain(np.pi / 2, ()), h, 3.5 * h, perturb_r=0.2, seed=9)
    rule = build_rule(cloud)
    bonds = BondGeometry.of(cloud)
    mat = Material.from_youngs(1.0, 0.3)
    mf = MaterialField.uniform(mat, cloud.n_points)
    x = cloud.positions
    deep = cloud.sdf < -2 * cloud.delta
    full = cloud.sdf < -cloud.delta

    u = np.column_stack([0.3 - 0.8 * x[:, 1], -1.1 + 0.8 * x[:, 0]])
    th = dilatation(bonds, rule.weights, u)
    f = apply_interior(bonds, rule.weights, mf, u, th)
    checks["rigid nullspace"] = max(np.abs(th[full]).max(), np.abs(f[deep]).max()) <= 1e-9

    M, _ = correction_tensors(bonds, rule.weights)
    checks["M = I"] = np.abs(M[full] - np.eye(2)).max() <= 1e-9

    rng = np.random.default_rng(0)
    ref = np.ones(len(bonds.bi), bool)
    gamma, prev, mono = ref.copy(), np.zeros(cloud.n_points), True
    for _ in range(5):
        gamma &= rng.random(len(gamma)) > 0.1
        d = damage_field(cloud, ref, gamma)
        mono &= bool(np.all(d >= prev))
        prev = d
    checks["damage monotone"] = mono

    w_int, w_brk = split_weights(rule.weights, gamma)
    checks["γ split exact"] = np.array_equal(w_int + w_brk, rule.weights)

    worst = 0.0
    for _ in range(20):
        r = np.sqrt(rng.uniform(0.05, 1.0, 20))
        t = rng.uniform(0, 2 * np.pi, 20)
        off = np.column_stack([r * np.cos(t), r * np.sin(t)])
        w, _ = _solve_batch(off[None], 1.0)
        B = basis_values(off, 1.0).T
        kkt = np.block([[np.eye(20), B.T], [B, np.zeros((18, 18))]])
        ref_w = np.linalg.solve(kkt, np.concatenate([np.zeros(20), moment_vector(1.0)]))[:20]
        worst = max(worst, np.linalg.norm(w[0] - ref_w) / np.linalg.norm(ref_w))
    checks["min-norm vs KKT"] = worst <= 1e-8

    dom = square_domain(1.0, ("top", "bottom", "left", "right"))
    fc = generate_grid(dom, 0.2, 0.7, offset=0.5)
    from lpsfrac.quadrature import mask_from_domain

    b = np.array([0.3, -0.7])
    integ = NewmarkIntegrator(fc, build_rule(fc).weights, mask_from_domain(fc, dom),
                              MaterialField.uniform(Material.from_youngs(1.0, 0.3, rho=2.0), fc.n_points),
                              DynamicLoad(body_force=lambda p: np.tile(b, (len(p), 1))), 0.05, domain=dom)
    a0 = np.where(fc.inside[:, None], b / 2.0, 0.0)
    st, _ = integ.run(integ.initial_state(a0=a0), 20)
    checks["Newmark constant acceleration"] = np.allclose(st.u[fc.inside], 0.25 * b, rtol=1e-9, atol=1e-12)

    import dataclasses

    moved = dataclasses.replace(cloud, positions=cloud.positions + [7.5, -3.25])
    rule2 = build_rule(moved)
    uu = rng.normal(size=(cloud.n_points, 2))
    f1 = apply_interior(bonds, rule.weights, mf, uu, dilatation(bonds, rule.weights, uu))
    b2 = BondGeometry.of(moved)
    f2 = apply_interior(b2, rule2.weights, mf, uu, dilatation(b2, rule2.weights, uu))
    checks["translation invariance"] = np.abs(f1 - f2).max() <= 1e-10 * np.abs(f1).max()

    ok = all(checks.values())
    report(capsys, 7, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok


@pytest.mark.slow
def test_criterion_08_glass_branching(capsys):
    case = glass_case()
    res = run_fracture(case, solver="iterative")
    f = res.features
    checks = [f.branched,
              f.branch_x is not None and 0.060 <= f.branch_x <= 0.075,
              f.branch_time is not None and 19e-6 <= f.branch_time <= 26e-6,
              1600 <= f.max_speed <= 2600]
    ok = all(checks)
    bx = "none" if f.branch_x is None else f"{f.branch_x:.4f} m"
    bt = "none" if f.branch_time is None else f"{f.branch_time * 1e6:.1f} μs"
    report(capsys, 8, ok, f"branched {f.branched}, location {bx} (0.060-0.075), time {bt} (19-26), "
                          f"max tip speed {f.max_speed:.0f} m/s (1600-2600), wall {res.wall_time:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_09_ring_fragmentation(capsys):
    case = ring_case()
    res = run_fracture(case, solver="iterative")
    large, small = res.fragments
    ok = large >= 10
    report(capsys, 9, ok, f"{large} large fragments (≥ 10), {small} small, "
                          f"{case.meta['particles']} particles, wall {res.wall_time:.0f} s")
    assert ok


VNOTCH_DESK = {"h": 2e-3, "dt": 2.5e-7, "peak": 60e6}


def test_criterion_10_vnotch_qualitative(capsys):
    case = vnotch_case(**VNOTCH_DESK)
    res = run_fracture(case, solver="iterative")
    f = res.features
    angle = "none" if f.branch_angle is None else f"{f.branch_angle:.1f}°"
    where = "" if f.branch_x is None else f" at {100 * f.branch_x / case.meta['width']:.0f}% of the width"
    ok = res.state.step == case.n_steps and f.branched and f.branch_angle is not None
    report(capsys, 10, ok, f"completed {res.state.step}/{case.n_steps} steps, branched {f.branched}{where}, "
                           f"angle {angle} (qualitative, h = {VNOTCH_DESK['h'] * 1e3:g} mm)")
    assert ok
