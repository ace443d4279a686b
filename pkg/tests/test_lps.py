import dataclasses
import functools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsfrac.geometry import generate_grid, square_domain
from lpsfrac.lps import (BondGeometry, KernelSpec, Material, MaterialField, apply_interior, correction_tensors,
                         corrected_dilatation, dilatation, harmonic_mean, local_operator_oracle)
from lpsfrac.quadrature import build_rule, split_weights

MAT = Material.from_youngs(1.0, 0.3)


def deep_interior(cloud, depth=2.0):
    # points whose full stencil (and the stencils of their neighbours) is inside
    return np.nonzero(cloud.sdf < -depth * cloud.delta)[0]


def test_weighted_volume():
    # ∫_{B_δ} K(r) r² dy with K = 1/r
    assert KernelSpec(0.3).m == pytest.approx(2 * np.pi * 0.3**3 / 3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3))
def test_rigid_motions_are_in_the_nullspace(cx, cy, w):
    cloud, rule = fine_cloud()
    bonds = BondGeometry.of(cloud)
    x = cloud.positions
    u = np.column_stack([cx - w * x[:, 1], cy + w * x[:, 0]])
    theta = dilatation(bonds, rule.weights, u)
    idx = deep_interior(cloud, 1.0)
    scale = max(1.0, abs(cx), abs(cy), abs(w))
    assert np.max(np.abs(theta[idx])) <= 1e-9 * scale
    f = apply_interior(bonds, rule.weights, MaterialField.uniform(MAT, cloud.n_points), u, theta)
    assert np.max(np.abs(f[deep_interior(cloud)])) <= 1e-9 * scale


@functools.lru_cache(maxsize=1)
def fine_cloud():
    # large enough to have points two horizons away from the boundary
    h = np.pi / 24
    cloud = generate_grid(square_domain(np.pi / 2, ()), h, 3.5 * h, perturb_r=0.2, seed=11)
    return cloud, build_rule(cloud)


def test_correction_tensor_is_identity_on_full_balls(square_dirichlet, perturbed_square):
    for cloud, rule in ((square_dirichlet[1], square_dirichlet[2]), (perturbed_square[1], perturbed_square[2])):
        bonds = BondGeometry.of(cloud)
        M, ill = correction_tensors(bonds, rule.weights)
        idx = np.nonzero(cloud.sdf < -cloud.delta)[0]
        assert not ill[idx].any()
        assert np.max(np.abs(M[idx] - np.eye(2))) <= 1e-9


def test_corrected_dilatation_is_exact_for_linear_fields_near_traction_edges(perturbed_square):
    _, cloud, rule, gamma = perturbed_square
    bonds = BondGeometry.of(cloud)
    w_int, _ = split_weights(rule.weights, gamma)
    Dm = np.array([[0.7, -1.2], [0.4, 2.5]])
    u = cloud.positions @ Dm.T + np.array([3.0, -1.0])
    th = corrected_dilatation(bonds, w_int, u)
    idx = np.nonzero(cloud.inside)[0]
    assert np.allclose(th[idx], np.trace(Dm), atol=1e-9)
    # the uncorrected truncated sum is visibly wrong near the traction edge
    plain = dilatation(bonds, w_int, u)
    assert np.max(np.abs(plain[idx] - np.trace(Dm))) > 0.1


@pytest.mark.parametrize("nu", [0.3, 0.49])
def test_interior_operator_matches_local_navier_on_quadratics(nu):
    cloud, rule = fine_cloud()
    mat = Material.from_youngs(2.0, nu)
    bonds = BondGeometry.of(cloud)
    x = cloud.positions
    C = np.array([[0.3, -0.2, 0.5], [-0.4, 0.1, 0.25]])  # u_k = C_k0 x² + C_k1 xy + C_k2 y²

    def field(p):
        return np.column_stack([C[k, 0] * p[:, 0] ** 2 + C[k, 1] * p[:, 0] * p[:, 1] + C[k, 2] * p[:, 1] ** 2
                                for k in (0, 1)])

    def hessian(p):
        H = np.zeros((len(p), 2, 2, 2))
        for k in (0, 1):
            H[:, k] = [[2 * C[k, 0], C[k, 1]], [C[k, 1], 2 * C[k, 2]]]
        return H

    u = field(x)
    theta = dilatation(bonds, rule.weights, u)
    div = (2 * C[0, 0] + C[1, 1]) * x[:, 0] + (C[0, 1] + 2 * C[1, 2]) * x[:, 1]
    idx1 = np.nonzero(cloud.sdf < -cloud.delta)[0]
    assert np.allclose(theta[idx1], div[idx1], atol=1e-10)
    f = apply_interior(bonds, rule.weights, MaterialField.uniform(mat, cloud.n_points), u, theta)
    ref = local_operator_oracle(hessian, mat.lam, mat.mu)(x)
    idx = deep_interior(cloud)
    assert len(idx) > 0
    assert np.allclose(f[idx], ref[idx], rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_translation_invariance(perturbed_square):
    _, cloud, rule, gamma = perturbed_square
    shift = np.array([12.5, -7.25])
    moved = dataclasses.replace(cloud, positions=cloud.positions + shift)
    rule2 = build_rule(moved)
    assert np.allclose(rule2.weights, rule.weights, rtol=1e-10, atol=1e-10 * np.abs(rule.weights).max())
    rng = np.random.default_rng(0)
    u = rng.normal(size=(cloud.n_points, 2))
    mf = MaterialField.uniform(MAT, cloud.n_points)
    out = []
    for c, r in ((cloud, rule), (moved, rule2)):
        b = BondGeometry.of(c)
        w_int, _ = split_weights(r.weights, gamma)
        th = corrected_dilatation(b, w_int, u)
        out.append((th, apply_interior(b, w_int, mf, u, th)))
    for a, b in zip(out[0], out[1]):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10 * np.abs(a).max())


def test_harmonic_mean_properties():
    assert harmonic_mean(3.0, 3.0) == 3.0
    assert harmonic_mean(1.0, 3.0) == pytest.approx(1.5)
    assert harmonic_mean(0.0, 0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_harmonic_mean_bounds_and_symmetry(a, b):
    m = float(harmonic_mean(a, b))
    assert m == float(harmonic_mean(b, a))
    assert min(a, b) * (1 - 1e-12) <= m <= max(a, b) * (1 + 1e-12)


def test_homogeneous_field_pairs_equal_the_point_values():
    mf = MaterialField.uniform(MAT, 5)
    lam, mu = mf.pair(np.arange(5), np.arange(5)[::-1])
    assert np.all(lam == MAT.lam) and np.all(mu == MAT.mu)


def test_material_conversions():
    m = Material.from_youngs(200e9, 0.3)
    assert m.mu == pytest.approx(200e9 / 2.6)
    assert m.lam == pytest.approx(200e9 * 0.3 / (1.3 * 0.4))
    ps = Material.from_youngs(70e9, 0.22, plane="stress")
    assert ps.lam == pytest.approx(70e9 * 0.22 / (1 - 0.22**2))
    with pytest.raises(ValueError):
        Material.from_youngs(1.0, 0.3, plane="axisymmetric")
    with pytest.raises(ValueError):
        Material(lam=1.0, mu=0.0)
