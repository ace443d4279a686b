import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsfrac.errors import ConfigurationError, FrameDegenerate
from lpsfrac.geometry import (EXACT, NEUMANN, Circle, Region, Segment, annulus_domain, build_frames,
                              estimate_frame, generate_grid, plate_with_slit, polygon_domain, rotate_ccw,
                              square_domain, write_cloud_csv)
from lpsfrac.quadrature import split_weights
from lpsfrac.static_solver import broken_points


def brute_neighbors(x, delta):
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    ok = d2 <= delta * delta * (1 + 1e-10)
    np.fill_diagonal(ok, False)
    return [np.nonzero(row)[0] for row in ok]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.sampled_from([0.0, 0.1, 0.2]), m=st.sampled_from([3.0, 3.5, 4.5]))
def test_neighbors_match_brute_force(seed, r, m):
    dom = square_domain(1.0, ("top",))
    h = 0.25
    cloud = generate_grid(dom, h, m * h, perturb_r=r, seed=seed)
    ref = brute_neighbors(cloud.positions, cloud.delta)
    for i in range(cloud.n_points):
        assert np.array_equal(cloud.neighbors(i), ref[i])


def test_neighbor_lists_are_symmetric(perturbed_square):
    _, cloud, _, _ = perturbed_square
    bi, bj = cloud.bonds()
    fwd = set(zip(bi.tolist(), bj.tolist()))
    assert all((j, i) in fwd for i, j in fwd)


def test_interior_point_neighbor_count_at_m_3_5(square_dirichlet):
    _, cloud, _ = square_dirichlet
    i = int(np.argmin(np.linalg.norm(cloud.positions, axis=1)))
    # lattice points within 3.5 spacings, excluding the centre
    assert len(cloud.neighbors(i)) == 36


def test_region_taxonomy_top_traction(square_top_traction):
    dom, cloud, _, _ = square_top_traction
    x = cloud.positions
    w = np.pi / 2
    reg = cloud.region
    inside = (np.abs(x[:, 0]) <= w + 1e-12) & (np.abs(x[:, 1]) <= w + 1e-12)
    assert np.all(np.isin(reg[inside], [Region.INTERIOR_BULK, Region.INTERIOR_NEAR_NEUMANN]))
    above = (x[:, 1] > w + 1e-9) & (x[:, 1] < w + cloud.delta) & (np.abs(x[:, 0]) < w - 1e-9)
    assert above.any() and np.all(reg[above] == Region.EXTERIOR_NEUMANN)
    # beyond the horizon of the traction edge only the Dirichlet collar remains
    far_above = (x[:, 1] > w + cloud.delta + 1e-9)
    assert np.all(reg[far_above] == Region.DIRICHLET_COLLAR)
    below = x[:, 1] < -w - 1e-9
    assert np.all(reg[below] == Region.DIRICHLET_COLLAR)
    near_top = inside & (w - x[:, 1] < cloud.delta)
    assert np.all(reg[near_top] == Region.INTERIOR_NEAR_NEUMANN)


def test_tie_rule_on_edge_extension(square_top_traction):
    # points on the extension of the traction edge stay in the Dirichlet collar,
    # equidistant points strictly beyond it are traction-side
    _, cloud, _, _ = square_top_traction
    x = cloud.positions
    w, h = np.pi / 2, cloud.h
    on_ext = np.isclose(x[:, 1], w) & (x[:, 0] < -w - 1e-9)
    assert on_ext.any()
    assert np.all(cloud.region[on_ext] == Region.DIRICHLET_COLLAR)
    diag = np.isclose(x[:, 0], -w - h) & np.isclose(x[:, 1], w + h)
    assert diag.sum() == 1
    assert cloud.region[diag][0] == Region.EXTERIOR_NEUMANN


def test_unused_points_are_dropped():
    dom = square_domain(1.0, ())
    cloud = generate_grid(dom, 0.2, 0.7)
    assert not np.any(cloud.region == Region.UNUSED)
    assert np.all(cloud.sdf <= 2 * cloud.delta + 1e-12)


def test_generate_grid_validation():
    dom = square_domain(1.0, ())
    with pytest.raises(ConfigurationError):
        generate_grid(dom, 0.1, 0.35, perturb_r=0.3)
    with pytest.raises(ConfigurationError):
        generate_grid(dom, -0.1, 0.35)
    with pytest.raises(ConfigurationError):
        generate_grid(dom, 5.0, 17.5)


def test_perturbation_is_seeded():
    dom = square_domain(1.0, ())
    a = generate_grid(dom, 0.2, 0.7, perturb_r=0.2, seed=3)
    b = generate_grid(dom, 0.2, 0.7, perturb_r=0.2, seed=3)
    c = generate_grid(dom, 0.2, 0.7, perturb_r=0.2, seed=4)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_segment_crossing():
    seg = Segment((0.0, 0.0), (1.0, 0.0), NEUMANN, (0.0, 1.0))
    p = np.array([[0.5, -0.1], [0.5, 0.0], [1.5, -0.1], [0.2, 0.1]])
    q = np.array([[0.5, 0.1], [0.5, 0.2], [1.5, 0.1], [0.8, 0.1]])
    assert seg.crosses(p, q).tolist() == [True, False, False, False]
    # symmetric in the endpoints
    assert np.array_equal(seg.crosses(p, q), seg.crosses(q, p))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4))
def test_segment_crossing_is_symmetric(c):
    seg = Segment((-1.0, 0.3), (1.0, -0.2), NEUMANN, (0.0, 1.0))
    p = np.array([c[:2]])
    q = np.array([c[2:]])
    assert seg.crosses(p, q)[0] == seg.crosses(q, p)[0]


def test_circle_hole_crossing_and_normal():
    circ = Circle((0.0, 0.0), 1.0, NEUMANN, hole=True)
    p = np.array([[-2.0, 0.0], [-2.0, 1.0], [-2.0, 1.5], [1.0, 0.0]])
    q = np.array([[2.0, 0.0], [2.0, 1.0], [2.0, 1.5], [2.0, 0.0]])
    assert circ.crosses(p, q).tolist() == [True, False, False, False]
    x = np.array([[2.0, 0.0]])
    n = circ.outward_normal(x, circ.closest(x))
    assert np.allclose(n, [[-1.0, 0.0]])


def test_slit_breaks_crossing_bonds():
    dom = plate_with_slit(1.0, 0.4, 0.5)
    x = np.array([[0.25, 0.19], [0.75, 0.19]])
    y = np.array([[0.25, 0.21], [0.75, 0.21]])
    assert dom.crosses_neumann(x, y).tolist() == [True, False]


def test_polygon_sdf_sign():
    dom = polygon_domain([(0, 0), (1, 0), (1, 1), (0, 1)])
    s = dom.sdf(np.array([[0.5, 0.5], [1.5, 0.5], [0.5, 0.9]]))
    assert s[0] < 0 < s[1]
    assert np.isclose(s[2], -0.1)


def test_rotate_ccw():
    assert np.allclose(rotate_ccw([1.0, 0.0]), [0.0, 1.0])
    assert np.allclose(rotate_ccw([[0.0, 1.0]]), [[-1.0, 0.0]])


def test_estimated_normal_on_flat_edge(square_top_traction):
    dom, cloud, rule, gamma = square_top_traction
    w_int, _ = split_weights(rule.weights, gamma)
    x = cloud.positions
    # a point on the top edge away from the corners
    i = int(np.argmin(np.abs(x[:, 0]) + np.abs(x[:, 1] - np.pi / 2)))
    f = estimate_frame(cloud, i, w_int)
    assert np.allclose(f.normal, [0.0, 1.0], atol=1e-12)
    assert np.allclose(f.tangent, [-1.0, 0.0], atol=1e-12)
    assert np.allclose(f.xbar, x[i], atol=1e-12)


def test_frame_degenerate_without_bonds(square_top_traction):
    _, cloud, _, _ = square_top_traction
    with pytest.raises(FrameDegenerate):
        estimate_frame(cloud, 0, np.zeros(len(cloud.indices)))


def test_exact_frames_project_to_boundary():
    dom = annulus_domain(1.0, 1.5)
    h = 0.1
    cloud = generate_grid(dom, h, 3.5 * h)
    from lpsfrac.quadrature import build_rule, mask_from_domain

    rule = build_rule(cloud)
    gamma = mask_from_domain(cloud, dom)
    w_int, _ = split_weights(rule.weights, gamma)
    pts = broken_points(cloud, rule.weights, gamma)
    fr = build_frames(cloud, pts, w_int, dom, mode=EXACT)
    r = np.linalg.norm(fr.xbar[pts], axis=1)
    assert np.allclose(r, 1.0)
    radial = cloud.positions[pts] / np.linalg.norm(cloud.positions[pts], axis=1)[:, None]
    assert np.allclose(fr.normal[pts], -radial)
    # estimated normals agree with the exact ones up to the discretization error
    est = build_frames(cloud, pts, w_int, dom)
    cosang = np.einsum("ij,ij->i", est.normal[pts], fr.normal[pts])
    assert np.all(cosang > 0.9)


def test_cloud_csv_has_header(tmp_path, square_dirichlet):
    _, cloud, _ = square_dirichlet
    path = tmp_path / "cloud.csv"
    write_cloud_csv(path, cloud, header="problem=patch1")
    lines = path.read_text().splitlines()
    assert lines[0] == "# problem=patch1"
    assert lines[1] == "x,y,region,cell_measure"
    assert len(lines) == cloud.n_points + 2
