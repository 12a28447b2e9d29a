import numpy as np
import pytest

from starvox import (
    ConvexPolytope,
    StarPolyhedron,
    bounding_radius,
    contains,
    convex_hull,
    convex_intersection_volume,
    exact_intersection_volume,
    fibonacci_rays,
    inscribed_radius,
    kernel,
    rasterize,
    sphere_intersection_volume,
    vertices,
    volume,
)
from starvox.synth import smooth_radial_field


def make(center, dists, rays, prob=1.0):
    return StarPolyhedron(np.asarray(center, float), np.asarray(dists, float), prob, rays)


def random_blob(rays, rng, radius_range=(5, 10), center_box=(40, 60)):
    r = rng.uniform(*radius_range)
    c = rng.uniform(*center_box, size=3)
    d = r * (1 + 0.3 * smooth_radial_field(rays.rays_zyx, rng))
    return make(c, d, rays)


# --- vertices ---


def test_vertices_degenerate_point(octahedron_rays):
    p = make([3, 4, 5], np.zeros(6), octahedron_rays)
    assert np.allclose(vertices(p), np.tile([3, 4, 5], (6, 1)))


def test_vertices_octahedron_axis_points(octahedron_rays):
    p = make([0, 0, 0], np.ones(6), octahedron_rays)
    v = vertices(p)
    # rays (x,y,z) order: +-x, +-y, +-z; vertices in (z,y,x)
    expect = np.array([[0, 0, 1], [0, 0, -1], [0, 1, 0], [0, -1, 0], [1, 0, 0], [-1, 0, 0]], float)
    np.testing.assert_allclose(v, expect, atol=1e-15)


def test_vertices_translation_equivariance(rays32):
    rng = np.random.Generator(np.random.Philox(1))
    d = rng.uniform(3, 6, 32)
    p0 = make([0, 0, 0], d, rays32)
    p1 = make([5, -2, 3], d, rays32)
    np.testing.assert_allclose(vertices(p1), vertices(p0) + [5, -2, 3], atol=1e-12)


# --- volume ---


def test_octahedron_volume_exact(octahedron_rays):
    p = make([0, 0, 0], np.ones(6), octahedron_rays)
    assert abs(volume(p) - 4.0 / 3.0) < 1e-12


def test_sphere_volume_convergence():
    rays = fibonacci_rays(1000)
    p = make([0, 0, 0], np.full(1000, 10.0), rays)
    analytic = 4.0 / 3.0 * np.pi * 1000
    assert abs(volume(p) - analytic) / analytic < 0.01


def test_volume_homogeneity(rays32):
    rng = np.random.Generator(np.random.Philox(2))
    d = rng.uniform(2, 8, 32)
    v1 = volume(make([0, 0, 0], d, rays32))
    v2 = volume(make([0, 0, 0], 1.7 * d, rays32))
    assert abs(v2 - 1.7**3 * v1) <= 1e-9 * v2


# --- radii ---


def test_octahedron_radii(octahedron_rays):
    p = make([0, 0, 0], np.ones(6), octahedron_rays)
    assert bounding_radius(p) == 1.0
    assert abs(inscribed_radius(p) - 1 / np.sqrt(3)) < 1e-12


def test_near_sphere_inscribed_radius(rays96):
    p = make([0, 0, 0], np.full(96, 10.0), rays96)
    assert inscribed_radius(p) >= 9.0
    assert bounding_radius(p) == 10.0


def test_sphere_sandwich_by_sampling(rays96):
    rng = np.random.Generator(np.random.Philox(3))
    for _ in range(5):
        p = random_blob(rays96, rng)
        r_in, r_out = inscribed_radius(p), bounding_radius(p)
        u = rng.normal(size=(2000, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        inner_pts = p.center + u * (r_in * 0.999) * rng.random((2000, 1))
        assert contains(p, inner_pts).all()
        outer_pts = p.center + u * (r_out * 1.001 + rng.random((2000, 1)))
        assert not contains(p, outer_pts).any()


# --- contains vs an independent radial oracle ---


def radial_contains_oracle(p, q):
    rel = np.asarray(q, float) - p.center
    r = np.linalg.norm(rel)
    if r < 1e-12:
        return True
    u = rel / r
    rays = p.rays.rays_zyx
    verts = vertices(p)
    for i, j, k in p.rays.faces:
        m = np.stack([rays[i], rays[j], rays[k]], axis=1)
        try:
            coeff = np.linalg.solve(m, u)
        except np.linalg.LinAlgError:
            continue
        if (coeff >= -1e-9).all():
            n = np.cross(verts[j] - verts[i], verts[k] - verts[i])
            denom = n @ u
            if abs(denom) < 1e-12:
                continue
            t_hit = (n @ (verts[i] - p.center)) / denom
            return r <= t_hit + 1e-9
    return False


def test_contains_matches_radial_oracle(rays32):
    rng = np.random.Generator(np.random.Philox(4))
    p = random_blob(rays32, rng)
    pts = p.center + rng.uniform(-12, 12, size=(10_000, 3))
    got = contains(p, pts)
    expect = np.array([radial_contains_oracle(p, q) for q in pts])
    # boundary-grazing points may differ by float tolerance; demand near-exact
    assert (got == expect).mean() > 0.999
    inner = np.abs(np.linalg.norm(pts - p.center, axis=1)) < inscribed_radius(p)
    assert (got == expect)[inner].all()


def test_contains_center_and_far(rays96):
    p = make([10, 10, 10], np.full(96, 5.0), rays96)
    assert contains(p, [10, 10, 10])
    assert not contains(p, [30, 30, 30])


# --- rasterize ---


def test_rasterize_matches_volume(rays96):
    p = make([20, 20, 20], np.full(96, 12.0), rays96)
    mask = rasterize(p, ((0, 0, 0), (41, 41, 41)))
    assert abs(mask.sum() - volume(p)) / volume(p) < 0.02


def test_rasterize_outside_region_empty(rays32):
    p = make([5, 5, 5], np.full(32, 2.0), rays32)
    mask = rasterize(p, ((50, 50, 50), (10, 10, 10)))
    assert mask.sum() == 0


def test_rasterize_integer_translation_equivariance(rays32):
    rng = np.random.Generator(np.random.Philox(5))
    d = rng.uniform(3, 6, 32)
    p0 = make([10.3, 11.7, 9.2], d, rays32)
    p1 = make([13.3, 16.7, 16.2], d, rays32)  # +(3, 5, 7)
    m0 = rasterize(p0, ((0, 0, 0), (22, 24, 20)))
    m1 = rasterize(p1, ((3, 5, 7), (22, 24, 20)))
    np.testing.assert_array_equal(m0, m1)


def test_rasterize_empty_region_rejected(rays32):
    p = make([0, 0, 0], np.ones(32), rays32)
    with pytest.raises(ValueError):
        rasterize(p, ((0, 0, 0), (0, 5, 5)))


# --- sphere lens ---


def test_lens_containment_tangent_half():
    assert abs(sphere_intersection_volume(1, 1, 0) - 4 * np.pi / 3) < 1e-12
    assert sphere_intersection_volume(1, 1, 2) == 0.0
    assert abs(sphere_intersection_volume(1, 1, 1) - 5 * np.pi / 12) < 1e-12


def test_lens_symmetry_and_monotonicity():
    rng = np.random.Generator(np.random.Philox(6))
    for _ in range(200):
        r1, r2 = rng.uniform(0.1, 5, 2)
        d1, d2 = sorted(rng.uniform(0, r1 + r2, 2))
        assert sphere_intersection_volume(r1, r2, d1) == pytest.approx(
            sphere_intersection_volume(r2, r1, d1), rel=1e-12
        )
        assert sphere_intersection_volume(r1, r2, d1) >= sphere_intersection_volume(r1, r2, d2)


def test_lens_contained_small_sphere():
    assert abs(sphere_intersection_volume(1, 3, 1.5) - 4 * np.pi / 3) < 1e-12


def test_lens_rejects_negative():
    with pytest.raises(ValueError):
        sphere_intersection_volume(-1, 1, 0)


# --- convex polytopes ---


def unit_cube(offset=(0.0, 0.0, 0.0)):
    pts = [
        [z + offset[0], y + offset[1], x + offset[2]]
        for z in (0, 1)
        for y in (0, 1)
        for x in (0, 1)
    ]
    return ConvexPolytope.from_points(pts)


def test_convex_intersection_idempotent(octahedron_rays):
    h = convex_hull(make([0, 0, 0], np.ones(6), octahedron_rays))
    assert abs(convex_intersection_volume(h, h) - h.volume) < 1e-9


def test_convex_intersection_disjoint():
    a, b = unit_cube(), unit_cube((0, 0, 5))
    assert convex_intersection_volume(a, b) == 0.0


def test_convex_intersection_cubes_half_overlap():
    a, b = unit_cube(), unit_cube((0, 0, 0.5))
    assert abs(convex_intersection_volume(a, b) - 0.5) < 1e-9
    assert abs(convex_intersection_volume(b, a) - 0.5) < 1e-9


def test_convex_intersection_empty_polytope():
    assert convex_intersection_volume(ConvexPolytope.empty(), unit_cube()) == 0.0


def test_degenerate_points_give_empty():
    flat = ConvexPolytope.from_points([[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]])
    assert flat.is_empty


# --- hull and kernel ---


def test_convex_shape_hull_equals_kernel(octahedron_rays):
    p = make([0, 0, 0], np.ones(6), octahedron_rays)
    v = volume(p)
    assert abs(convex_hull(p).volume - v) <= 1e-6 * v
    assert abs(kernel(p).volume - v) <= 1e-6 * v


def test_spiky_shape_strict_ordering(rays96):
    d = np.where(np.arange(96) % 2 == 0, 1.0, 3.0) * 4
    p = make([0, 0, 0], d, rays96)
    assert kernel(p).volume < volume(p) < convex_hull(p).volume


def test_kernel_contains_center(rays96):
    rng = np.random.Generator(np.random.Philox(7))
    for _ in range(5):
        p = random_blob(rays96, rng)
        k = kernel(p)
        if not k.is_empty:
            assert (k.halfspaces[:, :3] @ p.center <= k.halfspaces[:, 3] + 1e-9).all()


# --- exact intersection ---


def test_exact_self_matches_raster(rays96):
    p = make([20, 20, 20], np.full(96, 12.0), rays96)
    v = exact_intersection_volume(p, p)
    assert abs(v - volume(p)) / volume(p) < 0.02


def test_exact_symmetric_and_disjoint(rays32):
    rng = np.random.Generator(np.random.Philox(8))
    p = random_blob(rays32, rng)
    q = random_blob(rays32, rng)
    assert exact_intersection_volume(p, q) == exact_intersection_volume(q, p)
    far = make(p.center + 100.0, p.dists, rays32)
    assert exact_intersection_volume(p, far) == 0.0


def test_bound_ordering_sample(rays32):
    rng = np.random.Generator(np.random.Philox(9))
    for _ in range(100):
        p = random_blob(rays32, rng, (4, 9))
        q = random_blob(rays32, rng, (4, 9))
        d = float(np.linalg.norm(p.center - q.center))
        exact = exact_intersection_volume(p, q)
        tol = 0.02 * max(volume(p), volume(q))
        assert sphere_intersection_volume(inscribed_radius(p), inscribed_radius(q), d) <= exact + tol
        assert convex_intersection_volume(kernel(p), kernel(q)) <= exact + tol
        assert exact <= sphere_intersection_volume(bounding_radius(p), bounding_radius(q), d) + tol
        assert exact <= convex_intersection_volume(convex_hull(p), convex_hull(q)) + tol
