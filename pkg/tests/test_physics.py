import numpy as np
import pytest

from drape import kernels
from drape.mesh import TriMesh, compute_rest_state
from drape.physics import CapsuleCollider, EnergyModel, MaterialParams, MeshCollider, bending_energy, \
    collision_energy, gravity_energy, stvk_energy
from drape.rig import euler_xyz, pose_capsules
from drape.scenes import capsule_mesh

from fdcheck import gradient_check


def hinge(fold=0.0):
    """Unit square split along (0, 2); vertex 3 rotated about the diagonal by ``fold``."""
    m = np.array([0.5, 0.5, 0.0])
    out = np.array([-0.5, 0.5, 0.0])
    up = np.array([0.0, 0.0, np.linalg.norm(out)])
    x = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], m + np.cos(fold) * out + np.sin(fold) * up])
    return TriMesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float),
                   np.array([[0, 1, 2], [0, 2, 3]])), x


def unit_triangle():
    s = np.sqrt(2.0)
    return TriMesh(np.array([[0, 0, 0], [s, 0, 0], [0, s, 0]]), np.array([[0, 1, 2]]))


def test_rest_configuration_has_zero_energy(sleeve):
    garment, _ = sleeve
    rest = compute_rest_state(garment)
    for fn in (stvk_energy, bending_energy):
        e, g = fn(rest, garment, garment.vertices)
        assert e == pytest.approx(0.0, abs=1e-20)
        assert np.abs(g).max() < 1e-12


def test_uniform_stretch_value():
    mesh = unit_triangle()
    rest = compute_rest_state(mesh)
    assert rest.rest_areas[0] == pytest.approx(1.0)
    e, _ = stvk_energy(rest, mesh, 1.1 * mesh.vertices, MaterialParams(mu=1.0, lambda_lame=1.0))
    assert e == pytest.approx(0.04410, rel=1e-10)


def test_quarter_fold_value():
    mesh, folded = hinge(np.pi / 2)
    rest = compute_rest_state(mesh)
    assert rest.hinge_weights[0] == pytest.approx(2.0)             # |e|^2 / (A1 + A2)
    e, _ = bending_energy(rest, mesh, folded, MaterialParams(bending_stiffness=1.0))
    assert e == pytest.approx((np.pi / 2) ** 2 * 2.0, rel=1e-12)


def test_fold_gradient_matches_finite_differences():
    mesh, folded = hinge(0.7)
    rest = compute_rest_state(mesh)
    params = MaterialParams(bending_stiffness=1.0)
    _, g = bending_energy(rest, mesh, folded, params)
    # entries that are exactly zero only see roundoff, so the floor is set to the gradient scale
    err, _, _ = gradient_check(lambda: bending_energy(rest, mesh, folded, params)[0], folded, g, 1e-6, floor=1e-3)
    assert err < 1e-6


def single_capsule(r=0.1):
    return CapsuleCollider([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]], [r])


def test_collision_penalty_values():
    col = single_capsule()
    params = MaterialParams(collision_stiffness=1.0)
    assert collision_energy(col, [[0.5, 0.11, 0.0]], params)[0] == 0.0
    e, g = collision_energy(col, [[0.5, 0.1, 0.0]], params)
    assert e == pytest.approx(9e-6, rel=1e-10)
    assert np.allclose(g, [[0.0, -2 * 0.003, 0.0]])
    e, g = collision_energy(col, [[0.5, 0.0, 0.0]], params)
    assert e == pytest.approx((0.003 + 0.1) ** 2, rel=1e-12)
    assert abs(g[0, 0]) < 1e-15
    assert np.linalg.norm(g[0]) == pytest.approx(2 * 0.103, rel=1e-12)


def test_collision_gradient_matches_finite_differences(rng):
    col = single_capsule()
    x = np.column_stack([rng.uniform(0.1, 0.9, 40), rng.uniform(-0.1, 0.1, 40), rng.uniform(-0.1, 0.1, 40)])
    params = MaterialParams()
    _, g = collision_energy(col, x, params)
    active = np.flatnonzero(np.abs(g).ravel() > 0)
    err, _, _ = gradient_check(lambda: collision_energy(col, x, params)[0], x, g, 1e-7, indices=active)
    assert err < 1e-5


def test_gravity_values():
    e, g = gravity_energy(np.array([1.0]), np.array([[0.3, 1.0, -2.0]]))
    assert e == pytest.approx(9.81)
    assert g.tolist() == [[0.0, 9.81, 0.0]]
    masses = np.array([0.2, 0.5])
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert gravity_energy(masses, x)[0] == 0.0
    assert gravity_energy(masses, x + (0, 0.4, 0))[0] == pytest.approx(9.81 * 0.7 * 0.4)


def test_zero_weight_drops_the_collider(sleeve):
    garment, body = sleeve
    inside = CapsuleCollider(*pose_capsules(body, body.skeleton.zero_pose()))
    squashed = garment.vertices * (1.0, 0.5, 0.5) + (0.0, 0.7, 0.0)
    on = EnergyModel.build(garment)
    off = EnergyModel.build(garment, MaterialParams(loss_weights=(1, 1, 0, 1)))
    loss_on, _, parts_on = on.evaluate(squashed, inside)
    loss_off, g_off, parts_off = off.evaluate(squashed, inside)
    assert parts_on["collision"] > 0 and parts_off["collision"] == 0.0
    assert loss_off == pytest.approx(loss_on - parts_on["collision"], rel=1e-12)
    nothing = CapsuleCollider([[0, 100, 0]], [[1, 100, 0]], [0.1])
    loss_far, g_far, _ = off.evaluate(squashed, nothing)
    assert loss_far == loss_off and np.array_equal(g_far, g_off)


def test_internal_energies_are_rigid_invariant(sleeve, rng):
    garment, _ = sleeve
    rest = compute_rest_state(garment)
    x = garment.vertices + 0.005 * rng.standard_normal(garment.vertices.shape)
    r = euler_xyz(rng.uniform(-np.pi, np.pi, 3))
    moved = x @ r.T + rng.standard_normal(3)
    for fn in (stvk_energy, bending_energy):
        assert fn(rest, garment, moved)[0] == pytest.approx(fn(rest, garment, x)[0], rel=1e-9)


def test_material_parameters_round_trip():
    p = MaterialParams(mu=3.0, loss_weights=(1, 0.5, 2, 1))
    assert MaterialParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        MaterialParams.from_dict({"youngs": 1.0})
    with pytest.raises(ValueError):
        MaterialParams(density=0.0)
    with pytest.raises(ValueError):
        MaterialParams(loss_weights=(1, 1, 1))


@pytest.mark.skipif("cython" not in kernels.available(), reason="compiled kernels not built")
def test_backends_agree_on_energies(sleeve, rng):
    garment, body = sleeve
    rest = compute_rest_state(garment)
    p0, p1, r = pose_capsules(body, np.array([0.2, -0.3, 0.4, 0.1, -1.5, 0.05]))
    x = garment.vertices + 0.01 * rng.standard_normal(garment.vertices.shape)
    calls = {
        "stvk": lambda k, g: k.stvk(x, garment.faces, rest.rest_tangent_inverses, rest.rest_areas, 20.0, 10.0, g),
        "bending": lambda k, g: k.bending(x, garment.hinges, rest.rest_dihedrals, rest.hinge_weights, 2e-5, g),
        "collision": lambda k, g: k.capsule_collision(x, p0, p1, r, 1e4, 0.003, g),
    }
    py, cy = kernels.available()["python"], kernels.available()["cython"]
    for name, call in calls.items():
        ga, gb = np.zeros_like(x), np.zeros_like(x)
        ea, eb = call(py, ga), call(cy, gb)
        assert ea == pytest.approx(eb, rel=1e-12), name
        assert np.allclose(ga, gb, rtol=1e-10, atol=1e-14), name


def test_mesh_collider_agrees_with_capsule(rng):
    p0, p1, r = np.array([0.0, 0.0, 0.0]), np.array([0.4, 0.0, 0.0]), 0.1
    col = CapsuleCollider([p0], [p1], [r])
    mesh = MeshCollider(capsule_mesh(p0, p1, r, around=64, cap_rings=16))
    t = rng.uniform(0.05, 0.35, 50)
    phi = rng.uniform(0, 2 * np.pi, 50)
    rad = rng.uniform(0.05, 0.2, 50)
    pts = np.column_stack([t, rad * np.cos(phi), rad * np.sin(phi)])
    sd_cap, n_cap = col.query(pts)
    sd_mesh, n_mesh = mesh.query(pts)
    assert np.allclose(sd_mesh, sd_cap, atol=2e-3)
    assert np.all(np.sign(sd_mesh) == np.sign(sd_cap))
    assert np.all(np.einsum("ij,ij->i", n_mesh, n_cap) > 0.99)
