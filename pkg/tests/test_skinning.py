import numpy as np
import pytest

from drape import kernels
from drape.nodes import build_nodes
from drape.rig import bone_motion, euler_xyz
from drape.skinning import apply_deltas, backprop_lbs, lbs_nodes_from_pose, lbs_vertices, normalize_weights, \
    project_to_simplex_rows, rest_node_transforms

from fdcheck import central, gradient_check


def random_transforms(nodes, rng, scale=0.1):
    return rest_node_transforms(nodes) + scale * rng.standard_normal((nodes.m, 12))


def dense_lbs(garment, nodes, chi, weights=None):
    """Reference: sum_i w_ij chi_i inv(chi_rest_i) x_j with full 4x4 matrices."""
    w = nodes.dense_weights(weights)
    x = np.hstack([garment.vertices, np.ones((garment.n_vertices, 1))])
    out = np.zeros((garment.n_vertices, 3))
    for i in range(nodes.m):
        t = np.eye(4)
        t[:3, :] = chi[i].reshape(3, 4)
        rest = np.eye(4)
        rest[:3, 3] = nodes.centers[i]
        out += w[i][:, None] * (x @ (t @ np.linalg.inv(rest)).T)[:, :3]
    return out


def test_zero_pose_gives_rest_node_transforms(sleeve, sleeve_nodes):
    _, body = sleeve
    chi = lbs_nodes_from_pose(sleeve_nodes, body.skeleton, body.skeleton.zero_pose())
    assert np.array_equal(chi, rest_node_transforms(sleeve_nodes))


def test_node_transforms_follow_their_bone(sleeve, sleeve_nodes):
    _, body = sleeve
    theta = np.array([0.0, 0.0, 0.0, 0.0, -np.pi / 2, 0.0])
    chi = lbs_nodes_from_pose(sleeve_nodes, body.skeleton, theta).reshape(-1, 3, 4)
    g = bone_motion(body.skeleton, theta)
    for i in range(sleeve_nodes.m):
        manual = g[sleeve_nodes.bones[i]] @ np.vstack([rest_node_transforms(sleeve_nodes)[i].reshape(3, 4),
                                                       [0, 0, 0, 1]])
        assert np.allclose(chi[i], manual[:3], atol=1e-12)
    forearm = sleeve_nodes.bones == 2
    assert np.allclose(chi[forearm, :, :3], euler_xyz((0, -np.pi / 2, 0)), atol=1e-12)
    assert np.allclose(chi[~forearm, :, :3], np.eye(3))


def test_rest_transforms_give_rest_vertices(sleeve, sleeve_nodes):
    garment, _ = sleeve
    y = lbs_vertices(garment, sleeve_nodes, rest_node_transforms(sleeve_nodes))
    assert np.abs(y - garment.vertices).max() < 1e-12


def test_rigid_motion_moves_garment_rigidly(sleeve, sleeve_nodes, rng):
    garment, _ = sleeve
    r = euler_xyz(rng.uniform(-np.pi, np.pi, 3))
    t = rng.standard_normal(3)
    chi = np.empty((sleeve_nodes.m, 3, 4))
    chi[:, :, :3] = r
    chi[:, :, 3] = sleeve_nodes.centers @ r.T + t
    y = lbs_vertices(garment, sleeve_nodes, chi.reshape(-1, 12))
    assert np.abs(y - (garment.vertices @ r.T + t)).max() < 1e-12


def test_matches_dense_reference(sleeve, sleeve_nodes, rng):
    garment, _ = sleeve
    chi = random_transforms(sleeve_nodes, rng)
    assert np.abs(lbs_vertices(garment, sleeve_nodes, chi) - dense_lbs(garment, sleeve_nodes, chi)).max() < 1e-12


def test_translation_delta_shifts_every_vertex(sleeve, sleeve_nodes):
    garment, _ = sleeve
    rest = rest_node_transforms(sleeve_nodes)
    delta = np.zeros_like(rest)
    assert np.array_equal(apply_deltas(rest, delta), rest)
    delta[:, 7] = -0.01                                   # y translation entry
    y = lbs_vertices(garment, sleeve_nodes, apply_deltas(rest, delta))
    assert np.allclose(y - garment.vertices, [0.0, -0.01, 0.0], atol=1e-14)
    with pytest.raises(ValueError):
        apply_deltas(rest, delta[:-1])


def test_vertices_are_linear_in_transforms(sleeve, sleeve_nodes, rng):
    garment, _ = sleeve
    a, b = random_transforms(sleeve_nodes, rng), random_transforms(sleeve_nodes, rng)
    ya, yb = (lbs_vertices(garment, sleeve_nodes, c) for c in (a, b))
    assert np.allclose(lbs_vertices(garment, sleeve_nodes, 0.3 * a + 0.7 * b), 0.3 * ya + 0.7 * yb, atol=1e-13)


def test_adjoint_of_zero_is_zero(sleeve, sleeve_nodes):
    garment, _ = sleeve
    gchi, gw = backprop_lbs(garment, sleeve_nodes, rest_node_transforms(sleeve_nodes),
                            np.zeros((garment.n_vertices, 3)))
    assert not gchi.any() and not gw.any()


def test_single_vertex_adjoint(small_sleeve):
    garment, body = small_sleeve
    nodes = build_nodes(garment, body.skeleton, 8)
    chi = random_transforms(nodes, np.random.default_rng(0))
    g = np.zeros((garment.n_vertices, 3))
    j = 17
    g[j] = (1.0, -2.0, 0.5)
    gchi, _ = backprop_lbs(garment, nodes, chi, g)
    expect = np.zeros((nodes.m, 3, 4))
    local = garment.vertices[j] - nodes.centers
    for s, i in enumerate(nodes.support[j]):
        expect[i] += nodes.weights[j, s] * np.outer(g[j], np.append(local[i], 1.0))
    assert np.allclose(gchi, expect.reshape(-1, 12), atol=1e-14)


def test_adjoints_match_finite_differences(small_sleeve, rng):
    garment, body = small_sleeve
    nodes = build_nodes(garment, body.skeleton, 8)
    chi = random_transforms(nodes, rng)
    raw = nodes.weights * rng.uniform(0.5, 1.5, nodes.weights.shape)
    target = rng.standard_normal((garment.n_vertices, 3))

    def loss():
        y = lbs_vertices(garment, nodes, chi, normalize_weights(raw))
        return 0.5 * np.sum((y - target) ** 2)

    y = lbs_vertices(garment, nodes, chi, normalize_weights(raw))
    gchi, graw = backprop_lbs(garment, nodes, chi, y - target, raw)
    err, _, _ = gradient_check(loss, chi, gchi, 1e-5)
    assert err < 1e-6
    idx = rng.choice(raw.size, 200, replace=False)
    err, _, _ = gradient_check(loss, raw, graw, 1e-5, indices=idx)
    assert err < 1e-5


def test_directional_derivatives(small_sleeve, rng):
    garment, body = small_sleeve
    nodes = build_nodes(garment, body.skeleton, 8)
    chi = random_transforms(nodes, rng)
    target = rng.standard_normal((garment.n_vertices, 3))
    y = lbs_vertices(garment, nodes, chi)
    gchi, _ = backprop_lbs(garment, nodes, chi, y - target)
    step = np.zeros(1)

    for _ in range(100):
        d = rng.standard_normal(chi.shape)

        def loss():
            return 0.5 * np.sum((lbs_vertices(garment, nodes, chi + step[0] * d) - target) ** 2)

        numeric = central(loss, step, 0, 1e-5)
        assert numeric == pytest.approx(np.sum(gchi * d), rel=1e-6, abs=1e-9)


def test_simplex_projection():
    raw = np.array([[0.2, -0.1, 0.6], [1.0, 1.0, 2.0], [-1.0, -2.0, -0.5]])
    fallback = np.full((3, 3), 1 / 3)
    out = project_to_simplex_rows(raw, fallback)
    assert np.allclose(out.sum(axis=1), 1.0) and np.all(out >= 0)
    assert np.allclose(out[0], [0.25, 0.0, 0.75])
    assert np.allclose(out[2], fallback[2])
    with pytest.raises(ValueError):
        project_to_simplex_rows(raw)


@pytest.mark.skipif("cython" not in kernels.available(), reason="compiled kernels not built")
def test_backends_agree(sleeve, sleeve_nodes, rng):
    garment, _ = sleeve
    py, cy = kernels.available()["python"], kernels.available()["cython"]
    chi = random_transforms(sleeve_nodes, rng)
    args = (garment.vertices, sleeve_nodes.support, sleeve_nodes.weights, chi, sleeve_nodes.centers)
    a = py.lbs_forward(*args, np.empty((garment.n_vertices, 3)))
    b = cy.lbs_forward(*args, np.empty((garment.n_vertices, 3)))
    assert np.allclose(a, b, rtol=0, atol=1e-13)
    g = rng.standard_normal((garment.n_vertices, 3))
    outs = []
    for mod in (py, cy):
        gchi, gw = np.zeros((sleeve_nodes.m, 12)), np.empty_like(sleeve_nodes.weights)
        mod.lbs_backward(*args, g, gchi, gw)
        outs.append((gchi, gw))
    assert np.allclose(outs[0][0], outs[1][0], atol=1e-11)
    assert np.allclose(outs[0][1], outs[1][1], atol=1e-12)
