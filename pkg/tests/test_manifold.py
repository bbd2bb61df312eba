import numpy as np
import pytest
from hypothesis import given, strategies as st

from geolab import ode
from geolab.errors import PreconditionViolation
from geolab.manifold import (CircleTimesSphere, FlatTorus, RoundSphere, TriaxialEllipsoid, identity,
                             make_isometry, make_model, rotation, rotation_matrix, translation)

MODELS = [RoundSphere(1.0), FlatTorus(), TriaxialEllipsoid(1.0, 1.1, 1.2), CircleTimesSphere(2 * np.pi, 1.0)]


def test_dist_same_point_is_zero():
    for model in MODELS:
        x = model.random_point(np.random.default_rng(0))
        assert model.dist(x[None], x[None])[0] == pytest.approx(0.0, abs=1e-14)


def test_sphere_pole_to_equator():
    s = RoundSphere(1.0)
    assert s.dist(np.array([0, 0, 1.0]), np.array([1.0, 0, 0])) == pytest.approx(np.pi / 2, abs=1e-15)


def test_torus_distance_wraps_lattice():
    t = FlatTorus()
    x, y = np.array([0.1, 0.1]), np.array([0.9, 0.1])
    # brute force over lattice shifts of size at most 2
    shifts = np.array([[a, b] for a in range(-2, 3) for b in range(-2, 3)], float)
    oracle = np.min(np.linalg.norm(y + shifts - x, axis=1))
    assert t.dist(x, y) == pytest.approx(oracle, abs=1e-15)
    assert t.dist(x, y) == pytest.approx(0.2, abs=1e-15)


def test_geodesic_between_examples():
    s = RoundSphere(1.0)
    x = np.array([1.0, 0, 0])
    y = np.array([np.cos(0.5), np.sin(0.5), 0])
    mid = s.geodesic_between(x, y, 0.5)
    # oracle: integrate x'' = -|x'|^2 x from x with the arc velocity
    v = np.array([0.0, 0.5, 0.0])
    _, samples = ode.integrate(lambda z: np.concatenate([z[:, 3:], -np.sum(z[:, 3:] ** 2, 1)[:, None] * z[:, :3]], 1),
                               np.concatenate([x, v])[None], 1.0, atol=1e-13, t_eval=[0.5])
    assert np.allclose(mid, samples[0][0, :3], atol=1e-10)
    assert np.allclose(mid, [np.cos(0.25), np.sin(0.25), 0], atol=1e-14)
    assert np.allclose(s.geodesic_between(x, x, 0.7), x)
    t = FlatTorus()
    assert np.allclose(t.geodesic_between(np.zeros(2), np.array([0.3, 0.4]), 0.5), [0.15, 0.2])


def test_exp_log_examples():
    s = RoundSphere(1.0)
    north = np.array([0, 0, 1.0])
    assert np.allclose(s.log(north, north), 0.0)
    eq = s.exp(north, np.array([np.pi / 2, 0, 0]))
    assert np.allclose(eq, [1, 0, 0], atol=1e-15)
    t = FlatTorus()
    assert np.allclose(t.exp(np.array([0.9, 0.5]), np.array([0.3, 0.1])), [0.2, 0.6])


def test_ellipsoid_with_equal_axes_matches_sphere():
    # independent oracle: the shooting code on a round ellipsoid against the sphere closed form
    e = TriaxialEllipsoid(1.0, 1.0, 1.0)
    s = RoundSphere(1.0)
    rng = np.random.default_rng(3)
    x = s.random_point(rng, 20)
    v = s.proj_tangent(x, rng.normal(size=(20, 3))) * 0.6
    assert np.allclose(e.exp(x, v), s.exp(x, v), atol=1e-9)
    y = s.exp(x, v)
    assert np.allclose(e.log(x, y), s.log(x, y), atol=1e-8)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
@given(seed=st.integers(0, 2 ** 31 - 1), scale=st.floats(0.05, 0.95))
def test_exp_log_inversion(model, seed, scale):
    rng = np.random.default_rng(seed)
    x = model.random_point(rng, 4)
    v = model.proj_tangent(x, rng.normal(size=x.shape))
    v *= (scale * model.convexity_radius) / np.linalg.norm(v, axis=-1, keepdims=True)
    y = model.exp(x, v)
    assert np.max(np.abs(model.log(x, y) - v)) < 1e-8
    assert np.allclose(model.dist(x, y), np.linalg.norm(v, axis=-1), atol=1e-8)


def test_log_on_cut_locus_raises():
    t = FlatTorus()
    with pytest.raises(PreconditionViolation):
        t.log(np.zeros(2), np.array([0.5, 0.5]))
    s = RoundSphere(1.0)
    with pytest.raises(PreconditionViolation):
        s.log(np.array([0, 0, 1.0]), np.array([0, 0, -1.0]))


def test_isometry_examples():
    s = RoundSphere(1.0)
    assert np.allclose(s.apply_isometry(identity(3), np.array([0.0, 1, 0])), [0, 1, 0])
    phi, alpha = 0.4, 1.0
    p = np.array([np.cos(phi), np.sin(phi), 0])
    assert np.allclose(s.apply_isometry(rotation([0, 0, 1], alpha), p), [np.cos(phi + alpha), np.sin(phi + alpha), 0])
    t = FlatTorus()
    assert np.allclose(t.apply_isometry(translation([0.25, 0.0]), np.array([0.9, 0.5])), [0.15, 0.5])


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_catalog_isometries_preserve_distance(model):
    rng = np.random.default_rng(1)
    specs = {"sphere": {"kind": "rotation", "axis": [1, 2, 3], "angle": 0.7},
             "torus": {"kind": "translation", "vector": [0.3, 0.6]},
             "ellipsoid": {"kind": "rotation", "axis": [0, 0, 1], "angle": np.pi},
             "circle_sphere": {"kind": "product", "shift": 1.3, "angle": 0.4}}
    iso = make_isometry(model, specs[model.name])
    x = model.random_point(rng, 10)
    v = model.proj_tangent(x, rng.normal(size=x.shape)) * 0.1
    y = model.exp(x, v)
    d0 = model.dist(x, y)
    d1 = model.dist(model.apply_isometry(iso, x), model.apply_isometry(iso, y))
    assert np.allclose(d0, d1, atol=1e-9)


def test_rotation_matrix_is_orthogonal():
    R = rotation_matrix([1.0, -2.0, 0.5], 0.9)
    assert np.allclose(R @ R.T, np.eye(3))
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_make_model_rejects_unknown():
    with pytest.raises(ValueError):
        make_model({"model": "klein_bottle"})
