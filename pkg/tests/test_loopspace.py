import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import equator_loop, torus_line
from geolab.acceptance import brute_force_residue, catalog, random_isometry, sample_loop
from geolab.errors import GridMismatch, InconsistentPeriods, NotMultiple, RadiusTooLarge
from geolab.loopspace import (BrokenLoop, PeriodData, TimeGrid, constant_loop, dist_upsilon, energies,
                              energy_Fq, energy_Fq_prime, in_polydisc, interpolate_loops, iterate_embedding,
                              iterated_energy_identity_check, loop_from_dict, random_loop, residue_partition)
from geolab.manifold import FlatTorus, RoundSphere, identity, rotation, translation


def brute_energy(loop, upto=None):
    """Direct summation (1/T) sum d_i^2 / dt_i over the segments ending at node ``upto``."""
    ext = loop.extended_nodes()
    taus = loop.grid.taus
    n = loop.k if upto is None else upto
    total = 0.0
    for i in range(n):
        total += float(loop.model.dist(ext[i], ext[i + 1])) ** 2 / (taus[i + 1] - taus[i])
    return total / taus[n] if n else 0.0


def test_constant_loop_energy_zero(sphere):
    loop = constant_loop(sphere, TimeGrid.uniform(8), [0, 0, 1.0])
    assert energy_Fq(loop) == 0.0


def test_torus_straight_loop_energy_one():
    assert energy_Fq(torus_line(8)) == pytest.approx(1.0, abs=1e-15)


def test_equator_energy():
    # adjacent distances are the arc 2 pi / 16; the sum is closed form
    assert energy_Fq(equator_loop(16)) == pytest.approx(16 * (2 * np.pi / 16) ** 2 * 16, rel=1e-14)
    assert energy_Fq(equator_loop(16)) == pytest.approx(4 * np.pi ** 2, rel=1e-14)


def test_energy_Fq_prime_examples(sphere):
    assert energy_Fq_prime(torus_line(8)) == 0.0
    iso = rotation([0, 0, 1], 0.3)
    loop = constant_loop(sphere, TimeGrid.uniform(8, 1.0, 0.5), [0, 0, 1.0], iso)
    assert energy_Fq_prime(loop) == 0.0
    half = torus_line(8, q_prime=0.5)
    assert half.grid.k_prime == 4
    assert energy_Fq_prime(half) == pytest.approx(brute_energy(half, 4), abs=1e-15)
    assert energy_Fq_prime(half) == pytest.approx(1.0, abs=1e-15)


@given(seed=st.integers(0, 10 ** 6))
def test_energies_match_direct_summation(seed):
    rng = np.random.default_rng(seed)
    model = catalog()[seed % 4]
    if model.name == "ellipsoid":
        model = catalog()[0]
    grid = TimeGrid.uniform(8, 1.0, 0.5)
    loop = sample_loop(model, grid, rng, random_isometry(model, rng))
    fq, fqp = energies(loop)
    assert fq == pytest.approx(brute_energy(loop), rel=1e-13)
    assert fqp == pytest.approx(brute_energy(loop, grid.k_prime), rel=1e-13)


def test_dist_upsilon_examples(torus):
    a = torus_line(8)
    assert dist_upsilon(a, a) == 0.0
    b = a.with_nodes(torus.reduce(a.nodes + [0.1, 0.0]))
    assert dist_upsilon(a, b) == pytest.approx(0.1, abs=1e-14)
    rng = np.random.default_rng(0)
    c = a.with_nodes(torus.reduce(a.nodes + rng.normal(scale=0.05, size=a.nodes.shape)))
    oracle = max(float(torus.dist(a.nodes[i], c.nodes[i])) for i in range(8))
    assert dist_upsilon(a, c) == pytest.approx(oracle, abs=1e-15)


def test_dist_upsilon_grid_mismatch():
    with pytest.raises(GridMismatch):
        dist_upsilon(torus_line(8), torus_line(4))


def test_polydisc_examples(torus):
    a = torus_line(8)
    b = a.with_nodes(torus.reduce(a.nodes + [0.1, 0.0]))
    big = torus_line(8)
    assert in_polydisc(a, 0.01, a)
    assert not in_polydisc(a, 0.05, b)
    assert in_polydisc(a, 0.15, b)
    with pytest.raises(RadiusTooLarge):
        in_polydisc(big, 0.2, big)


def test_interpolation_examples(torus):
    a = torus_line(8)
    b = a.with_nodes(torus.reduce(a.nodes + [0.0, 0.1]))
    assert interpolate_loops(a, b, 0.0) is a
    mid = interpolate_loops(a, b, 0.5)
    assert np.allclose(mid.nodes, torus.reduce(a.nodes + [0.0, 0.05]))


@given(seed=st.integers(0, 10 ** 6), frac=st.floats(0.05, 1.0))
def test_sphere_polydisc_convexity(seed, frac):
    rng = np.random.default_rng(seed)
    s = RoundSphere(1.0)
    center = random_loop(s, TimeGrid.uniform(8), rng, amplitude=0.5)
    r = 0.1 * frac
    pair = []
    for _ in range(2):
        v = s.proj_tangent(center.nodes, rng.normal(size=center.nodes.shape))
        v *= r * rng.uniform(0, 0.99, size=(8, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
        pair.append(center.with_nodes(s.exp(center.nodes, v)))
    for t in np.linspace(0, 1, 100):
        assert in_polydisc(center, r, interpolate_loops(pair[0], pair[1], t))


def test_interpolation_keeps_constraint():
    rng = np.random.default_rng(4)
    s = RoundSphere(1.0)
    iso = rotation([0, 0, 1], 0.8)
    grid = TimeGrid.uniform(8, 1.0, 0.5)
    a = random_loop(s, grid, rng, iso, amplitude=0.2)
    b = random_loop(s, grid, rng, iso, amplitude=0.2)
    for t in (0.25, 0.5, 0.75):
        assert interpolate_loops(a, b, t).constraint_residual() < 1e-8


def test_iterate_embedding_examples():
    loop = torus_line(8)
    one = iterate_embedding(loop, PeriodData(1, 1, 0, 0))
    assert np.array_equal(one.nodes, loop.nodes)
    three = iterate_embedding(loop, PeriodData(1, 1, 0, 2))
    assert np.array_equal(three.nodes, np.vstack([loop.nodes] * 3))
    half = torus_line(8, q_prime=0.5)
    it = iterate_embedding(half, PeriodData(Fraction(1, 2), 1, Fraction(1, 2), 3))
    assert it.k == 2 * 8 + 4
    assert it.grid.q == 2.5


def test_iterate_embedding_rejects_inconsistent_periods():
    with pytest.raises(InconsistentPeriods):
        iterate_embedding(torus_line(8), PeriodData(Fraction(1, 2), 1, 0, 1))
    with pytest.raises(NotMultiple):
        PeriodData(Fraction(2, 3), 1, 0, 1)


def test_identity_check_examples(sphere):
    loop = torus_line(8)
    lhs, rhs, res = iterated_energy_identity_check(loop, PeriodData(1, 1, 0, 4))
    assert lhs == pytest.approx(energy_Fq(loop), abs=1e-15)
    const = constant_loop(sphere, TimeGrid.uniform(8), [1.0, 0, 0])
    assert iterated_energy_identity_check(const, PeriodData(1, 1, 0, 3)) == (0.0, 0.0, 0.0)


def test_identity_check_random_torus_loop():
    rng = np.random.default_rng(7)
    t = FlatTorus()
    grid = TimeGrid.uniform(8, 1.0, 0.5)
    loop = random_loop(t, grid, rng, translation([0.2, 0.1]), amplitude=0.05)
    pd = PeriodData(Fraction(1, 2), 1, Fraction(1, 2), 5)
    lhs, rhs, res = iterated_energy_identity_check(loop, pd)
    # lhs oracle: brute-force segment summation over the iterate
    assert lhs == pytest.approx(brute_energy(iterate_embedding(loop, pd)), rel=1e-13)
    assert res < 1e-12


@given(seed=st.integers(0, 10 ** 6), m=st.integers(0, 8))
def test_identity_holds_for_random_loops(seed, m):
    rng = np.random.default_rng(seed)
    model = [RoundSphere(1.0), FlatTorus()][seed % 2]
    q = Fraction(int(rng.integers(1, 3)))
    half = bool(rng.integers(2))
    qp = q / 2 if half else Fraction(0)
    p = q / 2
    pd = PeriodData(p, q, qp, m)
    if not pd.consistent():
        return
    grid = TimeGrid.uniform(8, float(q), float(qp))
    iso = random_isometry(model, rng) if half else identity(model.ambient_dim)
    loop = sample_loop(model, grid, rng, iso)
    assert iterated_energy_identity_check(loop, pd)[2] < 1e-12


def test_residue_partition_examples():
    assert residue_partition(1, 2, range(1, 7)) == {0: [1, 3, 5], 1: [2, 4, 6]}
    assert list(residue_partition(1, 1, range(5))) == [0]
    classes = residue_partition(Fraction(3, 2), 3, range(1, 9))
    for label, ms in classes.items():
        for m in ms:
            assert (Fraction(3, 2) * m + 1) % 3 == label
    # 3m/2 + 1 mod 3 alternates between 5/2 (odd m) and 1 (even m)
    assert classes == {Fraction(5, 2): [1, 3, 5, 7], Fraction(1): [2, 4, 6, 8]}


@given(num=st.integers(1, 12), den=st.integers(1, 12), mult=st.integers(1, 9),
       ms=st.lists(st.integers(0, 200), min_size=1, max_size=20))
def test_residue_partition_against_brute_force(num, den, mult, ms):
    p = Fraction(num, den)
    q = p * mult
    classes = residue_partition(p, q, ms)
    assert sorted(m for v in classes.values() for m in v) == sorted(ms)
    for label, members in classes.items():
        assert 0 <= label < q
        for m in members:
            assert brute_force_residue(p, q, m) == label


def test_period_data_bookkeeping():
    pd = PeriodData.from_m(Fraction(1, 2), 1, 3)
    assert pd.total == Fraction(5, 2)
    assert pd.q_prime == Fraction(1, 2)
    assert pd.copies == 2
    assert pd.consistent()


def test_grid_spacing_bound():
    grid = TimeGrid.uniform(8)
    assert grid.spacing_bound(0.5, 1.0) == pytest.approx(0.25 / 9)
    assert not grid.satisfies_spacing(0.5, 1.0)
    auto = TimeGrid.auto(1.0, 0.0, 0.5, 1.0)
    assert auto.satisfies_spacing(0.5, 1.0)
    assert auto.k % 2 == 0
    assert not TimeGrid.uniform(auto.k - 2).satisfies_spacing(0.5, 1.0 * 1.2)


def test_loop_serialization_roundtrip(sphere):
    rng = np.random.default_rng(0)
    loop = random_loop(sphere, TimeGrid.uniform(8, 1.0, 0.5), rng, rotation([1, 0, 0], 0.5), amplitude=0.2)
    back = loop_from_dict(loop.to_dict())
    assert np.array_equal(back.nodes, loop.nodes)
    assert back.grid.same_as(loop.grid)
    assert energy_Fq(back) == energy_Fq(loop)


def test_random_loop_respects_constraint_and_winding(torus):
    rng = np.random.default_rng(2)
    grid = TimeGrid.uniform(16, 1.0, 0.5)
    loop = random_loop(torus, grid, rng, translation([0.3, 0.0]), amplitude=0.02)
    assert loop.constraint_residual() < 1e-12
    line = random_loop(torus, TimeGrid.uniform(16), rng, winding=(1, 0), amplitude=0.0)
    assert energy_Fq(line) == pytest.approx(1.0, abs=1e-12)


def test_broken_loop_validates_shape(sphere):
    with pytest.raises(ValueError):
        BrokenLoop(sphere, TimeGrid.uniform(4), np.zeros((3, 3)))
