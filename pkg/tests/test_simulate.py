import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from swarmtopo import simulate as sim


class _ZeroUniform:
    """Stand-in generator whose uniform draws are all zero exponents."""

    def uniform(self, low=0.0, high=1.0, size=None):
        return np.zeros(np.shape(low) if size is None else size)


def test_dorsogna_zero_exponent_gives_unit_values():
    p = sim.sample_params("dorsogna", _ZeroUniform())
    assert p["C_r"] == 1.0 and p["l_r"] == 1.0 and p["alpha"] == 1.0 and p["m"] == 1.0


def test_dorsogna_ranges():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        p = sim.sample_params("dorsogna", rng)
        assert 0.5 <= p["C_r"] <= 2.0
        assert 2 ** -1.5 <= p["l_r"] <= 2 ** 0.5
        assert 0.25 <= p["alpha"] <= 4.0 and 0.25 <= p["m"] <= 4.0
        assert p["C_a"] == p["l_a"] == 1.0 and p["beta"] == 0.5


def test_dorsogna1k_ranges_and_targets():
    rng = np.random.default_rng(2)
    for _ in range(500):
        p = sim.sample_params("dorsogna1k", rng)
        assert 0.1 <= p["C_r"] <= 2.0 and 0.1 <= p["l_r"] <= 2.0
        assert p["m"] == p["alpha"] == 1.0
    assert p.targets().shape == (2,)


def test_vicsek_ranges():
    rng = np.random.default_rng(3)
    for _ in range(500):
        p = sim.sample_params("vicsek", rng)
        assert all(0.5 <= p[k] <= 5.0 for k in ("R", "c", "nu"))
        assert 0.0 <= p["D"] <= 2.0
    assert p.targets().shape == (4,)


def test_volex_rejects_death_above_birth():
    assert not sim.accept_birth_death(0.2, 0.9)
    assert sim.accept_birth_death(0.5, 0.4)
    # large net growth would blow past the population cap
    assert not sim.accept_birth_death(1.0, 0.0)


def test_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        sim.sample_params("boids", np.random.default_rng(0))


def test_init_state():
    st = sim.init_state(100_000, np.random.default_rng(0))
    assert np.all(np.abs(st.positions) <= 0.5)
    np.testing.assert_allclose(np.linalg.norm(st.velocities, axis=1), 1.0, atol=1e-12)
    # each component of a uniform unit vector has variance 1/3
    sigma = math.sqrt(1 / 3 / 100_000)
    assert np.all(np.abs(st.velocities.mean(axis=0)) < 3 * sigma)


def _single(v):
    return sim.SimState(np.zeros((1, 3)), np.array([v], dtype=float))


def _dorsogna(**kw):
    vals = dict(m=1.0, alpha=1.0, beta=1.0, C_r=1.0, l_r=1.0, C_a=1.0, l_a=1.0)
    vals.update(kw)
    return sim.SimParams("dorsogna", vals)


def test_dorsogna_single_particle_fixed_point():
    st = _single([0.0, 1.0, 0.0])
    nxt = sim.step_dorsogna(st, _dorsogna(), 0.01)
    np.testing.assert_allclose(nxt.velocities, st.velocities, atol=1e-15)


def test_dorsogna_speed_relaxes_monotonically():
    p = _dorsogna(alpha=2.0, beta=0.5, m=1.5)
    target = math.sqrt(2.0 / 0.5)
    st = _single([0.3, 0.0, 0.0])
    speeds = [0.3]
    for _ in range(400):
        st = sim.step_dorsogna(st, p, 0.01)
        speeds.append(np.linalg.norm(st.velocities[0]))
    assert np.all(np.diff(speeds) > 0) and speeds[-1] < target
    ref = solve_ivp(lambda t, s: (2.0 - 0.5 * s ** 2) * s / 1.5, (0, 4.0), [0.3], rtol=1e-10, atol=1e-12)
    assert speeds[-1] == pytest.approx(ref.y[0, -1], rel=2e-2)


def test_dorsogna_pair_forces_are_opposite():
    x = np.array([[0.1, -0.2, 0.3], [0.4, 0.1, -0.2]])
    f = sim.dorsogna_forces(x, _dorsogna(C_r=1.7, l_r=0.4))
    np.testing.assert_allclose(f[0], -f[1], atol=1e-15)
    assert np.linalg.norm(f[0]) > 0


def test_dorsogna_coincident_points_have_no_force():
    f = sim.dorsogna_forces(np.zeros((2, 3)), _dorsogna())
    assert np.all(f == 0)


def _vicsek(**kw):
    vals = dict(c=1.0, nu=2.0, D=0.0, R=1.0)
    vals.update(kw)
    return sim.SimParams("vicsek", vals)


def test_vicsek_single_noiseless_constant_velocity():
    v = np.array([0.6, 0.0, 0.8])
    st = _single(v)
    rng = np.random.default_rng(0)
    for _ in range(20):
        st = sim.step_vicsek(st, _vicsek(), 0.01, rng)
    np.testing.assert_allclose(st.velocities[0], v, atol=1e-14)


def test_vicsek_aligned_pair_keeps_direction():
    v = np.array([0.0, 0.0, 1.0])
    st = sim.SimState(np.array([[0.0, 0, 0], [0.1, 0, 0]]), np.array([v, v]))
    nxt = sim.step_vicsek(st, _vicsek(), 0.01, np.random.default_rng(0))
    np.testing.assert_allclose(nxt.velocities, [v, v], atol=1e-14)


def test_vicsek_unit_speed_with_noise():
    rng = np.random.default_rng(5)
    st = sim.init_state(50, rng)
    for _ in range(100):
        st = sim.step_vicsek(st, _vicsek(D=2.0, R=0.3), 0.01, rng)
        assert np.max(np.abs(np.linalg.norm(st.velocities, axis=1) - 1)) < 1e-9


def _volex(**kw):
    vals = dict(alpha=1.0, R=0.2, lambda_b=0.0, lambda_d=0.0)
    vals.update(kw)
    return sim.SimParams("volex", vals)


def test_volex_no_drift_beyond_support():
    x = np.array([[0.0, 0, 0], [0.5, 0, 0]])  # distance > 2R = 0.4
    assert np.all(sim.volex_drift(x, _volex()) == 0)


def test_volex_constant_population_without_rates():
    rng = np.random.default_rng(6)
    st = sim.init_state(30, rng)
    for _ in range(200):
        st = sim.step_volex(st, _volex(), 0.01, rng)
        assert st.n == 30


def test_volex_pair_repulsion_distance_non_decreasing():
    st = sim.SimState(np.array([[0.0, 0, 0], [0.1, 0, 0]]), np.zeros((2, 3)))
    rng = np.random.default_rng(0)
    dists = []
    for _ in range(300):
        st = sim.step_volex(st, _volex(), 0.01, rng)
        dists.append(np.linalg.norm(st.positions[0] - st.positions[1]))
    assert np.all(np.diff(dists) >= 0)
    assert dists[-1] > 0.1


def test_volex_growth_matches_branching_expectation():
    # pure birth at rate 1 for 100 steps of 0.01: E[N] = 200 (1 + 0.01)^100
    expected = 200 * 1.01 ** 100
    # Yule process: Var[N(t)] ~ N0 e^t (e^t - 1)
    sd_mean = math.sqrt(200 * math.e * (math.e - 1)) / math.sqrt(20)
    finals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        st = sim.init_state(200, rng)
        counts = [st.n]
        for _ in range(100):
            st = sim.step_volex(st, _volex(lambda_b=1.0), 0.01, rng)
            counts.append(st.n)
        assert np.all(np.diff(counts) >= 0)
        finals.append(counts[-1])
    assert np.all(np.array(finals) > 200)
    assert abs(np.mean(finals) - expected) < 4 * sd_mean


def test_volex_cap_aborts():
    st = sim.init_state(100, np.random.default_rng(0))
    with pytest.raises(sim.PopulationCapExceeded):
        sim.step_volex(st, _volex(lambda_b=1.0), 0.5, np.random.default_rng(0), cap=101)


def test_simulate_default_length_and_window_equivalence():
    p = sim.sample_params("dorsogna1k", np.random.default_rng(7))
    a = sim.simulate(p, 8, np.random.default_rng(11))
    b = sim.simulate(p, 8, np.random.default_rng(11), window=(0, 1000))
    assert len(a) == 100 and a.times[1] == pytest.approx(0.1)
    assert all(np.array_equal(u, v) for u, v in zip(a.clouds, b.clouds))


def test_simulate_extended_window():
    rng = np.random.default_rng(8)
    p = sim.sample_params("dorsogna", rng)
    window = sim.random_window(20_000, 1000, rng)
    assert 0 <= window[0] <= 19_000
    seq = sim.simulate(p, 4, rng, steps=20_000, window=window)
    assert len(seq) == 100
    assert np.all(np.diff(seq.times) > 0)


def test_simulate_is_deterministic():
    for model in ("dorsogna", "vicsek", "volex"):
        a = sim.generate_sequence(model, 10, np.random.default_rng(3), steps=100)
        b = sim.generate_sequence(model, 10, np.random.default_rng(3), steps=100)
        assert all(np.array_equal(u, v) for u, v in zip(a.clouds, b.clouds))
        assert a.params == b.params


def test_simulate_precondition():
    p = sim.sample_params("vicsek", np.random.default_rng(0))
    with pytest.raises(ValueError):
        sim.simulate(p, 5, np.random.default_rng(0), steps=5, stride=10)
