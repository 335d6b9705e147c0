import numpy as np
import pytest
from hypothesis import given, strategies as st

from setmtpp import autodiff as ad
from setmtpp.backbones import (NHState, NeuralHawkes, Poisson, RMTPP, embed_set, evolve_state,
                               intensity_upper_bound, total_intensity, update_state)


def nh_params(seed=0, E=3, H=4, scale=1.0):
    p = NeuralHawkes(E, H).init_params(np.random.default_rng(seed))
    return {k: v * scale for k, v in p.items()}


def test_embed_set_examples():
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(embed_set(np.array([False, False]), W), [0.0, 0.0])
    np.testing.assert_array_equal(embed_set(np.array([True, False]), W), W[0])
    np.testing.assert_array_equal(embed_set(np.array([True, True]), W), [0.5, 0.5])


@given(st.lists(st.integers(0, 5), min_size=1, max_size=6, unique=True), st.randoms())
def test_embed_set_order_free(ids, rnd):
    W = np.random.default_rng(1).normal(size=(6, 3))
    m1 = np.zeros(6, bool)
    m1[ids] = True
    shuffled = list(ids)
    rnd.shuffle(shuffled)
    m2 = np.zeros(6, bool)
    m2[shuffled] = True
    np.testing.assert_array_equal(embed_set(m1, W), embed_set(m2, W))


def test_total_intensity_examples():
    assert total_intensity(np.array([0.0]), np.array([1.0])) == pytest.approx(np.log(2))
    assert total_intensity(np.array([-30.0]), np.array([1.0])) == pytest.approx(9.357622968839299e-14)
    assert total_intensity(np.array([-30.0]), np.array([1.0])) > 0
    assert total_intensity(np.array([3.0, -2.0]), np.zeros(2)) == pytest.approx(np.log(2))


def test_nh_analytic_decay():
    bb = NeuralHawkes(1, 1)
    st_ = NHState(np.array(0.0), np.array([1.0]), np.array([0.0]), np.array([np.log(2)]), np.array([1.0]))
    c_t, h_t = bb.decay(st_, 1.0)
    assert c_t[0] == pytest.approx(0.5)
    assert h_t[0] == pytest.approx(np.tanh(0.5))


def test_nh_no_motion_and_large_delta():
    bb = NeuralHawkes(1, 2)
    flat = NHState(np.array(0.0), np.array([0.3, -0.2]), np.array([0.3, -0.2]), np.array([1.0, 2.0]), np.ones(2))
    np.testing.assert_allclose(bb.evolve({}, flat, 1e-9), bb.evolve({}, flat, 7.0))
    fast = flat._replace(c=np.array([2.0, 2.0]), delta=np.array([1e3, 1e3]))
    np.testing.assert_allclose(bb.evolve({}, fast, 1.0), np.tanh(flat.cbar), atol=1e-12)


def test_update_determinism_and_anchor_checks():
    bb = NeuralHawkes(3, 4)
    P = nh_params()
    s0 = bb.initial_state(P)
    e = np.array([0.1, -0.2, 0.3])
    a, b = update_state(bb, P, s0, 1.0, e), update_state(bb, P, s0, 1.0, e)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        update_state(bb, P, a, 1.0, e)
    with pytest.raises(ValueError):
        evolve_state(bb, P, a, 0.5)


def test_zero_params_finite():
    for bb in (NeuralHawkes(3, 4), RMTPP(3, 4)):
        P = {k: np.zeros_like(v) for k, v in bb.init_params(np.random.default_rng(0)).items()}
        s = bb.update(P, bb.initial_state(P), 1.0, np.zeros(3))
        assert all(np.isfinite(np.asarray(f)).all() for f in s)


def test_piecewise_jumps_only_at_events():
    bb = NeuralHawkes(3, 4)
    P = nh_params(seed=3)
    times = [1.0, 2.5, 4.0]
    rng = np.random.default_rng(0)
    states = [bb.initial_state(P)]
    for t in times:
        states.append(bb.update(P, states[-1], t, rng.normal(size=3)))
    grid = np.linspace(0.0, 5.0, 50_001)
    idx = np.searchsorted(times, grid, side="left")
    h = np.stack([bb.evolve(P, states[i], s) for i, s in zip(idx, grid)])
    jumps = np.abs(np.diff(h, axis=0)).max(axis=1)
    big = np.flatnonzero(jumps > 1e-3)
    assert set(np.searchsorted(grid, times)) >= set(big.tolist())  # grid[i] == t_i holds the left limit
    assert len(big) >= 1


def test_poisson_and_constant_bounds():
    bb = Poisson()
    st_ = bb.initial_state({})
    assert intensity_upper_bound(bb, {}, st_, 0.0, 5.0, np.array([0.0])) == pytest.approx(np.log(2))
    nh = NeuralHawkes(3, 4)
    P = nh_params()
    s = nh.initial_state(P)
    b = intensity_upper_bound(nh, P, s, 0.0, 5.0, np.zeros(4))
    assert b == pytest.approx(np.log(2))
    flat = s._replace(c=s.cbar)
    u = np.random.default_rng(0).normal(size=4)
    assert intensity_upper_bound(nh, P, flat, 0.0, 5.0, u) == pytest.approx(total_intensity(nh.evolve(P, flat, 0.0), u))


@pytest.mark.parametrize("kind", ["nh", "rmtpp"])
@given(seed=st.integers(0, 100_000), length=st.floats(0.1, 5.0), end_inf=st.booleans())
def test_bound_dominates_dense_grid(kind, seed, length, end_inf):
    rng = np.random.default_rng(seed)
    bb = NeuralHawkes(3, 4) if kind == "nh" else RMTPP(3, 4)
    P = {k: v * 2.0 for k, v in bb.init_params(rng).items()}
    s = bb.update(P, bb.initial_state(P), rng.uniform(0.1, 2.0), rng.normal(size=3))
    u = rng.normal(scale=2.0, size=bb.out_dim)
    start = float(s.t) + rng.uniform(0.0, 1.0)
    end = np.inf if end_inf else start + length
    grid = np.linspace(start, start + length, 2_000)
    lam = np.array([total_intensity(bb.evolve(P, s, g), u) for g in grid])
    B = intensity_upper_bound(bb, P, s, start, end, u)
    assert np.all(lam <= B * (1 + 1e-12))


def test_rmtpp_elapsed_feature():
    bb = RMTPP(2, 3)
    P = bb.init_params(np.random.default_rng(0))
    s = bb.update(P, bb.initial_state(P), 1.0, np.ones(2))
    h = bb.evolve(P, s, 3.5)
    assert h.shape == (4,) and h[-1] == pytest.approx(2.5)


def test_batched_step_matches_single():
    bb = NeuralHawkes(3, 4)
    P = nh_params(seed=5)
    e = np.random.default_rng(1).normal(size=(2, 3))
    batch = bb.initial_state(P, (2,))
    h_b, nb = bb.step(P, batch, np.array([0.5, 1.5]), e)
    for i, t in enumerate([0.5, 1.5]):
        h_i, ni = bb.step(P, bb.initial_state(P), t, e[i])
        np.testing.assert_allclose(h_b[i], h_i, rtol=1e-12)
        np.testing.assert_allclose(nb.c[i], ni.c, rtol=1e-12)
