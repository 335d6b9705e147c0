import numpy as np
import pytest
from hypothesis import given, strategies as st

from setmtpp import autodiff as ad


def store(**kw):
    return ad.ParamStore({k: np.asarray(v, dtype=float) for k, v in kw.items()})


def test_analytic_values():
    assert ad.softplus(0.0) == pytest.approx(np.log(2))
    assert ad.sigmoid(0.0) == 0.5
    assert ad.log_det_psd(np.eye(3)) == pytest.approx(0.0)


def test_dot_gradient():
    ps = store(w=[1.0, 2.0])
    ad.backward(ad.dot(ps.leaves()["w"], ps.leaves()["w"]))
    np.testing.assert_allclose(ps.grads["w"], [2.0, 4.0])


def test_logdet_gradient():
    ps = store(L=np.diag([2.0, 5.0]))
    ad.backward(ad.log_det_psd(ps.leaves()["L"]))
    np.testing.assert_allclose(ps.grads["L"], np.diag([0.5, 0.2]))


def test_constant_output_zero_grads():
    ps = store(w=[1.0, 2.0])
    ps.leaves()
    ad.backward(ad.Node(3.0))
    np.testing.assert_array_equal(ps.grads["w"], 0.0)


def test_backward_accumulates_and_rejects_nonscalar():
    ps = store(w=[1.0, 2.0])
    for _ in range(2):
        ad.backward(ad.sum_(ad.mul(ps.leaves()["w"], 3.0)))
    np.testing.assert_allclose(ps.grads["w"], [6.0, 6.0])
    with pytest.raises(ValueError):
        ad.backward(ad.mul(ps.leaves()["w"], 2.0))


def test_nonfinite_raises():
    with pytest.raises(ad.NumericalError), np.errstate(invalid="ignore"):
        ad.log(ad.Node(np.array([-1.0])))


def test_gradcheck_sum_of_squares():
    ps = store(w=np.arange(5.0))
    rep = ad.gradient_check(lambda P: ad.sum_(ad.mul(P["w"], P["w"])), ps, eps=1e-5, tol=1e-4)
    assert rep.passed and rep.n_checked == 5


UNARY = {
    "exp": ad.exp, "tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus,
    "log": lambda x: ad.log(ad.add(ad.mul(x, x), 1.0)), "sqrt": lambda x: ad.sqrt(ad.add(ad.mul(x, x), 1.0)),
    "clip": lambda x: ad.clip(x, -0.5, 0.5), "neg": ad.neg, "power": lambda x: ad.power(ad.add(ad.mul(x, x), 1.0), 1.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(seed=st.integers(0, 10_000))
def test_unary_ops_gradcheck(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 2))
    if name == "clip":
        x = np.where(np.abs(np.abs(x) - 0.5) < 1e-3, 0.0, x)  # keep away from kinks
    ps = store(x=x)
    weights = rng.normal(size=(3, 2))
    rep = ad.gradient_check(lambda P: ad.sum_(ad.mul(UNARY[name](P["x"]), weights)), ps, tol=1e-4)
    assert rep.passed, rep


@given(seed=st.integers(0, 10_000))
def test_structural_ops_gradcheck(seed):
    rng = np.random.default_rng(seed)
    ps = store(a=rng.normal(size=(2, 3, 4)), b=rng.normal(size=(4, 3)), v=rng.normal(size=4))

    def f(P):
        m = ad.matmul(P["a"], P["b"])                      # (2,3,3)
        m = ad.add(m, ad.swapaxes(m, -1, -2))
        s = ad.stack([ad.getitem(m, (0,)), ad.getitem(m, (1, slice(None), slice(0, 3)))], axis=0)
        c = ad.concat([ad.reshape(s, (2, 9)), ad.expand_dims(ad.dot(P["a"][:, 0], P["v"]), -1)], axis=-1)
        mv = ad.matvec(P["b"].T, P["v"])
        return ad.add(ad.sum_(ad.tanh(c)), ad.sum_(ad.div(mv, ad.add(ad.exp(P["v"][:3]), 1.0))))

    assert ad.gradient_check(f, ps, tol=1e-4).passed


@given(seed=st.integers(0, 10_000))
def test_logdet_gradcheck(seed):
    rng = np.random.default_rng(seed)
    ps = store(F=rng.normal(size=(2, 4, 4)))
    f = lambda P: ad.sum_(ad.log_det_psd(ad.add(ad.matmul(P["F"], ad.swapaxes(P["F"], -1, -2)), np.eye(4))))
    assert ad.gradient_check(f, ps, tol=1e-4).passed


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    f = lambda x: ad.sum_(ad.exp(x))
    g = lambda x: ad.sum_(ad.mul(ad.tanh(x), x))

    def grad(fn):
        ps = store(x=w)
        ad.backward(fn(ps.leaves()["x"]))
        return ps.grads["x"].copy()

    combo = grad(lambda x: ad.add(ad.mul(f(x), a), ad.mul(g(x), b)))
    np.testing.assert_allclose(combo, a * grad(f) + b * grad(g), rtol=1e-10, atol=1e-12)


def test_untracked_ops_return_arrays():
    assert isinstance(ad.add(np.ones(2), 1.0), np.ndarray)
    assert isinstance(ad.matmul(np.ones((2, 2)), np.ones(2)), np.ndarray)


def test_paramstore_roundtrip(tmp_path):
    ps = store(a=np.arange(6.0).reshape(2, 3), b=[1.5])
    ps.save(tmp_path / "p.json")
    back = ad.ParamStore.load(tmp_path / "p.json")
    assert list(back) == ["a", "b"]
    np.testing.assert_array_equal(back["a"], ps["a"])
    bad = ps.to_dict()
    bad["version"] = 99
    with pytest.raises(ValueError):
        ad.ParamStore.from_dict(bad)
