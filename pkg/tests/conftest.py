import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from setmtpp.data import Event, ItemSet, Sequence, Vocabulary
from setmtpp.model import Model, ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def vocab2():
    return Vocabulary(("a", "b"))


@pytest.fixture
def vocab4():
    return Vocabulary(("a", "b", "c", "d"))


def make_seq(vocab, pairs, T):
    return Sequence(tuple(Event(t, vocab.itemset(items)) for t, items in pairs), T)


def constant_model(vocab, rho=None, rate=None):
    """StaticB-Poisson with u = 0 (lambda = ln 2) unless ``rate`` is given."""
    m = Model.init(ModelConfig(backbone="poisson", head="bernoulli", mode="static", E=2, H=2), vocab, 0)
    m.params["intensity.u"] = np.array([0.0 if rate is None else np.log(np.expm1(rate))])
    r = np.full(vocab.K, 0.5) if rho is None else np.asarray(rho, dtype=float)
    m.params["set.logits"] = np.log(r) - np.log1p(-r)
    return m


def small_model(vocab, backbone="nh", head="bernoulli", mode="dynamic", seed=0, **kw):
    cfg = ModelConfig(backbone=backbone, head=head, mode=mode, E=kw.pop("E", 3), H=kw.pop("H", 4), **kw)
    m = Model.init(cfg, vocab, seed)
    m.window = 0.5
    return m


def all_masks(K):
    return np.array([[(i >> k) & 1 for k in range(K)] for i in range(2 ** K)], dtype=bool)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
