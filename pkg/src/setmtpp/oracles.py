"""Ground-truth generators and closed-form oracles.

Nothing here imports the query estimators; the closed forms are written from
the thinned-Poisson algebra directly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Event, ItemSet, Sequence, Vocabulary
from .model import Model, ModelConfig
from .autodiff import ParamStore


@dataclass(frozen=True)
class PoissonStaticSpec:
    rate: float
    rho: tuple

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not all(0.0 < r < 1.0 for r in self.rho):
            raise ValueError("inclusion probabilities must lie in (0, 1)")

    @property
    def K(self) -> int:
        return len(self.rho)


def default_vocab(K: int) -> Vocabulary:
    return Vocabulary(tuple(f"i{k}" for k in range(K)))


def poisson_static_model(spec: PoissonStaticSpec, vocab: Vocabulary | None = None) -> Model:
    """StaticB-Poisson model with intensity exactly ``spec.rate``."""
    vocab = vocab or default_vocab(spec.K)
    rho = np.array(spec.rho)
    params = ParamStore({
        "emb.W": np.eye(spec.K, 1),
        "intensity.u": np.array([np.log(np.expm1(spec.rate))]),
        "set.logits": np.log(rho) - np.log1p(-rho),
    })
    cfg = ModelConfig(backbone="poisson", head="bernoulli", mode="static", E=1, H=1)
    return Model(cfg, vocab, params, window=None)


def _poisson_dataset(spec: PoissonStaticSpec, M: int, horizon: float, seed: int, vocab: Vocabulary) -> Dataset:
    rng = np.random.default_rng(seed)
    rho = np.array(spec.rho)
    seqs = []
    for _ in range(M):
        n = rng.poisson(spec.rate * horizon)
        times = np.sort(rng.uniform(0.0, horizon, size=n))
        masks = rng.random((n, spec.K)) < rho
        seqs.append(Sequence(tuple(Event(float(t), ItemSet.from_mask(m)) for t, m in zip(times, masks)), horizon))
    return Dataset(vocab, tuple(seqs))


def generate_synthetic(source, M: int, horizon: float, seed: int = 0, vocab: Vocabulary | None = None) -> Dataset:
    """``M`` independent sequences on [0, horizon] from a spec or a model."""
    if M < 0 or not horizon > 0:
        raise ValueError("M must be non-negative and horizon positive")
    if isinstance(source, PoissonStaticSpec):
        return _poisson_dataset(source, M, horizon, seed, vocab or default_vocab(source.K))
    from .sampler import PathStreams, sample_paths
    if M == 0:
        return Dataset(source.vocab, ())
    batch = sample_paths(source, None, horizon, M, PathStreams(seed, M, key=(0x5E0,)))
    seqs = tuple(batch.path(j).sequence() for j in range(M))
    return Dataset(source.vocab, seqs)


def _union_prob(rho, S) -> float:
    S = list(S)
    return 1.0 - float(np.prod([1.0 - rho[k] for k in S])) if S else 0.0


def poisson_hitting_closed_form(spec: PoissonStaticSpec, A, t: float) -> float:
    """1 - exp(-rate * P(set meets A) * t)."""
    pA = _union_prob(spec.rho, A)
    return float(-np.expm1(-spec.rate * pA * t))


def poisson_ab_closed_form(spec: PoissonStaticSpec, A, B, t: float) -> tuple:
    """(A first, B first, both together first, neither) within t."""
    A, B = set(A), set(B)
    if A & B:
        raise ValueError("A and B must be disjoint")
    void = lambda S: float(np.prod([1.0 - spec.rho[k] for k in S]))
    p_union = 1.0 - void(A | B)
    if p_union == 0:
        raise ValueError("P(set meets A or B) is zero")
    p_a_only = void(B) - void(A | B)
    p_b_only = void(A) - void(A | B)
    p_both = p_union - p_a_only - p_b_only
    hit = -np.expm1(-spec.rate * p_union * t)
    return (p_a_only / p_union * hit, p_b_only / p_union * hit, p_both / p_union * hit,
            float(np.exp(-spec.rate * p_union * t)))


def brute_force_set_distribution(head, P, h) -> tuple[np.ndarray, np.ndarray]:
    """All 2^K masks (rows) and their probabilities under ``head`` at hidden state ``h``."""
    K = head.K
    if K > 12:
        raise ValueError("enumeration limited to K <= 12")
    masks = np.array(list(itertools.product([False, True], repeat=K)), dtype=bool).reshape(-1, K)
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(masks),) + np.shape(h))
    return masks, np.exp(np.asarray(head.set_log_prob(P, h, masks)))


# --- planted dynamic ground truth ---------------------------------------------------

_SAT = 8.0  # pre-activation that saturates sigmoid/tanh


def planted_dynamic_model(K: int = 8, base_rate: float = 0.4, excitation: float = 2.0,
                          memory_decay: float = 0.3, repeat_boost: float = 3.5, cross_boost: float = 1.0,
                          base_logit: float = -2.5, seed: int = 0) -> Model:
    """Hand-wired DynamicB-NH with interpretable units.

    Units 0..K-1 remember whether item k occurred recently (decay rate
    ``memory_decay``) and raise the inclusion logits of items k and k + 1 by
    ``repeat_boost`` and ``cross_boost``; unit K
    is excited by every nonempty event and raises the total intensity; unit
    K + 1 is constant and sets ``base_rate``.
    """
    rng = np.random.default_rng(seed)
    E, H = K, K + 2
    exc, bias = K, K + 1
    We = np.zeros((E, 7, H))
    Wh = np.zeros((H, 7 * H))
    b = np.zeros((7, H))
    I, F, Z, O, IB, FB, D = range(7)
    b[I] = _SAT
    b[O] = _SAT
    b[IB] = -_SAT
    b[FB] = -_SAT
    b[D] = np.log(np.expm1(memory_decay))
    for k in range(K):
        We[k, Z, k] = 3 * _SAT
    We[:, Z, exc] = _SAT
    b[D, exc] = np.log(np.expm1(1.0))
    b[F, bias] = -_SAT
    b[Z, bias] = _SAT
    b[IB, bias] = _SAT
    b[D, bias] = np.log(np.expm1(1.0))

    h_bias = np.tanh(1.0)
    u = np.zeros(H)
    u[bias] = np.log(np.expm1(base_rate)) / h_bias
    u[exc] = excitation

    V = np.zeros((H, K))
    for k in range(K):
        V[k, k] = repeat_boost
        V[k, (k + 1) % K] = cross_boost
    logits0 = base_logit + 0.5 * rng.standard_normal(K)

    params = ParamStore({
        "emb.W": np.eye(K, E),
        "nh.We": We.reshape(E, 7 * H),
        "nh.Wh": Wh,
        "nh.b": b.reshape(7 * H),
        "nh.h0": np.zeros(H),
        "intensity.u": u,
        "set.V": V,
        "set.b": logits0,
    })
    cfg = ModelConfig(backbone="nh", head="bernoulli", mode="dynamic", E=E, H=H)
    return Model(cfg, default_vocab(K), params, window=1.0)
