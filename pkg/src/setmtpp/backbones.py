"""Continuous-time recurrent state h(t), set embeddings and the total intensity.

Three backbones share one interface:

* ``NeuralHawkes`` -- continuous-time LSTM whose cells decay exponentially from
  ``c`` toward a target ``cbar`` between events.
* ``RMTPP`` -- hidden vector frozen between events; h(t) appends the elapsed
  time so the intensity varies monotonically inside each interval.
* ``Poisson`` -- constant h(t) = [1], giving a homogeneous Poisson process.

States are NamedTuples of arrays with a shared leading batch shape; field ``t``
is the anchor time (time of the last event absorbed into the state).
"""
from __future__ import annotations

from typing import NamedTuple, Union

import numpy as np

from . import autodiff as ad


class NHState(NamedTuple):
    t: np.ndarray
    c: object
    cbar: object
    delta: object
    o: object


class RMTPPState(NamedTuple):
    t: np.ndarray
    h: object


class PoissonState(NamedTuple):
    t: np.ndarray


DecayState = Union[NHState, RMTPPState, PoissonState]


def state_rows(state, rows):
    return type(state)(*(ad.getitem(f, rows) for f in state))


def state_assign(state, rows, new) -> None:
    """In-place write of ``new`` into ``state`` at ``rows`` (untracked states only)."""
    for f_old, f_new in zip(state, new):
        f_old[rows] = f_new


def state_broadcast(state, n: int):
    return type(state)(*(np.repeat(np.asarray(ad.value(f))[None], n, axis=0).copy() for f in state))


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def embed_set(masks, W):
    """Mean of the item embeddings of each set; the zero vector for the empty set.

    ``masks`` is (..., K) boolean/0-1, ``W`` the (K, E) embedding table.
    """
    m = np.asarray(masks, dtype=float)
    counts = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    return ad.matmul(m / counts, W)


class NeuralHawkes:
    kind = "nh"
    n_gates = 7  # i, f, z, o, ibar, fbar, delta

    def __init__(self, E: int, H: int):
        self.E, self.H = E, H
        self.out_dim = H

    def init_params(self, rng) -> dict:
        E, H = self.E, self.H
        return {
            "nh.We": _glorot(rng, E, H, (E, 7 * H)),
            "nh.Wh": _glorot(rng, H, H, (H, 7 * H)),
            "nh.b": np.zeros(7 * H),
            "nh.h0": rng.normal(0.0, 0.1, size=H),
        }

    def _cell(self, P, e, h, c_t, cbar_prev, t):
        H = self.H
        pre = ad.add(ad.add(ad.matmul(e, P["nh.We"]), ad.matmul(h, P["nh.Wh"])), P["nh.b"])
        g = [ad.getitem(pre, (Ellipsis, slice(j * H, (j + 1) * H))) for j in range(7)]
        i, f, z, o = ad.sigmoid(g[0]), ad.sigmoid(g[1]), ad.tanh(g[2]), ad.sigmoid(g[3])
        ib, fb, delta = ad.sigmoid(g[4]), ad.sigmoid(g[5]), ad.softplus(g[6])
        c_new = ad.add(ad.mul(i, z), ad.mul(f, c_t)) if c_t is not None else ad.mul(i, z)
        cbar_new = ad.add(ad.mul(ib, z), ad.mul(fb, cbar_prev)) if cbar_prev is not None else ad.mul(ib, z)
        return NHState(np.asarray(t, dtype=float), c_new, cbar_new, delta, o)

    def initial_state(self, P, batch=()):
        h0 = P["nh.h0"]
        if batch:
            h0 = ad.add(h0, np.zeros(tuple(batch) + (self.H,)))
        e0 = np.zeros(tuple(batch) + (self.E,))
        return self._cell(P, e0, h0, None, None, np.zeros(batch))

    def decay(self, state: NHState, t):
        dt = np.asarray(t, dtype=float) - state.t
        gap = ad.sub(state.c, state.cbar)
        c_t = ad.add(state.cbar, ad.mul(gap, ad.exp(ad.mul(ad.neg(state.delta), dt[..., None]))))
        return c_t, ad.mul(state.o, ad.tanh(c_t))

    def evolve(self, P, state: NHState, t):
        return self.decay(state, t)[1]

    def update(self, P, state: NHState, t, e):
        return self.step(P, state, t, e)[1]

    def step(self, P, state: NHState, t, e):
        """(h(t-), state after absorbing the event at t)."""
        c_t, h_t = self.decay(state, t)
        return h_t, self._cell(P, e, h_t, c_t, state.cbar, t)

    def sup_linear(self, P, state: NHState, start, end, u):
        """Upper bound of u.h(t) over t in [start, end] (end may be inf)."""
        u = ad.value(u)
        c = ad.value(state.c)
        cbar = ad.value(state.cbar)
        delta = ad.value(state.delta)
        o = ad.value(state.o)
        c_s = cbar + (c - cbar) * np.exp(-delta * (np.asarray(start) - state.t)[..., None])
        end = np.asarray(end, dtype=float)
        fin = np.isfinite(end)
        dt_e = np.where(fin, end - state.t, 0.0)[..., None]
        c_e = np.where(fin[..., None], cbar + (c - cbar) * np.exp(-delta * dt_e), cbar)
        return np.maximum(u * o * np.tanh(c_s), u * o * np.tanh(c_e)).sum(axis=-1)


class RMTPP:
    kind = "rmtpp"

    def __init__(self, E: int, H: int):
        self.E, self.H = E, H
        self.out_dim = H + 1

    def init_params(self, rng) -> dict:
        E, H = self.E, self.H
        return {
            "rmtpp.We": _glorot(rng, E, H, (E, H)),
            "rmtpp.Wh": _glorot(rng, H, H, (H, H)),
            "rmtpp.wt": rng.normal(0.0, 0.1, size=H),
            "rmtpp.b": np.zeros(H),
            "rmtpp.h0": rng.normal(0.0, 0.1, size=H),
        }

    def initial_state(self, P, batch=()):
        h0 = P["rmtpp.h0"]
        if batch:
            h0 = ad.add(h0, np.zeros(tuple(batch) + (self.H,)))
        return RMTPPState(np.zeros(batch), h0)

    def evolve(self, P, state: RMTPPState, t):
        dt = np.asarray(t, dtype=float) - state.t
        shape = ad.value(state.h).shape[:-1]
        return ad.concat([state.h, np.broadcast_to(dt[..., None], shape + (1,))], axis=-1)

    def update(self, P, state: RMTPPState, t, e):
        dt = np.log1p(np.asarray(t, dtype=float) - state.t)[..., None]
        pre = ad.add(ad.add(ad.matmul(e, P["rmtpp.We"]), ad.matmul(state.h, P["rmtpp.Wh"])),
                     ad.add(ad.mul(P["rmtpp.wt"], dt), P["rmtpp.b"]))
        return RMTPPState(np.asarray(t, dtype=float), ad.tanh(pre))

    def step(self, P, state, t, e):
        return self.evolve(P, state, t), self.update(P, state, t, e)

    def sup_linear(self, P, state: RMTPPState, start, end, u):
        u = ad.value(u)
        base = ad.value(state.h) @ u[:-1]
        slope = u[-1]
        s = np.asarray(start, dtype=float) - state.t
        e = np.asarray(end, dtype=float) - state.t
        with np.errstate(invalid="ignore"):
            at_end = np.where(np.isfinite(e), base + slope * e, np.inf if slope > 0 else base)
        return np.maximum(base + slope * s, at_end)


class Poisson:
    kind = "poisson"
    out_dim = 1

    def __init__(self, E: int = 0, H: int = 0):
        self.E, self.H = E, H

    def init_params(self, rng) -> dict:
        return {}

    def initial_state(self, P, batch=()):
        return PoissonState(np.zeros(batch))

    def evolve(self, P, state: PoissonState, t):
        shape = np.broadcast_shapes(np.shape(t), state.t.shape)
        return np.ones(shape + (1,))

    def update(self, P, state: PoissonState, t, e):
        return PoissonState(np.asarray(t, dtype=float))

    def step(self, P, state, t, e):
        return self.evolve(P, state, t), self.update(P, state, t, e)

    def sup_linear(self, P, state, start, end, u):
        return np.broadcast_to(ad.value(u)[0], np.shape(start)).astype(float)


BACKBONES = {"nh": NeuralHawkes, "rmtpp": RMTPP, "poisson": Poisson}


def total_intensity(h, u):
    """lambda(t) = softplus(u . h(t)), i.e. the scaled softplus with s = 1."""
    return ad.softplus(ad.sum_(ad.mul(h, u), axis=-1))


def _anchor_check(state, t):
    if np.any(np.asarray(t) < state.t):
        raise ValueError("time precedes the state's anchor")


def evolve_state(backbone, P, state, t):
    """h(t) for t in the interval following the state's anchor."""
    _anchor_check(state, t)
    return backbone.evolve(P, state, t)


def update_state(backbone, P, state, t, e):
    """Absorb an event at time ``t`` with embedded set ``e``."""
    if np.any(np.asarray(t) <= state.t):
        raise ValueError("event time must be strictly after the state's anchor")
    return backbone.update(P, state, t, e)


def intensity_upper_bound(backbone, P, state, start, end, u):
    """B >= sup of lambda(t) over [start, end]."""
    return np.logaddexp(0.0, backbone.sup_linear(P, state, start, end, u))
