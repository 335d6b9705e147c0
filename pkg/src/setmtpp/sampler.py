"""Thinning samplers for the model and for its restricted proposal process.

Many paths are advanced in lockstep so that state evolution, bounds and set
draws are vectorized across paths; every path still owns its RNG stream, which
makes each path's draws independent of how paths are grouped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .backbones import state_assign, state_broadcast, state_rows
from .data import Event, ItemSet, Sequence
from .heads import BernoulliHead
from .model import Model

BOUND_RTOL = 1e-9
_BUF = 256


class BoundViolation(AssertionError):
    pass


class PathStreams:
    """One buffered ``numpy`` generator per path.

    Consecutive ``random`` calls on a Generator produce the same values as a
    single call of the combined length, so buffering is invisible.
    """

    def __init__(self, seed: int, n: int, key: tuple = ()):
        self.gens = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key) + (j,))))
                     for j in range(n)]
        self.buf = np.empty((n, _BUF))
        self.pos = np.full(n, _BUF)

    def draw(self, rows, k: int = 1) -> np.ndarray:
        """(len(rows), k) uniforms on [0, 1)."""
        rows = np.asarray(rows, dtype=int)
        out = np.empty((len(rows), k))
        if k > _BUF:
            for r, j in enumerate(rows):
                out[r] = self.one(j, k)
            return out
        need = rows[self.pos[rows] + k > _BUF]
        for j in need:
            rest = self.buf[j, self.pos[j]:].copy()
            self.buf[j, :len(rest)] = rest
            self.buf[j, len(rest):] = self.gens[j].random(_BUF - len(rest))
            self.pos[j] = 0
        cols = self.pos[rows][:, None] + np.arange(k)
        out[:] = self.buf[rows[:, None], cols]
        self.pos[rows] += k
        return out

    def one(self, j: int, k: int) -> np.ndarray:
        if k <= _BUF:
            return self.draw([j], k)[0]
        head = self.buf[j, self.pos[j]:].copy()
        self.pos[j] = _BUF
        return np.concatenate([head, self.gens[j].random(k - len(head))])


@dataclass(frozen=True)
class ProposalSpec:
    forbidden: ItemSet

    def __post_init__(self):
        if not isinstance(self.forbidden, ItemSet):
            raise TypeError("forbidden must be an ItemSet")


@dataclass
class SampledPath:
    """Events drawn on (t_start, t_end] after conditioning on a history.

    ``states`` stacks the backbone state in force before the first sampled
    event (row 0) and after each sampled event; ``intensities`` holds the total
    intensity just before each event.
    """
    t_start: float
    t_end: float
    events: list
    states: object
    intensities: np.ndarray
    stopped_at: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=float)

    def sequence(self, history: Sequence | None = None) -> Sequence:
        prior = history.events if history is not None else ()
        return Sequence(tuple(prior) + tuple(self.events), self.t_end)


@dataclass
class PathBatch:
    """Raw lockstep output. ``snap_*`` is a flat table of states: row 0 is the
    shared starting state, row ``r > 0`` the state after an accepted event."""
    t_start: float
    t_end: float
    n: int
    ev_path: np.ndarray
    ev_time: np.ndarray
    ev_mask: np.ndarray
    ev_lambda: np.ndarray
    snaps: object
    stopped: np.ndarray
    n_proposals: int = 0
    path_rows: list = field(default_factory=list)

    def finalize(self):
        order = np.lexsort((self.ev_time, self.ev_path))
        self.ev_path, self.ev_time = self.ev_path[order], self.ev_time[order]
        self.ev_mask, self.ev_lambda = self.ev_mask[order], self.ev_lambda[order]
        snap_rows = order + 1
        bounds = np.searchsorted(self.ev_path, np.arange(self.n + 1))
        self.path_rows = [np.concatenate([[0], snap_rows[bounds[j]:bounds[j + 1]]]) for j in range(self.n)]
        self.path_times = [self.ev_time[bounds[j]:bounds[j + 1]] for j in range(self.n)]
        self.path_masks = [self.ev_mask[bounds[j]:bounds[j + 1]] for j in range(self.n)]
        self.path_lambda = [self.ev_lambda[bounds[j]:bounds[j + 1]] for j in range(self.n)]
        return self

    def path(self, j: int) -> SampledPath:
        evs = [Event(float(t), ItemSet.from_mask(m)) for t, m in zip(self.path_times[j], self.path_masks[j])]
        states = state_rows(self.snaps, self.path_rows[j])
        stop = float(self.path_times[j][-1]) if self.stopped[j] else None
        return SampledPath(self.t_start, self.t_end, evs, states, self.path_lambda[j], stop)

    def governing_rows(self, grid: np.ndarray) -> np.ndarray:
        """(n, len(grid)) flat snapshot rows in force at each grid time; an event
        exactly at a grid time is not yet absorbed."""
        out = np.empty((self.n, len(grid)), dtype=int)
        for j in range(self.n):
            out[j] = self.path_rows[j][np.searchsorted(self.path_times[j], grid, side="left")]
        return out


def _forbidden_mask(spec, K):
    if spec is None:
        return None
    m = spec.forbidden.mask() if isinstance(spec, ProposalSpec) else np.asarray(spec, dtype=bool)
    return m if m.any() else None


def sample_paths(model: Model, history: Sequence | None, horizon: float, n: int, streams: PathStreams,
                 forbidden=None, stop_on=None, t_start: float | None = None) -> PathBatch:
    """Thinning for ``n`` paths after ``history`` over (t0, t0 + horizon].

    ``forbidden``: items whose sets are excluded; the process then runs at
    intensity lambda * P(no forbidden item). ``stop_on``: a path stops at its
    first event hitting these items.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    P = model.P()
    K = model.K
    head, bb = model.head, model.backbone
    forb = _forbidden_mask(forbidden, K)
    stop = None if stop_on is None else _forbidden_mask(stop_on, K)
    history = history if history is not None else Sequence((), 0.0)
    t0 = float(history.t_end if t_start is None else t_start)
    t_end = t0 + float(horizon)
    s0 = model.condition(history, P)
    if history.events and t0 < history.events[-1].t:
        raise ValueError("sampling must start after the last history event")
    state = state_broadcast(s0, n)
    window = model.window if model.window and model.window > 0 else horizon
    cur = np.full(n, t0)
    active = np.ones(n, dtype=bool)
    stopped = np.zeros(n, dtype=bool)
    snaps = [state_broadcast(s0, 1)]
    ev_path, ev_time, ev_mask, ev_lam = [], [], [], []
    n_prop = 0
    bernoulli = isinstance(head, BernoulliHead)

    while active.any():
        rows = np.flatnonzero(active)
        st = state_rows(state, rows)
        wend = np.minimum(cur[rows] + window, t_end)
        B = model.intensity_bound(st, cur[rows], wend, P)
        u = streams.draw(rows, 1)[:, 0]
        with np.errstate(divide="ignore"):
            cand = cur[rows] - np.log1p(-u) / B
        over = ~(cand <= wend)
        cur[rows[over]] = wend[over]
        active[rows[over & (wend >= t_end)]] = False
        inside = ~over
        if not inside.any():
            continue
        r_in = rows[inside]
        st_in = state_rows(st, np.flatnonzero(inside))
        h = model.hidden(st_in, cand[inside], P)
        lam = model.intensity(h, P)
        b_in = B[inside]
        n_prop += len(r_in)
        if np.any(lam > b_in * (1 + BOUND_RTOL) + 1e-300):
            raise BoundViolation("thinning bound below the intensity")
        mu = lam if forb is None else lam * head.void_prob(P, h, forb)
        cur[r_in] = cand[inside]
        acc = streams.draw(r_in, 1)[:, 0] * b_in < mu
        if not acc.any():
            continue
        r_acc = r_in[acc]
        h_acc = h[acc]
        if bernoulli:
            x = head.sample(P, h_acc, streams.draw(r_acc, K), forb)
        else:
            x = head.sample(P, h_acc, lambda r, k: streams.one(int(r_acc[r]), k), forb)
        t_acc = cur[r_acc]
        new = bb.update(P, state_rows(state, r_acc), t_acc, model.embed(x, P))
        state_assign(state, r_acc, new)
        snaps.append(type(new)(*(np.asarray(f) for f in new)))
        ev_path.append(r_acc)
        ev_time.append(t_acc)
        ev_mask.append(x)
        ev_lam.append(lam[acc])
        if stop is not None:
            hit = (x & stop).any(axis=-1)
            active[r_acc[hit]] = False
            stopped[r_acc[hit]] = True

    cat = lambda xs, shape, dt: np.concatenate(xs) if xs else np.zeros(shape, dtype=dt)
    snap_table = type(s0)(*(np.concatenate([np.asarray(s[i]) for s in snaps]) for i in range(len(s0))))
    return PathBatch(t0, t_end, n, cat(ev_path, 0, int), cat(ev_time, 0, float),
                     cat(ev_mask, (0, K), bool), cat(ev_lam, 0, float), snap_table, stopped, n_prop).finalize()


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    return int(rng)


def sample_sequence(model: Model, history: Sequence | None, horizon: float, rng) -> SampledPath:
    """One exact draw from the model after ``history``; ``rng`` is a seed or a Generator."""
    return sample_paths(model, history, horizon, 1, PathStreams(_seed_from(rng), 1)).path(0)


def sample_proposal(model: Model, spec: ProposalSpec, history: Sequence | None, horizon: float,
                    rng) -> SampledPath:
    """One draw from the proposal process that never emits a forbidden item."""
    return sample_paths(model, history, horizon, 1, PathStreams(_seed_from(rng), 1), forbidden=spec).path(0)
