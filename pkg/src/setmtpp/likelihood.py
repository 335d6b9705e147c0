"""Sequence log-likelihood split into time and set terms, and evaluation reports.

    L = sum_i log lambda(t_i) - int_0^T lambda(s) ds   +   sum_i log p(x_i | t_i)
        \\_________________ L_time _________________/       \\____ L_set ____/

The integral is estimated with uniform Monte-Carlo points on [0, T].
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, Sequence
from .model import Model


def default_mc_points(n_events: int) -> int:
    return max(10, 5 * n_events)


@dataclass
class Batch:
    times: np.ndarray   # (B, L), padded with the last event time
    masks: np.ndarray   # (B, L, K)
    valid: np.ndarray   # (B, L)
    T: np.ndarray       # (B,)
    n: np.ndarray       # (B,)

    @property
    def size(self) -> int:
        return len(self.T)


def pack(seqs, K: int) -> Batch:
    seqs = list(seqs)
    B = len(seqs)
    L = max([len(s) for s in seqs] + [0])
    times = np.zeros((B, L))
    masks = np.zeros((B, L, K), dtype=bool)
    valid = np.zeros((B, L), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s)
        if n:
            times[b, :n] = s.times
            times[b, n:] = s.times[-1]
            masks[b, :n] = s.masks(K)
            valid[b, :n] = True
    return Batch(times, masks, valid, np.array([s.t_end for s in seqs], dtype=float),
                 np.array([len(s) for s in seqs]))


@dataclass
class MCPoints:
    s: np.ndarray       # (B, P)
    valid: np.ndarray   # (B, P)
    counts: np.ndarray  # (B,)


def draw_mc_points(batch: Batch, rng, mc_points: int | None = None) -> MCPoints:
    counts = np.array([mc_points if mc_points is not None else default_mc_points(int(n)) for n in batch.n])
    if np.any(counts < 1):
        raise ValueError("mc_points must be at least 1")
    P = int(counts.max()) if len(counts) else 0
    s = np.zeros((batch.size, P))
    valid = np.zeros((batch.size, P), dtype=bool)
    for b in range(batch.size):
        s[b, :counts[b]] = rng.uniform(0.0, batch.T[b], size=counts[b])
        valid[b, :counts[b]] = True
    return MCPoints(s, valid, counts)


def batch_loglik(model: Model, P, batch: Batch, mc: MCPoints):
    """Per-sequence (L_time, L_set); Nodes when ``P`` holds graph leaves."""
    bb, head = model.backbone, model.head
    B, L = batch.times.shape
    state = bb.initial_state(P, (B,))
    states, h_ev = [state], []
    if L:
        emb = model.embed(batch.masks, P)
    for i in range(L):
        e_i = ad.getitem(emb, (slice(None), i))
        h_i, state = bb.step(P, state, batch.times[:, i], e_i)
        h_ev.append(h_i)
        states.append(state)

    # integral term: gather the state governing each MC point
    ev_t = np.where(batch.valid, batch.times, np.inf)
    idx = (ev_t[:, None, :] < mc.s[:, :, None]).sum(axis=-1)
    rows = np.broadcast_to(np.arange(B)[:, None], idx.shape)
    gathered = []
    for j in range(len(state)):
        if j == 0:
            gathered.append(np.stack([st.t for st in states], axis=1)[rows, idx])
        else:
            gathered.append(ad.getitem(ad.stack([st[j] for st in states], axis=1), (rows, idx)))
    g_state = type(state)(*gathered)
    lam_mc = model.intensity(bb.evolve(P, g_state, mc.s), P)
    weight = mc.valid * (batch.T / np.maximum(mc.counts, 1))[:, None]
    integral = ad.sum_(ad.mul(lam_mc, weight), axis=-1)

    if L == 0:
        return ad.neg(integral), np.zeros(B)
    H_ev = ad.stack(h_ev, axis=1)
    log_lam = ad.sum_(ad.mul(ad.log(model.intensity(H_ev, P)), batch.valid.astype(float)), axis=-1)
    set_lp = head.set_log_prob(P, H_ev, batch.masks)
    ll_set = ad.sum_(ad.mul(set_lp, batch.valid.astype(float)), axis=-1)
    return ad.sub(log_lam, integral), ll_set


def _single(model, seq: Sequence, mc_points, rng):
    batch = pack([seq], model.K)
    rng = rng if rng is not None else np.random.default_rng(0)
    mc = draw_mc_points(batch, rng, mc_points)
    lt, ls = batch_loglik(model, model.P(), batch, mc)
    return float(lt[0]), float(ls[0])


def loglik_time(model: Model, seq: Sequence, mc_points: int | None = None, rng=None) -> float:
    return _single(model, seq, mc_points, rng)[0]


def loglik_set(model: Model, seq: Sequence) -> float:
    batch = pack([seq], model.K)
    mc = MCPoints(np.zeros((1, 1)), np.zeros((1, 1), dtype=bool), np.ones(1, dtype=int))
    return float(batch_loglik(model, model.P(), batch, mc)[1][0])


def dataset_loglik(model: Model, data: Dataset, mc_points: int | None = None, seed: int = 0,
                   batch_size: int = 256):
    """Per-sequence arrays (L_time, L_set) over a whole dataset."""
    rng = np.random.default_rng(seed)
    lt, ls = [], []
    for start in range(0, len(data), batch_size):
        batch = pack(data.sequences[start:start + batch_size], model.K)
        mc = draw_mc_points(batch, rng, mc_points)
        a, b = batch_loglik(model, model.P(), batch, mc)
        lt.append(np.asarray(a))
        ls.append(np.asarray(b))
    if not lt:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(lt), np.concatenate(ls)


def nll(model: Model, data: Dataset, mc_points: int | None = None, seed: int = 0):
    """(total negative log-likelihood, per-sequence mean)."""
    lt, ls = dataset_loglik(model, data, mc_points, seed)
    total = -float((lt + ls).sum())
    return total, total / max(len(data), 1)


@dataclass
class EvalReport:
    model: str
    neg_L: np.ndarray
    neg_L_time: np.ndarray
    neg_L_set: np.ndarray
    header: list = field(default_factory=list)

    @property
    def means(self) -> dict:
        return {"neg_L": float(self.neg_L.mean()), "neg_L_time": float(self.neg_L_time.mean()),
                "neg_L_set": float(self.neg_L_set.mean())}

    def standard_errors(self) -> dict:
        n = max(len(self.neg_L), 2)
        return {k: float(np.std(getattr(self, k), ddof=1) / np.sqrt(n)) if len(self.neg_L) > 1 else 0.0
                for k in ("neg_L", "neg_L_time", "neg_L_set")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seq_id", "neg_L", "neg_L_time", "neg_L_set"])
        for i in range(len(self.neg_L)):
            w.writerow([i, repr(float(self.neg_L[i])), repr(float(self.neg_L_time[i])),
                        repr(float(self.neg_L_set[i]))])
        m = self.means
        w.writerow(["mean", repr(m["neg_L"]), repr(m["neg_L_time"]), repr(m["neg_L_set"])])
        return buf.getvalue()


def evaluate(model: Model, data: Dataset, mc_points: int | None = None, seed: int = 0) -> EvalReport:
    lt, ls = dataset_loglik(model, data, mc_points, seed)
    neg_t, neg_s = -lt, -ls
    return EvalReport(model.label, neg_t + neg_s, neg_t, neg_s)
