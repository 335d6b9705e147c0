"""Hitting-time and A-before-B probability estimators.

Naive estimators average outcome indicators over paths from the model. The
importance estimators sample paths from the proposal process that never emits
the query items, and integrate the model's hazard of hitting them along each
path:

    hitting:    1 - E_q[ exp(-int_0^t lambda(s) P(A | s) ds) ]
    A before B: E_q[ int_0^t exp(-Lambda_AB(s)) lambda(s) P(R | s) ds ]
                where Lambda_AB(s) = int_0^s lambda P(A or B)

Integrals use the composite trapezoid rule on a shared uniform grid.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .backbones import state_rows
from .data import Dataset, ItemSet, Sequence
from .model import Model
from .sampler import PathBatch, PathStreams, sample_paths

PROB_CLAMP = 1e-6
SCENARIOS = ("A_first", "B_first", "both_first", "neither")
_CHUNK = 200_000

_TAG_NAIVE = 1
_TAG_IS = 2


@dataclass(frozen=True)
class QuerySpec:
    history: Sequence
    A: ItemSet
    t: float
    B: ItemSet | None = None
    n_samples: int = 1000
    n_integration: int = 2000

    def __post_init__(self):
        if not self.A:
            raise ValueError("A must be non-empty")
        if self.B is not None and not self.A.isdisjoint(self.B):
            raise ValueError("A and B must be disjoint")
        if not self.t > 0:
            raise ValueError("t must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_integration < 2:
            raise ValueError("n_integration must be at least 2")

    @property
    def kind(self) -> str:
        return "hitting" if self.B is None else "a_before_b"


@dataclass
class QueryEstimate:
    """``samples`` holds per-path contributions: shape (n,) for hitting, (n, 4)
    for A-before-B. ``estimate``/``variance`` refer to the headline quantity
    (P(hit A) or scenario A_first); ``scenarios`` holds all four means."""
    method: str
    samples: np.ndarray
    seconds: float
    scenarios: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def primary(self) -> np.ndarray:
        return self.samples if self.samples.ndim == 1 else self.samples[:, 0]

    @property
    def estimate(self) -> float:
        return float(self.primary.mean())

    @property
    def variance(self) -> float:
        """Per-sample variance (ddof 1); 0 for a single sample or identical samples."""
        if self.n < 2:
            return 0.0
        x = self.primary - self.primary[0]  # exact zero for identical samples
        return float(x.var(ddof=1))

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n)

    @property
    def secs_per_sample(self) -> float:
        return self.seconds / self.n


# --- grid integrands ----------------------------------------------------------------

def _grid(t0, t, n):
    return t0 + np.linspace(0.0, t, n)


def _grid_values(model: Model, batch: PathBatch, grid: np.ndarray, sets):
    """lambda and void probabilities of ``sets`` on ``grid`` for every path: arrays (n, G)."""
    P = model.P()
    n, G = batch.n, len(grid)
    s = np.tile(grid, n)
    rows = batch.governing_rows(grid).ravel()
    lam = np.empty(n * G)
    voids = [np.empty(n * G) for _ in sets]
    for a in range(0, n * G, _CHUNK):
        b = min(a + _CHUNK, n * G)
        st = state_rows(batch.snaps, rows[a:b])
        h = model.hidden(st, s[a:b], P)
        lam[a:b] = model.intensity(h, P)
        for out, v in zip(voids, model.head.void_probs(P, h, sets)):
            out[a:b] = v
    return lam.reshape(n, G), [v.reshape(n, G) for v in voids]


def _trapezoid(f, dx):
    return dx * (f[..., 1:] + f[..., :-1]).sum(axis=-1) / 2


def _cum_trapezoid(f, dx):
    out = np.zeros_like(f)
    out[..., 1:] = np.cumsum(dx * (f[..., 1:] + f[..., :-1]) / 2, axis=-1)
    return out


def _streams(seed, n, query_key, tag):
    return PathStreams(seed, n, key=tuple(query_key) + (tag,))


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    return int(rng)


# --- estimators -------------------------------------------------------------------------

def hitting_naive(model: Model, q: QuerySpec, rng, query_key=()) -> QueryEstimate:
    start = time.perf_counter()
    batch = sample_paths(model, q.history, q.t, q.n_samples, _streams(_seed_from(rng), q.n_samples, query_key, _TAG_NAIVE),
                         stop_on=q.A.mask())
    return QueryEstimate("naive", batch.stopped.astype(float), time.perf_counter() - start)


def hitting_importance(model: Model, q: QuerySpec, rng, query_key=()) -> QueryEstimate:
    start = time.perf_counter()
    A = q.A.mask()
    batch = sample_paths(model, q.history, q.t, q.n_samples, _streams(_seed_from(rng), q.n_samples, query_key, _TAG_IS),
                         forbidden=A)
    grid = _grid(batch.t_start, q.t, q.n_integration)
    lam, (void_a,) = _grid_values(model, batch, grid, [A])
    integral = _trapezoid(lam * (1.0 - void_a), grid[1] - grid[0])
    return QueryEstimate("importance", -np.expm1(-integral), time.perf_counter() - start)


def _ab_check(q: QuerySpec):
    if q.B is None:
        raise ValueError("A-before-B query needs B")


def ab_naive(model: Model, q: QuerySpec, rng, query_key=()) -> QueryEstimate:
    _ab_check(q)
    start = time.perf_counter()
    A, B = q.A.mask(), q.B.mask()
    batch = sample_paths(model, q.history, q.t, q.n_samples, _streams(_seed_from(rng), q.n_samples, query_key, _TAG_NAIVE),
                         stop_on=A | B)
    out = np.zeros((q.n_samples, 4))
    out[:, 3] = 1.0
    for j in np.flatnonzero(batch.stopped):
        x = batch.path_masks[j][-1]
        ha, hb = (x & A).any(), (x & B).any()
        out[j] = 0.0
        out[j, 0 if ha and not hb else 1 if hb and not ha else 2] = 1.0
    return QueryEstimate("naive", out, time.perf_counter() - start, out.mean(axis=0))


def ab_importance(model: Model, q: QuerySpec, rng, query_key=()) -> QueryEstimate:
    _ab_check(q)
    start = time.perf_counter()
    A, B = q.A.mask(), q.B.mask()
    batch = sample_paths(model, q.history, q.t, q.n_samples, _streams(_seed_from(rng), q.n_samples, query_key, _TAG_IS),
                         forbidden=A | B)
    grid = _grid(batch.t_start, q.t, q.n_integration)
    dx = grid[1] - grid[0]
    lam, (vA, vB, vAB) = _grid_values(model, batch, grid, [A, B, A | B])
    survive = np.exp(-_cum_trapezoid(lam * (1.0 - vAB), dx))
    rates = (vB - vAB, vA - vAB, 1.0 - vA - vB + vAB)
    out = np.empty((q.n_samples, 4))
    for r, p_r in enumerate(rates):
        out[:, r] = _trapezoid(survive * lam * p_r, dx)
    out[:, 3] = 1.0 - out[:, :3].sum(axis=1)
    return QueryEstimate("importance", out, time.perf_counter() - start, out.mean(axis=0))


def estimate_query(model: Model, q: QuerySpec, rng, method: str = "importance", query_key=()) -> QueryEstimate:
    fns = {("hitting", "naive"): hitting_naive, ("hitting", "importance"): hitting_importance,
           ("a_before_b", "naive"): ab_naive, ("a_before_b", "importance"): ab_importance}
    return fns[(q.kind, method)](model, q, rng, query_key)


def hitting_conjunction(model: Model, history: Sequence, A: ItemSet, B: ItemSet, t: float, rng,
                        n_samples: int = 1000, n_integration: int = 2000, method: str = "importance") -> float:
    """P(both A and B are hit within t) = P(hit A) + P(hit B) - P(hit A or B)."""
    seed = _seed_from(rng)
    est = lambda S, i: estimate_query(model, QuerySpec(history, S, t, None, n_samples, n_integration), seed,
                                      method, (i,)).estimate
    return est(A, 0) + est(B, 1) - est(A | B, 2)


@dataclass(frozen=True)
class Efficiency:
    ratio: float
    infinite: bool


def relative_efficiency(naive: QueryEstimate, importance: QueryEstimate) -> Efficiency:
    """var(naive) / var(importance), flagged infinite when the importance variance is 0."""
    vn, vi = naive.variance, importance.variance
    if vi == 0.0:
        return Efficiency(1.0, False) if vn == 0.0 else Efficiency(math.inf, True)
    return Efficiency(vn / vi, False)


def query_loglikelihood(estimate, outcome) -> float:
    """Binary: y log p + (1 - y) log(1 - p). Four-way: log of the realized scenario's probability."""
    if np.ndim(estimate) == 0:
        p = min(max(float(estimate), PROB_CLAMP), 1.0 - PROB_CLAMP)
        return math.log(p) if bool(outcome) else math.log1p(-p)
    p = np.clip(np.asarray(estimate, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.log(p[int(outcome)]))


# --- battery --------------------------------------------------------------------------------

@dataclass(frozen=True)
class BatteryConfig:
    kind: str = "hitting"
    n_history: int = 5
    t_multiplier: float = 10.0
    t_cap: float = 10.0
    n_samples: int = 1000
    n_integration: int = 2000
    max_queries: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("hitting", "a_before_b"):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.n_history < 1 or self.n_samples < 1 or self.n_integration < 2:
            raise ValueError("n_history, n_samples >= 1 and n_integration >= 2 required")


@dataclass
class BuiltQuery:
    query_id: int
    spec: QuerySpec
    outcome: int


def _first_hit(events, A, B):
    for ev in events:
        m = ev.x.mask()
        ha = (m & A).any()
        hb = B is not None and (m & B).any()
        if ha or hb:
            return ha, hb
    return False, False


def build_queries(data: Dataset, cfg: BatteryConfig) -> tuple[list[BuiltQuery], int]:
    """One query per sequence with more than ``n_history`` events; returns (queries, n_skipped).

    Query items depend only on the seed and the sequence index.
    """
    K = data.vocab.K
    out, skipped = [], 0
    for i, seq in enumerate(data.sequences):
        if cfg.max_queries is not None and len(out) >= cfg.max_queries:
            break
        if len(seq) <= cfg.n_history:
            skipped += 1
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(i,)))
        a = int(rng.integers(K))
        b = int((a + 1 + rng.integers(K - 1)) % K) if K > 1 else None
        A = ItemSet.from_ids([a], K)
        B = ItemSet.from_ids([b], K) if cfg.kind == "a_before_b" and b is not None else None
        if cfg.kind == "a_before_b" and B is None:
            skipped += 1
            continue
        hist = seq.prefix(cfg.n_history)
        t_last = hist.t_end
        gap = seq.events[cfg.n_history].t - t_last
        t = min(gap * cfg.t_multiplier, cfg.t_cap, seq.t_end - t_last)
        window = seq.window(t_last, t_last + t)
        ha, hb = _first_hit(window, A.mask(), None if B is None else B.mask())
        if B is None:
            outcome = int(ha)
        else:
            outcome = 0 if ha and not hb else 1 if hb and not ha else 2 if ha else 3
        spec = QuerySpec(hist, A, t, B, cfg.n_samples, cfg.n_integration)
        out.append(BuiltQuery(i, spec, outcome))
    return out, skipped


BATTERY_COLUMNS = ["query_id", "kind", "A", "B", "t", "p_naive", "var_naive", "p_is", "var_is", "rel_eff",
                   "secs_per_sample_naive", "secs_per_sample_is", "outcome", "qll_naive", "qll_is"]


@dataclass
class BatteryRow:
    query_id: int
    kind: str
    A: str
    B: str
    t: float
    naive: QueryEstimate
    importance: QueryEstimate
    efficiency: Efficiency
    outcome: int

    def _probs(self, est):
        return est.estimate if self.kind == "hitting" else est.scenarios

    @property
    def qll_naive(self) -> float:
        return query_loglikelihood(self._probs(self.naive), self.outcome)

    @property
    def qll_is(self) -> float:
        return query_loglikelihood(self._probs(self.importance), self.outcome)

    def as_list(self) -> list:
        eff = "inf" if self.efficiency.infinite else repr(self.efficiency.ratio)
        return [self.query_id, self.kind, self.A, self.B, repr(self.t), repr(self.naive.estimate),
                repr(self.naive.variance), repr(self.importance.estimate), repr(self.importance.variance), eff,
                repr(self.naive.secs_per_sample), repr(self.importance.secs_per_sample), self.outcome,
                repr(self.qll_naive), repr(self.qll_is)]


@dataclass
class BatteryReport:
    model: str
    rows: list = field(default_factory=list)
    skipped: int = 0
    seconds: float = 0.0

    def column(self, name: str) -> np.ndarray:
        getters = {
            "p_naive": lambda r: r.naive.estimate, "p_is": lambda r: r.importance.estimate,
            "var_naive": lambda r: r.naive.variance, "var_is": lambda r: r.importance.variance,
            "rel_eff": lambda r: r.efficiency.ratio, "qll_naive": lambda r: r.qll_naive,
            "qll_is": lambda r: r.qll_is, "t": lambda r: r.t, "outcome": lambda r: r.outcome,
        }
        return np.array([getters[name](r) for r in self.rows], dtype=float)

    def summary(self) -> dict:
        eff = self.column("rel_eff") if self.rows else np.zeros(0)
        qll = self.column("qll_is") if self.rows else np.zeros(0)
        return {
            "model": self.model,
            "n_queries": len(self.rows),
            "skipped": self.skipped,
            "median_rel_eff": float(np.median(eff)) if eff.size else float("nan"),
            "mean_qll_is": float(qll.mean()) if qll.size else float("nan"),
            "se_qll_is": float(qll.std(ddof=1) / math.sqrt(qll.size)) if qll.size > 1 else float("nan"),
            "seconds": self.seconds,
        }

    def to_csv(self, header: list | None = None) -> str:
        buf = io.StringIO()
        for line in header or []:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BATTERY_COLUMNS)
        for r in self.rows:
            w.writerow(r.as_list())
        return buf.getvalue()


def _labels(vocab, s):
    return "" if s is None else ";".join(vocab.labels[k] for k in s.ids())


def run_query_battery(model: Model, data: Dataset, cfg: BatteryConfig, progress=None) -> BatteryReport:
    """Naive and importance estimates for one query per eligible sequence.

    Per-path streams are keyed by (seed, query id, estimator, path index).
    """
    start = time.perf_counter()
    queries, skipped = build_queries(data, cfg)
    report = BatteryReport(model.label, skipped=skipped)
    for bq in queries:
        key = (bq.query_id,)
        naive = estimate_query(model, bq.spec, cfg.seed, "naive", key)
        imp = estimate_query(model, bq.spec, cfg.seed, "importance", key)
        q = bq.spec
        report.rows.append(BatteryRow(bq.query_id, q.kind, _labels(data.vocab, q.A), _labels(data.vocab, q.B),
                                      q.t, naive, imp, relative_efficiency(naive, imp), bq.outcome))
        if progress is not None:
            progress(len(report.rows), len(queries))
    report.seconds = time.perf_counter() - start
    return report
