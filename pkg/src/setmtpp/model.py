"""A set-valued MTPP: backbone + total-intensity head + set head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .backbones import BACKBONES, embed_set, intensity_upper_bound, total_intensity
from .data import Dataset, Sequence, Vocabulary
from .heads import HEADS

MODEL_FORMAT = "setmtpp-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "nh"
    head: str = "bernoulli"
    mode: str = "dynamic"
    E: int = 16
    H: int = 64
    n_layers: int = 1
    dpp_rank: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.mode not in ("static", "dynamic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.E <= 0 or self.H <= 0 or self.n_layers not in (1, 2) or self.dpp_rank < 0:
            raise ValueError("E, H must be positive and n_layers 1 or 2")

    @property
    def label(self) -> str:
        head = {"bernoulli": "B", "dpp": "DPP"}[self.head]
        bb = {"nh": "NH", "rmtpp": "RMTPP", "poisson": "Poisson"}[self.backbone]
        suffix = "-2" if self.n_layers == 2 else ""
        return f"{self.mode.capitalize()}{head}-{bb}{suffix}"


class Model:
    """Parameters live in ``self.params``; every method takes an optional
    parameter mapping ``P`` so the same code runs on plain arrays or on graph
    leaves during training."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: ParamStore | None = None,
                 window: float | None = None):
        self.config = config
        self.vocab = vocab
        self.K = vocab.K
        self.backbone = BACKBONES[config.backbone](config.E, config.H)
        head_cls = HEADS[config.head]
        kw = {"rank": config.dpp_rank or None} if config.head == "dpp" else {}
        self.head = head_cls(self.K, self.backbone.out_dim, config.mode, config.n_layers, **kw)
        self.params = params if params is not None else ParamStore()
        self.window = window

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0, data: Dataset | None = None):
        rng = np.random.default_rng(seed)
        model = cls(config, vocab)
        p = {"emb.W": rng.normal(0.0, 1.0, size=(vocab.K, config.E))}
        p.update(model.backbone.init_params(rng))
        p["intensity.u"] = rng.normal(0.0, 0.1, size=model.backbone.out_dim)
        freq = data.item_frequencies() if data is not None and data.n_events() else None
        p.update(model.head.init_params(rng, item_freq=freq))
        if data is not None and data.n_events():
            horizon = sum(s.t_end for s in data.sequences)
            rate = data.n_events() / max(horizon, 1e-12)
            if config.backbone == "poisson":
                p["intensity.u"] = np.array([np.log(np.expm1(rate))])
            gaps = data.inter_event_gaps()
            model.window = float(np.median(gaps)) if gaps.size else None
        model.params = ParamStore(p)
        return model

    @property
    def label(self) -> str:
        return self.config.label

    def P(self):
        return self.params.arrays()

    # --- state machinery ---------------------------------------------------------

    def initial_state(self, P=None, batch=()):
        return self.backbone.initial_state(P if P is not None else self.P(), batch)

    def embed(self, masks, P=None):
        return embed_set(masks, (P if P is not None else self.P())["emb.W"])

    def condition(self, history: Sequence, P=None):
        """State after absorbing every event of ``history``."""
        P = P if P is not None else self.P()
        state = self.backbone.initial_state(P)
        for ev in history.events:
            state = self.backbone.update(P, state, ev.t, self.embed(ev.x.mask(), P))
        return state

    def hidden(self, state, t, P=None):
        return self.backbone.evolve(P if P is not None else self.P(), state, t)

    def intensity(self, h, P=None):
        return total_intensity(h, (P if P is not None else self.P())["intensity.u"])

    def intensity_bound(self, state, start, end, P=None):
        P = P if P is not None else self.P()
        return intensity_upper_bound(self.backbone, P, state, start, end, P["intensity.u"])

    # --- persistence ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": asdict(self.config),
            "vocab": list(self.vocab.labels),
            "window": self.window,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "Model":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model format version {d.get('version')}")
        return cls(ModelConfig(**d["config"]), Vocabulary(tuple(d["vocab"])),
                   ParamStore.from_dict(d["params"]), d.get("window"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def copy(self) -> "Model":
        return Model(self.config, self.vocab, self.params.copy(), self.window)
