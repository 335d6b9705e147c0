"""Conditional distributions over item sets given the hidden state h(t).

Hit probabilities are expressed through void probabilities
``void(S) = P(X n S = {})``:

    P(X hits A)               = 1 - void(A)
    P(X hits A, misses B)     = void(B) - void(A u B)
    P(X hits A and B)         = 1 - void(A) - void(B) + void(A u B)

For the Bernoulli heads ``void(S) = prod_{k in S} (1 - rho_k)``; for DPPs
``void(S) = det(I - K'_S)`` with the marginal kernel ``K' = I - (L + I)^-1``.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .backbones import _glorot
from .data import ItemSet

RHO_MIN = 1e-7
DPP_JITTER = 1e-6
DPP_MAX_REJECTIONS = 10_000


class SamplingError(RuntimeError):
    pass


def _as_mask(x, K):
    if hasattr(x, "mask"):
        return x.mask()
    m = np.asarray(x)
    if m.dtype != bool:
        m = m.astype(bool)
    if m.shape[-1] != K:
        raise ValueError("mask length does not match K")
    return m


def _check_disjoint(A, B):
    if np.any(A & B):
        raise ValueError("A and B must be disjoint")


class SetHead:
    K: int
    mode: str

    def set_log_prob(self, P, h, x):
        raise NotImplementedError

    def void_prob(self, P, h, S):
        raise NotImplementedError

    def void_probs(self, P, h, sets):
        """void_prob for several sets at once, sharing the head evaluation."""
        return [self.void_prob(P, h, S) for S in sets]

    def prob_hit(self, P, h, A):
        A = _as_mask(A, self.K)
        if not A.any():
            raise ValueError("A must be non-empty")
        return 1.0 - self.void_prob(P, h, A)

    def prob_hit_excl(self, P, h, A, B):
        """P(next set intersects A and misses B); B may be empty."""
        A, B = _as_mask(A, self.K), _as_mask(B, self.K)
        _check_disjoint(A, B)
        return self.void_prob(P, h, B) - self.void_prob(P, h, A | B)

    def prob_hit_both(self, P, h, A, B):
        A, B = _as_mask(A, self.K), _as_mask(B, self.K)
        _check_disjoint(A, B)
        return 1.0 - self.void_prob(P, h, A) - self.void_prob(P, h, B) + self.void_prob(P, h, A | B)


class BernoulliHead(SetHead):
    """Independent item inclusions; rho = sigmoid(logits).

    Dynamic mode: logits = V n(h) + b with n the identity (one layer) or a
    tanh hidden layer (two layers). Static mode: logits are free parameters.
    """

    kind = "bernoulli"

    def __init__(self, K, in_dim, mode="dynamic", n_layers=1, hidden=None):
        if mode not in ("static", "dynamic"):
            raise ValueError(f"unknown mode {mode!r}")
        if n_layers not in (1, 2):
            raise ValueError("n_layers must be 1 or 2")
        self.K, self.in_dim, self.mode, self.n_layers = K, in_dim, mode, n_layers
        self.hidden = hidden or in_dim

    def init_params(self, rng, item_freq=None) -> dict:
        K = self.K
        if self.mode == "static":
            if item_freq is None:
                return {"set.logits": np.zeros(K)}
            f = np.clip(np.asarray(item_freq, dtype=float), 1e-4, 1 - 1e-4)
            return {"set.logits": np.log(f) - np.log1p(-f)}
        p = {}
        d = self.in_dim
        if self.n_layers == 2:
            p["set.W1"] = _glorot(rng, d, self.hidden, (d, self.hidden))
            p["set.b1"] = np.zeros(self.hidden)
            d = self.hidden
        p["set.V"] = _glorot(rng, d, K, (d, K))
        if item_freq is not None:
            f = np.clip(np.asarray(item_freq, dtype=float), 1e-4, 1 - 1e-4)
            p["set.b"] = np.log(f) - np.log1p(-f)
        else:
            p["set.b"] = np.zeros(K)
        return p

    def logits(self, P, h):
        if self.mode == "static":
            batch = ad.value(h).shape[:-1]
            return ad.add(P["set.logits"], np.zeros(batch + (self.K,)))
        z = h
        if self.n_layers == 2:
            z = ad.tanh(ad.add(ad.matmul(z, P["set.W1"]), P["set.b1"]))
        return ad.add(ad.matmul(z, P["set.V"]), P["set.b"])

    def rho(self, P, h):
        return ad.sigmoid(self.logits(P, h))

    def set_log_prob(self, P, h, x):
        x = _as_mask(x, self.K).astype(float)
        r = ad.clip(self.rho(P, h), RHO_MIN, 1.0 - RHO_MIN)
        terms = ad.add(ad.mul(x, ad.log(r)), ad.mul(1.0 - x, ad.log(ad.sub(1.0, r))))
        return ad.sum_(terms, axis=-1)

    def void_prob(self, P, h, S):
        S = _as_mask(S, self.K)
        r = ad.value(self.rho(P, h))
        return np.prod(np.where(S, 1.0 - r, 1.0), axis=-1)

    def void_probs(self, P, h, sets):
        r = ad.value(self.rho(P, h))
        return [np.prod(np.where(_as_mask(S, self.K), 1.0 - r, 1.0), axis=-1) for S in sets]

    def sample(self, P, h, uniforms, forbidden=None):
        """Sets from (n, K) uniforms; forbidden items are never drawn.

        Because items are independent, conditioning on excluding ``forbidden``
        simply zeroes their inclusion probability.
        """
        r = ad.value(self.rho(P, h))
        x = uniforms < r
        if forbidden is not None:
            x &= ~_as_mask(forbidden, self.K)
        return x


class DPPHead(SetHead):
    """L-ensemble DPP.

    Dynamic mode: ``L_ij = n_i(h) <w_i, w_j>/(|w_i||w_j|) n_j(h)`` with the
    backbone's item embeddings ``w``. Static mode: ``L = F F^T``. A fixed
    ``1e-6 I`` is added to L so every principal minor is strictly positive.
    """

    kind = "dpp"

    def __init__(self, K, in_dim, mode="dynamic", n_layers=1, hidden=None, rank=None):
        if mode not in ("static", "dynamic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.K, self.in_dim, self.mode, self.n_layers = K, in_dim, mode, n_layers
        self.hidden = hidden or in_dim
        self.rank = rank or K

    def init_params(self, rng, item_freq=None) -> dict:
        K = self.K
        if self.mode == "static":
            return {"set.F": rng.normal(0.0, 1.0 / np.sqrt(self.rank), size=(K, self.rank))}
        p = {}
        d = self.in_dim
        if self.n_layers == 2:
            p["set.W1"] = _glorot(rng, d, self.hidden, (d, self.hidden))
            p["set.b1"] = np.zeros(self.hidden)
            d = self.hidden
        p["set.Wn"] = _glorot(rng, d, K, (d, K))
        p["set.bn"] = np.ones(K)
        return p

    def kernel(self, P, h):
        """L(h) with shape (..., K, K)."""
        batch = ad.value(h).shape[:-1]
        eye = np.eye(self.K)
        if self.mode == "static":
            F = P["set.F"]
            L = ad.matmul(F, ad.swapaxes(F, -1, -2))
            return ad.add(L, np.zeros(batch + (self.K, self.K)) + DPP_JITTER * eye)
        W = P["emb.W"]
        norms = ad.sqrt(ad.sum_(ad.mul(W, W), axis=-1, keepdims=True))
        Wn = ad.div(W, norms)
        S = ad.matmul(Wn, ad.swapaxes(Wn, -1, -2))
        z = h
        if self.n_layers == 2:
            z = ad.tanh(ad.add(ad.matmul(z, P["set.W1"]), P["set.b1"]))
        n = ad.add(ad.matmul(z, P["set.Wn"]), P["set.bn"])
        L = ad.mul(ad.mul(ad.expand_dims(n, -1), S), ad.expand_dims(n, -2))
        return ad.add(L, DPP_JITTER * eye)

    def set_log_prob(self, P, h, x):
        x = _as_mask(x, self.K).astype(float)
        L = self.kernel(P, h)
        eye = np.eye(self.K)
        pair = x[..., :, None] * x[..., None, :]
        # principal submatrix L_x padded with identity elsewhere: same determinant, fixed shape
        Lx = ad.add(ad.mul(L, pair), eye * (1.0 - x)[..., None, :])
        return ad.sub(ad.log_det_psd(Lx), ad.log_det_psd(ad.add(L, eye)))

    def marginal_kernel(self, P, h):
        return dpp_marginal_kernel(ad.value(self.kernel(P, h)))

    def void_prob(self, P, h, S):
        S = _as_mask(S, self.K)
        L = ad.value(self.kernel(P, h))
        inv = np.linalg.inv(L + np.eye(self.K))  # I - K'
        M = inv * (S[..., :, None] & S[..., None, :]) + np.eye(self.K) * (~S)[..., None, :]
        return np.linalg.det(M)

    def void_probs(self, P, h, sets):
        L = ad.value(self.kernel(P, h))
        inv = np.linalg.inv(L + np.eye(self.K))
        out = []
        for S in sets:
            S = _as_mask(S, self.K)
            M = inv * (S[..., :, None] & S[..., None, :]) + np.eye(self.K) * (~S)[..., None, :]
            out.append(np.linalg.det(M))
        return out

    def sample(self, P, h, uniform_fn, forbidden=None):
        """Spectral DPP sampling, one set per row of ``h``.

        ``uniform_fn(row, k)`` must return ``k`` uniforms for that row. Sets
        hitting ``forbidden`` are redrawn, at most DPP_MAX_REJECTIONS times.
        """
        L = ad.value(self.kernel(P, h))
        L = L.reshape((-1, self.K, self.K))
        forb = None if forbidden is None else _as_mask(forbidden, self.K)
        out = np.zeros((L.shape[0], self.K), dtype=bool)
        for r in range(L.shape[0]):
            lam, vecs = np.linalg.eigh(L[r])
            lam = np.clip(lam, 0.0, None)
            for _ in range(DPP_MAX_REJECTIONS):
                x = _spectral_draw(lam, vecs, lambda k: uniform_fn(r, k))
                if forb is None or not (x & forb).any():
                    out[r] = x
                    break
            else:
                raise SamplingError("conditional DPP draw exceeded the rejection cap")
        return out


def _spectral_draw(lam, vecs, uniform):
    K = len(lam)
    keep = uniform(K) < lam / (lam + 1.0)
    V = vecs[:, keep]
    x = np.zeros(K, dtype=bool)
    while V.shape[1] > 0:
        probs = np.clip((V * V).sum(axis=1), 0.0, None)
        probs /= probs.sum()
        u = uniform(1)[0]
        i = min(int(np.searchsorted(np.cumsum(probs), u, side="right")), K - 1)
        while probs[i] == 0.0:
            i -= 1
        x[i] = True
        j = int(np.argmax(np.abs(V[i])))
        Vj = V[:, j]
        V = np.delete(V, j, axis=1)
        V = V - np.outer(Vj, V[i] / Vj[i])
        if V.shape[1] > 0:
            V, _ = np.linalg.qr(V)
    return x


def dpp_marginal_kernel(L):
    """K' = L (L + I)^-1 = I - (L + I)^-1."""
    L = np.asarray(L, dtype=float)
    eye = np.eye(L.shape[-1])
    try:
        inv = np.linalg.inv(L + eye)
    except np.linalg.LinAlgError:
        raise ad.NumericalError("L + I is singular") from None
    Kp = eye - inv
    return 0.5 * (Kp + np.swapaxes(Kp, -1, -2))


def dpp_exact_set_prob(Kp, A):
    """P(X = A) = det(I_A K' + I_notA (I - K'))."""
    Kp = np.asarray(Kp, dtype=float)
    a = _as_mask(A, Kp.shape[-1]).astype(float)
    eye = np.eye(Kp.shape[-1])
    M = a[..., :, None] * Kp + (1.0 - a)[..., :, None] * (eye - Kp)
    return np.linalg.det(M)


HEADS = {"bernoulli": BernoulliHead, "dpp": DPPHead}


def sample_set(head: SetHead, P, h, rng, forbidden=None):
    """One set drawn from ``head`` at a single hidden state, as an ItemSet."""
    h = np.asarray(h, dtype=float)[None]
    if isinstance(head, BernoulliHead):
        x = head.sample(P, h, rng.random((1, head.K)), forbidden)
    else:
        x = head.sample(P, h, lambda r, k: rng.random(k), forbidden)
    return ItemSet.from_mask(x[0])
