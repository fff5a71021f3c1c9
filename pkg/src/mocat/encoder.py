"""Self-attentive state encoder over a student's response history.

Each record becomes ``question ⊕ mean(concepts) ⊕ response`` (width 3d).
The history matrix passes through one scaled dot-product self-attention
layer, dropout, a residual connection and LayerNorm, and is mean-pooled into
the state. Records carry no positional information, so the state does not
depend on their order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .nn import DivergenceError, Module, layer_norm, layer_norm_backward, softmax, softmax_backward, uniform


class EmbeddingTables(Module):
    """Raw question, concept and response embeddings."""

    def __init__(self, question_count: int, concept_count: int, dim: int, rng: np.random.Generator):
        super().__init__()
        s = 1.0 / np.sqrt(dim)
        self.dim = dim
        self.add("E_q", uniform(rng, (question_count, dim), s))
        self.add("E_c", uniform(rng, (concept_count, dim), s))
        self.add("E_y", uniform(rng, (2, dim), s))


def concept_mean_matrix(question_concepts: Sequence[Sequence[int]], concept_count: int) -> sparse.csr_matrix:
    """Row q averages the concepts of question q."""
    rows, cols, vals = [], [], []
    for q, cs in enumerate(question_concepts):
        cs = sorted(set(cs))
        for c in cs:
            rows.append(q)
            cols.append(c)
            vals.append(1.0 / len(cs))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(question_concepts), concept_count))


def record_embed(question: int, response: int, Eq_t: np.ndarray, concept_mean: np.ndarray, E_y: np.ndarray) -> np.ndarray:
    """One record's row: relation-aware question, mean concept, raw response."""
    return np.concatenate([Eq_t[question], concept_mean[question], E_y[response]])


@dataclass
class _EncCache:
    version: int
    n: int
    X: np.ndarray
    Qm: np.ndarray | None = None
    Km: np.ndarray | None = None
    Vm: np.ndarray | None = None
    A: np.ndarray | None = None
    mask: np.ndarray | None = None
    ln: tuple | None = None


class StateEncoder(Module):
    def __init__(self, dim: int, rng: np.random.Generator, dropout: float = 0.1):
        super().__init__()
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.dim = dim
        self.D = D = 3 * dim
        self.dropout = dropout
        s = 1.0 / np.sqrt(dim)
        self.add("W_Q", uniform(rng, (D, D), s))
        self.add("W_K", uniform(rng, (D, D), s))
        self.add("W_V", uniform(rng, (D, D), s))
        self.add("ln_g", np.ones(D))
        self.add("ln_b", np.zeros(D))
        self.add("start", np.zeros(D))

    def forward(self, X: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        """Encode a batch of equal-length histories ``X`` of shape (B, n, D) into (B, D) states."""
        X = np.asarray(X, dtype=np.float64)
        B, n, D = X.shape
        if D != self.D:
            raise ValueError(f"record width {D} != {self.D}")
        if not np.all(np.isfinite(X)):
            raise DivergenceError("non-finite record embedding")
        p = self.params
        if n == 0:
            return np.tile(p["start"], (B, 1)), _EncCache(self.version, 0, X)
        Qm = X @ p["W_Q"]
        Km = X @ p["W_K"]
        Vm = X @ p["W_V"]
        A = softmax(Qm @ Km.transpose(0, 2, 1) / np.sqrt(D), axis=-1)
        O = A @ Vm
        mask = None
        if train and self.dropout > 0:
            if rng is None:
                raise ValueError("train mode needs an rng for dropout")
            mask = (rng.random(O.shape) >= self.dropout) / (1.0 - self.dropout)
            O = O * mask
        Z, ln = layer_norm(O + X, p["ln_g"], p["ln_b"])
        return Z.mean(axis=1), _EncCache(self.version, n, X, Qm, Km, Vm, A, mask, ln)

    def attention(self, X: np.ndarray) -> np.ndarray:
        """Attention weights for a (B, n, D) batch, eval mode."""
        p = self.params
        return softmax((X @ p["W_Q"]) @ (X @ p["W_K"]).transpose(0, 2, 1) / np.sqrt(self.D), axis=-1)

    def backward(self, cache: _EncCache, dS: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return dL/dX with the shape of ``X``."""
        self.check(cache.version)
        p, gr = self.params, self.grads
        if cache.n == 0:
            gr["start"] += dS.sum(axis=0)
            return np.zeros_like(cache.X)
        dZ = np.repeat(dS[:, None, :] / cache.n, cache.n, axis=1)
        dY, dg, db = layer_norm_backward(dZ, p["ln_g"], cache.ln)
        gr["ln_g"] += dg
        gr["ln_b"] += db
        dX = dY.copy()
        dO = dY if cache.mask is None else dY * cache.mask
        dA = dO @ cache.Vm.transpose(0, 2, 1)
        dVm = cache.A.transpose(0, 2, 1) @ dO
        dsc = softmax_backward(cache.A, dA) / np.sqrt(self.D)
        dQm = dsc @ cache.Km
        dKm = dsc.transpose(0, 2, 1) @ cache.Qm
        X = cache.X.reshape(-1, self.D).T
        gr["W_Q"] += X @ dQm.reshape(-1, self.D)
        gr["W_K"] += X @ dKm.reshape(-1, self.D)
        gr["W_V"] += X @ dVm.reshape(-1, self.D)
        dX += dQm @ p["W_Q"].T + dKm @ p["W_K"].T + dVm @ p["W_V"].T
        return dX
