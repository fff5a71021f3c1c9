"""Graph-attention aggregation of question and concept embeddings.

Concepts aggregate over two channels: prerequisite neighbours (in- and
out-edges) and correlated questions. The two channel outputs are fused with
softmax weights from a shared tanh scorer. Questions aggregate only over
their correlated concepts. All aggregation is single-head, one layer.

A channel with an empty neighbourhood returns the channel transform of the
node's own raw embedding, which behaves like a self loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import CorrelationGraph, PrerequisiteGraph
from .nn import Module, leaky_relu, leaky_relu_grad, softmax, softmax_backward, uniform


def _edge_arrays(adj) -> tuple[np.ndarray, np.ndarray]:
    centers = np.concatenate([np.full(len(nb), i, dtype=np.int64) for i, nb in enumerate(adj)]) if len(adj) else np.zeros(0, np.int64)
    nbrs = np.concatenate([np.asarray(nb, dtype=np.int64) for nb in adj]) if len(adj) else np.zeros(0, np.int64)
    return centers.astype(np.int64), nbrs.astype(np.int64)


def _channel_forward(Hc, Hn, centers, nbrs, n_centers, att, att_b, slope):
    d = Hc.shape[1]
    z = Hc[centers] @ att[:d] + Hn[nbrs] @ att[d:] + att_b[0]
    s = leaky_relu(z, slope)
    smax = np.full(n_centers, -np.inf)
    np.maximum.at(smax, centers, s)
    ex = np.exp(s - smax[centers])
    den = np.bincount(centers, ex, n_centers)
    alpha = ex / den[centers]
    g = np.zeros((n_centers, d))
    np.add.at(g, centers, alpha[:, None] * Hn[nbrs])
    return g, (z, alpha)


def _channel_backward(dg, Hc, Hn, centers, nbrs, att, cache, slope):
    z, alpha = cache
    d = Hc.shape[1]
    dgc = dg[centers]
    Hn_e = Hn[nbrs]
    Hc_e = Hc[centers]
    dalpha = np.sum(dgc * Hn_e, axis=1)
    seg = np.bincount(centers, alpha * dalpha, len(dg))
    dz = alpha * (dalpha - seg[centers]) * leaky_relu_grad(z, slope)
    datt = np.concatenate([dz @ Hc_e, dz @ Hn_e])
    datt_b = np.array([dz.sum()])
    dHc = np.zeros_like(Hc)
    dHn = np.zeros_like(Hn)
    np.add.at(dHc, centers, dz[:, None] * att[:d])
    np.add.at(dHn, nbrs, alpha[:, None] * dgc + dz[:, None] * att[d:])
    return dHc, dHn, datt, datt_b


@dataclass
class RelationAwareEmbeddings:
    questions: np.ndarray  # (Q, d); rows outside the requested set are zero
    concepts: np.ndarray  # (K, d)
    mu: np.ndarray  # (K, 2) fusion weights [prerequisite, correlation]
    g_pre: np.ndarray
    g_cor: np.ndarray
    question_rows: np.ndarray
    concept_rows: np.ndarray


@dataclass
class _Cache:
    version: int
    E_q: np.ndarray
    E_c: np.ndarray
    Zc: np.ndarray
    Yc: np.ndarray
    Yq: np.ndarray
    rows_c: np.ndarray
    rows_q: np.ndarray
    pre: tuple
    cor: tuple
    qch: tuple
    h_pre: np.ndarray
    h_cor: np.ndarray
    out: RelationAwareEmbeddings


class RelationAggregator(Module):
    def __init__(self, correlation: CorrelationGraph, prerequisite: PrerequisiteGraph, dim: int, rng: np.random.Generator, slope: float = 0.2):
        super().__init__()
        if prerequisite.concept_count != correlation.concept_count:
            raise ValueError("graphs disagree on concept count")
        self.dim = d = dim
        self.slope = slope
        self.Q = correlation.question_count
        self.K = correlation.concept_count
        s = 1.0 / np.sqrt(d)
        self.add("W_pre", uniform(rng, (d, d), s))
        self.add("W_cor", uniform(rng, (d, d), s))
        self.add("att_pre", uniform(rng, 2 * d, s))
        self.add("att_pre_b", np.zeros(1))
        self.add("att_cor", uniform(rng, 2 * d, s))
        self.add("att_cor_b", np.zeros(1))
        self.add("P", uniform(rng, d, s))
        self.add("W_fuse", uniform(rng, (d, d), s))
        self.add("b_fuse", np.zeros(d))

        pre_adj = [prerequisite.aggregation_neighbors(c) for c in range(self.K)]
        self.pre_edges = _edge_arrays(pre_adj)
        self.cor_edges = _edge_arrays(correlation.concept_neighbors)
        self.q_edges = _edge_arrays(correlation.question_neighbors)
        self.has_pre = np.array([len(a) > 0 for a in pre_adj], dtype=bool)
        self.has_cor = np.array([len(a) > 0 for a in correlation.concept_neighbors], dtype=bool)
        if not all(len(a) for a in correlation.question_neighbors):
            raise ValueError("every question needs at least one concept neighbour")

    # -- helpers -------------------------------------------------------
    @staticmethod
    def _restrict(edges, rows_mask):
        centers, nbrs = edges
        keep = rows_mask[centers]
        return centers[keep], nbrs[keep]

    def _rows(self, ids, n):
        if ids is None:
            return np.arange(n)
        return np.unique(np.asarray(ids, dtype=np.int64))

    def attention_weights(self, center: np.ndarray, neighbors: np.ndarray, channel: str) -> np.ndarray:
        """Softmax attention of one centre over its neighbours, from raw embeddings."""
        W = self.params["W_pre"] if channel == "pre" else self.params["W_cor"]
        att = self.params[f"att_{channel}"]
        b = self.params[f"att_{channel}_b"][0]
        neighbors = np.atleast_2d(neighbors)
        hc = W @ center
        hn = neighbors @ W.T
        scores = leaky_relu(hc @ att[: self.dim] + hn @ att[self.dim :] + b, self.slope)
        return softmax(scores)

    # -- forward / backward -------------------------------------------
    def forward(self, E_q: np.ndarray, E_c: np.ndarray, questions=None, concepts=None) -> tuple[RelationAwareEmbeddings, _Cache]:
        """Relation-aware embeddings for the requested questions and concepts (all by default)."""
        p = self.params
        rows_c = self._rows(concepts, self.K)
        rows_q = self._rows(questions, self.Q)
        mask_c = np.zeros(self.K, bool)
        mask_c[rows_c] = True
        mask_q = np.zeros(self.Q, bool)
        mask_q[rows_q] = True

        Zc = E_c @ p["W_pre"].T
        Yc = E_c @ p["W_cor"].T
        Yq = E_q @ p["W_cor"].T

        pe = self._restrict(self.pre_edges, mask_c)
        agg_pre, pre_cache = _channel_forward(Zc, Zc, *pe, self.K, p["att_pre"], p["att_pre_b"], self.slope)
        ce = self._restrict(self.cor_edges, mask_c)
        agg_cor, cor_cache = _channel_forward(Yc, Yq, *ce, self.K, p["att_cor"], p["att_cor_b"], self.slope)
        g_pre = np.where(self.has_pre[:, None], agg_pre, Zc)
        g_cor = np.where(self.has_cor[:, None], agg_cor, Yc)

        gp, gc = g_pre[rows_c], g_cor[rows_c]
        h_pre = np.tanh(gp @ p["W_fuse"].T + p["b_fuse"])
        h_cor = np.tanh(gc @ p["W_fuse"].T + p["b_fuse"])
        mu_rows = softmax(np.stack([h_pre @ p["P"], h_cor @ p["P"]], axis=1))
        Ec_t = np.zeros((self.K, self.dim))
        Ec_t[rows_c] = mu_rows[:, :1] * gp + mu_rows[:, 1:] * gc
        mu = np.zeros((self.K, 2))
        mu[rows_c] = mu_rows

        qe = self._restrict(self.q_edges, mask_q)
        Eq_t, q_cache = _channel_forward(Yq, Yc, *qe, self.Q, p["att_cor"], p["att_cor_b"], self.slope)

        out = RelationAwareEmbeddings(Eq_t, Ec_t, mu, g_pre, g_cor, rows_q, rows_c)
        cache = _Cache(self.version, E_q, E_c, Zc, Yc, Yq, rows_c, rows_q,
                       (pe, pre_cache), (ce, cor_cache), (qe, q_cache), h_pre, h_cor, out)
        return out, cache

    def backward(self, cache: _Cache, dEq_t: np.ndarray, dEc_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Accumulate parameter gradients; return gradients w.r.t. raw ``E_q`` and ``E_c``."""
        self.check(cache.version)
        p, gr = self.params, self.grads
        out = cache.out
        rows_c = cache.rows_c
        d = self.dim

        dZc = np.zeros_like(cache.Zc)
        dYc = np.zeros_like(cache.Yc)
        dYq = np.zeros_like(cache.Yq)

        # fusion
        dE = dEc_t[rows_c]
        mu = out.mu[rows_c]
        gp, gc = out.g_pre[rows_c], out.g_cor[rows_c]
        dmu = np.stack([np.sum(dE * gp, 1), np.sum(dE * gc, 1)], axis=1)
        du = softmax_backward(mu, dmu)
        dgp = mu[:, :1] * dE
        dgc = mu[:, 1:] * dE
        for h, g, dui, dg in ((cache.h_pre, gp, du[:, 0], dgp), (cache.h_cor, gc, du[:, 1], dgc)):
            gr["P"] += h.T @ dui
            da = dui[:, None] * p["P"] * (1.0 - h * h)
            gr["W_fuse"] += da.T @ g
            gr["b_fuse"] += da.sum(axis=0)
            dg += da @ p["W_fuse"]

        dg_pre = np.zeros((self.K, d))
        dg_pre[rows_c] = dgp
        dg_cor = np.zeros((self.K, d))
        dg_cor[rows_c] = dgc
        fb = ~self.has_pre
        dZc[fb] += dg_pre[fb]
        dg_pre[fb] = 0.0
        fb = ~self.has_cor
        dYc[fb] += dg_cor[fb]
        dg_cor[fb] = 0.0

        (pc, pn), pcache = cache.pre
        dHc, dHn, datt, datt_b = _channel_backward(dg_pre, cache.Zc, cache.Zc, pc, pn, p["att_pre"], pcache, self.slope)
        dZc += dHc + dHn
        gr["att_pre"] += datt
        gr["att_pre_b"] += datt_b

        (cc, cn), ccache = cache.cor
        dHc, dHn, datt, datt_b = _channel_backward(dg_cor, cache.Yc, cache.Yq, cc, cn, p["att_cor"], ccache, self.slope)
        dYc += dHc
        dYq += dHn
        gr["att_cor"] += datt
        gr["att_cor_b"] += datt_b

        (qc, qn), qcache = cache.qch
        dHc, dHn, datt, datt_b = _channel_backward(dEq_t, cache.Yq, cache.Yc, qc, qn, p["att_cor"], qcache, self.slope)
        dYq += dHc
        dYc += dHn
        gr["att_cor"] += datt
        gr["att_cor_b"] += datt_b

        gr["W_pre"] += dZc.T @ cache.E_c
        gr["W_cor"] += dYc.T @ cache.E_c + dYq.T @ cache.E_q
        dE_c = dZc @ p["W_pre"] + dYc @ p["W_cor"]
        dE_q = dYq @ p["W_cor"]
        return dE_q, dE_c

    def concept_relation_embed(self, concept: int, E_q: np.ndarray, E_c: np.ndarray) -> np.ndarray:
        out, _ = self.forward(E_q, E_c, questions=[], concepts=[concept])
        return out.concepts[concept]

    def question_relation_embed(self, question: int, E_q: np.ndarray, E_c: np.ndarray) -> np.ndarray:
        out, _ = self.forward(E_q, E_c, questions=[question], concepts=[])
        return out.questions[question]
