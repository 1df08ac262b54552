"""Similarity, InfoNCE, resampling of unlabeled positives and the corrected loss.

Notation: ``u``/``v`` are the representations of the two views.  An anchor is
node ``i`` of view 1 (``u_i``) or of view 2 (``v_i``).  Its candidates are the
``N`` nodes of the other view plus the ``N - 1`` other nodes of its own view,
so for every anchor

    P(anchor, c) = s(anchor, c) / sum_{c'} s(anchor, c'),   s = exp(cos / tau)

and ``P(u_i, v_i)`` is the likelihood of the labeled (augmented) positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import numeric as nm
from .numeric import SparseMatrix, Tensor

VIEW1, VIEW2 = 1, 2
COSINE_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    beta: float = 1.0
    t_s: float = 0.9
    include_intra_view_negatives: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not -1.0 <= self.t_s <= 1.0:
            raise ValueError("t_s is a cosine threshold in [-1, 1]")


@dataclass(eq=False)
class SimilarityBundle:
    cos_uv: Tensor
    cos_uu: Tensor
    cos_vv: Tensor
    s_uv: Tensor
    s_uu: Tensor
    s_vv: Tensor
    tau: float
    intra_negatives: bool = True
    _denoms: tuple | None = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.cos_uv.shape[0]

    @classmethod
    def from_cosines(cls, cos_uv, tau: float, cos_uu=None, cos_vv=None,
                     intra_negatives: bool = True) -> SimilarityBundle:
        """Bundle over given cosine matrices (intra-view default: identity)."""
        cos_uv = nm.constant(cos_uv)
        n = cos_uv.shape[0]
        cos_uu = nm.constant(np.eye(n) if cos_uu is None else cos_uu)
        cos_vv = nm.constant(np.eye(n) if cos_vv is None else cos_vv)
        return cls(cos_uv, cos_uu, cos_vv,
                   nm.exp(cos_uv * (1.0 / tau)), nm.exp(cos_uu * (1.0 / tau)),
                   nm.exp(cos_vv * (1.0 / tau)), tau, intra_negatives)


def build_similarity(u, v, tau: float, guard: bool = True,
                     intra_negatives: bool = True) -> SimilarityBundle:
    """Cross- and intra-view cosines of ``u``, ``v`` and their exp(cos/tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    u, v = nm.constant(u), nm.constant(v)
    if u.shape != v.shape:
        raise nm.DimensionError(f"views disagree in shape: {u.shape} vs {v.shape}")
    eps = COSINE_EPS if guard else 0.0
    cos_uv = nm.cosine_rows(u, v, eps)
    cos_uu = nm.cosine_rows(u, u, eps)
    cos_vv = nm.cosine_rows(v, v, eps)
    inv = 1.0 / tau
    return SimilarityBundle(cos_uv, cos_uu, cos_vv,
                            nm.exp(cos_uv * inv), nm.exp(cos_uu * inv), nm.exp(cos_vv * inv), tau,
                            intra_negatives)


def _offdiag_mask(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def log_denominators(bundle: SimilarityBundle) -> tuple[Tensor, Tensor]:
    """log of the per-anchor normaliser, one N x 1 column per anchor view.

    Intra-view terms are dropped when the bundle excludes them as negatives.
    """
    if bundle._denoms is None:
        d1 = nm.row_sum(bundle.s_uv)
        d2 = nm.row_sum(nm.transpose(bundle.s_uv))
        if bundle.intra_negatives:
            off = _offdiag_mask(bundle.num_nodes)
            d1 = nm.row_sum(bundle.s_uu * off) + d1
            d2 = nm.row_sum(bundle.s_vv * off) + d2
        bundle._denoms = (nm.log(d1), nm.log(d2))
    return bundle._denoms


def _cross_cos(bundle: SimilarityBundle, anchor_view: int) -> Tensor:
    if anchor_view == VIEW1:
        return bundle.cos_uv
    if anchor_view == VIEW2:
        return nm.transpose(bundle.cos_uv)
    raise ValueError(f"anchor_view must be 1 or 2, got {anchor_view}")


def candidate_log_probs(bundle: SimilarityBundle, anchor_view: int) -> tuple[Tensor, Tensor]:
    """(cross-view, intra-view) log-probability matrices for one anchor view.

    Row ``i`` holds anchor ``i``.  The intra-view diagonal (the anchor itself)
    is not a candidate; its entry is meaningless.
    """
    logd = log_denominators(bundle)[anchor_view - 1]
    cross = _cross_cos(bundle, anchor_view) * (1.0 / bundle.tau) - logd
    intra_cos = bundle.cos_uu if anchor_view == VIEW1 else bundle.cos_vv
    return cross, intra_cos * (1.0 / bundle.tau) - logd


def _pair_log_probs(bundle: SimilarityBundle, anchor_view: int, rows, cols) -> Tensor:
    """log P(anchor_i, other_j) for index lists, as a k x 1 column."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    logd = log_denominators(bundle)[anchor_view - 1]
    if anchor_view == VIEW1:
        c = nm.take(bundle.cos_uv, rows, cols)
    else:
        c = nm.take(bundle.cos_uv, cols, rows)
    return c * (1.0 / bundle.tau) - nm.take(logd, rows, np.zeros_like(rows))


def log_prob(bundle: SimilarityBundle, anchor_view: int, i: int, j: int) -> Tensor:
    """log P for anchor node ``i`` of ``anchor_view`` and node ``j`` of the other view."""
    n = bundle.num_nodes
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node index out of range for {n} nodes")
    return _pair_log_probs(bundle, anchor_view, [i], [j])


def infonce_local(bundle: SimilarityBundle, anchor_view: int, i: int) -> Tensor:
    return nm.neg(log_prob(bundle, anchor_view, i, i))


def _diag_log_probs(bundle: SimilarityBundle) -> tuple[Tensor, Tensor]:
    logd1, logd2 = log_denominators(bundle)
    d = nm.diag(bundle.cos_uv) * (1.0 / bundle.tau)
    return d - logd1, d - logd2


def infonce_global(bundle: SimilarityBundle) -> Tensor:
    """Mean of the 2N local InfoNCE losses."""
    lp1, lp2 = _diag_log_probs(bundle)
    n = bundle.num_nodes
    return nm.neg(nm.sum(lp1) + nm.sum(lp2)) * (1.0 / (2 * n))


def normalized_similarity(bundle: SimilarityBundle) -> np.ndarray:
    """(s - min s) / max s over the cross-view matrix; a constant array."""
    s = bundle.s_uv.data
    return (s - s.min()) / s.max()


# ----------------------------------------------------------------- resampling

@dataclass(frozen=True, eq=False)
class SampleSets:
    """Discovered unlabeled positives; the labeled ones are the implicit diagonal.

    Entry ``k`` is the pair (node ``rows[k]`` of view ``anchor_view[k]``, node
    ``cols[k]`` of the other view) with constant weight ``weights[k]``.
    """

    anchor_view: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    num_nodes: int
    round_id: int = 0

    def __post_init__(self):
        for name in ("anchor_view", "rows", "cols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))
        k = len(self.rows)
        if not (len(self.anchor_view) == len(self.cols) == len(self.weights) == k):
            raise ValueError("sample set fields disagree in length")
        if np.any(self.rows == self.cols):
            raise ValueError("diagonal pairs are labeled positives, not unlabeled ones")
        if k and not set(np.unique(self.anchor_view)) <= {VIEW1, VIEW2}:
            raise ValueError("anchor_view entries must be 1 or 2")
        keys = (self.anchor_view * self.num_nodes + self.rows) * self.num_nodes + self.cols
        if len(np.unique(keys)) != k:
            raise ValueError("duplicate unlabeled pairs")
        for name in ("anchor_view", "rows", "cols", "weights"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def empty(cls, num_nodes: int, round_id: int = 0) -> SampleSets:
        z = np.zeros(0)
        return cls(z, z, z, z, num_nodes, round_id)

    def select(self, anchor_view: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.anchor_view == anchor_view
        return self.rows[m], self.cols[m], self.weights[m]

    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.anchor_view.tolist(), self.rows.tolist(), self.cols.tolist()))

    def with_weights(self, weights) -> SampleSets:
        return SampleSets(self.anchor_view, self.rows, self.cols, weights, self.num_nodes, self.round_id)


def classify_unlabeled(bundle: SimilarityBundle, t_s: float, round_id: int = 0) -> SampleSets:
    """Off-diagonal cross-view pairs with cosine >= ``t_s``, both anchor views.

    Weights are the normalized similarity of each pair, frozen at call time.
    """
    if not -1.0 <= t_s <= 1.0:
        raise ValueError("t_s is a cosine threshold in [-1, 1]")
    cos = bundle.cos_uv.data
    w = normalized_similarity(bundle)
    n = cos.shape[0]
    hit = cos >= t_s
    hit[np.diag_indices(n)] = False
    r1, c1 = np.nonzero(hit)       # anchor u_i, candidate v_j
    c2, r2 = np.nonzero(hit)       # anchor v_i, candidate u_j reads cos_uv[j, i]
    order2 = np.lexsort((c2, r2))
    r2, c2 = r2[order2], c2[order2]
    return SampleSets(
        anchor_view=np.concatenate([np.full(len(r1), VIEW1), np.full(len(r2), VIEW2)]),
        rows=np.concatenate([r1, r2]),
        cols=np.concatenate([c1, c2]),
        weights=np.concatenate([w[r1, c1], w[c2, r2]]),
        num_nodes=n,
        round_id=round_id,
    )


# ------------------------------------------------------------ corrected losses

def _check_sets(bundle: SimilarityBundle, sets: SampleSets):
    if sets.num_nodes != bundle.num_nodes:
        raise nm.DimensionError(f"sample sets built for {sets.num_nodes} nodes, bundle has {bundle.num_nodes}")


def corrected_local(bundle: SimilarityBundle, sets: SampleSets, i: int, anchor_view: int,
                    beta: float) -> Tensor:
    """-log P(anchor, own copy) - sum over the anchor's unlabeled positives of beta*w*log P."""
    _check_sets(bundle, sets)
    loss = infonce_local(bundle, anchor_view, i)
    rows, cols, w = sets.select(anchor_view)
    m = rows == i
    if not np.any(m):
        return loss
    lp = _pair_log_probs(bundle, anchor_view, rows[m], cols[m])
    return loss - nm.sum(lp * (beta * w[m]).reshape(-1, 1))


def corrected_global(bundle: SimilarityBundle, sets: SampleSets, beta: float) -> Tensor:
    """Mean over the 2N labeled positives of the corrected local loss."""
    _check_sets(bundle, sets)
    loss = infonce_global(bundle)
    n = bundle.num_nodes
    for view in (VIEW1, VIEW2):
        rows, cols, w = sets.select(view)
        if len(rows) == 0:
            continue
        lp = _pair_log_probs(bundle, view, rows, cols)
        loss = loss - nm.sum(lp * (beta * w).reshape(-1, 1)) * (1.0 / (2 * n))
    return loss


def linear_combination_global(bundle: SimilarityBundle, sets: SampleSets, alpha) -> Tensor:
    """Comparator: mean over anchors of -log(P_labeled + sum alpha * P_unlabeled).

    ``alpha`` is aligned with ``sets`` (one coefficient per unlabeled pair).
    """
    _check_sets(bundle, sets)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if len(alpha) != len(sets):
        raise ValueError("need one alpha per unlabeled pair")
    n = bundle.num_nodes
    total = None
    for view, lp_diag in zip((VIEW1, VIEW2), _diag_log_probs(bundle)):
        mass = nm.exp(lp_diag)
        m = sets.anchor_view == view
        if np.any(m):
            rows, cols = sets.rows[m], sets.cols[m]
            p = nm.exp(_pair_log_probs(bundle, view, rows, cols))
            scatter = SparseMatrix.from_scipy(
                sp.coo_matrix((alpha[m], (rows, np.arange(len(rows)))), shape=(n, len(rows))))
            mass = mass + nm.spmm(scatter, p)
        term = nm.sum(nm.log(mass))
        total = term if total is None else total + term
    return nm.neg(total) * (1.0 / (2 * n))
