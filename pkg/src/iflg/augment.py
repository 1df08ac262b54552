"""Stochastic two-view augmentation: edge dropping and feature-column masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, normalize_adjacency
from .numeric import SparseMatrix

MODES = ("uniform", "degree_adaptive")


@dataclass(frozen=True)
class ViewAugment:
    p_edge_drop: float = 0.2
    p_feature_mask: float = 0.2


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation probabilities for both views.

    ``view1``/``view2`` override the shared probabilities when given.
    """

    p_edge_drop: float = 0.2
    p_feature_mask: float = 0.2
    mode: str = "uniform"
    view1: ViewAugment | None = None
    view2: ViewAugment | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        for v in self.views():
            for p in (v.p_edge_drop, v.p_feature_mask):
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"probability {p} outside [0, 1]")
            if self.mode == "degree_adaptive" and v.p_edge_drop >= 1.0:
                raise ValueError("degree_adaptive mode needs a mean drop rate below 1")

    def views(self) -> tuple[ViewAugment, ViewAugment]:
        shared = ViewAugment(self.p_edge_drop, self.p_feature_mask)
        return self.view1 or shared, self.view2 or shared


@dataclass(frozen=True, eq=False)
class ViewPair:
    g1: Graph
    g2: Graph
    a1: SparseMatrix
    a2: SparseMatrix

    @property
    def num_nodes(self) -> int:
        return self.g1.num_nodes


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def edge_drop_probabilities(g: Graph, p: float, mode: str = "uniform") -> np.ndarray:
    """Per-edge drop probability, aligned with ``g.edges()``."""
    edges = g.edges()
    if mode == "uniform":
        return np.full(len(edges), float(p))
    if mode != "degree_adaptive":
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if len(edges) == 0:
        return np.zeros(0)
    deg = g.degrees().astype(np.float64)
    w = 1.0 / (0.5 * (deg[edges[:, 0]] + deg[edges[:, 1]]))
    return np.clip(p * w / w.mean(), 0.0, 0.95)


def drop_edges(g: Graph, p: float, mode: str = "uniform", seed=0) -> Graph:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    edges = g.edges()
    probs = edge_drop_probabilities(g, p, mode)
    keep = _rng(seed).random(len(edges)) >= probs
    return g.with_edges(edges[keep])


def mask_features(g: Graph, p: float, seed=0) -> Graph:
    """Zero a Bernoulli(p) subset of feature columns for every node."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    masked = _rng(seed).random(g.feature_dim) < p
    x = np.array(g.features)
    x[:, masked] = 0.0
    return g.with_features(x)


def augment_view(g: Graph, view: ViewAugment, mode: str, rng: np.random.Generator) -> Graph:
    out = g
    if view.p_edge_drop > 0:
        out = drop_edges(out, view.p_edge_drop, mode, rng)
    if view.p_feature_mask > 0:
        out = mask_features(out, view.p_feature_mask, rng)
    return out


def make_views(g: Graph, cfg: AugmentConfig, seed=None) -> ViewPair:
    """Draw two independent views; ``seed`` defaults to ``cfg.seed``.

    ``seed`` may be any ``SeedSequence`` entropy (e.g. ``(run_seed, epoch)``).
    """
    entropy = cfg.seed if seed is None else seed
    ss = np.random.SeedSequence(entropy)
    r1, r2 = (np.random.default_rng(s) for s in ss.spawn(2))
    v1, v2 = cfg.views()
    g1 = augment_view(g, v1, cfg.mode, r1)
    g2 = augment_view(g, v2, cfg.mode, r2)
    return ViewPair(g1, g2, normalize_adjacency(g1), normalize_adjacency(g2))
