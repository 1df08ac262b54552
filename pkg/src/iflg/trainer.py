"""Warm-up on InfoNCE, then rounds of resample -> train on the corrected loss."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numeric as nm
from .augment import AugmentConfig, ViewPair, make_views
from .contrastive import (SampleSets, SimilarityBundle, build_similarity, classify_unlabeled,
                          corrected_global, infonce_global)
from .encoder import (DivergenceError, EncoderParams, encode, init_params, make_optimizer,
                      optimizer_step, project)
from .evaluate import ProbeResult, linear_probe, same_class_ratio, sup_sim
from .graph import Graph, SplitMasks, make_split, normalize_adjacency

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 200
    interval: int = 50
    rounds: int = 5
    lr: float = 5e-4
    tau: float = 0.5
    t_s: float = 0.9
    beta: float = 1.0
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    hidden_dim: int = 256
    out_dim: int = 128
    projection: bool = False
    freeze_views: bool = False
    optimizer: str = "adam"
    probe_every: int = 0
    probe_ratio: tuple = (1, 1, 8)
    probe_repeats: int = 3

    def __post_init__(self):
        if self.warmup_epochs < 1 or self.interval < 1:
            raise ValueError("warm-up and interval epochs must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("learning rate and temperature must be positive")
        if not -1.0 <= self.t_s <= 1.0:
            raise ValueError("t_s is a cosine threshold in [-1, 1]")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.probe_every < 0:
            raise ValueError("probe_every must be >= 0")

    def literal(self) -> TrainConfig:
        """The pseudo-code reading: one view draw, plain descent, last iterate."""
        return replace(self, freeze_views=True, optimizer="sgd", probe_every=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probe_ratio"] = list(self.probe_ratio)
        return d


@dataclass
class TrainState:
    params: EncoderParams
    optimizer: object
    epoch: int = 0
    losses: list = field(default_factory=list)
    frozen: ViewPair | None = None


@dataclass
class RoundRecord:
    round_id: int
    first_epoch: int
    num_unlabeled: int
    same_class_ratio: float | None = None
    sup_sim: float | None = None
    probe_valid: float | None = None
    probe_test: float | None = None
    sets: SampleSets | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "sets"}


@dataclass
class RunReport:
    config: TrainConfig
    losses: list[float]
    rounds: list[RoundRecord]
    final_params: EncoderParams
    best_params: EncoderParams | None = None
    best_round: int | None = None
    warmup_probe: ProbeResult | None = None
    probes: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "losses": list(self.losses),
            "rounds": [r.to_dict() for r in self.rounds],
            "best_round": self.best_round,
            "warmup_probe": None if self.warmup_probe is None else self.warmup_probe.to_dict(),
            "probes": {str(k): v.to_dict() for k, v in self.probes.items()},
            "wall_clock_seconds": self.wall_clock,
        }


def new_state(g: Graph, cfg: TrainConfig, params: EncoderParams | None = None) -> TrainState:
    if params is None:
        params = init_params(g.feature_dim, cfg.hidden_dim, cfg.out_dim, seed=cfg.seed,
                             projection=cfg.projection)
    return TrainState(params, make_optimizer(cfg.optimizer, cfg.lr))


def epoch_views(g: Graph, cfg: TrainConfig, state: TrainState) -> ViewPair:
    if cfg.freeze_views:
        if state.frozen is None:
            state.frozen = make_views(g, cfg.augment, (cfg.seed, 0))
        return state.frozen
    return make_views(g, cfg.augment, (cfg.seed, state.epoch))


def view_bundle(params: EncoderParams, views: ViewPair, tau: float) -> SimilarityBundle:
    u = project(params, encode(params, views.a1, views.g1.features))
    v = project(params, encode(params, views.a2, views.g2.features))
    return build_similarity(u, v, tau, guard=True)


def _descend(state: TrainState, loss: nm.Tensor) -> None:
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value} at epoch {state.epoch}")
    nm.backward(loss)
    grads = [t.grad if t.grad is not None else np.zeros(t.shape) for t in state.params.tensors()]
    try:
        state.params = optimizer_step(state.optimizer, state.params, grads)
    except DivergenceError as exc:
        raise DivergenceError(f"epoch {state.epoch}: {exc}") from None
    state.losses.append(value)
    state.epoch += 1


def warmup(g: Graph, cfg: TrainConfig, state: TrainState | None = None) -> TrainState:
    """``cfg.warmup_epochs`` epochs of InfoNCE descent."""
    state = state or new_state(g, cfg)
    for _ in range(cfg.warmup_epochs):
        bundle = view_bundle(state.params, epoch_views(g, cfg, state), cfg.tau)
        _descend(state, infonce_global(bundle))
    return state


def training_round(state: TrainState, g: Graph, cfg: TrainConfig, round_id: int) -> RoundRecord:
    """Resample the unlabeled positives with the current encoder, then K corrected epochs.

    The sets and their weights stay fixed for the whole round; the similarity
    bundle is rebuilt every epoch from the current parameters.
    """
    first_epoch = state.epoch
    bundle = view_bundle(state.params, epoch_views(g, cfg, state), cfg.tau)
    sets = classify_unlabeled(bundle, cfg.t_s, round_id=round_id)
    for k in range(cfg.interval):
        if k > 0:
            bundle = view_bundle(state.params, epoch_views(g, cfg, state), cfg.tau)
        _descend(state, corrected_global(bundle, sets, cfg.beta))
    return RoundRecord(round_id, first_epoch, len(sets), sets=sets)


def embed(params: EncoderParams, g: Graph) -> np.ndarray:
    """Encoder output on the original, unaugmented graph."""
    return encode(params, normalize_adjacency(g), g.features).data


def run_algorithm1(g: Graph, cfg: TrainConfig, sup_embeddings: np.ndarray | None = None,
                   masks: SplitMasks | None = None) -> RunReport:
    """Full pre-training schedule.

    Per-round SameClassRatio is recorded when ``g`` has labels, SupSim when
    ``sup_embeddings`` is given.  With ``cfg.probe_every > 0`` the encoder is
    probed after warm-up and every ``probe_every`` rounds, and the snapshot
    with the best validation accuracy is kept as ``best_params``.
    """
    start = time.perf_counter()
    probing = cfg.probe_every > 0 and g.labels is not None
    if probing and masks is None:
        masks = make_split(g, cfg.probe_ratio, cfg.seed)

    def probe(params):
        return linear_probe(embed(params, g), g.labels, masks, repeats=cfg.probe_repeats, seed=cfg.seed)

    state = warmup(g, cfg)
    log.info("warm-up done: %d epochs, loss %.6f", cfg.warmup_epochs, state.losses[-1])
    report = RunReport(cfg, state.losses, [], state.params)
    best_valid = -1.0
    if probing:
        res = probe(state.params)
        report.warmup_probe = res
        report.probes[0] = res
        best_valid = float(np.mean(res.valid_accuracies))
        report.best_params, report.best_round = state.params, 0

    for t in range(1, cfg.rounds + 1):
        rec = training_round(state, g, cfg, t)
        if g.labels is not None:
            rec.same_class_ratio = same_class_ratio(rec.sets, g.labels)
        if sup_embeddings is not None:
            rec.sup_sim = sup_sim(rec.sets, embeddings=sup_embeddings)
        if probing and t % cfg.probe_every == 0:
            res = probe(state.params)
            report.probes[t] = res
            rec.probe_valid = float(np.mean(res.valid_accuracies))
            rec.probe_test = res.mean
            if rec.probe_valid > best_valid:
                best_valid = rec.probe_valid
                report.best_params, report.best_round = state.params, t
        log.info("round %d: |D_U+|=%d loss %.6f", t, rec.num_unlabeled, state.losses[-1])
        report.rounds.append(rec)

    report.final_params = state.params
    report.losses = state.losses
    report.wall_clock = time.perf_counter() - start
    return report
