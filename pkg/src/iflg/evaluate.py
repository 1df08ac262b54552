"""Downstream evaluation: linear probe, purity of discovered positives, bias audit."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .augment import AugmentConfig, make_views
from .contrastive import SampleSets
from .encoder import EncoderParams, adam_step, AdamState, encode, glorot, init_params
from .graph import DataError, Graph, SplitMasks, make_split, normalize_adjacency
from .numeric import Tensor


def _require_labels(labels):
    if labels is None:
        raise DataError("this evaluation needs node labels")
    return np.asarray(labels, dtype=np.int64)


def _softmax_xent(logits: Tensor, idx: np.ndarray, y: np.ndarray) -> Tensor:
    picked = nm.take_rows(logits, idx)
    lse = nm.logsumexp_rows(picked)
    target = nm.take(picked, np.arange(len(idx)), y[idx])
    return nm.mean(lse - target)


def _accuracy(logits: np.ndarray, idx: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits[idx], axis=1) == y[idx]))


# --------------------------------------------------------------- linear probe

@dataclass
class ProbeResult:
    accuracies: list[float]
    valid_accuracies: list[float]
    mean: float
    std: float
    split_seed: int
    split_sizes: tuple[int, int, int]
    hyperparameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_sizes"] = list(self.split_sizes)
        return d


def standardize(x: np.ndarray) -> np.ndarray:
    """Column z-scores; constant columns are only centred."""
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def linear_probe(embeddings, labels, masks: SplitMasks, repeats: int = 3, epochs: int = 300,
                 lr: float = 1e-2, seed: int = 0, preprocess: bool = True) -> ProbeResult:
    """Softmax regression on frozen embeddings.

    Trained full-batch with Adam on ``masks.train``; the reported test accuracy
    is the one at the epoch with the best validation accuracy (earliest on
    ties).  Repeats differ only in the classifier's initialisation seed.
    """
    y = _require_labels(labels)
    for name, idx in (("train", masks.train), ("valid", masks.valid), ("test", masks.test)):
        if len(idx) == 0:
            raise DataError(f"empty {name} split")
    x = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings, dtype=np.float64)
    if preprocess:
        x = standardize(x)
    n_classes = int(y.max()) + 1
    xt = nm.constant(x)
    tests, valids = [], []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        w = Tensor(glorot(rng, x.shape[1], n_classes), requires_grad=True)
        b = Tensor(np.zeros((1, n_classes)), requires_grad=True)
        opt = AdamState(lr=lr)
        best_valid, best_test = -1.0, 0.0
        for _ in range(epochs):
            logits = xt @ w + b
            # score the parameters that produced these logits
            va = _accuracy(logits.data, masks.valid, y)
            if va > best_valid:
                best_valid, best_test = va, _accuracy(logits.data, masks.test, y)
            loss = _softmax_xent(logits, masks.train, y)
            nm.backward(loss)
            w, b = adam_step(opt, [w, b], [w.grad, b.grad])
        logits = (xt @ w + b).data
        va = _accuracy(logits, masks.valid, y)
        if va > best_valid:
            best_valid, best_test = va, _accuracy(logits, masks.test, y)
        tests.append(best_test)
        valids.append(best_valid)
    return ProbeResult(
        accuracies=tests,
        valid_accuracies=valids,
        mean=float(np.mean(tests)),
        std=float(np.std(tests)),
        split_seed=masks.seed,
        split_sizes=masks.sizes(),
        hyperparameters={"repeats": repeats, "epochs": epochs, "lr": lr, "seed": seed,
                         "optimizer": "adam", "preprocess": "standardize" if preprocess else "none"},
    )


# ------------------------------------------------------------ purity metrics

def pair_nodes(sets: SampleSets) -> tuple[np.ndarray, np.ndarray]:
    """Original node ids (anchor, candidate) of every unlabeled positive."""
    return sets.rows, sets.cols


def same_class_ratio(sets: SampleSets, labels) -> float | None:
    y = _require_labels(labels)
    if len(sets) == 0:
        return None
    a, c = pair_nodes(sets)
    return float(np.mean(y[a] == y[c]))


def mean_pair_cosine(h: np.ndarray, a: np.ndarray, c: np.ndarray) -> float:
    ha, hc = h[a], h[c]
    num = (ha * hc).sum(axis=1)
    den = np.linalg.norm(ha, axis=1) * np.linalg.norm(hc, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(den > 0, num / den, 0.0)
    return float(cos.mean())


@dataclass(frozen=True)
class SupervisedConfig:
    """Reference encoder trained with labels, used for SupSim and the audit."""

    hidden_dim: int = 64
    out_dim: int = 32
    epochs: int = 200
    lr: float = 1e-2
    ratio: tuple = (8, 1, 1)
    seed: int = 0


def train_supervised(g: Graph, cfg: SupervisedConfig = SupervisedConfig()) -> tuple[EncoderParams, Tensor]:
    """Two-layer GCN plus a linear head, softmax cross-entropy on the train split."""
    y = _require_labels(g.labels)
    masks = make_split(g, cfg.ratio, cfg.seed)
    params = init_params(g.feature_dim, cfg.hidden_dim, cfg.out_dim, seed=cfg.seed)
    head = Tensor(glorot(np.random.default_rng([cfg.seed, 1]), cfg.out_dim, g.num_classes), requires_grad=True)
    a_hat = normalize_adjacency(g)
    x = nm.constant(g.features)
    opt = AdamState(lr=cfg.lr)
    for _ in range(cfg.epochs):
        logits = encode(params, a_hat, x) @ head
        loss = _softmax_xent(logits, masks.train, y)
        nm.backward(loss)
        w1, w2, head = adam_step(opt, [params.W1, params.W2, head],
                                 [params.W1.grad, params.W2.grad, head.grad])
        params = EncoderParams(w1, w2)
    return params, head


def supervised_embeddings(g: Graph, cfg: SupervisedConfig = SupervisedConfig()) -> np.ndarray:
    params, _ = train_supervised(g, cfg)
    return encode(params, normalize_adjacency(g), g.features).data


def sup_sim(sets: SampleSets, g: Graph | None = None, sup_cfg: SupervisedConfig | None = None,
            embeddings: np.ndarray | None = None) -> float | None:
    """Mean cosine of the discovered pairs under supervised representations.

    Pass precomputed ``embeddings`` to avoid retraining the reference encoder.
    """
    if embeddings is None:
        if g is None:
            raise ValueError("need either a graph or precomputed embeddings")
        _require_labels(g.labels)
        embeddings = supervised_embeddings(g, sup_cfg or SupervisedConfig())
    if len(sets) == 0:
        return None
    a, c = pair_nodes(sets)
    return mean_pair_cosine(np.asarray(embeddings), a, c)


@dataclass
class PurityReport:
    same_class_ratio: float | None
    sup_sim: float | None
    size: int
    round_id: int

    def to_dict(self) -> dict:
        return asdict(self)


def purity_report(sets: SampleSets, labels, sup_embeddings=None) -> PurityReport:
    return PurityReport(
        same_class_ratio=same_class_ratio(sets, labels),
        sup_sim=None if sup_embeddings is None else sup_sim(sets, embeddings=sup_embeddings),
        size=len(sets),
        round_id=sets.round_id,
    )


# ----------------------------------------------------------------- bias audit

def rearrange(s: np.ndarray) -> np.ndarray:
    """Diagonal first, then each row's off-diagonal entries in descending order."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    off = s[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    return np.concatenate([np.diag(s).reshape(-1, 1), -np.sort(-off, axis=1)], axis=1)


def exceed_fraction(s_prime: np.ndarray) -> float:
    """Share of rows whose best non-augmented pair beats the augmented one."""
    if s_prime.shape[1] < 2:
        return 0.0
    return float(np.mean(s_prime[:, 1] > s_prime[:, 0]))


@dataclass
class BiasAudit:
    s_prime: np.ndarray
    top_k: int
    exceed_fraction: float
    metadata: dict = field(default_factory=dict)

    @property
    def excerpt(self) -> np.ndarray:
        return self.s_prime[:, :1 + self.top_k]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["augmented"] + [f"rank_{k + 1}" for k in range(self.excerpt.shape[1] - 1)])
            for row in self.excerpt:
                w.writerow([format(float(v), ".17g") for v in row])

    def summary(self) -> dict:
        return {
            "num_nodes": int(self.s_prime.shape[0]),
            "top_k": self.top_k,
            "exceed_fraction": self.exceed_fraction,
            "mean_augmented_similarity": float(self.s_prime[:, 0].mean()),
            **self.metadata,
        }


def bias_audit(g: Graph, aug_cfg: AugmentConfig = AugmentConfig(),
               sup_cfg: SupervisedConfig = SupervisedConfig(), top_k: int = 20,
               seed: int = 0) -> BiasAudit:
    """Supervised similarity of the two augmented views, rearranged row-wise."""
    _require_labels(g.labels)
    params, _ = train_supervised(g, sup_cfg)
    views = make_views(g, aug_cfg, seed)
    u = encode(params, views.a1, views.g1.features)
    v = encode(params, views.a2, views.g2.features)
    s = nm.cosine_rows(u, v, eps=1e-12).data
    sp = rearrange(s)
    meta = {"supervised": asdict(sup_cfg), "augment_seed": seed}
    meta["supervised"]["ratio"] = list(sup_cfg.ratio)
    return BiasAudit(sp, min(top_k, sp.shape[1] - 1), exceed_fraction(sp), meta)
