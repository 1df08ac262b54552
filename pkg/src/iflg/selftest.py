"""Gradient-check and oracle-equivalence suite behind ``iflg selftest``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import contrastive as C
from . import numeric as nm
from . import oracles
from .encoder import EncoderParams, encode, init_params
from .graph import SbmSpec, normalize_adjacency, sbm_generate
from .numeric import SparseMatrix, Tensor, grad_check

GRAD_TOL = 1e-5
ORACLE_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<42} {self.value:.3e}  (tol {self.tolerance:.0e})"


def _leaf(rng, shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def _relu_safe(rng, shape):
    # keep entries away from the kink so central differences are valid
    x = rng.standard_normal(shape)
    x[np.abs(x) < 0.05] += 0.2
    return Tensor(x, requires_grad=True)


def primitive_cases(rng):
    """(name, function, params) for every differentiable primitive."""
    a, b = (4, 5), (5, 3)
    sparse = SparseMatrix.from_dense(np.where(rng.random((6, 6)) < 0.4, rng.standard_normal((6, 6)), 0.0))
    w = rng.standard_normal((4, 5))
    return [
        ("add", lambda p: nm.sum((p[0] + p[1]) * w), [_leaf(rng, a), _leaf(rng, a)]),
        ("add (row broadcast)", lambda p: nm.sum((p[0] + p[1]) * w), [_leaf(rng, a), _leaf(rng, (1, 5))]),
        ("sub (column broadcast)", lambda p: nm.sum((p[0] - p[1]) * w), [_leaf(rng, a), _leaf(rng, (4, 1))]),
        ("mul", lambda p: nm.sum(p[0] * p[1] * w), [_leaf(rng, a), _leaf(rng, a)]),
        ("mul (scalar broadcast)", lambda p: nm.sum(p[0] * p[1] * w), [_leaf(rng, a), _leaf(rng, (1, 1))]),
        ("div", lambda p: nm.sum(p[0] / p[1] * w), [_leaf(rng, a), _leaf(rng, a, positive=True)]),
        ("neg", lambda p: nm.sum(-p[0] * w), [_leaf(rng, a)]),
        ("exp", lambda p: nm.sum(nm.exp(p[0]) * w), [_leaf(rng, a)]),
        ("log", lambda p: nm.sum(nm.log(p[0]) * w), [_leaf(rng, a, positive=True)]),
        ("relu", lambda p: nm.sum(nm.relu(p[0]) * w), [_relu_safe(rng, a)]),
        ("matmul", lambda p: nm.sum(nm.exp(nm.matmul(p[0], p[1]) * 0.1)), [_leaf(rng, a), _leaf(rng, b)]),
        ("spmm", lambda p: nm.sum(nm.exp(nm.spmm(sparse, p[0]) * 0.3)), [_leaf(rng, (6, 3))]),
        ("transpose", lambda p: nm.sum(nm.transpose(p[0]) * w.T), [_leaf(rng, a)]),
        ("row_sum", lambda p: nm.sum(nm.exp(nm.row_sum(p[0]) * 0.2)), [_leaf(rng, a)]),
        ("mean", lambda p: nm.mean(p[0] * p[0]), [_leaf(rng, a)]),
        ("diag", lambda p: nm.sum(nm.exp(nm.diag(p[0]))), [_leaf(rng, (4, 4))]),
        ("take", lambda p: nm.sum(nm.exp(nm.take(p[0], [0, 1, 1, 3], [2, 0, 0, 4]))), [_leaf(rng, a)]),
        ("take_rows", lambda p: nm.sum(nm.take_rows(p[0], [2, 0, 2]) * w[:3]), [_leaf(rng, a)]),
        ("logsumexp_rows", lambda p: nm.sum(nm.logsumexp_rows(p[0]) * w[:, :1]), [_leaf(rng, a)]),
        ("cosine_rows", lambda p: nm.sum(nm.cosine_rows(p[0], p[1]) * rng_fixed(6, 7)),
         [_leaf(rng, (6, 8)), _leaf(rng, (7, 8))]),
        ("cosine_rows (guarded)", lambda p: nm.sum(nm.cosine_rows(p[0], p[1], 1e-12) * rng_fixed(6, 7)),
         [_leaf(rng, (6, 8)), _leaf(rng, (7, 8))]),
    ]


def rng_fixed(r, c):
    return np.random.default_rng(12345).standard_normal((r, c))


def toy_problem(seed: int, n: int = 8, f: int = 6):
    """A small SBM graph, two fixed views and an encoder for end-to-end checks."""
    g = sbm_generate(SbmSpec((n // 2, n - n // 2), 0.8, 0.2, f, mu=2.0, seed=seed))
    a_hat = normalize_adjacency(g)
    rng = np.random.default_rng(seed)
    x1 = g.features * (rng.random(f) > 0.2)
    x2 = g.features * (rng.random(f) > 0.2)
    params = init_params(f, 5, 4, seed=seed)
    return a_hat, x1, x2, params


def end_to_end_cases(seed: int):
    a_hat, x1, x2, params = toy_problem(seed)

    def bundle(p):
        ep = EncoderParams(p[0], p[1])
        return C.build_similarity(encode(ep, a_hat, x1), encode(ep, a_hat, x2), 0.5, guard=False)

    leaves = [params.W1, params.W2]
    sets = C.classify_unlabeled(bundle(leaves), 0.0)
    alpha = np.linspace(0.1, 0.9, len(sets))
    return [
        ("encoder + infonce_global", lambda p: C.infonce_global(bundle(p)), leaves),
        ("encoder + corrected_global", lambda p: C.corrected_global(bundle(p), sets, 1.0), leaves),
        ("encoder + linear_combination_global",
         lambda p: C.linear_combination_global(bundle(p), sets, alpha), leaves),
    ]


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, f, params in primitive_cases(rng) + end_to_end_cases(seed):
        err = grad_check(f, params, eps=1e-5)
        out.append(CheckResult(f"grad {name}", err < GRAD_TOL, err, GRAD_TOL))
    return out


def random_instance(rng, n: int, d: int = 4, tau: float = 0.5, t_s: float = 0.3):
    u = rng.standard_normal((n, d))
    v = u + 0.7 * rng.standard_normal((n, d))
    bundle = C.build_similarity(u, v, tau, guard=False)
    sets = C.classify_unlabeled(bundle, t_s)
    return u, v, bundle, sets


def oracle_checks(seed: int = 0, instances: int = 5, max_nodes: int = 12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = {"infonce_global": 0.0, "log_prob normalization": 0.0, "corrected_global": 0.0,
             "linear_combination_global": 0.0, "reduction: empty sets": 0.0, "reduction: beta=0": 0.0}
    for _ in range(instances):
        n = int(rng.integers(2, max_nodes + 1))
        tau = float(rng.uniform(0.2, 1.0))
        u, v, bundle, sets = random_instance(rng, n, tau=tau)
        pairs, w = sets.pairs(), sets.weights.tolist()
        base = C.infonce_global(bundle).item()
        worst["infonce_global"] = max(worst["infonce_global"], abs(base - oracles.infonce_global(u, v, tau)))
        for view in (1, 2):
            cross, intra = C.candidate_log_probs(bundle, view)
            off = ~np.eye(n, dtype=bool)
            mass = np.exp(cross.data).sum(axis=1) + (np.exp(intra.data) * off).sum(axis=1)
            worst["log_prob normalization"] = max(worst["log_prob normalization"], float(np.abs(mass - 1).max()))
        beta = float(rng.uniform(0.5, 2.0))
        corr = C.corrected_global(bundle, sets, beta).item()
        worst["corrected_global"] = max(worst["corrected_global"],
                                        abs(corr - oracles.corrected_global(u, v, tau, pairs, w, beta)))
        alpha = rng.uniform(0, 1, len(sets))
        lin = C.linear_combination_global(bundle, sets, alpha).item()
        worst["linear_combination_global"] = max(
            worst["linear_combination_global"],
            abs(lin - oracles.linear_combination_global(u, v, tau, pairs, alpha.tolist())))
        empty = C.corrected_global(bundle, C.SampleSets.empty(n), beta).item()
        worst["reduction: empty sets"] = max(worst["reduction: empty sets"], abs(empty - base))
        zero = C.corrected_global(bundle, sets, 0.0).item()
        worst["reduction: beta=0"] = max(worst["reduction: beta=0"], abs(zero - base))
    return [CheckResult(f"oracle {k}", val <= ORACLE_TOL, val, ORACLE_TOL) for k, val in worst.items()]


def spmm_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    dense = np.where(rng.random((16, 16)) < 0.1, rng.standard_normal((16, 16)), 0.0)
    b = rng.standard_normal((16, 4))
    err = float(np.abs(nm.spmm(SparseMatrix.from_dense(dense), b).data - dense @ b).max())
    return CheckResult("oracle spmm == dense matmul", err <= ORACLE_TOL, err, ORACLE_TOL)


def run_selftest(seed: int = 0) -> tuple[bool, list[CheckResult], float]:
    start = time.perf_counter()
    results = gradient_checks(seed) + oracle_checks(seed) + [spmm_check(seed)]
    elapsed = time.perf_counter() - start
    return all(r.passed for r in results), results, elapsed
