"""Plain-loop reference implementations of the contrastive objectives.

These work on raw numpy arrays, one pair at a time, and share no code with
the vectorized autograd path; they exist to check it.
"""

from __future__ import annotations

import math

import numpy as np


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def similarity(u: np.ndarray, v: np.ndarray, tau: float):
    """Return s(x, y) for (view, index) endpoints; views are 1 (u) and 2 (v)."""
    reps = {1: u, 2: v}

    def s(view_a, i, view_b, j):
        return math.exp(cosine(reps[view_a][i], reps[view_b][j]) / tau)

    return s


def denominator(u, v, tau, view, i) -> float:
    s = similarity(u, v, tau)
    other = 2 if view == 1 else 1
    n = len(u)
    total = 0.0
    for j in range(n):
        if j != i:
            total += s(view, i, view, j)
    for j in range(n):
        total += s(view, i, other, j)
    return total


def prob(u, v, tau, view, i, cand_view, j) -> float:
    s = similarity(u, v, tau)
    return s(view, i, cand_view, j) / denominator(u, v, tau, view, i)


def infonce_local(u, v, tau, view, i) -> float:
    other = 2 if view == 1 else 1
    return -math.log(prob(u, v, tau, view, i, other, i))


def infonce_global(u, v, tau) -> float:
    n = len(u)
    total = 0.0
    for i in range(n):
        total += infonce_local(u, v, tau, 1, i) + infonce_local(u, v, tau, 2, i)
    return total / (2 * n)


def candidate_mass(u, v, tau, view, i) -> float:
    """Sum of P over every candidate of one anchor (should be 1)."""
    other = 2 if view == 1 else 1
    n = len(u)
    total = 0.0
    for j in range(n):
        total += prob(u, v, tau, view, i, other, j)
        if j != i:
            total += prob(u, v, tau, view, i, view, j)
    return total


def normalized_similarity(u, v, tau) -> np.ndarray:
    n = len(u)
    s = np.array([[math.exp(cosine(u[i], v[j]) / tau) for j in range(n)] for i in range(n)])
    return (s - s.min()) / s.max()


def corrected_global(u, v, tau, pairs, weights, beta) -> float:
    """Mean over the 2N labeled positives of -log(P_lab * prod P_pair^(beta*w)).

    ``pairs`` holds (anchor_view, i, j) triples.
    """
    n = len(u)
    total = 0.0
    for view in (1, 2):
        other = 2 if view == 1 else 1
        for i in range(n):
            term = -math.log(prob(u, v, tau, view, i, other, i))
            for (pv, pi, pj), w in zip(pairs, weights):
                if pv == view and pi == i:
                    term -= beta * w * math.log(prob(u, v, tau, view, i, other, pj))
            total += term
    return total / (2 * n)


def linear_combination_global(u, v, tau, pairs, alphas) -> float:
    n = len(u)
    total = 0.0
    for view in (1, 2):
        other = 2 if view == 1 else 1
        for i in range(n):
            mass = prob(u, v, tau, view, i, other, i)
            for (pv, pi, pj), a in zip(pairs, alphas):
                if pv == view and pi == i:
                    mass += a * prob(u, v, tau, view, i, other, pj)
            total += -math.log(mass)
    return total / (2 * n)
