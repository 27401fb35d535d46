"""Quadrature rules and deterministic helpers shared across modules.

All reductions are plain numpy sums over arrays assembled in a fixed index
order, so results do not depend on worker counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre(order: int):
    """Nodes and weights on [-1, 1]."""
    x, w = leggauss(order)
    return x, w


def legendre_panel_nodes(a: float, b: float, panels: int, order: int):
    """Composite Gauss-Legendre nodes/weights on [a, b] with equal panels.

    Returns nodes (panels*order,), weights (panels*order,) and the panel
    index of each node.
    """
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    lo = edges[:-1]
    h = (edges[1:] - lo)[:, None]
    nodes = lo[:, None] + (x[None, :] + 1.0) * 0.5 * h
    weights = np.broadcast_to(w[None, :] * 0.5, (panels, order)) * h
    panel_idx = np.repeat(np.arange(panels), order)
    return nodes.ravel(), weights.ravel(), panel_idx


@lru_cache(maxsize=None)
def gauss_jacobi01(order: int, a: float, b: float):
    """Rule for integrals of u^(a-1) (1-u)^(b-1) g(u) over (0, 1).

    Returns nodes u in (0,1) and weights v with
    sum(v * g(u)) ~ integral of the weighted g.
    """
    if a == 1.0 and b == 1.0:
        x, w = gauss_legendre(order)
        return (1.0 + x) * 0.5, w * 0.5
    x, w = roots_jacobi(order, b - 1.0, a - 1.0)
    u = (1.0 + x) * 0.5
    v = w * 2.0 ** (1.0 - a - b)
    return u, v


@lru_cache(maxsize=None)
def singular_time_rule(order: int, a: float):
    """Rule for integrals of F over (0, 1) where F behaves like
    u^(a-1) (1-u)^(a-1) times a series in sqrt(u) and sqrt(1-u) at the
    endpoints: returns nodes u and weights w with sum(w * F(u)) ~ integral.

    The substitution u = sin^2(pi v / 2) turns every half power into an
    integer one; the remaining endpoint weight v^(2a-1) is handled by a
    Gauss-Jacobi rule in v, so convergence is spectral for the whole class.
    """
    v, wv = gauss_jacobi01(order, 2.0 * a, 2.0 * a)
    theta = 0.5 * np.pi * v
    u = np.sin(theta) ** 2
    du = np.pi * np.sin(theta) * np.cos(theta)
    w = wv * du * (v * (1.0 - v)) ** (1.0 - 2.0 * a)
    return u, w


@lru_cache(maxsize=None)
def hermite_prob(order: int):
    """Probabilists' Gauss-Hermite rule: sum(w * f(z)) ~ E[f(Z)], Z ~ N(0,1)."""
    z, w = hermegauss(order)
    return z, w / w.sum()


@lru_cache(maxsize=None)
def tensor_hermite(order: int, dim: int):
    """Tensorized probabilists' rule: Z (order^dim, dim), W (order^dim,)."""
    z, w = hermite_prob(order)
    grids = np.meshgrid(*([z] * dim), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=-1)
    W = np.ones(Z.shape[0])
    for g in np.meshgrid(*([w] * dim), indexing="ij"):
        W = W * g.ravel()
    return Z, W


@lru_cache(maxsize=None)
def barycentric_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Hermite nodes with their barycentric interpolation weights."""
    z, _ = hermite_prob(order)
    w = np.ones(order)
    for i in range(order):
        diff = z[i] - np.delete(z, i)
        w[i] = 1.0 / np.prod(diff)
    return z, w


def barycentric_matrix(order: int, zq: np.ndarray) -> np.ndarray:
    """Interpolation matrix (M, order) from values at Hermite nodes to points zq."""
    z, w = barycentric_weights(order)
    diff = zq[:, None] - z[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-14)
    diff = np.where(exact, 1.0, diff)
    terms = w[None, :] / diff
    mat = terms / terms.sum(axis=1, keepdims=True)
    hit_rows = exact.any(axis=1)
    if np.any(hit_rows):
        mat[hit_rows] = np.where(exact[hit_rows], 1.0, 0.0)
    return mat


def map_ordered(fn, items, threads: int = 1) -> list:
    """Apply fn to items, returning results in input order.

    With threads > 1 a thread pool is used; outputs are identical to the
    sequential path because assembly order is fixed by the input order.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
