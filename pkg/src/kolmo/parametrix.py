"""The time-dependent parametrix: the kernel obtained by freezing the
diffusion coefficients along the drift curve through the terminal point.

For a target (T, y) the parametrix at (t, x) is the frozen kernel with
freezing pair (s, v) = (T, y); along the curve the coefficients keep their
full time dependence, which is what makes merely measurable time dependence
harmless. The mismatch operator applied to it (difference between the full
operator and its frozen principal part, lower-order terms included) is the
driving term of the correction series.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .kernel import FrozenKernel, drift_flow
from .model import ModelSpec

_ENTRY_BYTES_GUESS = 1024  # few small matrices per kernel


@dataclass
class ParametrixEval:
    """Value and x-derivatives of the parametrix at one point.

    grad/hess cover the non-degenerate coordinates; extended_grad, when
    requested, additionally carries the first-order derivatives over the
    first d + d_1 coordinates (needed by flow-commutator identities).
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray
    extended_grad: np.ndarray | None = None


class KernelCache:
    """Bounded memo of frozen kernels keyed by their construction data.

    The byte budget comes from the KOLMO_CACHE_MB environment variable
    (default 256). Each worker should own its cache or share one behind a
    read-mostly pattern; entries are immutable once stored.
    """

    def __init__(self, max_mb: float | None = None):
        if max_mb is None:
            max_mb = float(os.environ.get("KOLMO_CACHE_MB", "256"))
        self.max_entries = max(int(max_mb * 1e6 / _ENTRY_BYTES_GUESS), 16)
        self._store: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key, builder):
        found = self._store.get(key)
        if found is not None:
            self.hits += 1
            self._store.move_to_end(key)
            return found
        self.misses += 1
        value = builder()
        self._store[key] = value
        if len(self._store) > self.max_entries:
            self._store.popitem(last=False)
        return value


def parametrix_kernel(model: ModelSpec, t: float, T: float, y,
                      panels: int = 256, cache: KernelCache | None = None) -> FrozenKernel:
    """Frozen kernel with freezing pair (T, y) over the window (t, T)."""
    y = np.asarray(y, dtype=float)

    def build():
        return FrozenKernel.frozen(model.structure, model.B, model.coeffs,
                                   s_freeze=T, v=y, t=t, T=T, panels=panels)

    if cache is None:
        return build()
    key = ("pk", float(t), float(T), y.tobytes(), panels)
    return cache.get(key, build)


def parametrix_eval(model: ModelSpec, t: float, x, T: float, y,
                    want_extended: bool = False, panels: int = 256,
                    cache: KernelCache | None = None) -> ParametrixEval:
    """Evaluate the parametrix and its x-derivatives at (t, x)."""
    kern = parametrix_kernel(model, t, T, y, panels=panels, cache=cache)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = model.d
    k = d + (model.structure.dims[1] if model.structure.n_blocks > 1 else 0)
    n_grad = k if want_extended else d
    val, grad, hess = kern.with_derivatives(x[None, :], y[None, :], n_grad=n_grad)
    return ParametrixEval(
        value=float(val[0]),
        grad=grad[0, :d].copy(),
        hess=hess[0, :d, :d].copy(),
        extended_grad=grad[0].copy() if want_extended else None,
    )


def frozen_apply(coeffs, B, s_freeze: float, v, t: float, hess) -> float:
    """Apply the frozen principal part: half the contraction of the diffusion
    block (evaluated along the curve through (s_freeze, v)) with a Hessian."""
    v = np.asarray(v, dtype=float)
    pos = drift_flow(B).at(t - s_freeze) @ v
    A = coeffs.eval_a2(t, pos[None, :])[0]
    hess = np.asarray(hess, dtype=float)
    return 0.5 * float(np.sum(A * hess))


def mismatch_values(model: ModelSpec, t: float, X, kern: FrozenKernel, y) -> np.ndarray:
    """Driving term of the correction series at points X for one target.

    Computes (full operator - frozen principal part) applied to the
    parametrix: half the contraction of the coefficient increment with the
    Hessian, plus the lower-order terms of the full operator.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    c = model.coeffs
    Y = np.broadcast_to(y, X.shape)
    val, grad, hess = kern.with_derivatives(X, Y)
    frozen_pos = kern.pullback(y)
    dA = c.eval_a2(t, X) - c.eval_a2(t, frozen_pos[None, :])
    out = 0.5 * np.einsum("mij,mij->m", dA, hess)
    if c.a1 is not None:
        out += np.einsum("mi,mi->m", c.eval_a1(t, X), grad)
    if c.a0 is not None:
        out += c.eval_a0(t, X) * val
    return out


def mismatch(model: ModelSpec, t: float, x, T: float, y,
             panels: int = 256, cache: KernelCache | None = None) -> float:
    """Pointwise mismatch (full minus frozen operator) on the parametrix."""
    if model.coeffs.mismatch_free:
        return 0.0
    kern = parametrix_kernel(model, t, T, y, panels=panels, cache=cache)
    return float(mismatch_values(model, t, np.asarray(x, dtype=float)[None, :], kern, y)[0])
