"""Coefficient fields of the operator: diffusion block, drift-order and
zeroth-order terms, with sampling-based validation.

Evaluation contract (shared by quadrature code everywhere): callables are
reentrant and vectorized, taking times t (scalar or broadcastable array) and
points X of shape (..., N), returning

    a2 -> (..., d, d)      symmetric diffusion block
    a1 -> (..., d)         first-order coefficients
    a0 -> (...)            zeroth-order coefficient

No continuity in t is ever assumed by consumers; time quadrature against
these fields uses midpoint-style sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import expr as expr_mod
from .errors import ConfigError
from .structure import BlockStructure, anisotropic_norm

_PROBE_POINTS = 16


@dataclass
class CoefficientField:
    """Operator coefficients with their declared analytic parameters.

    mu is the declared ellipticity constant (eigenvalues of a2 lie in
    [1/mu, mu]); alpha the declared spatial Hoelder exponent w.r.t. the
    intrinsic norm; holder_norms optional declared bounds per coefficient.
    Declared values are trusted inputs that the validators cross-check by
    sampling.
    """

    d: int
    N: int
    a2: callable
    a1: callable | None = None
    a0: callable | None = None
    mu: float = 1.0
    alpha: float = 1.0
    T_bar: float = 1.0
    holder_norms: dict = field(default_factory=dict)
    a2_space_free: bool | None = None
    a0_value: float | None = None  # set when a0 is a known constant

    def __post_init__(self):
        if not 1 <= self.d <= self.N:
            raise ConfigError(f"need 1 <= d <= N, got d={self.d}, N={self.N}")
        if self.mu < 1.0:
            raise ConfigError("ellipticity constant must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("Hoelder exponent must lie in (0, 1]")
        if self.a2_space_free is None:
            self.a2_space_free = self._probe_space_free()

    # -- zero / constancy structure -----------------------------------------

    @property
    def lower_order_free(self) -> bool:
        return self.a1 is None and self.a0 is None

    @property
    def mismatch_free(self) -> bool:
        """True when freezing along drift curves changes nothing: the
        diffusion block does not depend on x and there are no lower-order
        terms, so the correction series vanishes identically."""
        return bool(self.a2_space_free) and self.lower_order_free

    def _probe_space_free(self) -> bool:
        rng = np.random.default_rng(1234)
        t = rng.uniform(0.0, self.T_bar, _PROBE_POINTS)
        X = rng.standard_normal((_PROBE_POINTS, self.N)) * 3.0
        Y = rng.standard_normal((_PROBE_POINTS, self.N)) * 3.0
        return bool(np.array_equal(self.eval_a2(t, X), self.eval_a2(t, Y)))

    # -- normalized evaluation ----------------------------------------------

    def eval_a2(self, t, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.asarray(self.a2(t, X), dtype=float)
        want = X.shape[:-1] + (self.d, self.d)
        return np.broadcast_to(out, want)

    def eval_a1(self, t, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.a1 is None:
            return np.zeros(X.shape[:-1] + (self.d,))
        return np.broadcast_to(np.asarray(self.a1(t, X), dtype=float),
                               X.shape[:-1] + (self.d,))

    def eval_a0(self, t, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.a0 is None:
            return np.zeros(X.shape[:-1])
        return np.broadcast_to(np.asarray(self.a0(t, X), dtype=float), X.shape[:-1])


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def constant_field(d: int, N: int, diffusion=1.0, mu: float | None = None,
                   alpha: float = 1.0, T_bar: float = 1.0) -> CoefficientField:
    """Constant-coefficient field; diffusion is a scalar delta or a (d, d)
    symmetric positive definite matrix."""
    A = np.asarray(diffusion, dtype=float)
    if A.ndim == 0:
        A = float(A) * np.eye(d)
    if A.shape != (d, d) or not np.allclose(A, A.T):
        raise ConfigError("constant diffusion must be a symmetric (d, d) matrix")
    eigs = np.linalg.eigvalsh(A)
    if eigs[0] <= 0:
        raise ConfigError("constant diffusion must be positive definite")
    if mu is None:
        mu = max(eigs[-1], 1.0 / eigs[0])

    def a2(t, X):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(A, X.shape[:-1] + (d, d))

    return CoefficientField(d=d, N=N, a2=a2, mu=float(mu), alpha=alpha, T_bar=T_bar,
                            a2_space_free=True, a0_value=None)


def _expr_matrix_eval(asts, d):
    def a2(t, X):
        X = np.asarray(X, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        base = np.broadcast(np.empty(X.shape[:-1]), t_arr)
        out = np.empty(base.shape + (d, d))
        for i in range(d):
            for j in range(d):
                out[..., i, j] = expr_mod.evaluate(asts[i][j], t, X)
        return out

    return a2


def field_from_exprs(d: int, N: int, a2_srcs, a1_srcs=None, a0_src=None,
                     mu: float = 1.0, alpha: float = 1.0, T_bar: float = 1.0,
                     holder_norms: dict | None = None) -> CoefficientField:
    """Build a field from expression sources (strings or parsed nodes).

    a2_srcs is a d x d nested list and must be textually or structurally
    symmetric; a1_srcs a length-d list; a0_src a single expression. Entries
    evaluating to plain zero may be given as None.
    """
    def _node(src):
        return src if not isinstance(src, str) else expr_mod.parse_expr(src)

    a2_ast = [[_node(a2_srcs[i][j]) for j in range(d)] for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            if a2_ast[i][j] != a2_ast[j][i]:
                raise ConfigError(f"diffusion entries ({i},{j}) and ({j},{i}) differ")
    for row in a2_ast:
        for node in row:
            if expr_mod.max_x_index(node) > N:
                raise ConfigError("expression references a coordinate beyond N")

    space_free = not any(expr_mod.uses_space(n) for row in a2_ast for n in row)
    a2 = _expr_matrix_eval(a2_ast, d)

    a1 = None
    if a1_srcs is not None and any(s is not None for s in a1_srcs):
        a1_ast = [_node(s) if s is not None else expr_mod.Num(0.0) for s in a1_srcs]

        def a1(t, X):  # noqa: F811 - deliberate rebinding
            X = np.asarray(X, dtype=float)
            out = np.empty(np.broadcast(np.empty(X.shape[:-1]), np.asarray(t)).shape + (d,))
            for i in range(d):
                out[..., i] = expr_mod.evaluate(a1_ast[i], t, X)
            return out

    a0 = None
    a0_value = None
    if a0_src is not None:
        a0_ast = _node(a0_src)
        if isinstance(a0_ast, expr_mod.Num):
            a0_value = a0_ast.value
            if a0_value == 0.0:
                a0_ast = None
        if a0_ast is not None:
            def a0(t, X):
                return np.asarray(expr_mod.evaluate(a0_ast, t, X))

    return CoefficientField(d=d, N=N, a2=a2, a1=a1, a0=a0, mu=mu, alpha=alpha,
                            T_bar=T_bar, holder_norms=holder_norms or {},
                            a2_space_free=space_free, a0_value=a0_value)


# ---------------------------------------------------------------------------
# Sampling validators
# ---------------------------------------------------------------------------

def validate_ellipticity(c: CoefficientField, samples: int = 512, seed: int = 0,
                         box_radius: float = 5.0) -> tuple[bool, float]:
    """Probe eigenvalues of the diffusion block over quasi-random (t, x).

    ok requires every eigenvalue inside [1/mu, mu] with slack 1e-12;
    observed_mu is the tightest constant consistent with the samples (a lower
    bound on the true one). Raises on a non-symmetric sample.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    sob = qmc.Sobol(d=c.N + 1, scramble=True, seed=seed)
    U = sob.random(samples)
    t = U[:, 0] * c.T_bar
    X = (U[:, 1:] * 2.0 - 1.0) * box_radius
    A = c.eval_a2(t, X)
    asym = np.abs(A - np.swapaxes(A, -1, -2)).max()
    if asym > 1e-12 * max(np.abs(A).max(), 1.0):
        raise ConfigError(f"diffusion block not symmetric (max asymmetry {asym:.2e})")
    eigs = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    lo, hi = eigs.min(), eigs.max()
    slack = 1e-12
    ok = bool(lo >= 1.0 / c.mu - slack and hi <= c.mu + slack and lo > 0)
    observed = float(max(hi, 1.0 / lo)) if lo > 0 else float("inf")
    return ok, observed


def _log_mixed(rng, n, radius):
    mag = 10.0 ** rng.uniform(-6.0, np.log10(radius), n)
    return np.where(rng.random(n) < 0.5, -mag, mag)


def _coefficient_entries(c: CoefficientField):
    entries = [(f"a2[{i}][{j}]", lambda t, X, i=i, j=j: c.eval_a2(t, X)[..., i, j])
               for i in range(c.d) for j in range(i, c.d)]
    if c.a1 is not None:
        entries += [(f"a1[{i}]", lambda t, X, i=i: c.eval_a1(t, X)[..., i])
                    for i in range(c.d)]
    if c.a0 is not None:
        entries.append(("a0", lambda t, X: c.eval_a0(t, X)))
    return entries


def estimate_holder_modulus(c: CoefficientField, s: BlockStructure,
                            samples: int = 20000, seed: int = 0,
                            box_radius: float = 3.0) -> dict:
    """Empirical spatial Hoelder quotients per coefficient.

    Reports sup |a(t, x) - a(t, y)| / |x - y|_B^alpha over sampled pairs at
    sampled times: a lower bound for the true semi-norm, monotone
    non-decreasing in the sample count for a fixed seed. Pairs mix global
    draws with single-coordinate moves at log-spread magnitudes so that small
    intrinsic distances are probed.
    """
    rng = np.random.default_rng(seed)
    n = max(samples, 1)
    t = rng.uniform(0.0, c.T_bar, n)
    X = _log_mixed(rng, n * c.N, box_radius).reshape(n, c.N)
    Y = np.where(rng.random((n, 1)) < 0.5,
                 _log_mixed(rng, n * c.N, box_radius).reshape(n, c.N), X)
    # single-coordinate moves on the half that copied X
    same = np.all(Y == X, axis=1)
    idx = rng.integers(0, c.N, n)
    moved = X.copy()
    moved[np.arange(n), idx] = np.where(rng.random(n) < 0.25, 0.0,
                                        _log_mixed(rng, n, box_radius))
    Y[same] = moved[same]

    dist = anisotropic_norm(X - Y, s) ** c.alpha
    keep = dist > 1e-300
    out = {}
    for name, f in _coefficient_entries(c):
        diff = np.abs(np.asarray(f(t, X)) - np.asarray(f(t, Y)))
        out[name] = float(np.max(diff[keep] / dist[keep])) if keep.any() else 0.0
    return out
