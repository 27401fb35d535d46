"""Matrix exponentials, covariance integrals and frozen-coefficient Gaussian
kernels with analytic spatial derivatives.

The kernels here are Gaussian transition densities of linear-drift operators:

    value(t, x; T, y) = g(C, y - e^((T-t)B) x),
    g(C, z) = (2 pi)^(-N/2) det(C)^(-1/2) exp(-<C^-1 z, z> / 2).

Spatial derivatives are evaluated through the pulled-back form in the
variable w = e^(-(T-t)B) y - x with the matrix
H = e^(-(T-t)B) C e^(-(T-t)B)^T, which turns every x-derivative into a
polynomial factor in u = H^-1 w times the kernel value.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from ._quad import gauss_legendre, legendre_panel_nodes
from .errors import CovarianceError, NumericalError, SmallTimeError
from .structure import BlockStructure, reduced_drift

MIN_DT = 1e-8  # below this, det C ~ dt^Q underflows and evaluation refuses
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Matrix exponential families e^(s B)
# ---------------------------------------------------------------------------

class DriftFlow:
    """Evaluates e^(s B) for one drift matrix at many times.

    Nilpotent B (always the case for reduced drift matrices, and typical for
    the models here) uses the exact terminating power series; otherwise each
    time goes through scipy's scaling-and-squaring Pade implementation.
    """

    def __init__(self, B):
        self.B = np.asarray(B, dtype=float)
        if self.B.ndim != 2 or self.B.shape[0] != self.B.shape[1]:
            raise ValueError("drift matrix must be square")
        self.N = self.B.shape[0]
        self._powers = self._nilpotent_powers()

    def _nilpotent_powers(self):
        powers = [np.eye(self.N)]
        M = np.eye(self.N)
        scale = max(1.0, np.abs(self.B).max())
        for _ in range(self.N):
            M = M @ self.B
            if np.abs(M).max() <= 1e-300 * scale:
                return powers
            powers.append(M.copy())
        return None  # not nilpotent

    @property
    def nilpotent(self) -> bool:
        return self._powers is not None

    def at(self, s: float) -> np.ndarray:
        return self.many(np.asarray([s]))[0]

    def many(self, s) -> np.ndarray:
        """e^(s_k B) for an array of times, shape (M, N, N)."""
        s = np.asarray(s, dtype=float)
        if not np.all(np.isfinite(s)):
            raise NumericalError("non-finite time in matrix exponential")
        if self._powers is not None:
            out = np.zeros(s.shape + (self.N, self.N))
            fact = 1.0
            for m, P in enumerate(self._powers):
                if m > 0:
                    fact *= m
                out += (s[..., None, None] ** m / fact) * P
            return out
        flat = s.ravel()
        mats = np.empty((flat.size, self.N, self.N))
        for i, si in enumerate(flat):
            mats[i] = scipy.linalg.expm(si * self.B)
        return mats.reshape(s.shape + (self.N, self.N))


@lru_cache(maxsize=64)
def _flow_cache(key: bytes, shape: int) -> DriftFlow:
    B = np.frombuffer(key).reshape(shape, shape)
    return DriftFlow(B)


def drift_flow(B) -> DriftFlow:
    B = np.ascontiguousarray(B, dtype=float)
    return _flow_cache(B.tobytes(), B.shape[0])


def expm(B, t: float) -> np.ndarray:
    """e^(t B). Relative accuracy follows scipy's expm for non-nilpotent B."""
    B = np.asarray(B, dtype=float)
    if not np.isfinite(t) or not np.all(np.isfinite(t * B)):
        raise NumericalError(f"overflow in matrix exponential for t={t}")
    return drift_flow(B).at(float(t))


# ---------------------------------------------------------------------------
# Covariance integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovMatrix:
    """Covariance of a Gaussian kernel over a time interval.

    kind is "constant" (scalar diffusion delta in the first d coordinates),
    "frozen" (coefficients evaluated along a drift curve) or "reduced"
    (subdiagonal-only drift). quad_error, when set, is the observed
    refinement disagreement of the defining quadrature.
    """

    C: np.ndarray
    interval: tuple[float, float]
    kind: str
    quad_error: float | None = None

    @property
    def dt(self) -> float:
        return self.interval[1] - self.interval[0]

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.C)[0])


def _diff_order_for(flow: DriftFlow) -> int:
    # exact for nilpotent B: integrand entries are polynomials of degree
    # <= 2 (N - 1), handled by an N-point rule
    return flow.N + 1 if flow.nilpotent else 24


def _const_cov_matrix(dt: float, flow: DriftFlow, d: int) -> np.ndarray:
    """Integral of e^(s B) E e^(s B)^T over [0, dt], E the first-d projector."""
    if flow.nilpotent:
        x, w = gauss_legendre(_diff_order_for(flow))
        s = (x + 1.0) * 0.5 * dt
        ws = w * 0.5 * dt
        M = flow.many(s)[:, :, :d]
        return np.einsum("k,kai,kbi->ab", ws, M, M)
    prev = None
    panels = 4
    while panels <= 512:
        nodes, ws, _ = legendre_panel_nodes(0.0, dt, panels, 24)
        M = flow.many(nodes)[:, :, :d]
        C = np.einsum("k,kai,kbi->ab", ws, M, M)
        if prev is not None and np.abs(C - prev).max() <= 1e-13 * max(np.abs(C).max(), 1e-300):
            return C
        prev = C
        panels *= 2
    return prev


def covariance_const(delta: float, dt: float, B, d: int | None = None) -> CovMatrix:
    """delta times the prototype covariance over a window of length dt."""
    if dt <= 0:
        raise NumericalError(f"time increment must be positive, got {dt}")
    if delta <= 0:
        raise NumericalError("diffusion constant must be positive")
    B = np.asarray(B, dtype=float)
    if d is None:
        d = B.shape[0]
    C = delta * _const_cov_matrix(float(dt), drift_flow(B), d)
    return CovMatrix(C=C, interval=(0.0, float(dt)), kind="constant")


def covariance_reduced(dt: float, B, s: BlockStructure) -> CovMatrix:
    """Prototype covariance of the subdiagonal-only drift (delta = 1)."""
    if dt <= 0:
        raise NumericalError(f"time increment must be positive, got {dt}")
    B0 = reduced_drift(B, s)
    C = _const_cov_matrix(float(dt), drift_flow(B0), s.d)
    return CovMatrix(C=C, interval=(0.0, float(dt)), kind="reduced")


def frozen_covariances(coeffs, s_freeze: float, V, t: float, T: float, B,
                       panels: int = 256, order: int | None = None) -> np.ndarray:
    """Covariances of kernels frozen at (s_freeze, v) for a batch of points V.

    Integrates e^((T-tau)B) A(tau) e^((T-tau)B)^T over (t, T), where A(tau)
    carries the diffusion block evaluated at (tau, e^((tau-s_freeze)B) v).
    The coefficient is sampled once per panel at the midpoint (robust to mere
    measurability in time, and exact when discontinuities land on panel
    edges), while the smooth propagator factor is integrated per panel by
    Gauss-Legendre.

    V has shape (M, N); the result has shape (M, N, N).
    """
    if not t < T:
        raise NumericalError(f"need t < T, got t={t}, T={T}")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    flow = drift_flow(B)
    N, d = flow.N, coeffs.d
    if order is None:
        order = min(_diff_order_for(flow), 8)

    edges = np.linspace(t, T, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    # diffusion block along the frozen curve, shape (panels, M, d, d)
    curve = np.einsum("pab,mb->pma", flow.many(mids - s_freeze), V)
    A = coeffs.a2(mids[:, None], curve)
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite diffusion coefficient along frozen curve")

    x, w = gauss_legendre(order)
    sub = mids[:, None] + (x[None, :] * 0.5) * (edges[1] - edges[0])
    wsub = np.broadcast_to(w[None, :] * 0.5 * (edges[1] - edges[0]), sub.shape)
    M = flow.many(T - sub)[:, :, :, :d]  # (panels, order, N, d)
    # contract the propagator pair first: per panel a small (N d)^2 tensor,
    # then sweep the coefficient batch once
    E = M * np.sqrt(wsub)[..., None, None]
    F = np.einsum("pgai,pgbj->paibj", E, E)
    return np.einsum("paibj,pmij->mab", F, A)


def covariance_frozen(coeffs, s_freeze: float, v, t: float, T: float, B,
                      panels: int = 256, check: bool = False) -> CovMatrix:
    """Covariance of the kernel frozen at (s_freeze, v) over (t, T).

    With check=True the quadrature is repeated at half the panel count and
    the disagreement is reported in quad_error.
    """
    v = np.asarray(v, dtype=float)
    C = frozen_covariances(coeffs, s_freeze, v[None, :], t, T, B, panels=panels)[0]
    err = None
    if check:
        C2 = frozen_covariances(coeffs, s_freeze, v[None, :], t, T, B,
                                panels=max(panels // 2, 1))[0]
        err = float(np.abs(C - C2).max())
    return CovMatrix(C=C, interval=(float(t), float(T)), kind="frozen", quad_error=err)


# ---------------------------------------------------------------------------
# Gaussian densities
# ---------------------------------------------------------------------------

def gauss_density(C, z) -> float:
    """Gaussian density with covariance C at displacement z, via Cholesky."""
    Cm = C.C if isinstance(C, CovMatrix) else np.asarray(C, dtype=float)
    z = np.asarray(z, dtype=float)
    try:
        L = np.linalg.cholesky(Cm)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance not positive definite") from exc
    half = scipy.linalg.solve_triangular(L, z, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    q = float(half @ half)
    return float(np.exp(-0.5 * (q + logdet + Cm.shape[0] * LOG_2PI)))


# ---------------------------------------------------------------------------
# Frozen kernels with derivatives
# ---------------------------------------------------------------------------

class FrozenKernel:
    """One Gaussian kernel over (t, T): covariance, flow maps, derivatives.

    Construct with `constant` for the prototype (scalar diffusion delta) or
    `frozen` for coefficients frozen along the drift curve through (s, v).
    """

    def __init__(self, structure: BlockStructure, B, t: float, T: float, cov: CovMatrix):
        if T - t < MIN_DT:
            raise SmallTimeError(
                f"time increment {T - t:.3e} below minimum {MIN_DT:.0e} (near-delta regime)"
            )
        if structure.N > 10:
            from .errors import DimensionBudgetError

            raise DimensionBudgetError(
                f"kernel evaluation supports N <= 10, got N={structure.N}"
            )
        self.structure = structure
        self.B = np.asarray(B, dtype=float)
        self.t = float(t)
        self.T = float(T)
        self.cov = cov
        flow = drift_flow(self.B)
        self.fwd = flow.at(self.T - self.t)       # e^((T-t)B)
        self.bwd = flow.at(-(self.T - self.t))    # e^(-(T-t)B)
        C = cov.C
        try:
            Lc = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(
                f"covariance not positive definite on interval ({t}, {T})"
            ) from exc
        self.logdet = float(2.0 * np.sum(np.log(np.diag(Lc))))
        self.H = self.bwd @ C @ self.bwd.T
        try:
            Lh = np.linalg.cholesky(self.H)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError("pulled-back covariance not positive definite") from exc
        eye = np.eye(self.structure.N)
        half = scipy.linalg.solve_triangular(Lh, eye, lower=True)
        self.Hinv = half.T @ half
        self._log_norm = 0.5 * (self.logdet + self.structure.N * LOG_2PI)

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, structure: BlockStructure, B, delta: float, t: float, T: float):
        cov = covariance_const(delta, T - t, B, structure.d)
        return cls(structure, B, t, T, CovMatrix(cov.C, (float(t), float(T)), "constant"))

    @classmethod
    def frozen(cls, structure: BlockStructure, B, coeffs, s_freeze: float, v,
               t: float, T: float, panels: int = 256):
        cov = covariance_frozen(coeffs, s_freeze, v, t, T, B, panels=panels)
        return cls(structure, B, t, T, cov)

    # -- evaluation ---------------------------------------------------------

    def mean(self, x) -> np.ndarray:
        """Forward image e^((T-t)B) x, the kernel's center in y."""
        return np.asarray(x, dtype=float) @ self.fwd.T

    def pullback(self, y) -> np.ndarray:
        """Backward image e^(-(T-t)B) y, the kernel's center in x."""
        return np.asarray(y, dtype=float) @ self.bwd.T

    def _uw(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        w = Y @ self.bwd.T - X
        return w @ self.Hinv, w

    def values(self, X, Y) -> np.ndarray:
        """Kernel values for batched x rows against batched y rows."""
        u, w = self._uw(X, Y)
        q = np.einsum("mi,mi->m", u, w)
        return np.exp(-0.5 * q - self._log_norm)

    def value(self, x, y) -> float:
        return float(self.values(x, y)[0])

    def with_derivatives(self, X, Y, n_grad: int | None = None):
        """Values, gradients and Hessians in x over the first n_grad coords.

        Returns (val (M,), grad (M, k), hess (M, k, k)) with k = n_grad
        (default d). Gradient and Hessian are exact analytic derivatives.
        """
        k = self.structure.d if n_grad is None else n_grad
        u, w = self._uw(X, Y)
        q = np.einsum("mi,mi->m", u, w)
        val = np.exp(-0.5 * q - self._log_norm)
        uk = u[:, :k]
        grad = uk * val[:, None]
        hess = (np.einsum("mi,mj->mij", uk, uk) - self.Hinv[:k, :k]) * val[:, None, None]
        return val, grad, hess

    def derivative(self, x, y, nu) -> float:
        """Exact x-derivative for a multi-index with weighted order <= 4."""
        nu = np.asarray(nu, dtype=int)
        from .structure import intrinsic_order

        if intrinsic_order(nu, self.structure) > 4:
            raise ValueError("derivative multi-index exceeds weighted order 4")
        u, w = self._uw(x, y)
        q = float(np.einsum("mi,mi->m", u, w)[0])
        val = float(np.exp(-0.5 * q - self._log_norm))
        poly = _derivative_polynomial(tuple(int(n) for n in nu), self.Hinv)
        acc = 0.0
        u0 = u[0]
        for mono, coeff in poly.items():
            term = coeff
            for i, e in enumerate(mono):
                if e:
                    term *= u0[i] ** e
            acc += term
        return acc * val

class FrozenKernelFamily:
    """Batch of Gaussian kernels sharing one time window (t, T), each with
    its own covariance (one per frozen point). Evaluation pairs a batch of
    start points X (S, N) against the batch of members/terminal points
    Y (Q, N), producing (S, Q)-shaped values and derivative arrays.
    """

    def __init__(self, structure: BlockStructure, B, t: float, T: float, C_batch):
        if T - t < MIN_DT:
            raise SmallTimeError(
                f"time increment {T - t:.3e} below minimum {MIN_DT:.0e} (near-delta regime)"
            )
        self.structure = structure
        self.t = float(t)
        self.T = float(T)
        C = np.asarray(C_batch, dtype=float)
        flow = drift_flow(B)
        self.fwd = flow.at(self.T - self.t)
        self.bwd = flow.at(-(self.T - self.t))
        try:
            Lc = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(
                f"batch covariance not positive definite on ({t}, {T})"
            ) from exc
        self.logdet = 2.0 * np.sum(np.log(np.diagonal(Lc, axis1=-2, axis2=-1)), axis=-1)
        H = np.einsum("ab,qbc,dc->qad", self.bwd, C, self.bwd)
        try:
            self.Hinv = np.linalg.inv(H)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError("pulled-back batch covariance singular") from exc

    def pullbacks(self, Y) -> np.ndarray:
        return np.atleast_2d(np.asarray(Y, dtype=float)) @ self.bwd.T

    def eval(self, X, Y, want_derivs: bool = False):
        """Values (S, Q); with want_derivs also grad (S, Q, d) and
        hess (S, Q, d, d) in the x argument."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Yb = self.pullbacks(Y)
        w = Yb[None, :, :] - X[:, None, :]
        u = np.einsum("qij,sqj->sqi", self.Hinv, w)
        q = np.einsum("sqi,sqi->sq", u, w)
        N = self.structure.N
        val = np.exp(-0.5 * (q + self.logdet[None, :] + N * LOG_2PI))
        if not want_derivs:
            return val
        d = self.structure.d
        ud = u[..., :d]
        grad = ud * val[..., None]
        hess = (np.einsum("sqi,sqj->sqij", ud, ud)
                - self.Hinv[None, :, :d, :d]) * val[..., None, None]
        return val, grad, hess


def scaled_displacement(structure: BlockStructure, B, t: float, T: float, X, Y) -> np.ndarray:
    """w = D(sqrt(T-t))^-1 (y - e^((T-t)B) x) row-wise."""
    flow = drift_flow(B)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    disp = Y - X @ flow.at(T - t).T
    scale = np.sqrt(T - t) ** structure.exponents()
    return disp / scale


def _derivative_polynomial(nu: tuple[int, ...], Hinv: np.ndarray) -> dict:
    """Polynomial in u = H^-1 w such that d^nu kernel = poly(u) * kernel.

    Built by repeated differentiation: applying d/dx_m maps a monomial
    c * u^a to c * u^(a + e_m) plus the chain-rule terms
    -c * a_i * Hinv[i, m] * u^(a - e_i).
    """
    N = len(nu)
    poly: dict[tuple[int, ...], float] = {(0,) * N: 1.0}
    for m, reps in enumerate(nu):
        for _ in range(reps):
            new: dict[tuple[int, ...], float] = {}
            for mono, c in poly.items():
                up = list(mono)
                up[m] += 1
                key = tuple(up)
                new[key] = new.get(key, 0.0) + c
                for i, e in enumerate(mono):
                    if e:
                        down = list(mono)
                        down[i] -= 1
                        key = tuple(down)
                        new[key] = new.get(key, 0.0) - c * e * Hinv[i, m]
            poly = new
    return poly


def prototype_density(delta: float, t: float, x, T: float, y, B,
                      structure: BlockStructure) -> float:
    """Transition density of the constant-coefficient prototype operator."""
    if not t < T:
        raise NumericalError(f"need t < T, got t={t}, T={T}")
    kern = FrozenKernel.constant(structure, B, delta, t, T)
    return kern.value(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
