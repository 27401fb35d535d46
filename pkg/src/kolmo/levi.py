"""Volterra correction series and the fundamental solution.

The density is built as parametrix plus smoothing correction,

    p(t, x; T, y) = P(t, x; T, y)
                  + int_t^T int P(t, x; tau, eta) phi(tau, eta; T, y) deta dtau,

where phi solves a Volterra equation of the second kind whose driving term is
the operator mismatch on the parametrix. phi is summed as a series of
iterated terms; each term is represented on a fixed set of space-time nodes
(time levels placed at Gauss-Jacobi points that absorb the endpoint
singularities, with a Gauss-Hermite cloud per level centered on the backward
drift curve through the target). Values between nodes come from barycentric
interpolation of the envelope-normalized field, with the known singular time
factor handled explicitly.

All spatial integrals use Gaussian importance measures built as products of
the local kernel width and the target envelope, so both the near-diagonal
(kernel becomes a delta) and near-terminal (correction density concentrates)
regimes are resolved. Derivative integrals subtract the drift-curve value of
the correction density against a reference kernel whose derivative integrates
to zero exactly, which removes the leading singular cancellation from the
quadrature's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from ._quad import (barycentric_matrix, gauss_jacobi01, hermite_prob,
                    singular_time_rule, tensor_hermite)
from .errors import (ConfigError, DimensionBudgetError, NumericalError,
                     QuadratureError, SeriesError)
from .kernel import (FrozenKernel, FrozenKernelFamily, covariance_const,
                     drift_flow, frozen_covariances, MIN_DT)
from .model import ModelSpec
from .parametrix import KernelCache, mismatch_values, parametrix_kernel

LEVI_MAX_DIM = 3


@dataclass
class QuadratureConfig:
    """Discretization knobs for the correction series and its integrals."""

    time_panels: int = 10          # representation levels between t_min and T
    space_order: int = 7           # Hermite points per dimension in clouds
    inner_time_order: int = 8      # Jacobi nodes for the sweep time integral
    inner_space_order: int = 9     # Hermite order for the sweep spatial rule
    outer_time_order: int = 12     # Jacobi nodes for the smoothing integral
    outer_space_order: int = 12    # Hermite order for the smoothing integral
    alpha: float | None = None     # singularity exponent; model value when None
    series_tol: float = 1e-4
    max_terms: int = 8
    safety: float = 1.5            # importance-measure covariance inflation
    cloud_inflation: float = 1.4   # node-cloud covariance inflation over the kernel's
    interior_band: float = 0.8     # fraction of the node range used for norms
    envelope_eps_frac: float = 0.1  # eps = frac * mu in comparison envelopes
    cov_panels: int = 256          # panels for direct covariance quadrature
    cov_panels_inner: int = 16     # panels inside sweeps (hot path)
    richardson_check: bool = True  # reduced-order recomputation of first sweep
    richardson_factor: float = 10.0  # failure threshold, in units of series_tol

    def __post_init__(self):
        if self.time_panels < 2:
            raise ConfigError("time_panels must be >= 2")
        if self.series_tol <= 0:
            raise ConfigError("series_tol must be positive")
        if self.max_terms < 1:
            raise ConfigError("max_terms must be >= 1")
        if self.safety < 1.0:
            raise ConfigError("safety factor must be >= 1")


def batch_quadrature(series_tol: float = 1e-3) -> "QuadratureConfig":
    """Configuration tuned for scans over many targets (mass, composition
    and oracle checks): coarse representation, full-order sweep integrals
    (these dominate the density's accuracy), moderate smoothing orders."""
    return QuadratureConfig(time_panels=5, space_order=5,
                            inner_time_order=8, inner_space_order=9,
                            outer_time_order=10, outer_space_order=10,
                            series_tol=series_tol, richardson_check=False)


@dataclass
class SeriesResult:
    value: float
    terms_used: int
    tail_bound: float


@dataclass
class EvalResult:
    """Fundamental solution value with derivatives and series diagnostics."""

    p: float
    grad: np.ndarray
    hess: np.ndarray
    parametrix: float
    correction: float
    terms_used: int
    tail_bound: float
    rel_budget: float
    flags: list = field(default_factory=list)


def _gaussian_product(m1, S1, m2, S2):
    """Mean and covariance of the (normalized) product of two Gaussians."""
    P1 = np.linalg.inv(S1)
    P2 = np.linalg.inv(S2)
    S = np.linalg.inv(P1 + P2)
    m = S @ (P1 @ m1 + P2 @ m2)
    return m, 0.5 * (S + S.T)


def _gauss_pdf(m, S, Z):
    """Gaussian density rows of Z under N(m, S)."""
    L = np.linalg.cholesky(S)
    half = np.linalg.solve(L, (Z - m).T)
    q = np.sum(half * half, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return np.exp(-0.5 * (q + logdet + m.size * math.log(2.0 * math.pi)))


class LeviSolution:
    """Correction-series state for one target (T, y), valid for t >= t_min.

    phi_terms[k] holds the k-th series term on the node set (levels x cloud
    points). The object is immutable after construction and safe for
    concurrent read-only use.
    """

    def __init__(self, model: ModelSpec, T: float, y, t_min: float,
                 q: QuadratureConfig | None = None,
                 cache: KernelCache | None = None):
        if model.N > LEVI_MAX_DIM:
            raise DimensionBudgetError(
                f"the full correction series supports N <= {LEVI_MAX_DIM}, got N={model.N}; "
                "kernel-only evaluation remains available"
            )
        self.model = model
        self.q = q or QuadratureConfig()
        self.T = float(T)
        self.y = np.asarray(y, dtype=float)
        self.t_min = float(t_min)
        if not self.t_min < self.T - MIN_DT:
            raise NumericalError(f"need t_min < T, got t_min={t_min}, T={T}")
        self.alpha = self.q.alpha if self.q.alpha is not None else model.alpha
        self.cache = cache or KernelCache()
        self.flow = drift_flow(model.B)
        self.env_delta = model.mu * (1.0 + self.q.envelope_eps_frac)
        self._flat_cov = model.coeffs.mismatch_free

        self._build_levels()
        self.phi_terms: list[np.ndarray] = []
        self.term_norms: list[float] = []
        self.kappa_fit = 0.0
        self.richardson_rel = 0.0
        self.truncation_k = 0
        self.est_tail = 0.0

        self._compute_first_term()
        if not self._flat_cov:
            self._run_series()

    # -- node layout ---------------------------------------------------------

    def _env_cov(self, dt: float) -> np.ndarray:
        """Envelope covariance (in the backward variable) for a window dt."""
        C = covariance_const(1.0, dt, self.model.B, self.model.d).C
        bwd = self.flow.at(-dt)
        H = bwd @ C @ bwd.T
        return self.q.safety * self.model.mu * H

    def _forward_cov(self, dt: float) -> np.ndarray:
        """Kernel width (in the forward variable) for a window dt."""
        return self.q.safety * self.model.mu * covariance_const(
            1.0, dt, self.model.B, self.model.d).C

    def _build_levels(self):
        q = self.q
        a = self.alpha / 2.0
        u, _ = gauss_jacobi01(q.time_panels, a, a)
        span = self.T - self.t_min
        self.taus = self.t_min + span * u
        self.Z_grid, _ = tensor_hermite(q.space_order, self.model.N)
        self.centers = np.empty((q.time_panels, self.model.N))
        self.chols = np.empty((q.time_panels, self.model.N, self.model.N))
        self.points = np.empty((q.time_panels,) + self.Z_grid.shape)
        self.level_kernels = []
        for l, tau in enumerate(self.taus):
            # the level's own parametrix kernel provides both the cloud
            # geometry and the interpolation envelope: the first series term
            # divided by it is a polynomial times the coefficient increment,
            # which tensor interpolation represents almost exactly
            kern = parametrix_kernel(self.model, tau, self.T, self.y,
                                     panels=q.cov_panels, cache=self.cache)
            self.level_kernels.append(kern)
            c = kern.pullback(self.y)
            S = q.cloud_inflation * kern.H
            self.centers[l] = c
            self.chols[l] = np.linalg.cholesky(S)
            self.points[l] = c + self.Z_grid @ self.chols[l].T
        # comparison envelope at the nodes, for normalized series norms
        self.env_ref = np.empty((q.time_panels, self.Z_grid.shape[0]))
        self.env_own = np.empty_like(self.env_ref)
        for l, tau in enumerate(self.taus):
            kern = FrozenKernel.constant(self.model.structure, self.model.B,
                                         self.env_delta, tau, self.T)
            Y = np.broadcast_to(self.y, self.points[l].shape)
            self.env_ref[l] = kern.values(self.points[l], Y)
            self.env_own[l] = self._envelope_at(l, self.points[l])
        z1, _ = hermite_prob(q.space_order)
        cut = q.interior_band * np.abs(z1).max()
        self._interior = np.all(np.abs(self.Z_grid) <= cut + 1e-12, axis=1)
        self._sing_pow = 1.0 - self.alpha / 2.0

    def _envelope_at(self, l: int, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        Y = np.broadcast_to(self.y, Z.shape)
        return self.level_kernels[l].values(Z, Y)

    # -- series terms ---------------------------------------------------------

    def _norm(self, values: np.ndarray) -> float:
        """Envelope-normalized sup norm with the singular time factor removed.

        The sup runs over the interior node band: at extreme tail nodes both
        the field and the envelope underflow and their ratio is quadrature
        noise with no weight in any subsequent integral."""
        scales = (self.T - self.taus)[:, None] ** self._sing_pow
        ratios = np.abs(values) * scales / np.maximum(self.env_ref, 1e-300)
        return float(np.max(ratios[:, self._interior]))

    def _compute_first_term(self):
        vals = np.zeros((self.q.time_panels, self.Z_grid.shape[0]))
        if not self._flat_cov:
            for l, tau in enumerate(self.taus):
                vals[l] = mismatch_values(self.model, tau, self.points[l],
                                          self.level_kernels[l], self.y)
        self.phi_terms.append(vals)
        n1 = self._norm(vals)
        self.term_norms.append(n1)
        self.kappa_fit = n1
        if self._flat_cov or n1 == 0.0:
            self._flat_cov = True
            self.truncation_k = 1
            self.est_tail = 0.0

    def _run_series(self):
        q = self.q
        tol = q.series_tol
        k = 1
        while True:
            nxt = self._sweep(len(self.phi_terms))
            self.phi_terms.append(nxt)
            self.term_norms.append(self._norm(nxt))
            k += 1
            if k == 2 and q.richardson_check:
                self._richardson_probe()
            term_rel = self.term_norms[-1] / max(self.term_norms[0], 1e-300)
            tail_rel = self._tail_estimate()
            if term_rel <= tol and tail_rel <= tol:
                self.truncation_k = k
                self.est_tail = tail_rel
                return
            if k >= q.max_terms:
                partial = sum(self.term_norms)
                raise SeriesError(
                    f"series did not reach tol={tol} within {q.max_terms} terms "
                    f"(last term {term_rel:.2e}, tail {tail_rel:.2e})",
                    partial_sum=partial, terms_used=k,
                )

    def _analytic_ratio(self, n: int) -> float:
        """Term-ratio model from the convergence bound with fitted driving
        constant: ratio of consecutive normalized term bounds."""
        a = self.alpha / 2.0
        span = self.T - self.t_min
        return (self.kappa_fit * gamma_fn(a) * span ** a
                * gamma_fn(n * a) / gamma_fn((n + 1) * a))

    def _tail_estimate(self) -> float:
        K = len(self.term_norms)
        nK = self.term_norms[-1]
        n1 = max(self.term_norms[0], 1e-300)
        # measured geometric continuation
        if K >= 2 and self.term_norms[-2] > 0:
            rho = min(self.term_norms[-1] / self.term_norms[-2], 0.99)
            measured = nK * rho / (1.0 - rho)
        else:
            measured = 0.0
        # analytic continuation with the fitted constant
        analytic = 0.0
        factor = 1.0
        for j in range(K, K + 40):
            r = min(self._analytic_ratio(j), 0.99)
            factor *= r
            analytic += nK * factor
            if factor < 1e-18:
                break
        return max(measured, analytic) / n1

    def _richardson_probe(self):
        """Recompute the second term at raised orders; the disagreement
        estimates the stored term's quadrature error. It feeds the error
        budget, and disagreement rivaling the refined term itself (while the
        term matters at the requested tolerance) is a convergence failure."""
        q = self.q
        finer = self._sweep(1, time_order=q.inner_time_order + 3,
                            space_order=q.inner_space_order + 2)
        ref = max(self.term_norms[0], 1e-300)
        diff = self._norm(self.phi_terms[1] - finer)
        self.richardson_rel = diff / ref
        term_scale = max(self._norm(finer), 1e-300)
        if diff > 0.5 * term_scale and diff > q.richardson_factor * q.series_tol * ref:
            raise QuadratureError(
                f"sweep quadrature self-check disagreement {diff:.3e} is "
                f"{diff / term_scale:.1f}x the term scale {term_scale:.3e}; "
                f"levels={q.time_panels}, inner orders=({q.inner_time_order}, "
                f"{q.inner_space_order}), target=(T={self.T}, y={self.y.tolist()})"
            )

    # -- interpolation of stored terms ----------------------------------------

    def _interp_level(self, values_l: np.ndarray, l: int, Z) -> np.ndarray:
        """Interpolate one level's node values at arbitrary points Z (M, N).

        Works on the envelope-normalized field in whitened coordinates;
        queries beyond the node hull are clamped to the hull edge (the
        envelope factor keeps the tail decay)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        psi = values_l / np.maximum(self.env_own[l], 1e-300)
        n = self.q.space_order
        N = self.model.N
        zq = np.linalg.solve(self.chols[l], (Z - self.centers[l]).T).T
        znodes, _ = hermite_prob(n)
        zmin, zmax = znodes.min(), znodes.max()
        zq = np.clip(zq, zmin, zmax)
        mats = [barycentric_matrix(n, zq[:, k]) for k in range(N)]
        grid = psi.reshape((n,) * N)
        if N == 1:
            vals = mats[0] @ grid
        elif N == 2:
            vals = np.einsum("mi,mj,ij->m", mats[0], mats[1], grid)
        else:
            vals = np.einsum("mi,mj,mk,ijk->m", mats[0], mats[1], mats[2], grid)
        return vals * self._envelope_at(l, Z)

    def term_values(self, k: int, r: float, Z) -> np.ndarray:
        """Values of the k-th term (1-based) at time r and points Z (M, N).

        The first term is analytic (operator mismatch on the parametrix) and
        is evaluated directly; higher terms come from the stored node
        representation with the singular time factor handled explicitly."""
        Z = np.atleast_2d(Z)
        if self._flat_cov:
            return np.zeros(Z.shape[0])
        if k == 1:
            kern = parametrix_kernel(self.model, r, self.T, self.y,
                                     panels=self.q.cov_panels, cache=self.cache)
            return mismatch_values(self.model, r, Z, kern, self.y)
        # term k vanishes (or blows up) at the terminal time like
        # (T - r)^(k alpha/2 - 1); interpolation works on the field with
        # that exact factor removed
        return self._interp_values(self.phi_terms[k - 1], r, Z,
                                   sing_pow=1.0 - k * self.alpha / 2.0)

    def _interp_values(self, values: np.ndarray, r: float, Z,
                       sing_pow: float | None = None) -> np.ndarray:
        """Space-time interpolation of node values (levels x cloud points)."""
        Z = np.atleast_2d(Z)
        taus = self.taus
        p = self._sing_pow if sing_pow is None else sing_pow
        if r <= taus[0]:
            u = self._interp_level(values[0], 0, Z) * (self.T - taus[0]) ** p
        elif r >= taus[-1]:
            u = self._interp_level(values[-1], len(taus) - 1, Z) * (self.T - taus[-1]) ** p
        else:
            b = int(np.searchsorted(taus, r))
            a = b - 1
            ua = self._interp_level(values[a], a, Z) * (self.T - taus[a]) ** p
            ub = self._interp_level(values[b], b, Z) * (self.T - taus[b]) ** p
            theta = (r - taus[a]) / (taus[b] - taus[a])
            u = (1.0 - theta) * ua + theta * ub
        return u / (self.T - r) ** p

    def sum_values(self, r: float, Z) -> np.ndarray:
        """Values of the summed correction density at time r, points Z."""
        Z = np.atleast_2d(Z)
        out = np.zeros(Z.shape[0])
        for k in range(1, len(self.phi_terms) + 1):
            out += self.term_values(k, r, Z)
        return out

    # -- the sweep: one Volterra iteration -------------------------------------

    def _apply_volterra(self, t: float, X: np.ndarray, source,
                        n_t: int, n_s: int) -> np.ndarray:
        """The iteration integral at time t for every start point in X:

            out[s] = int_t^T int K(t, x_s; r, zeta) source(r, zeta) dzeta dr,

        K the operator mismatch on the parametrix. The time rule is
        Gauss-Jacobi with the endpoint singularity exponents; the spatial
        rule gives every start point its own Gaussian importance measure,
        the product of the local kernel width around the pushed-forward
        start point with the correction envelope (the product covariance is
        shared across start points, only the centers move, so the whole
        batch stays vectorized)."""
        model = self.model
        S_cnt = X.shape[0]
        a = self.alpha / 2.0
        span = self.T - t
        uj, vj = singular_time_rule(n_t, a)
        Zn, Wn = tensor_hermite(n_s, model.N)
        Qn = Zn.shape[0]
        acc = np.zeros(S_cnt)
        d = model.d
        for u, v in zip(uj, vj):
            r = t + span * u
            wj = span * v
            if r - t < MIN_DT or self.T - r < MIN_DT:
                continue
            fwd = self.flow.at(r - t)
            peaks = X @ fwd.T
            S_k = self._forward_cov(r - t)
            S_b = self._env_cov(self.T - r)
            m_b = self.flow.at(-(self.T - r)) @ self.y
            P_k = np.linalg.inv(S_k)
            P_b = np.linalg.inv(S_b)
            S_in = np.linalg.inv(P_k + P_b)
            S_in = 0.5 * (S_in + S_in.T)
            centers = (peaks @ P_k.T + m_b @ P_b.T) @ S_in.T
            L_in = np.linalg.cholesky(S_in)
            Zeta = centers[:, None, :] + (Zn @ L_in.T)[None, :, :]
            flat = Zeta.reshape(S_cnt * Qn, model.N)
            # density of each point under its own measure: shared z-grid
            pdf = np.exp(-0.5 * (np.sum(Zn * Zn, axis=1)
                                 + 2.0 * np.sum(np.log(np.diag(L_in)))
                                 + model.N * math.log(2.0 * math.pi)))

            C = frozen_covariances(model.coeffs, r, flat, t, r, model.B,
                                   panels=self.q.cov_panels_inner)
            fam = FrozenKernelFamily(model.structure, model.B, t, r, C)
            X_rep = np.repeat(X, Qn, axis=0)
            w = flat @ fam.bwd.T - X_rep
            uvec = np.einsum("mij,mj->mi", fam.Hinv, w)
            qf = np.einsum("mi,mi->m", uvec, w)
            val = np.exp(-0.5 * (qf + fam.logdet + model.N * math.log(2.0 * math.pi)))
            ud = uvec[:, :d]
            hess = (np.einsum("mi,mj->mij", ud, ud)
                    - fam.Hinv[:, :d, :d]) * val[:, None, None]
            dA = (model.coeffs.eval_a2(t, X_rep)
                  - model.coeffs.eval_a2(t, flat @ fam.bwd.T))
            K = 0.5 * np.einsum("mij,mij->m", dA, hess)
            if model.coeffs.a1 is not None:
                K += np.einsum("mi,mi->m", model.coeffs.eval_a1(t, X_rep),
                               ud * val[:, None])
            if model.coeffs.a0 is not None:
                K += model.coeffs.eval_a0(t, X_rep) * val
            phi_prev = source(r, flat)
            inner = ((K * phi_prev).reshape(S_cnt, Qn) * (Wn / pdf)[None, :]).sum(axis=1)
            acc += wj * inner
        return acc

    def _source_for(self, k: int):
        """Evaluator of the k-th term as a function (r, points) -> values."""
        return lambda r, Z: self.term_values(k, r, Z)

    def _sweep(self, prev_k: int, time_order: int | None = None,
               space_order: int | None = None) -> np.ndarray:
        q = self.q
        n_t = time_order or q.inner_time_order
        n_s = space_order or q.inner_space_order
        out = np.empty((q.time_panels, self.Z_grid.shape[0]))
        source = self._source_for(prev_k)
        for l, tau in enumerate(self.taus):
            out[l] = self._apply_volterra(tau, self.points[l], source, n_t, n_s)
        return out

    # -- outer smoothing integral ----------------------------------------------

    def correction_at(self, t: float, x, want_derivs: bool = True,
                      time_order: int | None = None,
                      space_order: int | None = None):
        """The smoothing correction and its x-derivatives at one point."""
        model = self.model
        d = model.d
        x = np.asarray(x, dtype=float)
        if self._flat_cov:
            z = np.zeros(d)
            return 0.0, z, np.zeros((d, d))
        if t < self.t_min - 1e-12:
            raise NumericalError(
                f"evaluation time {t} below the solution's t_min={self.t_min}"
            )
        q = self.q
        a = self.alpha / 2.0
        span = self.T - t
        uj, vj = singular_time_rule(time_order or q.outer_time_order, a)
        taus = t + span * uj
        ws = span * vj
        Zn, Wn = tensor_hermite(space_order or q.outer_space_order, model.N)

        value = 0.0
        grad = np.zeros(d)
        hess = np.zeros((d, d))
        for tau, w_t in zip(taus, ws):
            if tau - t < MIN_DT or self.T - tau < MIN_DT:
                continue
            fwd = self.flow.at(tau - t)
            m_a = fwd @ x
            S_a = self._forward_cov(tau - t)
            m_b = self.flow.at(-(self.T - tau)) @ self.y
            S_b = self._env_cov(self.T - tau)
            m_in, S_in = _gaussian_product(m_a, S_a, m_b, S_b)
            L_in = np.linalg.cholesky(S_in)
            Zeta = m_in + Zn @ L_in.T
            pdf = _gauss_pdf(m_in, S_in, Zeta)
            wq = Wn / np.maximum(pdf, 1e-300)

            # the importance measure matches the parametrix factor's own
            # width around the pushed-forward start point, so the Hermite
            # rule reproduces the kernel's polynomial-times-Gaussian
            # derivative structure (and its cancellations) essentially
            # exactly at every time node
            C = frozen_covariances(model.coeffs, tau, Zeta, t, tau, model.B,
                                   panels=q.cov_panels_inner)
            fam = FrozenKernelFamily(model.structure, model.B, t, tau, C)
            pv, pg, ph = fam.eval(x[None, :], Zeta, want_derivs=True)
            phi_q = self.sum_values(tau, Zeta)

            value += w_t * float(np.sum(wq * pv[0] * phi_q))
            if want_derivs:
                grad += w_t * ((wq[:, None] * pg[0] * phi_q[:, None]).sum(axis=0))
                hess += w_t * ((wq[:, None, None] * ph[0]
                                * phi_q[:, None, None]).sum(axis=0))
        if not want_derivs:
            return value, None, None
        return value, grad, 0.5 * (hess + hess.T)

    # -- per-point series terms -------------------------------------------------

    def term_at(self, k: int, t: float, x) -> float:
        """Value of the k-th series term at an arbitrary point (t, x)."""
        x = np.asarray(x, dtype=float)
        if self._flat_cov:
            return 0.0
        if k == 1:
            return float(self.term_values(1, t, x[None, :])[0])
        return float(self._apply_volterra(t, x[None, :], self._source_for(k - 1),
                                          self.q.inner_time_order,
                                          self.q.inner_space_order)[0])

    # -- assembled density --------------------------------------------------------

    @property
    def rel_budget(self) -> float:
        return self.q.series_tol + self.est_tail + self.richardson_rel

    def density(self, t: float, x, want_derivs: bool = True) -> EvalResult:
        model = self.model
        x = np.asarray(x, dtype=float)
        kern = parametrix_kernel(model, t, self.T, self.y,
                                 panels=self.q.cov_panels, cache=self.cache)
        val, pgrad, phess = kern.with_derivatives(x[None, :],
                                                  self.y[None, :])
        d = model.d
        pval = float(val[0])
        cval, cgrad, chess = self.correction_at(t, x, want_derivs=want_derivs)
        p = pval + cval
        flags = []
        if p <= 0.0:
            env = FrozenKernel.constant(model.structure, model.B, model.mu,
                                        t, self.T).value(x, self.y)
            if p < -self.q.series_tol * env:
                flags.append("negative-density")
        grad = pgrad[0, :d] + (cgrad if cgrad is not None else 0.0)
        hess = phess[0, :d, :d] + (chess if chess is not None else 0.0)
        return EvalResult(
            p=p, grad=grad, hess=hess, parametrix=pval, correction=cval,
            terms_used=max(self.truncation_k, 1), tail_bound=self.est_tail,
            rel_budget=self.rel_budget, flags=flags,
        )


# ---------------------------------------------------------------------------
# Session cache and module-level entry points
# ---------------------------------------------------------------------------

class LeviSession:
    """Reusable cache of solutions per target and of frozen kernels."""

    def __init__(self, model: ModelSpec, q: QuadratureConfig | None = None):
        self.model = model
        self.q = q or QuadratureConfig()
        self.cache = KernelCache()
        self._solutions: dict = {}

    def solution(self, T: float, y, t_min: float) -> LeviSolution:
        y = np.asarray(y, dtype=float)
        key = (round(float(T), 12), y.tobytes())
        found = self._solutions.get(key)
        if found is not None and found.t_min <= t_min + 1e-15:
            return found
        sol = LeviSolution(self.model, T, y, t_min, self.q, cache=self.cache)
        self._solutions[key] = sol
        return sol


def next_series_term(solution: LeviSolution, prev_node_values: np.ndarray) -> np.ndarray:
    """One Volterra iteration applied to arbitrary node values on the
    solution's grid (levels x cloud points)."""
    prev = np.asarray(prev_node_values, dtype=float)
    if prev.shape != solution.phi_terms[0].shape:
        raise ConfigError(
            f"node values must have shape {solution.phi_terms[0].shape}, got {prev.shape}"
        )
    if solution._flat_cov:
        return np.zeros_like(prev)
    source = lambda r, Z: solution._interp_values(prev, r, Z)  # noqa: E731
    q = solution.q
    out = np.empty_like(prev)
    for l, tau in enumerate(solution.taus):
        out[l] = solution._apply_volterra(tau, solution.points[l], source,
                                          q.inner_time_order, q.inner_space_order)
    return out


def correction_series(model: ModelSpec, t: float, x, T: float, y,
                      q: QuadratureConfig | None = None,
                      session: LeviSession | None = None) -> SeriesResult:
    """Summed correction density at one point with truncation diagnostics."""
    session = session or LeviSession(model, q)
    sol = session.solution(T, y, t_min=t)
    if sol._flat_cov:
        return SeriesResult(0.0, 1, 0.0)
    total = 0.0
    for k in range(1, sol.truncation_k + 1):
        total += sol.term_at(k, t, np.asarray(x, dtype=float))
    return SeriesResult(total, sol.truncation_k, sol.est_tail)


def correction_integral(model: ModelSpec, t: float, x, T: float, y,
                        q: QuadratureConfig | None = None,
                        session: LeviSession | None = None):
    """Smoothing integral of parametrix times correction density, with
    derivatives: the difference between the density and its parametrix."""
    session = session or LeviSession(model, q)
    sol = session.solution(T, y, t_min=t)
    return sol.correction_at(t, np.asarray(x, dtype=float), want_derivs=True)


def fundamental_solution(model: ModelSpec, t: float, x, T: float, y,
                         q: QuadratureConfig | None = None,
                         session: LeviSession | None = None) -> EvalResult:
    """Density value, gradient and Hessian at (t, x) for target (T, y)."""
    session = session or LeviSession(model, q)
    sol = session.solution(T, y, t_min=t)
    return sol.density(t, np.asarray(x, dtype=float))
