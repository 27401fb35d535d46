"""Backward terminal-value problem solved through the density representation:

    u(t, x) = int p(t, x; T, y) g(y) dy - int_t^T int p(t, x; s, y) f(s, y) dy ds.

Spatial integrals run under a Gaussian envelope with covariance
(mu + eps) C(T - t), which dominates the density's decay; the time integral
of the source uses a composite midpoint rule (no continuity of f in time is
assumed). When the diffusion block does not depend on x and there are no
first-order terms, the density is a single Gaussian (times exp(a0 (T - t))
for constant zeroth order) and the representation reduces to exact Gaussian
quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._quad import tensor_hermite
from .errors import ConfigError, GrowthError
from .kernel import covariance_const, covariance_frozen, drift_flow, gauss_density
from .levi import LeviSession, QuadratureConfig
from .model import ModelSpec


@dataclass
class CauchyProblem:
    """Terminal condition g, optional source f, and the horizon T.

    g maps points (M, N) -> (M,); f maps (s, points) -> (M,) and is treated
    as merely measurable in s. growth_C is the declared constant with
    |f| + |g| <= C exp(C |x|^2)."""

    model: ModelSpec
    terminal: callable
    T: float
    source: callable | None = None
    growth_C: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.T <= self.model.T_bar + 1e-12:
            raise ConfigError(f"horizon T={self.T} outside (0, T_bar={self.model.T_bar}]")


def _growth_guard(cp: CauchyProblem, t: float, eps_frac: float = 0.1):
    model = cp.model
    dt = cp.T - t
    env = (1.0 + eps_frac) * model.mu * covariance_const(1.0, dt, model.B, model.d).C
    lam = float(np.linalg.eigvalsh(env)[-1])
    if 2.0 * cp.growth_C * lam >= 1.0:
        raise GrowthError(
            f"horizon too long for declared growth: 2 C lambda_max = "
            f"{2.0 * cp.growth_C * lam:.3f} >= 1 at T - t = {dt:.3g}"
        )


def _gaussian_fast_path(model: ModelSpec) -> bool:
    c = model.coeffs
    return bool(c.a2_space_free) and c.a1 is None and (c.a0 is None or c.a0_value is not None)


def _fast_density(model: ModelSpec, t: float, x, T: float):
    """Single-Gaussian density: mean map, covariance and mass factor."""
    cov = covariance_frozen(model.coeffs, T, np.zeros(model.N), t, T, model.B)
    mean = drift_flow(model.B).at(T - t) @ np.asarray(x, dtype=float)
    abar = model.coeffs.a0_value or 0.0
    return mean, cov.C, float(np.exp(abar * (T - t)))


def solve(cp: CauchyProblem, t: float, x, q: QuadratureConfig | None = None,
          session: LeviSession | None = None, gh_order: int = 16,
          source_panels: int = 32) -> float:
    """Value of the representation formula at (t, x)."""
    model = cp.model
    q = q or QuadratureConfig()
    x = np.asarray(x, dtype=float)
    if not t < cp.T:
        raise ConfigError(f"need t < T, got t={t}, T={cp.T}")
    _growth_guard(cp, t, q.envelope_eps_frac)

    if _gaussian_fast_path(model):
        value = _terminal_integral_fast(cp, t, x, gh_order)
        if cp.source is not None:
            value -= _source_integral(cp, t, x, q, None, gh_order, source_panels)
        return value

    session = session or LeviSession(model, q)
    value = _terminal_integral_levi(cp, t, x, q, session, gh_order)
    if cp.source is not None:
        value -= _source_integral(cp, t, x, q, session, gh_order, source_panels)
    return value


def _terminal_integral_fast(cp: CauchyProblem, t: float, x, gh_order: int) -> float:
    mean, C, factor = _fast_density(cp.model, t, x, cp.T)
    Z, W = tensor_hermite(gh_order, cp.model.N)
    Y = mean + Z @ np.linalg.cholesky(C).T
    return factor * float(np.dot(W, np.asarray(cp.terminal(Y), dtype=float)))


def _terminal_integral_levi(cp: CauchyProblem, t: float, x,
                            q: QuadratureConfig, session: LeviSession,
                            gh_order: int) -> float:
    model = cp.model
    dt = cp.T - t
    env = (1.0 + q.envelope_eps_frac) * model.mu * covariance_const(
        1.0, dt, model.B, model.d).C
    mean = drift_flow(model.B).at(dt) @ x
    Z, W = tensor_hermite(gh_order, model.N)
    L = np.linalg.cholesky(env)
    Y = mean + Z @ L.T
    gvals = np.asarray(cp.terminal(Y), dtype=float)
    dens = np.array([session.solution(cp.T, yq, t_min=t).density(t, x, want_derivs=False).p
                     for yq in Y])
    pdf = _env_pdf(mean, L, Y)
    return float(np.sum(W * gvals * dens / pdf))


def _env_pdf(mean, L, Y):
    half = np.linalg.solve(L, (Y - mean).T)
    qf = np.sum(half * half, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return np.exp(-0.5 * (qf + logdet + mean.size * np.log(2.0 * np.pi)))


def _source_integral(cp: CauchyProblem, t: float, x, q: QuadratureConfig,
                     session: LeviSession | None, gh_order: int,
                     panels: int) -> float:
    """Composite midpoint in time of the smoothed source."""
    model = cp.model
    edges = np.linspace(t, cp.T, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    h = edges[1] - edges[0]
    total = 0.0
    fast = _gaussian_fast_path(model)
    for s in mids:
        if s - t < 1e-8:
            continue
        if fast:
            mean, C, factor = _fast_density(model, t, x, s)
            Z, W = tensor_hermite(gh_order, model.N)
            Y = mean + Z @ np.linalg.cholesky(C).T
            total += h * factor * float(np.dot(W, np.asarray(cp.source(s, Y), dtype=float)))
        else:
            sub = CauchyProblem(model=model, terminal=lambda Y, s=s: cp.source(s, Y),
                                T=s, growth_C=cp.growth_C)
            total += h * _terminal_integral_levi(sub, t, x, q, session, gh_order)
    return total


def terminal_continuity_check(cp: CauchyProblem, y, dt_sequence,
                              q: QuadratureConfig | None = None,
                              gh_order: int = 16) -> dict:
    """Deviation |u(T - dt, y) - g(y)| along a decreasing dt sequence.

    Returns the deviations, the largest one, and the log-log slope of
    deviation against dt (the observed convergence order).
    """
    y = np.asarray(y, dtype=float)
    dts = np.asarray(sorted(dt_sequence, reverse=True), dtype=float)
    if np.any(dts <= 0):
        raise ConfigError("dt sequence must be positive")
    gy = float(np.asarray(cp.terminal(y[None, :]))[0])
    devs = []
    session = None
    if not _gaussian_fast_path(cp.model):
        session = LeviSession(cp.model, q or QuadratureConfig())
    for dt in dts:
        u = solve(cp, cp.T - dt, y, q=q, session=session, gh_order=gh_order)
        devs.append(abs(u - gy))
    devs = np.asarray(devs)
    positive = devs > 1e-14
    slope = float("nan")
    if positive.sum() >= 2:
        slope = float(np.polyfit(np.log(dts[positive]), np.log(devs[positive]), 1)[0])
    return {
        "dts": dts.tolist(),
        "deviations": devs.tolist(),
        "max_deviation": float(devs.max()),
        "observed_order": slope,
    }
