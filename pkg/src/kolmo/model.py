"""Operator description: drift matrix, block structure and coefficients.

Also hosts the JSON model-file schema used by the command line:

    {
      "N": 2, "d": 1,
      "B": [[0, 0], [1, 0]],           # row-major
      "T_bar": 1.0, "mu": 1.5, "alpha": 1.0,
      "coefficients": {
        "a2": [["1 + 0.25*sin(x2)"]],  # d x d expressions
        "a1": ["0"],                   # optional
        "a0": "0"                      # optional
      },
      "quadrature": { ... QuadratureConfig fields ... },
      "growth_C": 0.1
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientField, field_from_exprs
from .errors import ConfigError
from .structure import BlockStructure, block_decompose


@dataclass
class ModelSpec:
    """Full operator description bound to a validated block structure."""

    B: np.ndarray
    structure: BlockStructure
    coeffs: CoefficientField
    growth_C: float = 0.0
    name: str = ""

    @property
    def N(self) -> int:
        return self.structure.N

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def mu(self) -> float:
        return self.coeffs.mu

    @property
    def alpha(self) -> float:
        return self.coeffs.alpha

    @property
    def T_bar(self) -> float:
        return self.coeffs.T_bar


def make_model(B, d: int, coeffs: CoefficientField, growth_C: float = 0.0,
               rank_tol: float = 1e-10, name: str = "") -> ModelSpec:
    B = np.asarray(B, dtype=float)
    structure = block_decompose(B, d, rank_tol)
    if coeffs.N != structure.N or coeffs.d != structure.d:
        raise ConfigError(
            f"coefficient field dims (d={coeffs.d}, N={coeffs.N}) do not match "
            f"structure (d={structure.d}, N={structure.N})"
        )
    return ModelSpec(B=B, structure=structure, coeffs=coeffs,
                     growth_C=growth_C, name=name)


def model_from_config(cfg: dict):
    """Build (ModelSpec, QuadratureConfig) from a parsed model document."""
    from .levi import QuadratureConfig  # local import to avoid a cycle

    try:
        N = int(cfg["N"])
        d = int(cfg["d"])
        B = np.asarray(cfg["B"], dtype=float)
        coeff_cfg = cfg["coefficients"]
    except KeyError as exc:
        raise ConfigError(f"model file missing required field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model field: {exc}") from exc

    if B.shape != (N, N):
        raise ConfigError(f"B must be {N}x{N}, got shape {B.shape}")

    a2 = coeff_cfg.get("a2")
    if a2 is None or len(a2) != d or any(len(row) != d for row in a2):
        raise ConfigError("coefficients.a2 must be a d x d array of expressions")
    a1 = coeff_cfg.get("a1")
    if a1 is not None and len(a1) != d:
        raise ConfigError("coefficients.a1 must have length d")
    a0 = coeff_cfg.get("a0")

    coeffs = field_from_exprs(
        d=d,
        N=N,
        a2_srcs=a2,
        a1_srcs=a1,
        a0_src=a0,
        mu=float(cfg.get("mu", 1.0)),
        alpha=float(cfg.get("alpha", 1.0)),
        T_bar=float(cfg.get("T_bar", 1.0)),
        holder_norms=cfg.get("holder_norms"),
    )
    model = make_model(B, d, coeffs, growth_C=float(cfg.get("growth_C", 0.0)),
                       name=str(cfg.get("name", "")))
    quad = QuadratureConfig(**cfg.get("quadrature", {}))
    return model, quad


def load_model(path):
    """Read a model JSON file; returns (ModelSpec, QuadratureConfig)."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("model file must contain a JSON object")
    return model_from_config(cfg)
