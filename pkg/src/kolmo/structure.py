"""Block structure of the drift matrix and the anisotropic geometry it induces.

The drift matrix B must already be in canonical lower-block form: the only
nonzero blocks below the diagonal are the subdiagonal blocks, each of full
column rank, with non-increasing block sizes. This module validates that form
(via the Kalman rank criterion), extracts the block chain, and provides the
intrinsic norm, dilations and weighted multi-index order attached to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructureError

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class BlockStructure:
    """Validated block decomposition of a drift matrix.

    dims[j] is the size of block j, dims[0] equals the number of
    non-degenerate directions d, and Q is the homogeneous dimension
    sum((2j+1) * dims[j]).
    """

    N: int
    d: int
    dims: tuple[int, ...]
    cumdims: tuple[int, ...]
    Q: int
    hoermander_ok: bool

    @property
    def n_blocks(self) -> int:
        return len(self.dims)

    @property
    def r(self) -> int:
        """Index of the last block (0 for the elliptic case d == N)."""
        return len(self.dims) - 1

    def block_slices(self) -> list[slice]:
        starts = (0,) + self.cumdims[:-1]
        return [slice(a, b) for a, b in zip(starts, self.cumdims)]

    def block_of(self, i: int) -> int:
        """Block index of coordinate i (0-based)."""
        for j, top in enumerate(self.cumdims):
            if i < top:
                return j
        raise IndexError(f"coordinate {i} out of range for N={self.N}")

    def exponents(self) -> np.ndarray:
        """Per-coordinate dilation exponent 2j+1, shape (N,)."""
        out = np.empty(self.N)
        for j, sl in enumerate(self.block_slices()):
            out[sl] = 2 * j + 1
        return out

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "d": self.d,
            "dims": list(self.dims),
            "Q": self.Q,
            "hoermander_ok": self.hoermander_ok,
        }


def _as_square_matrix(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise StructureError(f"drift matrix must be square, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise StructureError("drift matrix has non-finite entries")
    return B


def kalman_matrix(B, d: int) -> np.ndarray:
    """Controllability matrix [R, BR, ..., B^(N-1) R], R the injection of the
    first d coordinates."""
    B = _as_square_matrix(B)
    N = B.shape[0]
    if not 1 <= d <= N:
        raise StructureError(f"d must be in [1, N]={N}, got {d}")
    R = np.eye(N)[:, :d]
    cols = [R]
    for _ in range(N - 1):
        cols.append(B @ cols[-1])
    return np.hstack(cols)


def _svd_rank(M: np.ndarray, tol: float) -> int:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def kalman_rank(B, d: int, tol: float = DEFAULT_RANK_TOL) -> tuple[int, bool]:
    """Numerical rank of the Kalman matrix and whether it is full.

    Full rank is equivalent to the hypoellipticity condition on the operator
    built from B with diffusion in the first d coordinates.
    """
    if tol <= 0:
        raise StructureError("rank tolerance must be positive")
    B = _as_square_matrix(B)
    K = kalman_matrix(B, d)
    rank = _svd_rank(K, tol)
    return rank, rank == B.shape[0]


def block_decompose(B, d: int, tol: float = DEFAULT_RANK_TOL) -> BlockStructure:
    """Extract the block chain of B and validate the canonical form.

    Block sizes come from the rank increments of the truncated Kalman
    matrices. The matrix is rejected (not transformed) when the chain is not
    non-increasing, does not exhaust N, or when entries below the subdiagonal
    blocks are nonzero.
    """
    B = _as_square_matrix(B)
    N = B.shape[0]
    rank, ok = kalman_rank(B, d, tol)
    if not ok:
        raise StructureError(
            f"Kalman rank {rank} < N={N}: rank condition fails for d={d}"
        )

    R = np.eye(N)[:, :d]
    dims: list[int] = []
    K = R
    prev_rank = 0
    block = B @ R
    while prev_rank < N:
        r_now = _svd_rank(K, tol)
        step = r_now - prev_rank
        if step <= 0:
            raise StructureError("not in canonical block form: rank chain stalls")
        dims.append(step)
        prev_rank = r_now
        K = np.hstack([K, block])
        block = B @ block

    if dims[0] != d or any(a < b for a, b in zip(dims, dims[1:])) or sum(dims) != N:
        raise StructureError(
            f"not in canonical block form: block chain {tuple(dims)} invalid"
        )

    cumdims = tuple(np.cumsum(dims).tolist())
    s = BlockStructure(
        N=N,
        d=d,
        dims=tuple(dims),
        cumdims=cumdims,
        Q=int(sum((2 * j + 1) * dj for j, dj in enumerate(dims))),
        hoermander_ok=True,
    )
    _check_canonical_zeros(B, s, tol)
    return s


def _check_canonical_zeros(B: np.ndarray, s: BlockStructure, tol: float) -> None:
    """Entries strictly below the subdiagonal blocks must vanish and each
    subdiagonal block must have full column rank."""
    scale = max(np.abs(B).max(), 1.0)
    slices = s.block_slices()
    for h in range(s.n_blocks):
        for k in range(s.n_blocks):
            blk = B[slices[h], slices[k]]
            if h > k + 1 and np.abs(blk).max(initial=0.0) > tol * scale:
                raise StructureError(
                    f"not in canonical block form: block ({h},{k}) nonzero"
                )
            if h == k + 1 and _svd_rank(blk, tol) < s.dims[h]:
                raise StructureError(
                    f"not in canonical block form: subdiagonal block {h} rank-deficient"
                )


def reduced_drift(B, s: BlockStructure) -> np.ndarray:
    """Copy of B with every block except the subdiagonal ones set to zero."""
    B = _as_square_matrix(B)
    B0 = np.zeros_like(B)
    slices = s.block_slices()
    for h in range(1, s.n_blocks):
        B0[slices[h], slices[h - 1]] = B[slices[h], slices[h - 1]]
    return B0


def anisotropic_norm(x, s: BlockStructure):
    """Intrinsic quasi-norm: coordinate i in block j contributes |x_i|^(1/(2j+1)).

    Accepts a single vector (N,) or a batch (M, N); returns a float or (M,).
    """
    x = np.asarray(x, dtype=float)
    expo = s.exponents()
    vals = np.abs(x) ** (1.0 / expo)
    out = vals.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def dilation(lam: float, s: BlockStructure) -> np.ndarray:
    """Diagonal dilation matrix with lam^(2j+1) on block j."""
    if lam < 0:
        raise ValueError("dilation parameter must be non-negative")
    return np.diag(lam ** s.exponents())


def intrinsic_order(nu, s: BlockStructure) -> int:
    """Weighted order of a derivative multi-index: entry i in block j counts
    with weight 2j+1."""
    nu = np.asarray(nu)
    if nu.shape != (s.N,):
        raise ValueError(f"multi-index must have length N={s.N}")
    if np.any(nu < 0) or not np.issubdtype(nu.dtype, np.integer):
        raise ValueError("multi-index entries must be non-negative integers")
    return int(np.dot(s.exponents(), nu))


def norm_homogeneity_check(x, lam: float, s: BlockStructure, rtol: float = 1e-12) -> bool:
    """Check |D(lam) x|_B == lam * |x|_B to relative tolerance."""
    x = np.asarray(x, dtype=float)
    lhs = anisotropic_norm(dilation(lam, s) @ x, s)
    rhs = lam * anisotropic_norm(x, s)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) <= rtol * scale
