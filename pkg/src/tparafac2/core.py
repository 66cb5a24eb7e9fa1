"""Data containers and model arithmetic for slice-wise evolving factorizations.

A third-order data set is a stack of K frontal slices X_k, each I x J. The
factor model approximates every slice as ``A @ diag(d_k) @ B_k.T`` with a
shared mode-0 factor A, slice-specific evolving factors B_k, and entrywise
non-negative strengths d_k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TensorSlices",
    "Parafac2Factors",
    "RegularizationConfig",
    "reconstruct_slice",
    "objective",
    "parafac2_residual",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def _views(arr: np.ndarray) -> tuple[np.ndarray, ...]:
    # views of a read-only base are read-only themselves
    return tuple(arr[k] for k in range(arr.shape[0]))


class TensorSlices:
    """Immutable stack of K dense frontal slices, each I x J.

    Parameters
    ----------
    slices : sequence of (I, J) arrays, or one (K, I, J) array
        Frontal slices. All slices must share the same shape and every entry
        must be finite.
    """

    __slots__ = ("_array",)

    def __init__(self, slices):
        if isinstance(slices, TensorSlices):
            arr = np.array(slices.array)
        elif isinstance(slices, np.ndarray) and slices.ndim == 3:
            arr = np.array(slices, dtype=np.float64)
        else:
            mats = [np.asarray(m, dtype=np.float64) for m in slices]
            if not mats:
                raise ValueError("need at least one slice")
            if any(m.ndim != 2 for m in mats):
                raise ValueError("each slice must be a 2-D matrix")
            if any(m.shape != mats[0].shape for m in mats):
                raise ValueError("all slices must share the same I x J shape")
            arr = np.stack(mats)
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"degenerate slice stack shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("slices contain NaN or Inf entries")
        self._array = _freeze(arr)

    @property
    def array(self) -> np.ndarray:
        """Read-only (K, I, J) view of the full stack."""
        return self._array

    @property
    def slices(self) -> tuple[np.ndarray, ...]:
        return _views(self._array)

    @property
    def K(self) -> int:
        return self._array.shape[0]

    @property
    def I(self) -> int:
        return self._array.shape[1]

    @property
    def J(self) -> int:
        return self._array.shape[2]

    def norm(self) -> float:
        """Frobenius norm over all slices."""
        return float(np.linalg.norm(self._array))

    def __repr__(self) -> str:
        return f"TensorSlices(K={self.K}, I={self.I}, J={self.J})"


class Parafac2Factors:
    """Factor set (A, {B_k}, {d_k}) for a K-slice evolving model.

    ``A`` is I x R, each ``B[k]`` is J x R, each ``D[k]`` is the length-R
    strength vector of slice k (all entries >= 0). Instances are immutable;
    the stacked forms ``B_array`` (K, J, R) and ``D_array`` (K, R) are what
    numerical code should iterate over.
    """

    __slots__ = ("_A", "_B", "_D")

    def __init__(self, A, B, D):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("A must be a 2-D matrix")
        if isinstance(B, np.ndarray) and B.ndim == 3:
            B = np.array(B, dtype=np.float64)
        else:
            B = np.stack([np.asarray(m, dtype=np.float64) for m in B])
        if isinstance(D, np.ndarray) and D.ndim == 2:
            D = np.array(D, dtype=np.float64)
        else:
            D = np.stack([np.asarray(v, dtype=np.float64).ravel() for v in D])
        R = A.shape[1]
        if B.ndim != 3 or B.shape[2] != R:
            raise ValueError("B must stack K matrices of shape (J, R)")
        if D.ndim != 2 or D.shape != (B.shape[0], R):
            raise ValueError("D must stack K strength vectors of length R")
        for name, arr in (("A", A), ("B", B), ("D", D)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains NaN or Inf entries")
        if (D < 0).any():
            raise ValueError("strengths must be non-negative")
        self._A = _freeze(A)
        self._B = _freeze(B)
        self._D = _freeze(D)

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def B(self) -> tuple[np.ndarray, ...]:
        return _views(self._B)

    @property
    def D(self) -> tuple[np.ndarray, ...]:
        return _views(self._D)

    @property
    def B_array(self) -> np.ndarray:
        """Read-only (K, J, R) stack of the evolving factors."""
        return self._B

    @property
    def D_array(self) -> np.ndarray:
        """Read-only (K, R) stack of the strength vectors."""
        return self._D

    @property
    def R(self) -> int:
        return self._A.shape[1]

    @property
    def K(self) -> int:
        return self._B.shape[0]

    @property
    def I(self) -> int:
        return self._A.shape[0]

    @property
    def J(self) -> int:
        return self._B.shape[1]

    def __repr__(self) -> str:
        return (
            f"Parafac2Factors(I={self.I}, J={self.J}, K={self.K}, R={self.R})"
        )


@dataclass(frozen=True)
class RegularizationConfig:
    """Penalty weights: ridge on A and the strengths, smoothness across B_k."""

    lambda_A: float = 0.0
    lambda_B: float = 0.0
    lambda_D: float = 0.0
    nonneg_D: bool = True

    def __post_init__(self):
        for name in ("lambda_A", "lambda_B", "lambda_D"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def reconstruct_slice(factors: Parafac2Factors, k: int) -> np.ndarray:
    """Dense model slice ``A @ diag(d_k) @ B_k.T``."""
    if not 0 <= k < factors.K:
        raise IndexError(f"slice index {k} out of range for K={factors.K}")
    return (factors.A * factors.D_array[k]) @ factors.B_array[k].T


def _objective_arrays(arr, A, B, D, lambda_A, lambda_B, lambda_D) -> float:
    scaled = A[None, :, :] * D[:, None, :]
    resid = arr - scaled @ np.swapaxes(B, 1, 2)
    total = float(np.vdot(resid, resid))
    if lambda_A:
        total += lambda_A * float(np.vdot(A, A))
    if lambda_D:
        total += lambda_D * float(np.vdot(D, D))
    if lambda_B and B.shape[0] > 1:
        diff = B[1:] - B[:-1]
        total += lambda_B * float(np.vdot(diff, diff))
    return total


def objective(data: TensorSlices, factors: Parafac2Factors,
              reg: RegularizationConfig) -> float:
    """Total loss: squared-residual data fit plus all active penalties.

    The smoothness penalty is evaluated on the primal evolving factors,
    ``lambda_B * sum_{k>=2} ||B_k - B_{k-1}||_F^2``.
    """
    if (data.I, data.J, data.K) != (factors.I, factors.J, factors.K):
        raise ValueError(
            f"data shape ({data.I}, {data.J}, {data.K}) does not match "
            f"factors ({factors.I}, {factors.J}, {factors.K})"
        )
    return _objective_arrays(
        data.array, factors.A, factors.B_array, factors.D_array,
        reg.lambda_A, reg.lambda_B, reg.lambda_D,
    )


def parafac2_residual(factors: Parafac2Factors) -> float:
    """Worst pairwise mismatch of the cross-product matrices B_k^T B_k.

    Zero iff the evolving factors share a common Gram matrix, i.e. the factor
    set satisfies the equal-cross-product constraint. Normalized by
    ``max(1, ||B_1^T B_1||_F)`` so the scale of the factors does not dominate.
    """
    B = factors.B_array
    K = B.shape[0]
    if K < 2:
        return 0.0
    grams = np.einsum("kjr,kjs->krs", B, B)
    scale = max(1.0, float(np.linalg.norm(grams[0])))
    worst = 0.0
    for a in range(K - 1):
        diff = grams[a + 1:] - grams[a]
        worst = max(worst, float(np.sqrt((diff * diff).sum(axis=(1, 2))).max()))
    return worst / scale
