"""Coupled matrix factorization baselines with temporal smoothness.

The model approximates every slice as ``A @ B_k.T``: no strengths and no
equal-Gram constraint, so slice-to-slice component scaling is absorbed by the
evolving factors. Optional non-negativity on the shared factor uses the same
ADMM orthant split as the strengths in the constrained model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Parafac2Factors, RegularizationConfig, TensorSlices, _freeze, _views
from .evaluation import best_permutation, congruence_matrix
from .solver import (
    DIVERGENCE_FACTOR,
    EXIT_DIVERGED,
    EXIT_LOSS,
    EXIT_MAXITER,
    SolverConfig,
    _rel_gap,
    init_uniform,
)

__all__ = ["CmfFactors", "CmfFitResult", "fit_cmf", "objective_cmf", "fms_cmf"]


class CmfFactors:
    """Factor pair (A, {B_k}); set ``nonneg_A`` when A must stay entrywise >= 0."""

    __slots__ = ("_A", "_B", "nonneg_A")

    def __init__(self, A, B, nonneg_A: bool = False):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("A must be a 2-D matrix")
        if isinstance(B, np.ndarray) and B.ndim == 3:
            B = np.array(B, dtype=np.float64)
        else:
            B = np.stack([np.asarray(m, dtype=np.float64) for m in B])
        if B.ndim != 3 or B.shape[2] != A.shape[1]:
            raise ValueError("B must stack K matrices of shape (J, R)")
        if not (np.isfinite(A).all() and np.isfinite(B).all()):
            raise ValueError("factors contain NaN or Inf entries")
        if nonneg_A and (A < 0).any():
            raise ValueError("A must be entrywise non-negative")
        self._A = _freeze(A)
        self._B = _freeze(B)
        self.nonneg_A = bool(nonneg_A)

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def B(self) -> tuple[np.ndarray, ...]:
        return _views(self._B)

    @property
    def B_array(self) -> np.ndarray:
        return self._B

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
        tag = ", nonneg_A" if self.nonneg_A else ""
        return f"CmfFactors(I={self.I}, J={self.J}, K={self.K}, R={self.R}{tag})"


@dataclass
class CmfFitResult:
    factors: CmfFactors
    loss_trace: list[float]
    outer_iters: int
    converged: bool
    feas_gap_B_Z: float
    feas_gap_A: float
    exit_reason: str

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def _cmf_loss(arr, A, B, lambda_B, lambda_A) -> float:
    resid = arr - A[None] @ np.swapaxes(B, 1, 2)
    total = float(np.vdot(resid, resid))
    if lambda_A:
        total += lambda_A * float(np.vdot(A, A))
    if lambda_B and B.shape[0] > 1:
        diff = B[1:] - B[:-1]
        total += lambda_B * float(np.vdot(diff, diff))
    return total


def objective_cmf(data, factors: CmfFactors, lambda_B: float,
                  lambda_A: float = 0.0) -> float:
    """Squared-residual fit of ``A @ B_k.T`` plus smoothness and ridge terms."""
    arr = data.array if isinstance(data, TensorSlices) else np.asarray(data, dtype=np.float64)
    return _cmf_loss(arr, np.asarray(factors.A), np.asarray(factors.B_array),
                     lambda_B, lambda_A)


def fit_cmf(data: TensorSlices, R: int, lambda_B: float, nonneg_A: bool = False,
            config: SolverConfig | None = None, init=None) -> CmfFitResult:
    """Fit the smoothed matrix-factorization baseline by alternating ADMM.

    ``R`` and ``lambda_B`` come from the explicit arguments; ``config``
    supplies iteration limits, tolerances, the ridge weight on A
    (``config.reg.lambda_A``), and the init seed. The evolving factors run
    the same smoothness split as the constrained model but with a single
    proximal coupling; A is closed-form, or ADMM-split onto the non-negative
    orthant when ``nonneg_A`` is set.
    """
    if not isinstance(data, TensorSlices):
        data = TensorSlices(data)
    if config is None:
        config = SolverConfig(R=R, reg=RegularizationConfig(lambda_A=1e-3))
    if R > min(data.I, data.J):
        raise ValueError(f"rank {R} exceeds min(I, J) = {min(data.I, data.J)}")
    lambda_A = config.reg.lambda_A
    K, J = data.K, data.J
    if init is not None:
        A = np.array(init.A, dtype=np.float64)
        B = np.array(init.B_array, dtype=np.float64)
        if A.shape != (data.I, R) or B.shape != (K, J, R):
            raise ValueError("init factors do not match the data shape and rank")
    else:
        # strengths are drawn and discarded to keep the stream aligned with
        # the constrained solver, so both families share A and B bit-for-bit
        A, B, _ = init_uniform(data.I, J, K, R, config.seed)
    arr = data.array
    xt = np.ascontiguousarray(arr.transpose(0, 2, 1))
    eyeR = np.eye(R)

    Z_B = B.copy()
    mu_B = np.zeros_like(B)
    if nonneg_A:
        Z_A = A.copy()
        mu_A = np.zeros_like(A)

    loss_init = _cmf_loss(arr, A, B, lambda_B, lambda_A)
    guard = DIVERGENCE_FACTOR * max(loss_init, 1e-30)
    trace: list[float] = []
    prev_loss = None
    exit_reason = EXIT_MAXITER
    snap = (A.copy(), B.copy())
    diverged = False
    n_outer = 0

    for _ in range(config.max_outer):
        AtA = A.T @ A
        rho_b = max(float(np.trace(AtA)) / R, kernels.RHO_FLOOR)
        rho = np.full(K, rho_b)
        inv_den = np.linalg.pinv(AtA + 0.5 * rho_b * eyeR,
                                 rcond=kernels.PINV_RCOND, hermitian=True)
        data_term = xt @ A
        for _ in range(config.max_inner_B):
            B = (data_term + 0.5 * rho_b * (Z_B - mu_B)) @ inv_den
            Z_B = kernels.solve_ZB_tridiagonal(lambda_B, B + mu_B, rho)
            mu_B = B - Z_B + mu_B
            if _rel_gap(B, Z_B) <= config.inner_tol:
                break
        sumXB = np.tensordot(arr, B, axes=([0, 2], [0, 1]))
        sumBtB = (np.swapaxes(B, 1, 2) @ B).sum(axis=0)
        if nonneg_A:
            rho_a = max(float(np.trace(sumBtB)) / R, kernels.RHO_FLOOR)
            den = sumBtB + (lambda_A + 0.5 * rho_a) * eyeR
            A = (sumXB + 0.5 * rho_a * (Z_A - mu_A)) @ np.linalg.pinv(
                den, rcond=kernels.PINV_RCOND, hermitian=True)
            Z_A = np.maximum(0.0, A + mu_A)
            mu_A = A - Z_A + mu_A
        else:
            den = sumBtB + lambda_A * eyeR
            A = sumXB @ np.linalg.pinv(den, rcond=kernels.PINV_RCOND, hermitian=True)
        loss = _cmf_loss(arr, A, B, lambda_B, lambda_A)
        n_outer += 1
        if not np.isfinite(loss) or loss > guard:
            A, B = snap
            if not trace:
                trace.append(loss_init)
            exit_reason = EXIT_DIVERGED
            diverged = True
            break
        trace.append(loss)
        if prev_loss is not None:
            delta = abs(loss - prev_loss)
            if delta <= config.abs_tol_loss or delta <= config.rel_tol_loss * abs(prev_loss):
                exit_reason = EXIT_LOSS
                break
        prev_loss = loss
        snap = (A.copy(), B.copy())

    gap_B = _rel_gap(B, Z_B)
    if nonneg_A:
        gap_A = _rel_gap(A[None], Z_A[None])
        A_report = np.maximum(snap[0], 0.0) if diverged else np.array(Z_A)
    else:
        gap_A = 0.0
        A_report = A
    converged = (
        exit_reason == EXIT_LOSS
        and gap_B <= config.feas_tol
        and gap_A <= config.feas_tol
    )
    factors = CmfFactors(A_report, B, nonneg_A=nonneg_A)
    return CmfFitResult(
        factors=factors,
        loss_trace=trace,
        outer_iters=n_outer,
        converged=converged,
        feas_gap_B_Z=gap_B,
        feas_gap_A=gap_A,
        exit_reason=exit_reason,
    )


def fms_cmf(estimate: CmfFactors, truth) -> float:
    """Two-mode factor match score for the matrix-factorization baselines.

    Uses the shared mode and the concatenated evolving mode. When the truth
    is a strength-carrying factor set, the strengths are folded into its
    evolving mode (``B_k diag(d_k)``) first, since the baseline's B absorbs
    per-slice scaling.
    """
    if isinstance(truth, Parafac2Factors):
        tA = np.asarray(truth.A)
        tB = (truth.B_array * truth.D_array[:, None, :]).reshape(-1, truth.R)
    else:
        tA = np.asarray(truth.A)
        tB = np.asarray(truth.B_array).reshape(-1, truth.R)
    if estimate.R != tA.shape[1]:
        raise ValueError(f"rank mismatch: estimate {estimate.R} vs truth {tA.shape[1]}")
    eA = np.asarray(estimate.A)
    eB = np.asarray(estimate.B_array).reshape(-1, estimate.R)
    if eA.shape[0] != tA.shape[0] or eB.shape[0] != tB.shape[0]:
        raise ValueError("estimate and truth describe different tensor shapes")
    S = congruence_matrix([eA, eB], [tA, tB])
    _, scores = best_permutation(S)
    return float(np.mean(scores))
