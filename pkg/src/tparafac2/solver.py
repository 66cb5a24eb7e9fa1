"""Outer alternating loop and inner ADMM sweeps for the evolving-factor model.

One outer iteration runs the inner ADMM loop on the evolving factors, one
ADMM cycle on the strengths, and the closed-form shared-factor update, then
re-evaluates the total loss. Step sizes are refreshed from the gram-trace
rules at the start of each sub-block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    Parafac2Factors,
    RegularizationConfig,
    TensorSlices,
    _objective_arrays,
)
from .kernels import AdmmState

__all__ = [
    "SolverConfig",
    "FitResult",
    "init_uniform",
    "initialize",
    "inner_admm_B",
    "fit",
    "EXIT_LOSS",
    "EXIT_MAXITER",
    "EXIT_DIVERGED",
]

EXIT_LOSS = "loss-tolerance"
EXIT_MAXITER = "max-iterations"
EXIT_DIVERGED = "diverged"

# a loss this many times its starting value counts as blown up
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Rank, penalties, and iteration/tolerance knobs for one fit."""

    R: int
    reg: RegularizationConfig = field(default_factory=RegularizationConfig)
    max_outer: int = 2000
    max_inner_B: int = 5
    abs_tol_loss: float = 1e-10
    rel_tol_loss: float = 1e-8
    feas_tol: float = 1e-4
    inner_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("rank must be at least 1")
        if self.max_outer < 1 or self.max_inner_B < 1:
            raise ValueError("iteration limits must be at least 1")
        for name in ("abs_tol_loss", "rel_tol_loss", "feas_tol", "inner_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class FitResult:
    """Outcome of one fit: final factors, ADMM state, and diagnostics."""

    factors: Parafac2Factors
    state: AdmmState
    loss_trace: list[float]
    outer_iters: int
    converged: bool
    feas_gap_B_Z: float
    feas_gap_B_Y: float
    feas_gap_D: float
    exit_reason: str

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def init_uniform(I: int, J: int, K: int, R: int, seed: int):
    """Entrywise uniform(0, 1) starting factors.

    Every model family draws through the same order (A, then the B stack,
    then the strengths) so different methods can share initializations
    bit-for-bit from the same seed.
    """
    rng = np.random.default_rng(seed)
    A = rng.random((I, R))
    B = rng.random((K, J, R))
    D = rng.random((K, R))
    return A, B, D


def initialize(data: TensorSlices, config: SolverConfig, init=None):
    """Starting factors plus a consistent ADMM state.

    Auxiliaries start at copies of their primal counterparts (the equal-Gram
    auxiliary at the projection of B), duals at zero, step sizes from the
    gram-trace rules.
    """
    if init is not None:
        A = np.array(init.A, dtype=np.float64)
        B = np.array(init.B_array, dtype=np.float64)
        D = np.array(init.D_array, dtype=np.float64)
        if A.shape != (data.I, config.R) or B.shape != (data.K, data.J, config.R):
            raise ValueError("init factors do not match the data shape and rank")
    else:
        A, B, D = init_uniform(data.I, data.J, data.K, config.R, config.seed)
    rho_B = kernels.gram_trace_rho_B(A, D)
    rho_D = kernels.gram_trace_rho_D(A, B)
    Y_B, P, DeltaB = kernels.project_approx_P(B, rho_B, warm=None)
    state = AdmmState(
        Z_B=B.copy(),
        Y_B=Y_B,
        mu_ZB=np.zeros_like(B),
        mu_DeltaB=np.zeros_like(B),
        Z_D=D.copy(),
        mu_D=np.zeros_like(D),
        rho_B=rho_B,
        rho_D=rho_D,
        P=P,
        DeltaB=DeltaB,
    )
    return Parafac2Factors(A, B, D), state


def _rel_gap(X: np.ndarray, ref: np.ndarray) -> float:
    """max_k ||X_k - ref_k||_F / max(||ref_k||_F, 1e-12)."""
    axes = tuple(range(1, X.ndim))
    num = np.sqrt(((X - ref) ** 2).sum(axis=axes))
    den = np.maximum(np.sqrt((ref * ref).sum(axis=axes)), 1e-12)
    return float((num / den).max())


def _inner_admm_B(data_term, inv_den, state: AdmmState, lambda_B: float,
                  max_inner_B: int, inner_tol: float) -> np.ndarray:
    """Run the inner ADMM loop in place on ``state``; returns the new B stack."""
    Z_B, Y_B = state.Z_B, state.Y_B
    mu_Z, mu_Delta = state.mu_ZB, state.mu_DeltaB
    P, DeltaB = state.P, state.DeltaB
    rho = state.rho_B
    for _ in range(max_inner_B):
        B = kernels.update_B_all(data_term, inv_den, Z_B, mu_Z, Y_B, mu_Delta, rho)
        Z_B = kernels.solve_ZB_tridiagonal(lambda_B, B + mu_Z, rho)
        Y_B, P, DeltaB = kernels.project_approx_P(B + mu_Delta, rho, warm=(P, DeltaB))
        mu_Z, mu_Delta = kernels.dual_step_B(B, Z_B, Y_B, mu_Z, mu_Delta)
        if _rel_gap(B, Z_B) <= inner_tol and _rel_gap(B, Y_B) <= inner_tol:
            break
    state.Z_B, state.Y_B = Z_B, Y_B
    state.mu_ZB, state.mu_DeltaB = mu_Z, mu_Delta
    state.P, state.DeltaB = P, DeltaB
    return B


def inner_admm_B(data: TensorSlices, factors: Parafac2Factors, state: AdmmState,
                 lambda_B: float, max_inner_B: int = 5, inner_tol: float = 1e-5):
    """One invocation of the inner ADMM loop on the evolving factors.

    A and the strengths are held fixed at their values in ``factors``.
    Exits early once both relative splitting gaps fall below ``inner_tol``.
    Returns ``(B, state)`` with B as a list of J x R matrices.
    """
    arr = data.array
    A = np.asarray(factors.A)
    D = np.asarray(factors.D_array)
    xt = np.ascontiguousarray(arr.transpose(0, 2, 1))
    data_term = (xt @ A) * D[:, None, :]
    inv_den = kernels.bk_denominator_inverse(A, D, state.rho_B)
    B = _inner_admm_B(data_term, inv_den, state, lambda_B, max_inner_B, inner_tol)
    return list(B), state


def fit(data: TensorSlices, config: SolverConfig, init=None) -> FitResult:
    """Fit the evolving-factor model by alternating ADMM sweeps.

    Stops when the successive-loss criterion fires (absolute or relative) or
    at ``max_outer`` iterations; a non-finite or exploding loss aborts with
    the last finite iterate. ``converged`` requires the loss criterion plus
    all feasibility gaps at or below ``feas_tol``. The returned factors carry
    the non-negative auxiliary copy of the strengths.
    """
    if not isinstance(data, TensorSlices):
        data = TensorSlices(data)
    if config.R > min(data.I, data.J):
        raise ValueError(
            f"rank {config.R} exceeds min(I, J) = {min(data.I, data.J)}"
        )
    reg = config.reg
    factors0, state = initialize(data, config, init)
    A = np.array(factors0.A)
    B = np.array(factors0.B_array)
    D = np.array(factors0.D_array)
    arr = data.array
    xt = np.ascontiguousarray(arr.transpose(0, 2, 1))

    loss_init = _objective_arrays(arr, A, B, D, reg.lambda_A, reg.lambda_B, reg.lambda_D)
    guard = DIVERGENCE_FACTOR * max(loss_init, 1e-30)
    trace: list[float] = []
    prev_loss = None
    exit_reason = EXIT_MAXITER
    snap = (A.copy(), B.copy(), D.copy())
    diverged = False
    n_outer = 0

    for _ in range(config.max_outer):
        state.rho_B = kernels.gram_trace_rho_B(A, D)
        data_term = (xt @ A) * D[:, None, :]
        inv_den = kernels.bk_denominator_inverse(A, D, state.rho_B)
        B = _inner_admm_B(data_term, inv_den, state, reg.lambda_B,
                          config.max_inner_B, config.inner_tol)
        state.rho_D = kernels.gram_trace_rho_D(A, B)
        D, state.Z_D, state.mu_D = kernels.admm_cycle_D(
            arr, A, B, D, state.Z_D, state.mu_D, state.rho_D, reg.lambda_D)
        A = kernels.update_A(arr, B, D, reg.lambda_A)
        loss = _objective_arrays(arr, A, B, D, reg.lambda_A, reg.lambda_B, reg.lambda_D)
        n_outer += 1
        if not np.isfinite(loss) or loss > guard:
            # roll back to the last finite iterate; the trace keeps only
            # losses that correspond to reportable factors
            A, B, D = snap
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
        snap = (A.copy(), B.copy(), D.copy())

    gap_B_Z = _rel_gap(B, state.Z_B)
    gap_B_Y = _rel_gap(B, state.Y_B)
    gap_D = _rel_gap(D, state.Z_D)
    converged = (
        exit_reason == EXIT_LOSS
        and gap_B_Z <= config.feas_tol
        and gap_B_Y <= config.feas_tol
        and gap_D <= config.feas_tol
    )
    if diverged:
        D_report = np.maximum(D, 0.0)
    else:
        D_report = np.array(state.Z_D)
    factors = Parafac2Factors(A, B, D_report)
    return FitResult(
        factors=factors,
        state=state,
        loss_trace=trace,
        outer_iters=n_outer,
        converged=converged,
        feas_gap_B_Z=gap_B_Z,
        feas_gap_B_Y=gap_B_Y,
        feas_gap_D=gap_D,
        exit_reason=exit_reason,
    )
