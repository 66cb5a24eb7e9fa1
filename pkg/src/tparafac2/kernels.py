"""Stateless numerical kernels for the alternating ADMM sub-updates.

Every function maps plain arrays to freshly allocated arrays; nothing here
owns state or iterates an outer loop. One shape convention throughout: data
slices stack to (K, I, J), evolving factors and their auxiliaries stack to
(K, J, R), strength vectors to (K, R), step sizes to (K,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AdmmState",
    "update_A",
    "update_Bk",
    "update_B_all",
    "bk_denominator_inverse",
    "solve_ZB_tridiagonal",
    "project_approx_P",
    "admm_cycle_D",
    "dual_step_B",
    "gram_trace_rho_B",
    "gram_trace_rho_D",
    "PINV_RCOND",
    "RHO_FLOOR",
]

# singular values below PINV_RCOND * sigma_max are truncated in every
# pseudo-inverse taken by the kernels
PINV_RCOND = 1e-12

# step sizes from the gram-trace rules never fall below this
RHO_FLOOR = 1e-12


def _stack(x) -> np.ndarray:
    """Accept a list of equally-shaped arrays or an already-stacked array."""
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=np.float64)
    return np.stack([np.asarray(m, dtype=np.float64) for m in x])


def _slices_array(data) -> np.ndarray:
    arr = getattr(data, "array", None)
    if arr is not None:
        return arr
    return _stack(data)


@dataclass
class AdmmState:
    """Auxiliary, dual, and step-size variables carried across outer sweeps.

    Z_B / Y_B are the smoothness and equal-Gram auxiliaries for the evolving
    factors with duals mu_ZB / mu_DeltaB; Z_D / mu_D mirror the same split for
    the strengths. P (orthonormal carriers) and DeltaB (shared coordinate
    block) warm-start the approximate feasibility projection between
    invocations.
    """

    Z_B: np.ndarray
    Y_B: np.ndarray
    mu_ZB: np.ndarray
    mu_DeltaB: np.ndarray
    Z_D: np.ndarray
    mu_D: np.ndarray
    rho_B: np.ndarray
    rho_D: np.ndarray
    P: np.ndarray
    DeltaB: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.rho_B) <= 0).any() or (np.asarray(self.rho_D) <= 0).any():
            raise ValueError("step sizes must be positive")


def update_A(data, B, D, lambda_A: float) -> np.ndarray:
    """Closed-form update of the shared mode-0 factor.

    Returns ``(sum_k X_k B_k diag(d_k)) @ (sum_k diag(d_k) B_k^T B_k diag(d_k)
    + lambda_A I)^+`` — the exact minimizer of the loss in A with everything
    else held fixed.
    """
    arr = _slices_array(data)
    B = _stack(B)
    D = _stack(D)
    scaled = B * D[:, None, :]
    num = np.tensordot(arr, scaled, axes=([0, 2], [0, 1]))
    grams = np.swapaxes(B, 1, 2) @ B
    den = (grams * D[:, :, None] * D[:, None, :]).sum(axis=0)
    den[np.diag_indices_from(den)] += lambda_A
    return num @ np.linalg.pinv(den, rcond=PINV_RCOND, hermitian=True)


def bk_denominator_inverse(A, D, rho_B) -> np.ndarray:
    """Stack of ``(diag(d_k) A^T A diag(d_k) + rho_k I)^+``, shape (K, R, R).

    Constant while A and the strengths are held fixed, so callers compute it
    once per outer sweep and reuse it across all inner iterations.
    """
    A = np.asarray(A, dtype=np.float64)
    D = _stack(D)
    rho = np.asarray(rho_B, dtype=np.float64)
    AtA = A.T @ A
    den = AtA[None, :, :] * (D[:, :, None] * D[:, None, :])
    R = A.shape[1]
    den = den + rho[:, None, None] * np.eye(R)[None]
    return np.linalg.pinv(den, rcond=PINV_RCOND, hermitian=True)


def update_B_all(data_term, inv_den, Z_B, mu_ZB, Y_B, mu_DeltaB, rho_B) -> np.ndarray:
    """Batched closed-form update of every evolving factor.

    ``data_term`` stacks X_k^T A diag(d_k); ``inv_den`` comes from
    :func:`bk_denominator_inverse`.
    """
    M = Z_B - mu_ZB + Y_B - mu_DeltaB
    num = data_term + 0.5 * np.asarray(rho_B)[:, None, None] * M
    return num @ inv_den


def update_Bk(x_k, A, d_k, z_bk, mu_z_bk, y_bk, mu_delta_bk, rho_bk: float) -> np.ndarray:
    """Closed-form update of a single evolving factor B_k.

    Minimizes the slice-k data fit plus the two rho/2-weighted proximal
    couplings to the auxiliaries; the two proximal terms together contribute
    ``rho_k I`` (not ``rho_k/2 I``) to the normal-equation matrix.
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    d_k = np.asarray(d_k, dtype=np.float64).ravel()
    rho = np.asarray([float(rho_bk)])
    data_term = x_k.T @ (A * d_k)
    inv_den = bk_denominator_inverse(A, d_k[None, :], rho)
    out = update_B_all(
        data_term[None],
        inv_den,
        _stack(z_bk)[None],
        _stack(mu_z_bk)[None],
        _stack(y_bk)[None],
        _stack(mu_delta_bk)[None],
        rho,
    )
    return out[0]


def solve_ZB_tridiagonal(lambda_B: float, rhs_inputs, rho_B) -> np.ndarray:
    """Exact solve of the chain-coupled smoothness-auxiliary system.

    The stationarity conditions of the smoothness subproblem couple the K
    auxiliaries through a scalar tridiagonal system applied entrywise:
    diagonal ``2*lambda_B + rho_1`` / ``4*lambda_B + rho_k`` /
    ``2*lambda_B + rho_K``, off-diagonals ``-2*lambda_B``, right-hand side
    ``rho_k (B_k + mu_k)``. Solved by Thomas elimination with matrix-valued
    rows; stable because the system is strictly diagonally dominant for
    positive rho.
    """
    T = _stack(rhs_inputs)
    rho = np.asarray(rho_B, dtype=np.float64)
    K = T.shape[0]
    if K == 1:
        # no neighbors to couple to: the proximal term alone fixes Z = B + mu
        return T.copy()
    lam2 = 2.0 * lambda_B
    diag = 4.0 * lambda_B + rho
    diag[0] = lam2 + rho[0]
    diag[-1] = lam2 + rho[-1]
    rhs = rho[:, None, None] * T

    cp = np.empty(K - 1)
    out = np.empty_like(rhs)
    cp[0] = -lam2 / diag[0]
    out[0] = rhs[0] / diag[0]
    for k in range(1, K):
        denom = diag[k] + lam2 * cp[k - 1]
        if k < K - 1:
            cp[k] = -lam2 / denom
        out[k] = (rhs[k] + lam2 * out[k - 1]) / denom
    for k in range(K - 2, -1, -1):
        out[k] -= cp[k] * out[k + 1]
    return out


# slices whose Gram eigenvalue spread exceeds this ratio leave the
# eigendecomposition fast path and take an exact SVD instead
_POLAR_COND = 1e-4


def _orthonormal_polar(M: np.ndarray, P_prev: np.ndarray, tiny: float) -> np.ndarray:
    """Nearest orthonormal-columns factor of each (J, R) slice of ``M``.

    Well-conditioned slices go through a batched symmetric eigendecomposition
    of M^T M, which is several times faster than a batched SVD at these
    shapes; ill-conditioned slices fall back to the SVD and near-zero slices
    keep their previous carrier.
    """
    G = np.swapaxes(M, 1, 2) @ M
    lam, W = np.linalg.eigh(G)
    degenerate = lam.sum(axis=1) <= tiny * tiny
    safe = ~degenerate & (lam[:, 0] > _POLAR_COND * lam[:, -1])
    if safe.all():
        inv = W / np.sqrt(lam)[:, None, :]
        return M @ (inv @ np.swapaxes(W, 1, 2))
    P = np.array(P_prev, dtype=np.float64)
    idx = np.nonzero(safe)[0]
    if idx.size:
        inv = W[idx] / np.sqrt(lam[idx])[:, None, :]
        P[idx] = M[idx] @ (inv @ np.swapaxes(W[idx], 1, 2))
    for k in np.nonzero(~safe & ~degenerate)[0]:
        u, _, vt = np.linalg.svd(M[k], full_matrices=False)
        P[k] = u @ vt
    return P


def project_approx_P(targets, rho_B, warm=None, n_inner: int = 5):
    """Approximate weighted projection onto the equal-Gram constraint set.

    Alternates, ``n_inner`` times, an orthogonal-Procrustes step for each
    orthonormal carrier P_k (polar factor of ``target_k @ DeltaB.T``) with a
    rho-weighted refresh of the shared coordinate block
    ``DeltaB = sum_k rho_k P_k^T target_k / sum_k rho_k``.

    The output ``Y_k = P_k @ DeltaB`` has the same Gram matrix for every k by
    construction — membership is exact, only distance-optimality is
    approximate. Warm-started carriers from the previous invocation make a
    handful of passes sufficient inside the outer loop.

    Returns ``(Y, P, DeltaB)``.
    """
    T = _stack(targets)
    rho = np.asarray(rho_B, dtype=np.float64)
    K, J, R = T.shape
    if R > J:
        raise ValueError(f"rank {R} exceeds evolving-mode dimension {J}")
    if n_inner < 1:
        raise ValueError("n_inner must be at least 1")
    if warm is None:
        P = np.broadcast_to(np.eye(J, R), (K, J, R)).copy()
        DeltaB = np.eye(R)
    else:
        P, DeltaB = warm
        P = np.array(P, dtype=np.float64)
        DeltaB = np.array(DeltaB, dtype=np.float64)
    wsum = float(rho.sum())
    tiny = 1e-12 * max(1.0, float(np.abs(T).max()))
    Tw_flat = (T * rho[:, None, None]).reshape(K * J, R)
    for _ in range(n_inner):
        M = T @ DeltaB.T
        P = _orthonormal_polar(M, P, tiny)
        DeltaB = P.reshape(K * J, R).T @ Tw_flat / wsum
        if np.linalg.norm(DeltaB) <= tiny:
            DeltaB = np.eye(R)
    return P @ DeltaB, P, DeltaB


def admm_cycle_D(data, A, B, D, Z_D, mu_D, rho_D, lambda_D: float):
    """One ADMM cycle on the strengths: ridge solve, clip, dual step.

    Solves, per slice,
    ``[2 (A^T A * B_k^T B_k) + (2 lambda_D + rho_k) I] d = 2 diagvec(A^T X_k B_k)
    + rho_k (z_k - mu_k)`` (* is the elementwise product), then projects the
    auxiliary onto the non-negative orthant and takes one dual ascent step.

    Returns updated ``(D, Z_D, mu_D)``.
    """
    arr = _slices_array(data)
    A = np.asarray(A, dtype=np.float64)
    B = _stack(B)
    D = _stack(D)
    if D.shape != (B.shape[0], A.shape[1]):
        raise ValueError("strength stack shape does not match A and B")
    Z = _stack(Z_D)
    mu = _stack(mu_D)
    rho = np.asarray(rho_D, dtype=np.float64)
    R = A.shape[1]
    AtA = A.T @ A
    G = AtA[None] * (np.swapaxes(B, 1, 2) @ B)
    lhs = 2.0 * G + (2.0 * lambda_D + rho)[:, None, None] * np.eye(R)[None]
    # diag(A^T X_k B_k) without forming A^T X_k: contract X_k B_k against A
    diagvec = ((arr @ B) * A[None, :, :]).sum(axis=1)
    rhs = 2.0 * diagvec + rho[:, None] * (Z - mu)
    d = np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]
    Z_new = np.maximum(0.0, d + mu)
    mu_new = d - Z_new + mu
    return d, Z_new, mu_new


def dual_step_B(b_k, z_bk, y_bk, mu_z_bk, mu_delta_bk):
    """Dual ascent for the evolving-factor splits; works per-slice or stacked."""
    b = np.asarray(b_k, dtype=np.float64)
    mu_z = b - np.asarray(z_bk) + np.asarray(mu_z_bk)
    mu_delta = b - np.asarray(y_bk) + np.asarray(mu_delta_bk)
    return mu_z, mu_delta


def gram_trace_rho_B(A, D) -> np.ndarray:
    """Per-slice step sizes ``trace(diag(d_k) A^T A diag(d_k)) / R``, floored."""
    A = np.asarray(A, dtype=np.float64)
    D = _stack(D)
    ata_diag = (A * A).sum(axis=0)
    rho = (D * D) @ ata_diag / A.shape[1]
    return np.maximum(rho, RHO_FLOOR)


def gram_trace_rho_D(A, B) -> np.ndarray:
    """Per-slice step sizes ``trace((A^T A) * (B_k^T B_k)) / R``, floored."""
    A = np.asarray(A, dtype=np.float64)
    B = _stack(B)
    ata_diag = (A * A).sum(axis=0)
    btb_diag = (B * B).sum(axis=1)
    rho = btb_diag @ ata_diag / A.shape[1]
    return np.maximum(rho, RHO_FLOOR)
