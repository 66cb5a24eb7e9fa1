"""Factor-recovery scoring: match score, degeneracy screening, run selection."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "MatchReport",
    "fms",
    "detect_degenerate",
    "select_best",
    "congruence_matrix",
    "best_permutation",
]

# above this rank, exhaustive permutation search gives way to the assignment solver
EXHAUSTIVE_R = 6

DEGENERACY_THRESHOLD = 0.85


@dataclass(frozen=True)
class MatchReport:
    """Recovery score of one estimate against a ground truth."""

    fms: float
    permutation: tuple[int, ...]
    per_component_scores: tuple[float, ...]
    degenerate: bool
    discarded_reason: str | None = None


def _unit_columns(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return M / safe


def congruence_matrix(est_modes, truth_modes, absolute: bool = True) -> np.ndarray:
    """R x R componentwise products of column cosines across the given modes.

    ``S[i, j]`` multiplies, over all modes, the cosine between estimate
    component i and truth component j. Zero-norm columns contribute zero.
    """
    if len(est_modes) != len(truth_modes) or not est_modes:
        raise ValueError("need the same non-zero number of modes on both sides")
    R = est_modes[0].shape[1]
    S = np.ones((R, R))
    for E, T in zip(est_modes, truth_modes):
        if E.shape[1] != R or T.shape[1] != R:
            raise ValueError("all modes must have R columns")
        en = np.linalg.norm(E, axis=0)
        tn = np.linalg.norm(T, axis=0)
        C = E.T @ T
        scale = np.outer(en, tn)
        C = np.where(scale > 0, C / np.where(scale > 0, scale, 1.0), 0.0)
        S = S * (np.abs(C) if absolute else C)
    return S


def best_permutation(S: np.ndarray):
    """Component matching that maximizes the summed score.

    Exhaustive search up to rank 6, Hungarian assignment beyond. Returns
    ``(permutation, matched_scores)`` where ``permutation[i]`` is the truth
    component assigned to estimate component i.
    """
    R = S.shape[0]
    if R <= EXHAUSTIVE_R:
        best_perm = None
        best_total = -np.inf
        for perm in itertools.permutations(range(R)):
            total = sum(S[i, p] for i, p in enumerate(perm))
            if total > best_total:
                best_total = total
                best_perm = perm
        perm = best_perm
    else:
        rows, cols = linear_sum_assignment(-S)
        order = np.argsort(rows)
        perm = tuple(int(c) for c in cols[order])
    scores = tuple(float(S[i, p]) for i, p in enumerate(perm))
    return tuple(perm), scores


def _score_modes(factors, signed: bool = False):
    """Mode matrices with components as columns, evolving mode concatenated."""
    B_cat = np.asarray(factors.B_array).reshape(-1, factors.R)
    modes = [np.asarray(factors.A), B_cat]
    D = getattr(factors, "D_array", None)
    if D is not None:
        modes.append(np.asarray(D))
    return modes


def fms(estimate, truth) -> MatchReport:
    """Factor match score of an estimate against ground-truth factors.

    Per matched component pair, multiplies the absolute column cosines of the
    shared mode, the concatenated evolving mode, and the stacked strengths;
    the score is the mean over components under the best permutation, so a
    perfect recovery scores 1 regardless of scaling or component order.
    """
    if estimate.R != truth.R:
        raise ValueError(f"rank mismatch: estimate {estimate.R} vs truth {truth.R}")
    if (estimate.I, estimate.J, estimate.K) != (truth.I, truth.J, truth.K):
        raise ValueError("estimate and truth describe different tensor shapes")
    S = congruence_matrix(_score_modes(estimate), _score_modes(truth))
    perm, scores = best_permutation(S)
    return MatchReport(
        fms=float(np.mean(scores)),
        permutation=perm,
        per_component_scores=scores,
        degenerate=detect_degenerate(estimate),
    )


def detect_degenerate(factors, threshold: float = DEGENERACY_THRESHOLD) -> bool:
    """Flag two-component degeneracy: some component pair whose signed cosine
    product across all modes falls below ``-threshold`` (nearly equal shapes
    with cancelling signs)."""
    R = factors.R
    if R < 2:
        return False
    prod = np.ones((R, R))
    for M in _score_modes(factors, signed=True):
        N = _unit_columns(np.asarray(M, dtype=np.float64))
        prod = prod * (N.T @ N)
    iu = np.triu_indices(R, k=1)
    return bool((prod[iu] < -threshold).any())


def select_best(runs):
    """Pick the run to report from a multi-start batch.

    Runs that stopped at the iteration cap or look degenerate are discarded;
    the survivor with the lowest final loss wins. If nothing survives, the
    lowest-loss run overall is returned with ``discarded_reason`` set.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to select from")
    survivors = [
        r for r in runs
        if r.exit_reason != "max-iterations" and not r.degenerate
    ]
    if survivors:
        return min(survivors, key=lambda r: r.final_loss)
    best = min(runs, key=lambda r: r.final_loss)
    reason = "degenerate" if best.degenerate else "max-iterations"
    return dataclasses.replace(best, discarded_reason=reason)
