"""Evaluation criteria: endmember SAD, abundance/P RMSE, pixel SAD.

Estimated endmembers are aligned to the ground truth by exhaustive
permutation search on total spectral angle; the same permutation is then
reused for the abundance comparison so all reported numbers describe one
consistent assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

MATCH_MAX_R = 8


def spectral_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in radians between two spectra.

    The cosine is clamped to [-1, 1] so roundoff on (anti)parallel vectors
    cannot push arccos out of its domain; identical vectors give exactly 0.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("spectral_angle: zero-norm input")
    c = np.clip(float(u @ v) / (nu * nv), -1.0, 1.0)
    return float(np.arccos(c))


def match_endmembers(E_hat: np.ndarray, E_gt: np.ndarray) -> tuple[int, ...]:
    """Assign estimated columns to ground-truth columns.

    Returns ``perm`` with ``E_hat[:, perm[i]]`` matched to ``E_gt[:, i]``,
    minimizing the total pairwise spectral angle over all permutations.
    Ties break to the lexicographically smallest permutation.  Exhaustive
    search is capped at R = 8 columns.
    """
    E_hat = np.asarray(E_hat, dtype=np.float64)
    E_gt = np.asarray(E_gt, dtype=np.float64)
    if E_hat.shape != E_gt.shape:
        raise ValueError(f"endmember shapes differ: {E_hat.shape} vs {E_gt.shape}")
    r = E_gt.shape[1]
    if r > MATCH_MAX_R:
        raise ValueError(
            f"exhaustive matching is capped at R = {MATCH_MAX_R}; "
            f"R = {r} needs a Hungarian assignment, which is not implemented"
        )
    cost = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            cost[i, j] = spectral_angle(E_gt[:, i], E_hat[:, j])
    best_perm = None
    best_total = np.inf
    for perm in permutations(range(r)):
        total = sum(cost[i, perm[i]] for i in range(r))
        if total < best_total - 1e-15:
            best_total = total
            best_perm = perm
    return best_perm


def sad_endmembers(E_hat: np.ndarray, E_gt: np.ndarray, perm: tuple[int, ...]) -> float:
    """Mean spectral angle over matched endmember pairs, in radians."""
    E_hat = np.asarray(E_hat, dtype=np.float64)
    E_gt = np.asarray(E_gt, dtype=np.float64)
    return float(np.mean([spectral_angle(E_gt[:, i], E_hat[:, j]) for i, j in enumerate(perm)]))


def per_endmember_sads(E_hat: np.ndarray, E_gt: np.ndarray, perm: tuple[int, ...]) -> list[float]:
    return [spectral_angle(E_gt[:, i], E_hat[:, j]) for i, j in enumerate(perm)]


def rmse_abundance(A_hat: np.ndarray, A_gt: np.ndarray, perm: tuple[int, ...]) -> float:
    """sqrt(mean over pixels and endmembers of squared abundance error)."""
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_gt = np.asarray(A_gt, dtype=np.float64)
    if A_hat.shape != A_gt.shape:
        raise ValueError(f"abundance shapes differ: {A_hat.shape} vs {A_gt.shape}")
    aligned = A_hat[..., list(perm)]
    return float(np.sqrt(np.mean((A_gt - aligned) ** 2)))


def rmse_p(P_hat: np.ndarray, P_gt: np.ndarray) -> float:
    P_hat = np.asarray(P_hat, dtype=np.float64)
    P_gt = np.asarray(P_gt, dtype=np.float64)
    if P_hat.shape != P_gt.shape:
        raise ValueError(f"probability shapes differ: {P_hat.shape} vs {P_gt.shape}")
    return float(np.sqrt(np.mean((P_gt - P_hat) ** 2)))


def sad_pixels(X: np.ndarray, X_hat: np.ndarray) -> float:
    """Mean per-pixel spectral angle between two cubes (or N x B matrices)."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ValueError(f"cube shapes differ: {X.shape} vs {X_hat.shape}")
    a = X.reshape(-1, X.shape[-1])
    b = X_hat.reshape(-1, X.shape[-1])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("sad_pixels: zero-norm pixel")
    c = np.clip((a * b).sum(1) / (na * nb), -1.0, 1.0)
    return float(np.mean(np.arccos(c)))


@dataclass
class EvalReport:
    """Matched metrics for one unmixing run."""

    permutation: tuple[int, ...] | None
    sad_end: float | None
    per_endmember: list | None
    rmse_abun: float | None
    rmse_p: float | None
    sad_pix: float | None


def evaluate_estimates(E_gt=None, A_gt=None, P_gt=None, cube=None,
                       E_hat=None, A_hat=None, P_hat=None, recon=None) -> EvalReport:
    """Compute whichever metrics the supplied estimate/truth pairs allow."""
    perm = sad_end = per_em = r_ab = r_p = s_pix = None
    if E_gt is not None and E_hat is not None:
        perm = match_endmembers(E_hat, E_gt)
        sad_end = sad_endmembers(E_hat, E_gt, perm)
        per_em = per_endmember_sads(E_hat, E_gt, perm)
        if A_gt is not None and A_hat is not None:
            r_ab = rmse_abundance(A_hat, A_gt, perm)
    if P_gt is not None and P_hat is not None:
        r_p = rmse_p(P_hat, P_gt)
    if cube is not None and recon is not None:
        s_pix = sad_pixels(cube, recon)
    return EvalReport(perm, sad_end, per_em, r_ab, r_p, s_pix)
