"""Vertex component analysis endmember extraction.

Pure-pixel extraction by iterated random orthogonal projections: the data
is first reduced to an R-dimensional subspace (projective SVD projection
when the estimated SNR is high, PCA to R-1 dimensions plus the mean
otherwise), then R pixels are picked by projecting onto directions
orthogonal to the simplex spanned so far and taking the argmax.  The
returned endmembers are always (clamped) columns of the input data, never
synthesized spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class VcaConfig:
    endmembers: int
    seed: int = 0
    snr_db: float | None = None  # override; None estimates from the data


def estimate_snr_db(Y: np.ndarray, mean: np.ndarray, projected: np.ndarray) -> float:
    """SNR estimate from the energy kept by an R-dimensional projection."""
    bands, n = Y.shape
    r = projected.shape[0]
    p_y = float(np.sum(Y ** 2)) / n
    p_x = float(np.sum(projected ** 2)) / n + float(mean @ mean)
    denom = p_y - p_x
    if denom <= 0:
        return np.inf  # projection kept everything: effectively noise-free
    return 10.0 * np.log10(max(p_x - r / bands * p_y, 0.0) / denom)


def vca_extract(Y: np.ndarray, cfg: VcaConfig) -> np.ndarray:
    """Extract ``cfg.endmembers`` signatures from a B x N pixel matrix.

    Deterministic for a fixed seed; argmax ties break to the lowest pixel
    index.  Output entries are clamped to [0, 1] so downstream validation
    holds even on noisy data.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError(f"data must be B x N, got {Y.shape}")
    bands, n = Y.shape
    r = cfg.endmembers
    if r < 1 or r > bands or r > n:
        raise ValueError(f"endmember count {r} must satisfy 1 <= R <= min(B={bands}, N={n})")

    mean = Y.mean(axis=1)
    centered = Y - mean[:, None]
    # rank via the centered second-moment spectrum (plus the mean direction)
    svals = np.linalg.svd(centered, compute_uv=False)
    tol = max(bands, n) * (svals[0] if svals.size else 0.0) * np.finfo(np.float64).eps
    rank = int(np.sum(svals > tol)) + (1 if np.linalg.norm(mean) > 0 else 0)
    if rank < r:
        raise ValueError(f"data rank {rank} is below the requested {r} endmembers")

    if cfg.snr_db is not None:
        snr = float(cfg.snr_db)
    else:
        u, _, _ = np.linalg.svd(centered @ centered.T / n, hermitian=True)
        proj = u[:, :r].T @ centered
        snr = estimate_snr_db(Y, mean, proj)
    snr_threshold = 15.0 + 10.0 * np.log10(r)

    if r == 1:
        # single vertex: the pixel with the largest projection magnitude
        u, _, _ = np.linalg.svd(Y @ Y.T / n, hermitian=True)
        coords = u[:, 0] @ Y
        idx = int(np.argmax(np.abs(coords)))
        return np.clip(Y[:, [idx]], 0.0, 1.0)

    if snr > snr_threshold:
        # projective projection onto the R-dim subspace of the raw data
        u, _, _ = np.linalg.svd(Y @ Y.T / n, hermitian=True)
        x = u[:, :r].T @ Y
        scale = x.T @ x.mean(axis=1)
        scale = np.where(np.abs(scale) < 1e-12, 1e-12, scale)
        simplex = x / scale
    else:
        # PCA to R-1 dims of the centered data, lifted by a constant row
        u, _, _ = np.linalg.svd(centered @ centered.T / n, hermitian=True)
        x = u[:, : r - 1].T @ centered
        lift = float(np.sqrt((x ** 2).sum(axis=0).max()))
        simplex = np.vstack([x, np.full(n, lift)])

    rng = np.random.default_rng(cfg.seed)
    basis = np.zeros((r, r))
    basis[-1, 0] = 1.0
    indices = np.zeros(r, dtype=int)
    for i in range(r):
        w = rng.standard_normal((r, 1))
        f = w - basis @ (np.linalg.pinv(basis) @ w)
        f /= np.linalg.norm(f)
        v = f.ravel() @ simplex
        indices[i] = int(np.argmax(np.abs(v)))  # first max wins ties
        basis[:, i] = simplex[:, indices[i]]
    return np.clip(Y[:, indices], 0.0, 1.0)
