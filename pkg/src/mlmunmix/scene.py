"""Synthetic scene generation under the multilinear mixing model.

A scene is assembled from four seeded stages: smooth random endmember
spectra (stand-ins for a measured library), spatially smooth abundance
fields pushed onto the simplex, half-normal per-pixel transition
probabilities with draws above 1 zeroed, and the closed-form multilinear
mix followed by white Gaussian noise at a target SNR.  Every stage is a
pure function of its seed, so a config reproduces its scene bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .hsi import HsiCube, validate_abundance, validate_endmembers
from .metrics import spectral_angle

MIN_PAIRWISE_SAD = 0.1
_SOFTMAX_TEMPERATURE = 0.5


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    endmembers: int = 4
    bands: int = 224
    sigma: float = 0.3
    snr_db: float | None = 30.0
    length_scale: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if min(self.height, self.width, self.endmembers, self.bands) < 1:
            raise ValueError("scene extents must all be positive")
        if self.sigma <= 0:
            raise ValueError("half-normal sigma must be positive")
        if self.length_scale < 1:
            raise ValueError("length scale must be at least 1 pixel")


def synth_endmembers(bands: int, count: int, seed: int) -> np.ndarray:
    """Smooth random spectra in [0.05, 0.95] with pairwise angle >= 0.1.

    Each signature is a sum of 3 to 6 Gaussian bumps with random centers
    and widths, rescaled into [0.05, 0.95].  Candidates too close (in
    spectral angle) to an accepted signature are rejected and redrawn.
    """
    if bands < 8:
        raise ValueError(f"need at least 8 bands to shape a spectrum, got {bands}")
    rng = np.random.default_rng(seed)
    grid = np.arange(bands, dtype=np.float64)
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < count:
        attempts += 1
        if attempts > 1000:
            raise ValueError(
                f"could not draw {count} mutually distinct spectra in 1000 attempts (seed {seed})"
            )
        nbumps = int(rng.integers(3, 7))
        centers = rng.uniform(0, bands, nbumps)
        widths = rng.uniform(bands / 30, bands / 6, nbumps)
        amps = rng.uniform(0.5, 1.0, nbumps)
        s = np.zeros(bands)
        for c, w, a in zip(centers, widths, amps):
            s += a * np.exp(-0.5 * ((grid - c) / w) ** 2)
        span = s.max() - s.min()
        if span <= 0:
            continue
        s = 0.05 + 0.9 * (s - s.min()) / span
        if all(spectral_angle(s, prev) >= MIN_PAIRWISE_SAD for prev in accepted):
            accepted.append(s)
    return validate_endmembers(np.stack(accepted, axis=1))


def gen_abundance_field(height: int, width: int, count: int,
                        length_scale: float, seed: int) -> np.ndarray:
    """Gaussian-smoothed white-noise fields mapped pixelwise to the simplex.

    Smoothing uses sigma = (length_scale - 1) / 2, so a length scale of 1
    leaves the white noise untouched (independent pixels).  Fields are
    standardized and passed through a temperature-0.5 softmax, which
    yields a mix of near-pure and well-mixed pixels.
    """
    if length_scale < 1:
        raise ValueError("length scale must be at least 1 pixel")
    rng = np.random.default_rng(seed)
    sigma = (length_scale - 1.0) / 2.0
    fields = np.empty((height, width, count))
    for k in range(count):
        noise = rng.standard_normal((height, width))
        f = gaussian_filter(noise, sigma) if sigma > 0 else noise
        fields[:, :, k] = (f - f.mean()) / f.std()
    z = fields / _SOFTMAX_TEMPERATURE
    z -= z.max(axis=2, keepdims=True)
    e = np.exp(z)
    A = e / e.sum(axis=2, keepdims=True)
    return validate_abundance(A, tol=1e-12)


def sample_transition_probs(height: int, width: int, sigma: float, seed: int) -> np.ndarray:
    """Half-normal |N(0, sigma^2)| per pixel; draws above 1 are set to zero."""
    if sigma <= 0:
        raise ValueError("half-normal sigma must be positive")
    rng = np.random.default_rng(seed)
    p = np.abs(rng.normal(0.0, sigma, (height, width)))
    p[p > 1.0] = 0.0
    return p


def mlm_mix(E: np.ndarray, a: np.ndarray, p: float) -> np.ndarray:
    """Closed-form multilinear mix of one pixel: (1-P) y / (1 - P y), y = E a."""
    E = np.asarray(E, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    y = E @ a
    den = 1.0 - p * y
    if np.any(den <= 0):
        raise ValueError(f"multilinear mix undefined: 1 - P*y reaches {den.min():.3e}")
    return (1.0 - p) * y / den


def interaction_series(E: np.ndarray, a: np.ndarray, p: float, order: int) -> np.ndarray:
    """Brute-force interaction series truncated after ``order`` terms.

    Term k is (1-P) P^(k-1) y^k elementwise, k = 1..order; the infinite
    sum is the closed form of :func:`mlm_mix`.
    """
    if order < 1:
        raise ValueError("series order must be at least 1")
    y = np.asarray(E, dtype=np.float64) @ np.asarray(a, dtype=np.float64)
    total = np.zeros_like(y)
    term = y.copy()
    for _ in range(order):
        total += term
        term = term * (p * y)
    return (1.0 - p) * total


def _mlm_mix_all(E: np.ndarray, A_flat: np.ndarray, P_flat: np.ndarray) -> np.ndarray:
    """Vectorized closed form over N pixels: A_flat (N,R), P_flat (N,)."""
    Y = A_flat @ E.T
    den = 1.0 - P_flat[:, None] * Y
    if np.any(den <= 0):
        raise ValueError("multilinear mix undefined for at least one pixel/band")
    return (1.0 - P_flat)[:, None] * Y / den


def add_awgn(cube: HsiCube, snr_db: float | None, seed: int) -> HsiCube:
    """White Gaussian noise with variance mean(signal^2) / 10^(SNR/10).

    The SNR is defined over the whole cube.  ``snr_db=None`` returns the
    cube unchanged.  Noisy values are kept as-is (not clipped) so the
    realized SNR matches the target.
    """
    if snr_db is None:
        return cube
    power = float(np.mean(cube.values ** 2))
    if power == 0:
        raise ValueError("cannot set an SNR on an all-zero cube")
    var = power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(var), cube.values.shape)
    return HsiCube(cube.values + noise, cube.wavelengths)


def generate_scene(cfg: SceneConfig, E: np.ndarray | None = None):
    """Full synthetic scene; returns (cube, abundance, P, endmembers).

    Stage seeds are spawned deterministically from ``cfg.seed``, so equal
    configs produce bitwise-identical scenes.  A supplied endmember
    matrix replaces the synthetic library stage.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    if E is None:
        E = synth_endmembers(cfg.bands, cfg.endmembers, seeds[0])
    else:
        E = validate_endmembers(E)
        if E.shape != (cfg.bands, cfg.endmembers):
            raise ValueError(f"endmembers {E.shape} do not match config "
                             f"({cfg.bands} bands, {cfg.endmembers} signatures)")
    A = gen_abundance_field(cfg.height, cfg.width, cfg.endmembers, cfg.length_scale, seeds[1])
    P = sample_transition_probs(cfg.height, cfg.width, cfg.sigma, seeds[2])
    n = cfg.height * cfg.width
    X = _mlm_mix_all(E, A.reshape(n, cfg.endmembers), P.reshape(n))
    cube = HsiCube(X.reshape(cfg.height, cfg.width, cfg.bands))
    cube = add_awgn(cube, cfg.snr_db, seeds[3])
    return cube, A, P, E
