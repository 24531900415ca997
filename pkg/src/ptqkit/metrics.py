"""Frechet distance and KL divergence between Gaussian fits of sample sets.

Matrix square roots go through a cyclic Jacobi eigensolver (dimensions
here are tiny, so a deterministic O(d^3)-per-sweep solver beats anything
fancier); negative eigenvalues from numerical noise are clamped to zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import numeric_core as nc

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass
class GaussianFit:
    mu: np.ndarray  # (d,)
    sigma: np.ndarray  # (d, d), symmetric PSD up to clamping
    n: int

    @property
    def dim(self) -> int:
        return self.mu.size


def fit_gaussian(samples: np.ndarray) -> GaussianFit:
    """Sample mean and unbiased covariance, symmetrized."""
    samples = nc.tensor2d(samples)
    n = samples.shape[0]
    if n < 2:
        raise ValueError("fit_gaussian needs at least two samples")
    mu = samples.mean(axis=0)
    centered = samples - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    return GaussianFit(mu=mu, sigma=sigma, n=n)


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with A = V diag(w) V^T.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    v = np.eye(d)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(d) for j in range(d) if i != j))
        if off < tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if abs(a[p, q]) < tol / max(d, 1):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(d)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def sqrtm_psd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues below zero are clamped."""
    w, v = jacobi_eigh(sigma)
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    sqrt_a = sqrtm_psd(a.sigma)
    inner = sqrtm_psd(sqrt_a @ b.sigma @ sqrt_a)
    fd = float(diff @ diff + np.trace(a.sigma + b.sigma - 2.0 * inner))
    return max(fd, 0.0)


def kl_gaussian(a: GaussianFit, b: GaussianFit, ridge_factor: float = 1e-6) -> float:
    """Closed-form KL(a || b) between multivariate Gaussian fits.

    A singular covariance (on either side) is ridge-regularized with
    eps = ridge_factor * trace / d before inversion / log-determinants.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    d = a.dim

    def _regularize(sigma):
        w, _ = jacobi_eigh(sigma)
        if np.min(w) <= 0.0:
            eps = ridge_factor * max(np.trace(sigma) / d, 1e-30)
            return sigma + eps * np.eye(d)
        return sigma

    sa = _regularize(a.sigma)
    sb = _regularize(b.sigma)
    sb_inv = np.linalg.inv(sb)
    diff = b.mu - a.mu
    _, logdet_a = np.linalg.slogdet(sa)
    _, logdet_b = np.linalg.slogdet(sb)
    kl = 0.5 * (np.trace(sb_inv @ sa) + diff @ sb_inv @ diff - d + logdet_b - logdet_a)
    return float(kl)
