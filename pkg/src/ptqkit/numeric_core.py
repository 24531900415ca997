"""Dense numeric kernels and the seeded random stream used everywhere else.

Tensors are plain 2-D float64 numpy arrays in row-major order.  All
stochastic operations take an explicit :class:`RngStream`; there is no
global random state anywhere in the package.
"""

import numpy as np

from .errors import ShapeError


def tensor2d(data) -> np.ndarray:
    """Coerce ``data`` to a finite 2-D float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite entries")
    return arr


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"shape mismatch: ({a.shape[0]},{a.shape[1]}) x ({b.shape[0]},{b.shape[1]})")
    return a @ b


class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    Backed by PCG64 seeded with ``SeedSequence([seed, stream_id, *path])``,
    so identical keys reproduce identical draws across runs and platforms.
    Gaussians come from the Box-Muller transform over the stream's
    uniforms (frozen here; we never rely on numpy's ziggurat sampler, so
    sequences stay stable across numpy releases).
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple = ()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(int(p) for p in _path)
        key = [self.seed, self.stream_id, *self._path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))

    def child(self, *path) -> "RngStream":
        """Derive an independent stream; same key -> same child stream."""
        return RngStream(self.seed, self.stream_id, self._path + tuple(path))

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in [0, 1)."""
        return self._gen.random(int(n))

    def standard_normal(self, n: int) -> np.ndarray:
        """n standard normal draws via Box-Muller."""
        n = int(n)
        if n == 0:
            return np.empty(0)
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1], keeps log finite
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n]

    def integers(self, low: int, high: int, size: int = 1) -> np.ndarray:
        """Uniform integers in [low, high)."""
        u = self._gen.random(int(size))
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def categorical(self, p: np.ndarray, size: int) -> np.ndarray:
        """size draws from the categorical distribution p (must sum to 1)."""
        p = np.asarray(p, dtype=np.float64)
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        u = self._gen.random(int(size))
        return np.searchsorted(cdf, u, side="right")

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))


def gaussian_sample(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    """(rows, cols) tensor of i.i.d. standard normals."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.standard_normal(rows * cols).reshape(rows, cols)


def mean_and_variance(xs) -> tuple:
    """Mean and *population* variance (divide by N, not N-1) of a flat array."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise ValueError("mean_and_variance requires a non-empty input")
    mean = float(np.mean(xs))
    var = float(np.mean((xs - mean) ** 2))
    return mean, max(var, 0.0)
