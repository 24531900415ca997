"""Streaming per-(layer, timestep) activation statistics and variance profiles.

The tap is handed to generation; every monitored layer input at every
timestep updates a Welford-style accumulator (exact) and a bounded
reservoir of raw values (approximate, for distribution comparisons).
Cells are keyed by (layer, timestep) so the profile can express both
"which layer" and "which timestep" carries the variance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import numeric_core as nc
from .errors import InsufficientDataError


class _CellStats:
    """One (layer, timestep) cell: running count/mean/M2 plus a reservoir."""

    __slots__ = ("count", "mean", "m2", "reservoir", "_filled")

    def __init__(self, reservoir_size: int):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.reservoir = np.empty(reservoir_size)
        self._filled = 0

    def update(self, values: np.ndarray, rng: nc.RngStream) -> None:
        # Chan's parallel combination of (count, mean, M2) -- exact, so the
        # streaming variance matches a two-pass computation bit-for-bit
        # within float tolerance regardless of chunking.
        m = values.size
        b_mean = float(np.mean(values))
        b_m2 = float(np.sum((values - b_mean) ** 2))
        delta = b_mean - self.mean
        total = self.count + m
        self.mean += delta * m / total
        self.m2 += b_m2 + delta * delta * self.count * m / total
        self._reservoir_update(values, rng)
        self.count = total

    def _reservoir_update(self, values: np.ndarray, rng: nc.RngStream) -> None:
        size = self.reservoir.size
        if size == 0:
            return
        i = 0
        n = values.size
        # fill phase
        while self._filled < size and i < n:
            self.reservoir[self._filled] = values.flat[i]
            self._filled += 1
            i += 1
        if i >= n:
            return
        # algorithm R, vectorized draw of the replacement slots
        positions = self.count + np.arange(i, n)  # 0-based index of each offer
        u = rng.uniform(n - i)
        slots = np.floor(u * (positions + 1)).astype(np.int64)
        hits = np.nonzero(slots < size)[0]
        vals = values.ravel()[i:]
        for k in hits:
            self.reservoir[slots[k]] = vals[k]

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    def reservoir_values(self) -> np.ndarray:
        return self.reservoir[: self._filled].copy()


class ActivationTap:
    """Consumer of per-layer inputs during generation.

    Offers for layers outside ``monitored_layers`` are silently ignored.
    Single-writer by contract; the generation harness serializes calls.
    """

    def __init__(self, monitored_layers, reservoir_size: int = 64, rng: nc.RngStream = None):
        self.monitored_layers = frozenset(monitored_layers)
        self.reservoir_size = int(reservoir_size)
        self._rng = rng or nc.RngStream(0, 7777)
        self._cells = {}
        self.offer_count = 0

    def offer(self, layer: str, t: int, values: np.ndarray) -> None:
        self.offer_count += 1
        if layer not in self.monitored_layers:
            return
        self.record(layer, t, values)

    def record(self, layer: str, t: int, values) -> None:
        if layer not in self.monitored_layers:
            return
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size == 0:
            return
        key = (layer, int(t))
        cell = self._cells.get(key)
        if cell is None:
            cell = self._cells[key] = _CellStats(self.reservoir_size)
        cell.update(values, self._rng)

    def cells(self):
        return sorted(self._cells)

    def cell_stats(self, layer: str, t: int) -> _CellStats:
        return self._cells[(layer, int(t))]


@dataclass
class LayerVarianceProfile:
    """Per-cell variances, their normalization, and sampling probabilities.

    The normalized variances already sum to one, so the sampling
    probabilities are numerically identical to them; both maps are kept
    and the identity is asserted at build time.
    """

    cells: list  # ordered (layer, timestep) keys
    counts: dict
    means: dict
    variances: dict
    sigma_hat: dict
    probabilities: dict
    tau_var: float
    tau_fraction: float
    reservoirs: dict = field(default_factory=dict, repr=False)

    def probability_vector(self) -> np.ndarray:
        return np.array([self.probabilities[c] for c in self.cells])

    def content_hash(self) -> str:
        import hashlib

        parts = []
        for c in self.cells:
            parts.append(f"{c[0]}|{c[1]}|{self.counts[c]}|{self.variances[c]!r}")
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def build_profile(tap: ActivationTap, tau_fraction: float = 0.10) -> LayerVarianceProfile:
    """Normalize cell variances into sampling probabilities.

    tau_var is tau_fraction times the maximum cell variance.  Every cell
    must hold at least two observations.
    """
    cells = tap.cells()
    if not cells:
        raise InsufficientDataError("tap recorded no cells")
    counts, means, variances, reservoirs = {}, {}, {}, {}
    for key in cells:
        cs = tap.cell_stats(*key)
        if cs.count < 2:
            raise InsufficientDataError(f"cell {key} has count {cs.count} < 2")
        counts[key] = cs.count
        means[key] = cs.mean
        variances[key] = cs.variance
        reservoirs[key] = cs.reservoir_values()
    return profile_from_variances(variances, tau_fraction, counts=counts, means=means,
                                  reservoirs=reservoirs)


def profile_from_variances(variances: dict, tau_fraction: float = 0.10, counts=None,
                           means=None, reservoirs=None) -> LayerVarianceProfile:
    """Build a profile directly from a {cell: variance} map."""
    cells = sorted(variances)
    total = sum(variances[c] for c in cells)
    if total <= 0.0:
        # all-zero variance: uniform probabilities, tau_var 0
        sigma_hat = {c: 1.0 / len(cells) for c in cells}
    else:
        sigma_hat = {c: variances[c] / total for c in cells}
    norm = sum(sigma_hat.values())
    probabilities = {c: sigma_hat[c] / norm for c in cells}
    for c in cells:
        assert abs(probabilities[c] - sigma_hat[c]) <= 1e-12, "double normalization must be idempotent"
    tau_var = tau_fraction * max(variances[c] for c in cells)
    return LayerVarianceProfile(
        cells=cells,
        counts=dict(counts) if counts else {c: 2 for c in cells},
        means=dict(means) if means else {c: 0.0 for c in cells},
        variances=dict(variances),
        sigma_hat=sigma_hat,
        probabilities=probabilities,
        tau_var=tau_var,
        tau_fraction=tau_fraction,
        reservoirs=dict(reservoirs) if reservoirs else {},
    )


PROFILE_COLUMNS = ("layer", "timestep", "count", "mean", "variance", "sigma_hat", "p")


def export_profile(profile: LayerVarianceProfile, path) -> None:
    """Tab-separated profile export, one row per cell, header first."""
    with open(path, "w") as fh:
        fh.write(f"# tau_fraction={profile.tau_fraction!r}\ttau_var={profile.tau_var!r}\n")
        fh.write("\t".join(PROFILE_COLUMNS) + "\n")
        for c in profile.cells:
            layer, t = c
            fh.write(
                f"{layer}\t{t}\t{profile.counts[c]}\t{profile.means[c]!r}\t"
                f"{profile.variances[c]!r}\t{profile.sigma_hat[c]!r}\t{profile.probabilities[c]!r}\n"
            )


def load_profile(path) -> LayerVarianceProfile:
    tau_fraction = 0.10
    variances, counts, means = {}, {}, {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                for tok in line[1:].split("\t"):
                    k, _, v = tok.strip().partition("=")
                    if k == "tau_fraction":
                        tau_fraction = float(v)
                continue
            if line.startswith("layer\t") or not line:
                continue
            layer, t, count, mean, var, _, _ = line.split("\t")
            key = (layer, int(t))
            variances[key] = float(var)
            counts[key] = int(count)
            means[key] = float(mean)
    return profile_from_variances(variances, tau_fraction, counts=counts, means=means)


def _gauss_sym_kl(m1, v1, m2, v2, eps=1e-12) -> float:
    v1 = max(v1, eps)
    v2 = max(v2, eps)
    kl12 = math.log(math.sqrt(v2 / v1)) + (v1 + (m1 - m2) ** 2) / (2.0 * v2) - 0.5
    kl21 = math.log(math.sqrt(v1 / v2)) + (v2 + (m2 - m1) ** 2) / (2.0 * v1) - 0.5
    return kl12 + kl21


def activation_divergence(profile_a: LayerVarianceProfile, profile_b: LayerVarianceProfile) -> dict:
    """Per-cell variance gaps plus symmetric KL of Gaussian reservoir fits.

    Both profiles must cover identical cells and carry reservoir samples
    (profiles parsed back from disk do not).
    """
    if profile_a.cells != profile_b.cells:
        raise ValueError("profiles cover different cells")
    report = {}
    for c in profile_a.cells:
        va, vb = profile_a.variances[c], profile_b.variances[c]
        abs_gap = abs(va - vb)
        rel_gap = abs_gap / max(va, vb, 1e-12)
        ra = profile_a.reservoirs.get(c)
        rb = profile_b.reservoirs.get(c)
        if ra is not None and rb is not None and ra.size >= 2 and rb.size >= 2:
            ma, va_r = nc.mean_and_variance(ra)
            mb, vb_r = nc.mean_and_variance(rb)
            sym_kl = _gauss_sym_kl(ma, va_r, mb, vb_r)
        else:
            sym_kl = _gauss_sym_kl(profile_a.means[c], va, profile_b.means[c], vb)
        report[c] = {"abs_variance_gap": abs_gap, "rel_variance_gap": rel_gap, "sym_kl": sym_kl}
    return report
