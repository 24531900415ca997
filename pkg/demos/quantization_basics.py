"""Walk through the affine quantizer on its own: grids, round trips, sizes.

Run with:  python3 demos/quantization_basics.py
"""

import numpy as np

from ptqkit import numeric_core as nc
from ptqkit import quantizer as qz
from ptqkit.diffusion import AffineLayer, DenoiserModel


def main():
    rng = nc.RngStream(0)

    print("== fitting grid parameters ==")
    weights = 0.4 * rng.standard_normal(2048)
    for bits in (4, 8, 16):
        p = qz.fit_params(weights, bits, mode="symmetric")
        err = np.abs(qz.fake_quant(weights.reshape(1, -1), p) - weights).max()
        print(f"  {bits:>2}-bit symmetric: scale={p.scale:.6g}  worst round-trip error={err:.6g}"
              f"  (bound s/2={p.scale / 2:.6g})")

    print("\n== asymmetric activations with percentile clipping ==")
    acts = np.concatenate([rng.standard_normal(5000), [40.0]])  # one wild outlier
    for method, pct in (("minmax", None), ("percentile", 99.9)):
        p = qz.fit_params(acts, 8, mode="asymmetric", method=method, percentile=pct)
        hi = p.scale * (p.c_max - p.zero_point)
        label = method if pct is None else f"{method}({pct})"
        print(f"  {label:<17} covers up to {hi:8.3f}  scale={p.scale:.6g}")
    print("  (minmax burns most of the grid on the outlier; the percentile fit does not)")

    print("\n== precision policies and storage ==")
    layers = [
        AffineLayer("layer0", rng.child(1).standard_normal(18 * 64).reshape(18, 64),
                    np.zeros(64)),
        AffineLayer("layer1", rng.child(2).standard_normal(64 * 2).reshape(64, 2),
                    np.zeros(2), activation="none"),
    ]
    model = DenoiserModel(layers, time_embed_dim=8, cond_embed_dim=8, data_dim=2)
    for spec in ("16W16A", "8W8A", "4W8A"):
        policy = qz.PrecisionPolicy.uniform(model.layer_names, spec)
        full_b, quant_b, red = qz.model_size_bytes(model, policy, include_overhead=False)
        print(f"  {spec:<10} {full_b:>6} B -> {quant_b:>8.1f} B  ({red:.2f}% smaller)")


if __name__ == "__main__":
    main()
