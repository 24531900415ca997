"""End-to-end run at a reduced scale: train, profile, calibrate, quantize,
and the three experiments, all into one output directory.

Run with:  python3 demos/full_pipeline.py  [out_dir]

Uses a shrunken configuration (~30 s total).  Drop the overrides to
reproduce the full default-scale experiments instead.
"""

import sys

from ptqkit import experiments as exp
from ptqkit.config import ExperimentConfig


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/demo"
    cfg = ExperimentConfig(
        out_dir=out_dir,
        epochs=150,
        hidden=[16, 16],
        k=128,
        n_eval=16,
        n_train_per_prompt=16,
        batch_size=32,
        sweep_seeds=3,
        compare_seeds=3,
        scale_counts=[1, 2, 4],
        scale_seeds=1,
    )
    steps = [
        ("prompts", exp.cmd_prompts),
        ("train", exp.cmd_train),
        ("profile", exp.cmd_profile),
        ("calibset", exp.cmd_calibset),
        ("quantize", exp.cmd_quantize),
        ("sweep", exp.cmd_sweep),
        ("compare", exp.cmd_compare),
        ("scale", exp.cmd_scale),
    ]
    for name, fn in steps:
        record = fn(cfg)
        extra = ""
        if name == "quantize":
            extra = (f"  fd={record['metrics']['fd']:.4f}"
                     f"  size -{record['size']['reduction_pct']:.1f}%")
        if name == "compare":
            means = record["metrics"]["mean_fd"]
            extra = "  mean FD " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(means.items()))
        print(f"[{name}] done in {record['wall_time_s']:.1f}s{extra}")

    info = exp.cmd_report(cfg.out_dir)
    print(f"[report] wrote {', '.join(info['written'])}")
    print(f"\nartifacts in {cfg.out_dir}/ -- start with summary.tsv")


if __name__ == "__main__":
    main()
