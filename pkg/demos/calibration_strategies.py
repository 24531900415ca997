"""Why calibration sampling matters: variance-aware vs the two baselines.

Builds one small model, profiles its activations, then quantizes it at
8W8A three times -- once per calibration strategy -- and compares the
Frechet distance of each quantized model's samples to full precision.

Run with:  python3 demos/calibration_strategies.py
"""

from ptqkit import experiments as exp
from ptqkit.config import ExperimentConfig


def main():
    cfg = ExperimentConfig(
        out_dir="runs/strategies-demo",
        epochs=300,
        hidden=[16, 16],
        k=128,
        n_eval=32,
        n_train_per_prompt=32,
        compare_seeds=3,
    )
    print("training the toy model (a few hundred epochs)...")
    exp.cmd_train(cfg)

    model, sched = exp._require_checkpoint(cfg)
    aspects = exp.load_aspects(cfg)
    prompts = exp.load_or_build_prompts(cfg, aspects)
    profile = exp._profile_for(model, sched, prompts, cfg, cfg.seed)

    top = sorted(profile.probabilities.items(), key=lambda kv: -kv[1])[:5]
    print("\nhighest-variance activation cells (layer, timestep) and sampling weight:")
    for (layer, t), p in top:
        print(f"  {layer} @ t={t}: P={p:.4f}")

    print(f"\nquantizing at {cfg.policy} with K={cfg.k} per strategy:")
    for seed in range(3):
        res = exp.compare_one_seed(cfg, model, sched, prompts, seed, profile=profile)
        line = "  ".join(f"{s}={r['fd']:.4f}" for s, r in sorted(res.items()))
        print(f"  seed {seed}: FD  {line}")
    print("\nvariance-aware sampling spends its budget where activations actually move,")
    print("so the fitted ranges track the true ones and the quantized model drifts less.")


if __name__ == "__main__":
    main()
