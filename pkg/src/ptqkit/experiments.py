"""Pipeline commands: train, profile, prompts, calibset, quantize, and the
three paper-style experiments (bitwidth sweep, sampling-strategy
comparison, prompt-count scaling) plus report generation.

Every command is a pure function of its config; artifacts carry no
timestamps, so reruns with the same config and seed hash identically.
Wall time is recorded in the results ledger but excluded from hashing.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import calibration as cal
from . import coverage as cov
from . import diffusion as dif
from . import metrics as met
from . import numeric_core as nc
from . import profiler as prof
from . import quantizer as qz
from .config import ExperimentConfig
from .errors import ConfigError

RESULTS_FILE = "results.jsonl"


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _ensure_out(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def load_aspects(cfg: ExperimentConfig) -> cov.AspectSet:
    return cov.AspectSet.from_file(cfg.lexicon) if cfg.lexicon else cov.AspectSet.default()


def build_prompts(cfg: ExperimentConfig, aspects: cov.AspectSet):
    """Seed prompts (file or empty) augmented to full coverage with the mock."""
    if cfg.seed_prompts:
        seed_set = cov.load_prompt_set(cfg.seed_prompts)
    else:
        seed_set = cov.PromptSet(prompts=[], role="random_seed_set")
    gen = cov.MockCaptionGenerator(aspects, seed=cfg.seed)
    final, report = cov.augment(seed_set, aspects, gen, i_max=cfg.i_max,
                                tau_redundancy=cfg.tau_redundancy)
    return final, report


def load_or_build_prompts(cfg: ExperimentConfig, aspects: cov.AspectSet) -> cov.PromptSet:
    path = cfg.resolved_prompts_file()
    if os.path.exists(path):
        return cov.load_prompt_set(path)
    final, _ = build_prompts(cfg, aspects)
    return final

def _require_checkpoint(cfg: ExperimentConfig):
    path = cfg.resolved_checkpoint()
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path} (run the train command first)")
    return dif.load_checkpoint(path)


def _conds_for(prompts: cov.PromptSet, cond_dim: int):
    return [dif.condition_embedding(p.text, p.bits, cond_dim) for p in prompts.prompts]


def make_schedule(cfg: ExperimentConfig) -> dif.NoiseSchedule:
    if cfg.schedule == "linear_beta":
        return dif.NoiseSchedule.linear_beta(cfg.timesteps)
    if cfg.schedule == "cosine":
        return dif.NoiseSchedule.cosine(cfg.timesteps)
    raise ConfigError(f"unknown schedule {cfg.schedule!r}")


def append_result(cfg: ExperimentConfig, command: str, payload: dict, wall_time_s: float) -> dict:
    record = {
        "run_id": f"{command}-{cfg.config_hash()[:12]}",
        "command": command,
        "config_hash": cfg.config_hash(),
        "toolkit_version": __version__,
        **payload,
        "wall_time_s": wall_time_s,
    }
    path = os.path.join(cfg.out_dir, RESULTS_FILE)
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return record


def artifact_hashes(out_dir: str) -> dict:
    """sha256 per artifact; results records are canonicalized without wall time."""
    out = {}
    for name in sorted(os.listdir(out_dir)):
        path = os.path.join(out_dir, name)
        if not os.path.isfile(path):
            continue
        if name == RESULTS_FILE:
            # wall time is the only nondeterministic field, and rerunning a
            # command appends an identical record, so canonicalize to the
            # ordered set of unique records
            lines, seen = [], set()
            with open(path) as fh:
                for line in fh:
                    rec = json.loads(line)
                    rec.pop("wall_time_s", None)
                    canon = json.dumps(rec, sort_keys=True)
                    if canon not in seen:
                        seen.add(canon)
                        lines.append(canon)
            blob = ("\n".join(lines)).encode()
        else:
            with open(path, "rb") as fh:
                blob = fh.read()
        out[name] = hashlib.sha256(blob).hexdigest()
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))  # full precision, stable across numpy scalar types
    return str(v)


def _write_table(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _map_seeds(fn, seeds, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


# ---------------------------------------------------------------------------
# pipeline commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig) -> dict:
    t0 = time.monotonic()
    _ensure_out(cfg)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    conds = _conds_for(prompts, cfg.cond_embed_dim)
    sched = make_schedule(cfg)
    rng = nc.RngStream(cfg.seed, 1)
    dataset, row_conds = dif.make_mixture_dataset(conds, cfg.n_train_per_prompt, rng.child(1),
                                                  data_dim=cfg.data_dim)
    model = dif.DenoiserModel.create(cfg.data_dim, tuple(cfg.hidden), cfg.time_embed_dim,
                                     cfg.cond_embed_dim, rng=rng.child(2))
    hyper = dif.TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                            batch_size=cfg.batch_size)
    result = dif.train(model, dataset, row_conds, sched, hyper, rng.child(3))
    dif.save_checkpoint(result.model, sched, cfg.resolved_checkpoint())
    _write_table(os.path.join(cfg.out_dir, "loss_trace.tsv"), ("epoch", "loss"),
                 list(enumerate(result.losses)))
    payload = {
        "policy": "32W32A",
        "metrics": {"final_loss": result.losses[-1] if result.losses else None},
        "size": {},
    }
    return append_result(cfg, "train", payload, time.monotonic() - t0)


def cmd_prompts(cfg: ExperimentConfig) -> dict:
    t0 = time.monotonic()
    _ensure_out(cfg)
    aspects = load_aspects(cfg)
    final, report = build_prompts(cfg, aspects)
    cov.save_prompt_set(final, cfg.resolved_prompts_file())
    report_doc = {
        "coverage_rounds": report.coverage_rounds,
        "redundancy_rounds": report.redundancy_rounds,
        "generator_calls": report.generator_calls,
        "uncovered": report.uncovered,
        "final_redundancy": report.final_redundancy,
        "n_prompts": len(final.prompts),
    }
    with open(os.path.join(cfg.out_dir, "coverage_report.json"), "w") as fh:
        json.dump(report_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return append_result(cfg, "prompts", {"metrics": report_doc, "policy": "", "size": {}},
                         time.monotonic() - t0)


def _profile_for(model, sched, prompts, cfg: ExperimentConfig, seed: int):
    tap = prof.ActivationTap(model.layer_names, reservoir_size=cfg.reservoir_size,
                             rng=nc.RngStream(seed, 40))
    rng = nc.RngStream(seed, 41)
    for i, p in enumerate(prompts.prompts):
        c = dif.condition_embedding(p.text, p.bits, cfg.cond_embed_dim)
        dif.generate(model, c, sched, cfg.n_profile_chains, rng.child(i), tap=tap)
    return prof.build_profile(tap, tau_fraction=cfg.tau_fraction)


def cmd_profile(cfg: ExperimentConfig) -> dict:
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    profile = _profile_for(model, sched, prompts, cfg, cfg.seed)
    prof.export_profile(profile, os.path.join(cfg.out_dir, "profile.tsv"))
    payload = {
        "policy": "",
        "metrics": {"cells": len(profile.cells), "tau_var": profile.tau_var},
        "size": {},
    }
    return append_result(cfg, "profile", payload, time.monotonic() - t0)


def _build_calibset(cfg: ExperimentConfig, model, sched, prompts, strategy: str, seed: int,
                    profile=None):
    rng = nc.RngStream(seed, 50)
    if strategy == "variance_aware":
        if profile is None:
            path = os.path.join(cfg.out_dir, "profile.tsv")
            profile = prof.load_profile(path) if os.path.exists(path) else \
                _profile_for(model, sched, prompts, cfg, seed)
        return cal.sample_calibration_set(model, profile, prompts, cfg.k, rng, sched)
    if strategy == "random_uniform":
        return cal.sample_random_uniform(model, prompts, cfg.k, rng, sched)
    if strategy == "normal_timestep":
        return cal.sample_normal_timestep(model, prompts, cfg.k, rng, sched)
    raise ConfigError(f"unknown strategy {strategy!r}")


def cmd_calibset(cfg: ExperimentConfig) -> dict:
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    cs = _build_calibset(cfg, model, sched, prompts, cfg.strategy, cfg.seed)
    cal.save_calibration_set(cs, os.path.join(cfg.out_dir, "calibset.json"))
    payload = {
        "policy": "",
        "metrics": {"strategy": cs.strategy, "K": cs.K, "set_hash": cal.calibration_set_hash(cs)},
        "size": {},
    }
    return append_result(cfg, "calibset", payload, time.monotonic() - t0)


def cmd_quantize(cfg: ExperimentConfig) -> dict:
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    wb, ab = qz.parse_policy_string(cfg.policy)
    policy = qz.PrecisionPolicy.uniform(model.layer_names, cfg.policy)
    calib = None
    if ab != qz.FULL:
        path = os.path.join(cfg.out_dir, "calibset.json")
        if not os.path.exists(path):
            raise ConfigError(f"calibration set not found: {path} (run the calibset command first)")
        calib = cal.load_calibration_set(path)
    qmodel = qz.quantize_model(model, policy, calib, method=cfg.act_range_method,
                               percentile=cfg.act_percentile)
    qz.save_quantized_checkpoint(qmodel, sched, os.path.join(cfg.out_dir, "model_quantized.json"))
    full_b, quant_b, red = qz.model_size_bytes(model, policy)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    quality = evaluate_pair(model, qmodel, sched, prompts, cfg.cond_embed_dim,
                            cfg.n_eval, cfg.seed)
    payload = {
        "policy": policy.notation,
        "metrics": quality,
        "size": {"full_bytes": full_b, "quantized_bytes": quant_b, "reduction_pct": red},
    }
    return append_result(cfg, "quantize", payload, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_pair(model, qmodel, sched, prompts, cond_dim: int, n_eval: int, seed: int):
    """Paired generation (same chain seeds) -> FD, KL, and output MSE."""
    per = max(n_eval // len(prompts.prompts), 1)
    full_rows, quant_rows = [], []
    rng = nc.RngStream(seed, 60)
    for i, p in enumerate(prompts.prompts):
        c = dif.condition_embedding(p.text, p.bits, cond_dim)
        full_rows.append(dif.generate(model, c, sched, per, rng.child(i)))
        quant_rows.append(dif.generate(qmodel, c, sched, per, rng.child(i)))
    full = np.vstack(full_rows)
    quant = np.vstack(quant_rows)
    fa, fb = met.fit_gaussian(full), met.fit_gaussian(quant)
    return {
        "fd": met.frechet_distance(fa, fb),
        "kl": met.kl_gaussian(fb, fa),
        "mse": float(np.mean((full - quant) ** 2)),
    }


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def cmd_sweep(cfg: ExperimentConfig) -> dict:
    """Weight-only quantization at each bitwidth, no calibration."""
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    seeds = [cfg.seed + i for i in range(cfg.sweep_seeds)]
    policies = ["32WfullA"] + [f"{b}WfullA" for b in cfg.sweep_bits]
    per_seed_rows = []
    rows = []
    for pol in policies:
        policy = qz.PrecisionPolicy.uniform(model.layer_names, pol)
        qmodel = model if policy.weight_bits(model.layer_names[0]) == qz.FULL else \
            qz.quantize_model(model, policy)
        def _one(seed, qm=qmodel):
            return evaluate_pair(model, qm, sched, prompts, cfg.cond_embed_dim, cfg.n_eval, seed)
        results = _map_seeds(_one, seeds, cfg.jobs)
        for s, r in zip(seeds, results):
            per_seed_rows.append((pol, s, r["fd"], r["mse"]))
        rows.append((pol, float(np.mean([r["fd"] for r in results])),
                     float(np.mean([r["mse"] for r in results]))))
    _write_table(os.path.join(cfg.out_dir, "sweep.tsv"), ("policy", "mean_fd", "mean_mse"), rows)
    _write_table(os.path.join(cfg.out_dir, "sweep_per_seed.tsv"),
                 ("policy", "seed", "fd", "mse"), per_seed_rows)
    payload = {
        "policy": ",".join(policies),
        "metrics": {"kind": "sweep", "rows": [list(r) for r in rows],
                    "per_seed": [list(r) for r in per_seed_rows]},
        "size": {},
    }
    return append_result(cfg, "sweep", payload, time.monotonic() - t0)


def compare_one_seed(cfg: ExperimentConfig, model, sched, prompts, seed: int,
                     write_sets: bool = False, profile=None) -> dict:
    # The profile characterizes the model, so it is shared across comparison
    # seeds; only the calibration draw and evaluation chains vary with seed.
    if profile is None:
        profile = _profile_for(model, sched, prompts, cfg, cfg.seed)
    out = {}
    for strategy in cal.STRATEGIES:
        cs = _build_calibset(cfg, model, sched, prompts, strategy, seed, profile=profile)
        if write_sets:
            cal.save_calibration_set(cs, os.path.join(cfg.out_dir, f"calibset_{strategy}.json"))
        policy = qz.PrecisionPolicy.uniform(model.layer_names, cfg.policy)
        qmodel = qz.quantize_model(model, policy, cs, method=cfg.act_range_method,
                                   percentile=cfg.act_percentile)
        out[strategy] = evaluate_pair(model, qmodel, sched, prompts, cfg.cond_embed_dim,
                                      cfg.n_eval, seed)
    return out


def cmd_compare(cfg: ExperimentConfig) -> dict:
    """Random vs normal vs variance-aware calibration at equal K."""
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    aspects = load_aspects(cfg)
    prompts = load_or_build_prompts(cfg, aspects)
    seeds = [cfg.seed + i for i in range(cfg.compare_seeds)]
    profile = _profile_for(model, sched, prompts, cfg, cfg.seed)

    def _one(seed):
        return compare_one_seed(cfg, model, sched, prompts, seed,
                                write_sets=(seed == seeds[0]), profile=profile)

    results = _map_seeds(_one, seeds, cfg.jobs)
    rows = []
    for s, res in zip(seeds, results):
        for strategy in cal.STRATEGIES:
            rows.append((strategy, s, res[strategy]["fd"], res[strategy]["kl"],
                         res[strategy]["mse"]))
    _write_table(os.path.join(cfg.out_dir, "compare.tsv"),
                 ("strategy", "seed", "fd", "kl", "mse"), rows)
    means = {
        strategy: float(np.mean([res[strategy]["fd"] for res in results]))
        for strategy in cal.STRATEGIES
    }
    payload = {
        "policy": cfg.policy,
        "metrics": {"kind": "compare", "mean_fd": means,
                    "rows": [list(r) for r in rows]},
        "size": {},
    }
    return append_result(cfg, "compare", payload, time.monotonic() - t0)


def build_prompt_set_of_size(aspects: cov.AspectSet, n: int, seed: int) -> cov.PromptSet:
    """Exactly n mock-generated prompts, cycling through the aspects."""
    gen = cov.MockCaptionGenerator(aspects, seed=seed)
    prompts = []
    i = 0
    while len(prompts) < n:
        aspect = aspects.aspects[i % len(aspects)]
        text = gen.generate(aspect, [p.text for p in prompts])
        bits = cov.compute_coverage_vector(text, aspects)
        prompts.append(cov.Prompt(prompt_id=f"gen-{i:04d}", text=text, bits=bits))
        i += 1
    return cov.PromptSet(prompts=prompts, role="final_set")


def cmd_scale(cfg: ExperimentConfig, prompt_counts=None) -> dict:
    """FD as a function of the calibration prompt-set size."""
    t0 = time.monotonic()
    _ensure_out(cfg)
    model, sched = _require_checkpoint(cfg)
    aspects = load_aspects(cfg)
    eval_prompts = load_or_build_prompts(cfg, aspects)
    counts = list(prompt_counts or cfg.scale_counts)
    seeds = [cfg.seed + i for i in range(cfg.scale_seeds)]
    rows = []
    for n in counts:
        calib_prompts = build_prompt_set_of_size(aspects, n, cfg.seed)
        covered = cov.global_coverage(calib_prompts)
        uncovered = [a.aspect_id for i, a in enumerate(aspects) if not covered[i]]

        def _one(seed, cp=calib_prompts):
            profile = _profile_for(model, sched, cp, cfg, seed)
            cs = cal.sample_calibration_set(model, profile, cp, cfg.k,
                                            nc.RngStream(seed, 50), sched)
            policy = qz.PrecisionPolicy.uniform(model.layer_names, cfg.policy)
            qmodel = qz.quantize_model(model, policy, cs, method=cfg.act_range_method,
                                       percentile=cfg.act_percentile)
            return evaluate_pair(model, qmodel, sched, eval_prompts, cfg.cond_embed_dim,
                                 cfg.n_eval, seed)

        results = _map_seeds(_one, seeds, cfg.jobs)
        rows.append((n, float(np.mean([r["fd"] for r in results])), len(uncovered),
                     ";".join(uncovered)))
    _write_table(os.path.join(cfg.out_dir, "scale.tsv"),
                 ("n_prompts", "mean_fd", "n_uncovered", "uncovered"), rows)
    payload = {
        "policy": cfg.policy,
        "metrics": {"kind": "scale", "rows": [list(r) for r in rows]},
        "size": {},
    }
    return append_result(cfg, "scale", payload, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def read_results(results_dir: str):
    path = os.path.join(results_dir, RESULTS_FILE)
    if not os.path.exists(path):
        raise ConfigError(f"no results file at {path}")
    records, seen = [], set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            # a rerun of the same command appends an identical record
            # (modulo wall time); reports treat those as one run
            canon = json.dumps({k: v for k, v in rec.items() if k != "wall_time_s"},
                               sort_keys=True)
            if canon not in seen:
                seen.add(canon)
                records.append(rec)
    if not records:
        raise ConfigError(f"results file {path} is empty")
    return records


def cmd_report(results_dir: str, out_dir: str = None) -> dict:
    """Summary table grouped by policy plus per-figure data files.

    Pure function of the results records (wall time ignored), so
    regeneration from the same directory is byte-identical.
    """
    out_dir = out_dir or results_dir
    os.makedirs(out_dir, exist_ok=True)
    records = read_results(results_dir)

    by_policy = {}
    for rec in records:
        pol = rec.get("policy") or ""
        if not pol or "," in pol:
            continue
        metrics = rec.get("metrics", {})
        size = rec.get("size", {})
        slot = by_policy.setdefault(pol, {"fd": [], "kl": [], "reduction": []})
        if "fd" in metrics:
            slot["fd"].append(metrics["fd"])
        if "mean_fd" in metrics and isinstance(metrics["mean_fd"], dict):
            # comparison records contribute the variance-aware strategy only;
            # the baselines are figure data, not policy quality
            if "variance_aware" in metrics["mean_fd"]:
                slot["fd"].append(metrics["mean_fd"]["variance_aware"])
        if "kl" in metrics:
            slot["kl"].append(metrics["kl"])
        if "reduction_pct" in size:
            slot["reduction"].append(size["reduction_pct"])
    summary_rows = []
    for pol in sorted(by_policy):
        slot = by_policy[pol]
        summary_rows.append((
            pol,
            float(np.mean(slot["reduction"])) if slot["reduction"] else "",
            float(np.mean(slot["fd"])) if slot["fd"] else "",
            float(np.mean(slot["kl"])) if slot["kl"] else "",
            "n/a",  # FAD needs an audio embedding; out of scope at desk scale
        ))
    _write_table(os.path.join(out_dir, "summary.tsv"),
                 ("policy", "size_reduction_pct", "fd", "kl", "fad"), summary_rows)

    fig_specs = {
        "sweep": ("fig_bitwidth_sweep.tsv", ("policy", "mean_fd", "mean_mse")),
        "compare": ("fig_strategy_comparison.tsv", ("strategy", "seed", "fd", "kl", "mse")),
        "scale": ("fig_prompt_scaling.tsv", ("n_prompts", "mean_fd", "n_uncovered", "uncovered")),
    }
    written = ["summary.tsv"]
    for kind, (fname, header) in fig_specs.items():
        rows = []
        for rec in records:
            metrics = rec.get("metrics", {})
            if metrics.get("kind") == kind:
                rows.extend(tuple(r) for r in metrics.get("rows", []))
        if rows:
            _write_table(os.path.join(out_dir, fname), header, rows)
            written.append(fname)
    return {"written": written, "n_records": len(records)}
