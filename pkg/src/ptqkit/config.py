"""Experiment configuration: one JSON file, every CLI flag overrides a key.

Precedence: built-in defaults < config file < CLI flags.  The config
hash is derived from the effective (post-override) content, so a record
in the results file pins down exactly what produced it.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint: str = ""  # empty -> <out_dir>/model.json
    lexicon: str = ""  # empty -> packaged default aspect set
    seed_prompts: str = ""  # optional prompt-set file used to seed augmentation
    prompts_file: str = ""  # empty -> <out_dir>/prompts.tsv
    policy: str = "8W8A"
    strategy: str = "variance_aware"
    k: int = 256
    tau_fraction: float = 0.10
    i_max: int = 10
    tau_redundancy: int = 0

    # toy model / schedule
    timesteps: int = 50
    schedule: str = "linear_beta"
    data_dim: int = 2
    hidden: list = field(default_factory=lambda: [64, 64, 64])
    time_embed_dim: int = 8
    cond_embed_dim: int = 8

    # training
    epochs: int = 2500
    learning_rate: float = 0.08
    batch_size: int = 64
    n_train_per_prompt: int = 64

    # evaluation / experiments
    n_eval: int = 64
    n_profile_chains: int = 2
    reservoir_size: int = 64
    act_range_method: str = "percentile"
    act_percentile: float = 99.9
    sweep_bits: list = field(default_factory=lambda: [16, 8, 4])
    sweep_seeds: int = 5
    compare_seeds: int = 10
    scale_counts: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    scale_seeds: int = 3
    jobs: int = 1

    def resolved_checkpoint(self) -> str:
        return self.checkpoint or os.path.join(self.out_dir, "model.json")

    def resolved_prompts_file(self) -> str:
        return self.prompts_file or os.path.join(self.out_dir, "prompts.tsv")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def load_config(path=None, overrides: dict = None) -> ExperimentConfig:
    """Defaults, then the config file, then CLI overrides."""
    values = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, val in doc.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            values[key] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    from .quantizer import parse_policy_string

    if cfg.k < 1:
        raise ConfigError("k must be >= 1")
    if cfg.timesteps < 2:
        raise ConfigError("timesteps must be >= 2")
    try:
        parse_policy_string(cfg.policy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.strategy not in ("variance_aware", "random_uniform", "normal_timestep"):
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    for attr in ("lexicon", "seed_prompts"):
        p = getattr(cfg, attr)
        if p and not os.path.exists(p):
            raise ConfigError(f"{attr} path does not exist: {p}")
