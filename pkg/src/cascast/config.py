"""Run configuration: an INI file with typed sections plus flag overrides.

Schema (all keys optional, defaults below):

  [dataset]   name, num_cascades, graph_size, branching_mean, time_horizon,
              seed, attach_m, fast_communities, bridge_rate, bridge_ramp,
              wait_fast, wait_slow, min_obs_count, min_obs_time, split_seed
  [local]     scales, sample_points, method, cheb_order
  [global]    output_dim, oversampling, power_iterations, prop_order,
              mu, theta, seed
  [tokenizer] num_patches, max_length, observation_time
  [backbone]  model_dim, layers, heads, ffn_mult, max_context, init_seed,
              pretrain_steps
  [adapter]   hidden_dim, head_hidden, seed, prompt_template, prompt_vocab,
              prompt_seed
  [train]     learning_rate, batch_size, max_epochs, patience, loss_weight,
              seed, staged

Overrides take the form section.key=value (the CLI's --set flag).
"""

import configparser
from pathlib import Path

from .backbone import BackboneConfig
from .cascade_io import CorpusConfig
from .global_embed import GlobalEmbedConfig
from .local_embed import LocalEmbedConfig
from .model import ModelConfig
from .tokenizer import TokenizerConfig
from .training import TrainConfig

DEFAULTS = {
    "dataset": {
        "name": "synthetic",
        "num_cascades": "2000",
        "graph_size": "2000",
        "branching_mean": "0.7",
        "time_horizon": "1500.0",
        "seed": "42",
        "attach_m": "3",
        "fast_communities": "5",
        "bridge_rate": "0.06",
        "bridge_ramp": "4.0",
        "wait_fast": "2.0",
        "wait_slow": "200.0",
        "min_obs_count": "5",
        "min_obs_time": "20.0",
        "split_seed": "0",
    },
    "local": {
        "scales": "0.5, 1.5",
        "sample_points": "0.0, 10.0",
        "method": "auto",
        "cheb_order": "30",
    },
    "global": {
        "output_dim": "8",
        "oversampling": "10",
        "power_iterations": "2",
        "prop_order": "10",
        "mu": "0.2",
        "theta": "0.5",
        "seed": "0",
    },
    "tokenizer": {
        "num_patches": "8",
        "max_length": "32",
        "observation_time": "20.0",
    },
    "backbone": {
        "model_dim": "64",
        "layers": "4",
        "heads": "4",
        "ffn_mult": "4",
        "max_context": "32",
        "init_seed": "0",
        "pretrain_steps": "0",
    },
    "adapter": {
        "hidden_dim": "0",
        "head_hidden": "0",
        "seed": "0",
        "prompt_template": "synthetic",
        "prompt_vocab": "4096",
        "prompt_seed": "0",
    },
    "train": {
        "learning_rate": "1e-3",
        "batch_size": "64",
        "max_epochs": "60",
        "patience": "16",
        "loss_weight": "1.0",
        "seed": "0",
        "staged": "false",
    },
}


def _fresh_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    return cp


def apply_override(cp: configparser.ConfigParser, spec: str) -> None:
    head, eq, value = spec.partition("=")
    if not eq or "." not in head:
        raise ValueError(f"override {spec!r} must look like section.key=value")
    section, _, key = head.partition(".")
    if section not in DEFAULTS:
        raise ValueError(
            f"unknown config section {section!r}; valid: {sorted(DEFAULTS)}"
        )
    if key not in DEFAULTS[section]:
        raise ValueError(
            f"unknown key {key!r} in [{section}]; valid: {sorted(DEFAULTS[section])}"
        )
    cp.set(section, key, value)


def load_config(path=None, overrides=()) -> configparser.ConfigParser:
    """Defaults, then the INI file if given, then section.key=value overrides."""
    cp = _fresh_parser()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} not found")
        cp.read(p)
        for section in cp.sections():
            if section not in DEFAULTS:
                raise ValueError(f"unknown config section [{section}] in {p}")
            for key in cp[section]:
                if key not in DEFAULTS[section]:
                    raise ValueError(f"unknown key {key!r} in [{section}] of {p}")
    for spec in overrides:
        apply_override(cp, spec)
    return cp


def write_default_config(path) -> None:
    cp = _fresh_parser()
    with open(path, "w") as fh:
        cp.write(fh)


def _float_tuple(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def corpus_config(cp) -> CorpusConfig:
    d = cp["dataset"]
    return CorpusConfig(
        num_cascades=d.getint("num_cascades"),
        graph_size=d.getint("graph_size"),
        branching_mean=d.getfloat("branching_mean"),
        time_horizon=d.getfloat("time_horizon"),
        seed=d.getint("seed"),
        attach_m=d.getint("attach_m"),
        fast_communities=d.getint("fast_communities"),
        bridge_rate=d.getfloat("bridge_rate"),
        bridge_ramp=d.getfloat("bridge_ramp"),
        wait_fast=d.getfloat("wait_fast"),
        wait_slow=d.getfloat("wait_slow"),
        min_obs_count=d.getint("min_obs_count"),
        min_obs_time=d.getfloat("min_obs_time"),
        dataset_name=d.get("name"),
    )


def local_config(cp) -> LocalEmbedConfig:
    s = cp["local"]
    return LocalEmbedConfig(
        scales=_float_tuple(s.get("scales")),
        sample_points=_float_tuple(s.get("sample_points")),
        method=s.get("method"),
        cheb_order=s.getint("cheb_order"),
    )


def global_config(cp) -> GlobalEmbedConfig:
    s = cp["global"]
    return GlobalEmbedConfig(
        output_dim=s.getint("output_dim"),
        oversampling=s.getint("oversampling"),
        power_iterations=s.getint("power_iterations"),
        prop_order=s.getint("prop_order"),
        mu=s.getfloat("mu"),
        theta=s.getfloat("theta"),
        seed=s.getint("seed"),
    )


def tokenizer_config(cp) -> TokenizerConfig:
    s = cp["tokenizer"]
    return TokenizerConfig(
        num_patches=s.getint("num_patches"),
        max_length=s.getint("max_length"),
        observation_time=s.getfloat("observation_time"),
    )


def backbone_config(cp) -> BackboneConfig:
    s = cp["backbone"]
    return BackboneConfig(
        model_dim=s.getint("model_dim"),
        layers=s.getint("layers"),
        heads=s.getint("heads"),
        ffn_mult=s.getint("ffn_mult"),
        max_context=s.getint("max_context"),
        init_seed=s.getint("init_seed"),
    )


def token_width(cp) -> int:
    return tokenizer_config(cp).max_length * (
        local_config(cp).dim + global_config(cp).output_dim
    )


def model_config(cp) -> ModelConfig:
    a = cp["adapter"]
    return ModelConfig(
        token_dim=token_width(cp),
        backbone=backbone_config(cp),
        hidden_dim=a.getint("hidden_dim"),
        head_hidden=a.getint("head_hidden"),
        adapter_seed=a.getint("seed"),
        prompt_template=a.get("prompt_template"),
        prompt_vocab=a.getint("prompt_vocab"),
        prompt_seed=a.getint("prompt_seed"),
    )


def train_config(cp) -> TrainConfig:
    t = cp["train"]
    return TrainConfig(
        learning_rate=t.getfloat("learning_rate"),
        batch_size=t.getint("batch_size"),
        max_epochs=t.getint("max_epochs"),
        patience=t.getint("patience"),
        loss_weight=t.getfloat("loss_weight"),
        seed=t.getint("seed"),
        staged=t.getboolean("staged"),
    )
