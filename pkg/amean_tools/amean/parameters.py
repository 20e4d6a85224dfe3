#!/usr/bin/env python3

"""
Module: parameters.py

  Configuration dataclasses and the loaders of the JSON experiment files.

  Each config section has a module-level dict of defaults; loaders fill the
  missing keys from it, reject unknown keys (SchemaError naming the key) and
  validate ranges (ConfigurationError).
"""
from copy import deepcopy
from dataclasses import asdict, dataclass, field
import logging
from pathlib import Path
from typing import List, Optional, Union

from amean.constants import AMEAN, GAMMA_SCHEDULE, JOINT, MODES, SINGLE_TARGET, VARIANTS
from amean.errors import ConfigurationError, SchemaError
from amean.io_utils import load_json


logger = logging.getLogger(__name__)


hyper_defaults = {
    "lambda": 1.0,
    # adversarial weight used when updating F in alternating mode; None: same as lambda
    "lambda_gen": None,
    # a constant or the schedule "iter/max_iter":
    "gamma": GAMMA_SCHEDULE,
    "beta": 0.01,
    "rho": 0.01,
    "epsilon": 0.5,
    "M": 500,
    "batch_size": 128,
    "lr": 0.01,
    "momentum": 0.9,
}

dec_defaults = {
    "k": 2,
    "t_dof": 1.0,
    "lr": 0.001,
    "momentum": 0.9,
    "batch_size": 256,
    "pretrain_epochs": 30,
    "max_epochs": 200,
    "tol": 0.001,
    "corruption_std": 0.0,
    # "dec": minimize +KL(P||Q); "verbatim": the leading minus sign taken literally
    "kl_sign": "dec",
    # "full": reconstruct [x | F(x) | C(F(x))]; "x": reconstruct the x portion only
    "rec_target": "full",
    "warm_start": False,
    "kmeans_n_init": 20,
    "kmeans_max_iter": 100,
}

network_defaults = {
    "h": 64,
    "f_hidden": [64],
    "trunk_dim": 100,
    "enc_hidden": [500, 1000],
    "dec_hidden": [1000, 1000],
    "enc_activation": "linear",
    "dropout": 0.0,
}

train_defaults = {
    "mode": JOINT,
    "outer_loops": 5,
    "variant": AMEAN,
    # sub-target index for the single-target variant:
    "target_subtarget": None,
    "log_every": 100,
}

eval_defaults = {
    "split": "test",
    "source_only_reference": False,
    "mtda_legs": False,
    "export_embeddings": True,
}

experiment_defaults = {
    "data": {},
    "hyper": hyper_defaults,
    "dec": dec_defaults,
    "network": network_defaults,
    "train": train_defaults,
    "eval": eval_defaults,
    "seeds": [0],
    "data_seed": 0,
    "out_dir": "amean_runs",
    # ablation extras, e.g. {"name": "amean-no-ent", "variant": "amean", "hyper": {"beta": 0}}:
    "extra_variants": [],
    "k_list": [2, 3, 4, 5, 6, 7, 8],
    "save_figures": False,
}


def _fill(section: str, given: Optional[dict], defaults: dict) -> dict:
    given = {} if given is None else given
    if not isinstance(given, dict):
        raise SchemaError(f"Section {section!r} must be a JSON object.", name=section)
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise SchemaError(f"Unknown key {unknown[0]!r} in section {section!r}.", name=unknown[0])
    out = deepcopy(defaults)
    out.update(given)
    return out


@dataclass(slots=True)
class HyperParams:
    lam: float = 1.0
    lambda_gen: Optional[float] = None
    gamma: Union[float, str] = GAMMA_SCHEDULE
    beta: float = 0.01
    rho: float = 0.01
    epsilon: float = 0.5
    M: int = 500
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9

    def __post_init__(self):
        for lbl in ("lam", "beta", "rho", "epsilon", "lr"):
            if getattr(self, lbl) < 0:
                raise ConfigurationError(f"Hyper-parameter {lbl!r} must be non-negative.")
        if self.lambda_gen is not None and self.lambda_gen < 0:
            raise ConfigurationError("Hyper-parameter 'lambda_gen' must be non-negative.")
        if isinstance(self.gamma, str):
            if self.gamma != GAMMA_SCHEDULE:
                raise ConfigurationError(f"gamma must be a number or {GAMMA_SCHEDULE!r}, got {self.gamma!r}.")
        elif self.gamma < 0:
            raise ConfigurationError("Hyper-parameter 'gamma' must be non-negative.")
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {self.M}.")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigurationError(f"batch_size must be even and >= 2, got {self.batch_size}.")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}.")

    @property
    def scheduled(self) -> bool:
        return isinstance(self.gamma, str)

    def gamma_at(self, iteration: int, max_iter: int) -> float:
        """gamma(iter): iter/max_iter under the schedule, else the constant."""
        if self.scheduled:
            return iteration / max_iter
        return float(self.gamma)

    @property
    def lam_generator(self) -> float:
        return self.lam if self.lambda_gen is None else self.lambda_gen

    @classmethod
    def from_dict(cls, d: dict = None) -> "HyperParams":
        d = _fill("hyper", d, hyper_defaults)
        d["lam"] = d.pop("lambda")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(slots=True)
class DecConfig:
    k: int = 2
    t_dof: float = 1.0
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 256
    pretrain_epochs: int = 30
    max_epochs: int = 200
    tol: float = 0.001
    corruption_std: float = 0.0
    kl_sign: str = "dec"
    rec_target: str = "full"
    warm_start: bool = False
    kmeans_n_init: int = 20
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.k < 2:
            raise ConfigurationError(f"DEC k must be >= 2, got {self.k}.")
        if self.t_dof <= 0:
            raise ConfigurationError(f"t_dof must be > 0, got {self.t_dof}.")
        if not 0.0 < self.tol < 1.0:
            raise ConfigurationError(f"Convergence threshold must be in (0, 1), got {self.tol}.")
        if self.batch_size < 2:
            raise ConfigurationError(f"DEC batch_size must be >= 2, got {self.batch_size}.")
        if self.pretrain_epochs < 0 or self.max_epochs < 1:
            raise ConfigurationError("DEC epochs: pretrain_epochs >= 0 and max_epochs >= 1 required.")
        if self.kl_sign not in ("dec", "verbatim"):
            raise ConfigurationError(f"kl_sign must be 'dec' or 'verbatim', got {self.kl_sign!r}.")
        if self.rec_target not in ("full", "x"):
            raise ConfigurationError(f"rec_target must be 'full' or 'x', got {self.rec_target!r}.")
        if self.corruption_std < 0 or self.lr <= 0:
            raise ConfigurationError("corruption_std must be >= 0 and lr > 0.")

    @property
    def sign(self) -> float:
        return 1.0 if self.kl_sign == "dec" else -1.0

    @classmethod
    def from_dict(cls, d: dict = None) -> "DecConfig":
        return cls(**_fill("dec", d, dec_defaults))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(slots=True)
class NetworkConfig:
    h: int = 64
    f_hidden: List[int] = field(default_factory=lambda: [64])
    trunk_dim: int = 100
    enc_hidden: List[int] = field(default_factory=lambda: [500, 1000])
    dec_hidden: List[int] = field(default_factory=lambda: [1000, 1000])
    enc_activation: str = "linear"
    dropout: float = 0.0

    @classmethod
    def from_dict(cls, d: dict = None) -> "NetworkConfig":
        return cls(**_fill("network", d, network_defaults))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(slots=True)
class TrainConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    dec: DecConfig = field(default_factory=DecConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    mode: str = JOINT
    outer_loops: int = 5
    seed: int = 0
    variant: str = AMEAN
    target_subtarget: Optional[int] = None
    log_every: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"Unknown mode {self.mode!r}; choose from {MODES}.")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"Unknown variant {self.variant!r}; choose from {VARIANTS}.")
        if self.outer_loops < 1:
            raise ConfigurationError(f"outer_loops must be >= 1, got {self.outer_loops}.")
        if self.variant == SINGLE_TARGET and self.target_subtarget is None:
            raise ConfigurationError("Variant 'single-target' needs 'target_subtarget'.")

    @property
    def max_iter(self) -> int:
        return self.outer_loops * self.hyper.M

    @classmethod
    def from_dict(cls, d: dict, hyper: dict = None, dec: dict = None, network: dict = None,
                  seed: int = 0) -> "TrainConfig":
        d = _fill("train", d, train_defaults)
        return cls(hyper=HyperParams.from_dict(hyper), dec=DecConfig.from_dict(dec),
                   network=NetworkConfig.from_dict(network), seed=seed, **d)

    def replace(self, **changes) -> "TrainConfig":
        """Copy with changed fields; nested configs are deep-copied."""
        cfg = deepcopy(self)
        for key, val in changes.items():
            setattr(cfg, key, val)
        cfg.__post_init__()
        return cfg


@dataclass(slots=True)
class ExperimentConfig:
    data: dict
    train: TrainConfig
    eval: dict
    seeds: List[int]
    data_seed: int
    out_dir: str
    extra_variants: List[dict]
    k_list: List[int]
    save_figures: bool
    source: Optional[str] = None

    def train_config(self, seed: int, **changes) -> TrainConfig:
        return self.train.replace(seed=seed, **changes)

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        """Copy running the single seed `seed` instead of the 'seeds' list; None keeps the list."""
        if seed is None:
            return self
        if not isinstance(seed, int) or seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {seed!r}.")
        cfg = deepcopy(self)
        cfg.seeds = [seed]
        cfg.train = self.train.replace(seed=seed)
        return cfg


def _check_data_section(data: dict):
    keys = {"spec", "spec_path", "dataset"}
    unknown = sorted(set(data) - keys)
    if unknown:
        raise SchemaError(f"Unknown key {unknown[0]!r} in section 'data'.", name=unknown[0])
    if sum(key in data for key in keys) != 1:
        raise ConfigurationError("Section 'data' needs exactly one of 'spec', 'spec_path' or 'dataset'.")


def experiment_from_dict(cfg: dict, source: str = None) -> ExperimentConfig:
    """Validate a whole experiment document and fill in defaults."""
    if not isinstance(cfg, dict):
        raise SchemaError("An experiment config must be a JSON object.")
    cfg = _fill("experiment", cfg, experiment_defaults)
    _check_data_section(cfg["data"])
    seeds = cfg["seeds"]
    if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigurationError("'seeds' must be a non-empty list of non-negative integers.")
    train = TrainConfig.from_dict(cfg["train"], cfg["hyper"], cfg["dec"], cfg["network"], seed=seeds[0])
    eval_d = _fill("eval", cfg["eval"], eval_defaults)
    if eval_d["split"] not in ("train", "test"):
        raise ConfigurationError(f"eval split must be 'train' or 'test', got {eval_d['split']!r}.")
    for extra in cfg["extra_variants"]:
        if "name" not in extra:
            raise SchemaError("Each extra variant needs a 'name'.", name="name")
        _fill("extra_variants", extra, {"name": None, "variant": AMEAN, "hyper": {}, "dec": {}, "train": {}})
    k_list = cfg["k_list"]
    if not all(isinstance(k, int) and k >= 2 for k in k_list):
        raise ConfigurationError("'k_list' values must be integers >= 2.")
    return ExperimentConfig(
        data=cfg["data"], train=train, eval=eval_d, seeds=list(seeds),
        data_seed=int(cfg["data_seed"]), out_dir=str(cfg["out_dir"]),
        extra_variants=list(cfg["extra_variants"]), k_list=list(k_list),
        save_figures=bool(cfg["save_figures"]), source=source,
    )


def load_experiment_config(fp: Union[str, Path]) -> ExperimentConfig:
    fp = Path(fp)
    cfg = experiment_from_dict(load_json(fp), source=str(fp))
    # a relative spec_path / dataset is relative to the config file location:
    for key in ("spec_path", "dataset"):
        if key in cfg.data and not Path(cfg.data[key]).is_absolute():
            cfg.data[key] = str(fp.parent.joinpath(cfg.data[key]))
    logger.info(f"Loaded experiment config {fp!s}: variant={cfg.train.variant}, seeds={cfg.seeds}")
    return cfg


def extra_variant_config(base: TrainConfig, extra: dict) -> TrainConfig:
    """TrainConfig for an ablation extra: base settings with the extra's overrides."""
    hyper = {**base.hyper.to_dict(), **extra.get("hyper", {})}
    dec = {**base.dec.to_dict(), **extra.get("dec", {})}
    cfg = base.replace(variant=extra.get("variant", AMEAN),
                       hyper=HyperParams.from_dict(hyper), dec=DecConfig.from_dict(dec))
    for key, val in extra.get("train", {}).items():
        if key not in train_defaults:
            raise SchemaError(f"Unknown key {key!r} in extra variant {extra['name']!r}.", name=key)
        setattr(cfg, key, val)
    cfg.__post_init__()
    return cfg
