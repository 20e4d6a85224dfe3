#!/usr/bin/env python3

"""
Module: trainer.py

  The AMEAN training loop and its ablation variants.

  Each outer loop (a) fits the meta-learner on the target samples with F and C
  frozen and splits them into k meta-sub-targets, then (b) runs M adaptation
  iterations on mini-batches whose target half is balanced across the
  meta-sub-targets:
    joint mode:       one SGD step on the joint objective for F, C, D_st, D_mt
                      (the discriminators ascend through grad_reverse);
    alternating mode: one discriminator step (D_st, D_mt ascend V_st + V_mt),
                      then one generator step (F, C descend
                      V_st + gamma V~_mt + beta L_ent + L_vir).

  Variants:
    amean                the full loop above
    no-meta              the V_st stream only (gamma forced to 0, no meta-learner)
    explicit-sub-target  oracle sub-target IDs as the partition, never updated
    static-k-clustering  one meta-learner run before training, partition frozen
    source-only          source classification loss only
    single-target        the V_st stream against one hidden sub-target
"""
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import sys
import time
from typing import Dict, List, Optional, Tuple, Union

logger = logging.getLogger(__name__)
try:
    import numpy as np
    import pandas as pd
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean import autodiff as ad
from amean.constants import AMEAN, EXPLICIT, JOINT, NO_META, SINGLE_TARGET, SOURCE_ONLY, STATIC_K
from amean.data import OracleView, TrainerView
from amean.errors import ConfigurationError, ContractError
from amean.io_utils import mf, save_json, show_elapsed_time
from amean.losses import (DISCRIMINATOR, GENERATOR, Batch, alternating_terms, joint_terms,
                          source_only_terms)
from amean.meta_learner import MetaLearnerFit, MetaPartition, split_targets, train_meta_learner
from amean.networks import SGD, ModelBundle, build_bundle
from amean.parameters import TrainConfig
from amean.seeding import int_seed, stream


HISTORY_COLUMNS = ("iteration", "outer_loop", "v_st", "v_mt", "v_mt_confusion",
                   "l_ent", "l_vir", "gamma", "objective")
# variants that train on meta-sub-target groups:
GROUPED_VARIANTS = (AMEAN, EXPLICIT, STATIC_K)
ORACLE_VARIANTS = (EXPLICIT, SINGLE_TARGET)


@dataclass(eq=False)
class TrainHistory:
    variant: str
    mode: str
    seed: int
    records: List[Dict[str, float]] = field(default_factory=list)
    partitions: List[MetaPartition] = field(default_factory=list)
    meta_updates: int = 0
    warnings: List[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_partition(self) -> Optional[MetaPartition]:
        return self.partitions[-1] if self.partitions else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=list(HISTORY_COLUMNS))

    def to_csv(self, fp: Union[str, Path]) -> Path:
        fp = Path(fp)
        fp.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(fp, index=False, float_format="%.17g")
        return fp

    def summary(self, tail: int = 100) -> dict:
        """Run facts plus the mean of each loss column over the last `tail` iterations.
        Wall-clock time is left out so that reruns write identical files.
        """
        df = self.to_frame().tail(tail)
        final = {}
        for col in HISTORY_COLUMNS[2:]:
            val = df[col].mean()
            final[col] = None if df.empty or math.isnan(val) else float(val)
        return {
            "variant": self.variant,
            "mode": self.mode,
            "seed": self.seed,
            "iterations": len(self),
            "meta_updates": self.meta_updates,
            "partition_sizes": [p.sizes().tolist() for p in self.partitions],
            "warnings": list(self.warnings),
            f"final_{tail}_mean": final,
        }

    def save_summary(self, fp: Union[str, Path]) -> Path:
        return save_json(self.summary(), fp)


def _draw(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    """`size` picks from pool, repeating only when the pool is too small."""
    return rng.choice(pool, size=size, replace=size > pool.size)


def make_batches(source_x: np.ndarray, source_y: np.ndarray, target_x: np.ndarray,
                 partition: Optional[MetaPartition], batch_size: int,
                 rng: np.random.Generator) -> Batch:
    """Half of the batch from the labeled source, half from the target.
    With a partition, each non-empty meta-sub-target gets an equal share of the
    target half (the first groups take the remainder); empty groups have their
    share folded into the others and are listed in Batch.empty_groups.
    """
    if batch_size < 2 or batch_size % 2:
        raise ContractError(f"Batch size must be even and >= 2, got {batch_size}.")
    n_s, n_t = len(source_x), len(target_x)
    if n_s == 0 or n_t == 0:
        raise ContractError(f"Cannot draw batches from {n_s} source and {n_t} target samples.")
    half = batch_size // 2

    s_idx = _draw(rng, np.arange(n_s), half)
    if partition is None:
        t_idx = _draw(rng, np.arange(n_t), half)
        return Batch(source_x[s_idx], source_y[s_idx], target_x[t_idx], t_index=t_idx)

    if partition.n != n_t:
        raise ContractError(f"Partition covers {partition.n} samples, target has {n_t}.")
    groups = partition.groups()
    present = [j for j, g in enumerate(groups) if g.size]
    empty = tuple(j for j, g in enumerate(groups) if not g.size)
    quota = np.full(len(present), half // len(present))
    quota[: half % len(present)] += 1

    t_idx, tags = [], []
    for j, q in zip(present, quota):
        if q:
            t_idx.append(_draw(rng, groups[j], int(q)))
            tags.append(np.full(q, j, dtype=np.int64))
    t_idx = np.concatenate(t_idx)
    return Batch(source_x[s_idx], source_y[s_idx], target_x[t_idx],
                 groups=np.concatenate(tags), t_index=t_idx, empty_groups=empty)


def _descend(bundle: ModelBundle, opt: SGD, loss: ad.Tensor):
    bundle.zero_grad()
    ad.backward(loss)
    opt.step()


def _optimizers(bundle: ModelBundle, config: TrainConfig) -> Dict[str, SGD]:
    hp = config.hyper
    gen = bundle.generator_parameters()
    if config.variant == SOURCE_ONLY:
        return {GENERATOR: SGD(gen, hp.lr, hp.momentum)}
    if config.mode == JOINT:
        return {JOINT: SGD(gen + bundle.discriminator_parameters(), hp.lr, hp.momentum)}
    return {DISCRIMINATOR: SGD(bundle.discriminator_parameters(), hp.lr, hp.momentum),
            GENERATOR: SGD(gen, hp.lr, hp.momentum)}


def adaptation_step(bundle: ModelBundle, batch: Batch, config: TrainConfig, optimizers: Dict[str, SGD],
                    gamma: float, iteration: int, rng: np.random.Generator) -> Dict[str, float]:
    """One adaptation iteration; returns the loss components and the objective."""
    hp = config.hyper
    if config.variant == SOURCE_ONLY:
        terms = source_only_terms(bundle, batch)
        terms.check_finite(iteration)
        _descend(bundle, optimizers[GENERATOR], terms.total)
        return {**terms.record(), "objective": terms.total.item()}

    if config.mode == JOINT:
        terms = joint_terms(bundle, batch, hp, gamma, rng)
        terms.check_finite(iteration)
        _descend(bundle, optimizers[JOINT], terms.total)
        return {**terms.record(), "objective": terms.total.item()}

    disc = alternating_terms(bundle, batch, hp, DISCRIMINATOR, gamma, rng)
    disc.check_finite(iteration)
    # the discriminators maximize V_st + V_mt:
    _descend(bundle, optimizers[DISCRIMINATOR], -disc.total)
    gen = alternating_terms(bundle, batch, hp, GENERATOR, gamma, rng)
    gen.check_finite(iteration)
    _descend(bundle, optimizers[GENERATOR], gen.total)
    rec = gen.record()
    rec["v_mt"] = math.nan if disc.v_mt is None else disc.v_mt
    return {**rec, "objective": gen.total.item()}


def _install_meta_learner(bundle: ModelBundle, fit: MetaLearnerFit):
    bundle.U1, bundle.U2 = fit.U1, fit.U2
    bundle.centroids = ad.parameter(fit.centroids, name="centroids")


def _oracle_targets(view: TrainerView, config: TrainConfig,
                    oracle: Optional[OracleView]) -> Tuple[np.ndarray, Optional[MetaPartition], int]:
    """Target samples, fixed partition and bundle k for a variant."""
    if config.variant not in ORACLE_VARIANTS:
        return view.target_x, None, config.dec.k
    if oracle is None:
        raise ConfigurationError(f"Variant {config.variant!r} needs the oracle sub-target IDs "
                                 "of the target train split.")
    sub = np.asarray(oracle.subtarget, dtype=np.int64)
    if sub.shape != (len(view.target_x),):
        raise ContractError(f"Oracle IDs cover {sub.size} samples, target train split has {len(view.target_x)}.")
    k = max(int(sub.max()) + 1, 2)
    if config.variant == EXPLICIT:
        return view.target_x, MetaPartition.from_labels(sub, k), k

    mask = sub == config.target_subtarget
    if not mask.any():
        raise ConfigurationError(f"Sub-target {config.target_subtarget} has no target train samples.")
    return view.target_x[mask], None, config.dec.k


def _train(view: TrainerView, config: TrainConfig,
           oracle: Optional[OracleView] = None) -> Tuple[ModelBundle, TrainHistory]:
    start_t = time.time()
    variant = config.variant
    hp, net = config.hyper, config.network
    xs, ys = view.source_x, view.source_y
    xt, fixed, k = _oracle_targets(view, config, oracle)

    bundle = build_bundle(view.d, view.m, k, net.h, config.mode, config.seed, net.f_hidden, net.trunk_dim,
                          net.enc_hidden, net.dec_hidden, net.enc_activation, net.dropout)
    history = TrainHistory(variant, config.mode, config.seed)
    optimizers = _optimizers(bundle, config)
    batch_rng = stream(config.seed, "batching")
    vat_rng = stream(config.seed, "vat")
    grouped = variant in GROUPED_VARIANTS
    logger.info(mf("Training {} ({} mode, seed {}): {} outer loops x {} iterations",
                   variant, config.mode, config.seed, config.outer_loops, hp.M))

    fit = None
    iteration = 0
    if net.dropout > 0:
        bundle.dropout_rng = stream(config.seed, "dropout")
    for loop in range(1, config.outer_loops + 1):
        if variant == AMEAN or (variant == STATIC_K and loop == 1):
            fit = train_meta_learner(xt, bundle.F, bundle.C, config.dec,
                                     seed=int_seed(config.seed, "outer", loop),
                                     enc_hidden=net.enc_hidden, dec_hidden=net.dec_hidden,
                                     enc_activation=net.enc_activation,
                                     init=fit if config.dec.warm_start else None)
            _install_meta_learner(bundle, fit)
            fixed = split_targets(xt, fit.U1, fit.centroids, bundle.F, bundle.C, fit.t_dof)
            history.meta_updates += 1
            logger.info(mf("Outer loop {}: meta-sub-target sizes {}", loop, fixed.sizes().tolist()))

        partition = fixed if grouped else None
        if partition is not None:
            history.partitions.append(partition)

        n_short, short_groups = 0, set()
        for _ in range(hp.M):
            iteration += 1
            gamma = hp.gamma_at(iteration, config.max_iter) if grouped else 0.0
            batch = make_batches(xs, ys, xt, partition, hp.batch_size, batch_rng)
            if batch.empty_groups:
                n_short += 1
                short_groups.update(batch.empty_groups)
            rec = adaptation_step(bundle, batch, config, optimizers, gamma, iteration, vat_rng)
            history.records.append({"iteration": iteration, "outer_loop": loop, **rec, "gamma": gamma})
            if iteration % config.log_every == 0:
                logger.info(mf("iter {:>6}: V_st {:.4f}  objective {:.4f}  gamma {:.3f}",
                               iteration, rec["v_st"], rec["objective"], gamma))
        if n_short:
            msg = (f"Outer loop {loop}: {n_short} of {hp.M} batches had empty meta-sub-target(s) "
                   f"{sorted(short_groups)}; their share went to the other groups.")
            logger.warning(msg)
            history.warnings.append(msg)

    bundle.dropout_rng = None
    history.wall_clock = show_elapsed_time(start_t, info=f"{variant} seed {config.seed}", return_time=True)
    return bundle, history


def run_amean(view: TrainerView, config: TrainConfig) -> Tuple[ModelBundle, TrainHistory]:
    """Collaborative adversarial meta-adaptation (also runs the source-only baseline)."""
    if config.variant not in (AMEAN, SOURCE_ONLY):
        raise ConfigurationError(f"run_amean runs 'amean' or 'source-only', got {config.variant!r}; "
                                 "use run_variant.")
    return _train(view, config)


def run_variant(view: TrainerView, config: TrainConfig,
                oracle: Optional[OracleView] = None) -> Tuple[ModelBundle, TrainHistory]:
    """Ablation and single-target variants. `oracle` (target train split) is
    required by explicit-sub-target and single-target, and ignored otherwise.
    """
    if config.variant not in (NO_META, EXPLICIT, STATIC_K, SINGLE_TARGET):
        raise ConfigurationError(f"run_variant does not run {config.variant!r}; use run_amean.")
    return _train(view, config, oracle if config.variant in ORACLE_VARIANTS else None)


def train(view: TrainerView, config: TrainConfig,
          oracle: Optional[OracleView] = None) -> Tuple[ModelBundle, TrainHistory]:
    """Dispatch on config.variant."""
    if config.variant in (AMEAN, SOURCE_ONLY):
        return run_amean(view, config)
    return run_variant(view, config, oracle)
