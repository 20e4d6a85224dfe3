#!/usr/bin/env python3

"""
Module: cli.py

  Command line interface of amean.

  Sub-commands:
    generate  Write a synthetic blended-target dataset (CSV) and its manifest.
    train     Train the configured variant for every seed of an experiment config.
              train, ablate and sweep-k take --seed N to run that single seed instead.
    ablate    Train source-only, no-meta, explicit-sub-target, static-k-clustering
              and amean (plus any 'extra_variants') and tabulate Acc_BTDA.
    sweep-k   Train amean for each number of meta-sub-targets k and tabulate Acc_BTDA.
    eval      Evaluate a checkpoint on a dataset; write the report and embeddings.

  Exit codes: 0 success, 1 configuration or I/O failure, 2 numeric failure.

  Layout of one run directory, <out>/<variant>/seed_<seed>/:
    checkpoint.amean, history.csv, history.json, partition.csv (grouped variants),
    reference.json (source-only and single-target accuracies, or nulls),
    report.json, embeddings.csv (when eval.export_embeddings is true).
"""
from argparse import ArgumentParser, Namespace, RawDescriptionHelpFormatter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
import logging
from pathlib import Path
import sys
import time
from typing import Callable, Dict, List, Sequence

logger = logging.getLogger(__name__)
try:
    import pandas as pd
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean import APP_NAME, CLI_EPILOG
from amean.constants import (ABLATION_VARIANTS, AMEAN, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK,
                             SINGLE_TARGET, SOURCE_ONLY)
from amean.data import (BlendedDataset, GenerationSpec, generate_blended, load_dataset,
                        load_generation_spec, save_dataset)
from amean.errors import NUMERIC_ERRORS, AmeanError, CheckpointError
from amean.evaluation import (MetricsReport, evaluate_bundle, export_embeddings, subtarget_accuracies,
                              subtarget_accuracy, summarize_reports)
from amean.io_utils import file_sha256, load_json, save_json, show_elapsed_time
from amean.meta_learner import load_partition
from amean.networks import load_bundle, read_checkpoint_meta, save_bundle
from amean.parameters import ExperimentConfig, TrainConfig, extra_variant_config, load_experiment_config
from amean import plots
from amean.trainer import run_variant, train


LOG = "amean.log"
CHECKPOINT = "checkpoint.amean"
REPORT = "report.json"
REFERENCE = "reference.json"
PARTITION = "partition.csv"
HISTORY = "history.csv"
EMBEDDINGS = "embeddings.csv"


# .............................................................................
# one training run

@dataclass
class RunJob:
    """Everything a worker needs for one (variant, seed) run; picklable."""
    dataset: BlendedDataset
    config: TrainConfig
    run_dir: str
    eval: dict
    label: str


def _reference_accuracies(job: RunJob, own_accs: List[float]) -> dict:
    ds, cfg, split = job.dataset, job.config, job.eval["split"]
    view, oracle = ds.trainer_view(), ds.oracle("train")
    ref = {"source_only_accs": None, "mtda_accs": None}
    if job.eval["source_only_reference"]:
        if cfg.variant == SOURCE_ONLY:
            ref["source_only_accs"] = own_accs
        else:
            so_bundle, _ = train(view, cfg.replace(variant=SOURCE_ONLY))
            ref["source_only_accs"] = subtarget_accuracies(so_bundle, ds, split)[0].tolist()
    if job.eval["mtda_legs"]:
        legs = []
        for j in range(ds.k):
            leg, _ = run_variant(view, cfg.replace(variant=SINGLE_TARGET, target_subtarget=j), oracle)
            legs.append(subtarget_accuracy(leg, ds, j, split))
        ref["mtda_accs"] = legs
    return ref


def run_one(job: RunJob) -> MetricsReport:
    """Train, evaluate and write one run directory."""
    ds, cfg = job.dataset, job.config
    split = job.eval["split"]
    run_dir = Path(job.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    bundle, history = train(ds.trainer_view(), cfg, ds.oracle("train"))
    own_accs = subtarget_accuracies(bundle, ds, split)[0].tolist()
    ref = _reference_accuracies(job, own_accs)
    report = evaluate_bundle(bundle, ds, split, history.final_partition,
                             ref["source_only_accs"], ref["mtda_accs"], variant=job.label, seed=cfg.seed)

    save_bundle(bundle, run_dir.joinpath(CHECKPOINT),
                extra={"variant": job.label, "seed": str(cfg.seed), "split": split})
    history.to_csv(run_dir.joinpath(HISTORY))
    history.save_summary(run_dir.joinpath(HISTORY).with_suffix(".json"))
    if history.final_partition is not None:
        history.final_partition.save(run_dir.joinpath(PARTITION))
    save_json(ref, run_dir.joinpath(REFERENCE))
    report.save(run_dir.joinpath(REPORT))
    if job.eval["export_embeddings"]:
        export_embeddings(bundle, ds, run_dir.joinpath(EMBEDDINGS), split)

    return report


def execute(jobs: Sequence[RunJob], threads: int = 1) -> List[MetricsReport]:
    """Run independent jobs, in a process pool when threads > 1; results keep the job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_one, jobs))


# .............................................................................
# experiment helpers

def experiment_dataset(cfg: ExperimentConfig) -> BlendedDataset:
    data = cfg.data
    if "dataset" in data:
        return load_dataset(data["dataset"])
    if "spec" in data:
        spec = GenerationSpec.from_dict(data["spec"])
    else:
        spec = load_generation_spec(data["spec_path"])
    return generate_blended(spec, cfg.data_seed)


def _setup_out_dir(cfg: ExperimentConfig, out: str = None) -> Path:
    out_dir = Path(out or cfg.out_dir).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    add_log_file(out_dir)
    return out_dir


def add_log_file(out_dir: Path):
    """Also log into <out_dir>/amean.log."""
    log_path = out_dir.joinpath(LOG)
    pkg_logger = logging.getLogger("amean")
    for h in pkg_logger.handlers:
        if isinstance(h, logging.FileHandler) and Path(h.baseFilename) == log_path:
            return
    fh = logging.FileHandler(log_path, encoding="utf-8")
    fh.setLevel(logging.INFO)
    fh.setFormatter(logging.Formatter("%(asctime)s  %(levelname)s: %(name)s: %(message)s"))
    pkg_logger.addHandler(fh)

    return


def _prepare(cfg: ExperimentConfig, out: str = None):
    out_dir = _setup_out_dir(cfg, out)
    ds = experiment_dataset(cfg)
    save_dataset(ds, out_dir.joinpath("dataset.csv"))
    return out_dir, ds


def _save_table(df: pd.DataFrame, out_dir: Path, name: str, **extra) -> Path:
    df.to_csv(out_dir.joinpath(f"{name}.csv"), index=False, float_format="%.17g")
    return save_json({"rows": df.to_dict(orient="records"), **extra}, out_dir.joinpath(f"{name}.json"))


def _group(labels: Sequence[str], reports: Sequence[MetricsReport]) -> Dict[str, List[MetricsReport]]:
    groups: Dict[str, List[MetricsReport]] = {}
    for lbl, rep in zip(labels, reports):
        groups.setdefault(lbl, []).append(rep)
    return groups


# .............................................................................
# commands

def cmd_generate(spec_path: str, out_path: str, seed: int = 0) -> int:
    """Write the dataset CSV and <out>.manifest.json (spec hash, seed)."""
    def _generate():
        spec = load_generation_spec(spec_path)
        ds = generate_blended(spec, seed)
        fp = save_dataset(ds, out_path)
        manifest = {"dataset": fp.name, "spec": str(spec_path), "spec_sha256": file_sha256(spec_path),
                    "seed": seed, "n_source": ds.n_source, "n_target": ds.n_target, "k": ds.k}
        save_json(manifest, fp.with_suffix(".manifest.json"))
        logger.info(f"Dataset written: {fp!s}")

    return run_command(_generate)


def cmd_train(config_path: str, out: str = None, threads: int = 1, seed: int = None) -> int:
    def _train():
        cfg = load_experiment_config(config_path).with_seed(seed)
        out_dir, ds = _prepare(cfg, out)
        label = cfg.train.variant
        jobs = [RunJob(ds, cfg.train_config(seed), str(out_dir.joinpath(label, f"seed_{seed}")), cfg.eval, label)
                for seed in cfg.seeds]
        reports = execute(jobs, threads)
        _save_table(summarize_reports({label: reports}), out_dir, "summary")
        if cfg.save_figures:
            plots.loss_curves({f"seed {r.seed}": pd.read_csv(Path(j.run_dir, HISTORY))
                               for j, r in zip(jobs, reports)}, out_dir)

    return run_command(_train)


def cmd_ablate(config_path: str, out: str = None, threads: int = 1, seed: int = None) -> int:
    """Comparison table (ablation.csv/.json): Acc_BTDA mean, std and seed count per variant."""
    def _ablate():
        cfg = load_experiment_config(config_path).with_seed(seed)
        out_dir, ds = _prepare(cfg, out)
        configs = [(variant, lambda seed, v=variant: cfg.train_config(seed, variant=v))
                   for variant in ABLATION_VARIANTS]
        configs += [(extra["name"], lambda seed, x=extra: extra_variant_config(cfg.train_config(seed), x))
                    for extra in cfg.extra_variants]
        jobs = [RunJob(ds, make(seed), str(out_dir.joinpath(label, f"seed_{seed}")), cfg.eval, label)
                for label, make in configs for seed in cfg.seeds]
        reports = execute(jobs, threads)
        table = summarize_reports(_group([j.label for j in jobs], reports))
        _save_table(table, out_dir, "ablation", seeds=cfg.seeds)
        logger.info("Ablation:\n" + table.to_string(index=False))
        if cfg.save_figures:
            first = {j.label: pd.read_csv(Path(j.run_dir, HISTORY)) for j in jobs if j.config.seed == cfg.seeds[0]}
            plots.loss_curves(first, out_dir)

    return run_command(_ablate)


def cmd_sweep_k(config_path: str, k_list: Sequence[int] = None, out: str = None, threads: int = 1,
                seed: int = None) -> int:
    """Table (k_sweep.csv/.json) of Acc_BTDA mean and std per k; the best k is
    recorded next to the dataset's true number of sub-targets for reference.
    """
    def _sweep():
        cfg = load_experiment_config(config_path).with_seed(seed)
        out_dir, ds = _prepare(cfg, out)
        ks = list(k_list) if k_list else cfg.k_list
        jobs = [RunJob(ds, cfg.train_config(seed, variant=AMEAN, dec=replace(cfg.train.dec, k=k)),
                       str(out_dir.joinpath(f"k_{k}", f"seed_{seed}")), cfg.eval, AMEAN)
                for k in ks for seed in cfg.seeds]
        reports = execute(jobs, threads)
        labels = [j.config.dec.k for j in jobs]
        table = summarize_reports(_group(labels, reports), key="k")
        best_k = int(table.loc[table["acc_btda_mean"].idxmax(), "k"])
        _save_table(table, out_dir, "k_sweep", best_k=best_k, dataset_k=ds.k, seeds=cfg.seeds)
        logger.info(f"k-sweep: best k = {best_k} (dataset has {ds.k} sub-targets)\n" + table.to_string(index=False))
        if cfg.save_figures:
            plots.k_sweep_bars(table, out_dir, true_k=ds.k)

    return run_command(_sweep)


def cmd_eval(checkpoint: str, dataset: str, out: str) -> int:
    """Evaluate a checkpoint; partition.csv and reference.json next to it are used when present."""
    def _eval():
        ckpt = Path(checkpoint)
        bundle = load_bundle(ckpt)
        meta = read_checkpoint_meta(ckpt)
        ds = load_dataset(dataset)
        if bundle.d != ds.d:
            raise CheckpointError(f"{ckpt!s}: layer 'F.0.W' expects d={bundle.d}, dataset has d={ds.d}.",
                                  layer="F.0.W")
        if bundle.m != ds.m:
            raise CheckpointError(f"{ckpt!s}: classifier 'C.0.W' has {bundle.m} classes, dataset has {ds.m}.",
                                  layer="C.0.W")
        run_dir = ckpt.parent
        partition = load_partition(run_dir.joinpath(PARTITION)) if run_dir.joinpath(PARTITION).exists() else None
        ref = load_json(run_dir.joinpath(REFERENCE)) if run_dir.joinpath(REFERENCE).exists() else {}
        split = meta.get("split", "test")
        report = evaluate_bundle(bundle, ds, split, partition, ref.get("source_only_accs"), ref.get("mtda_accs"),
                                 variant=meta.get("variant", ""),
                                 seed=int(meta["seed"]) if "seed" in meta else None)
        out_dir = Path(out)
        report.save(out_dir.joinpath(REPORT))
        export_embeddings(bundle, ds, out_dir.joinpath(EMBEDDINGS), split)

    return run_command(_eval)


def run_command(fn: Callable[[], None]) -> int:
    """Run a command body and map its failure to an exit code."""
    start_t = time.time()
    try:
        fn()
    except NUMERIC_ERRORS as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except (AmeanError, OSError, ValueError, KeyError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    show_elapsed_time(start_t)

    return EXIT_OK


# .............................................................................
# argument parsing

def cli_parser() -> ArgumentParser:
    DESC = """Adversarial meta-adaptation for blending-target domain adaptation.
Example configuration files are in amean_tools/tool_param/ (see contents.txt).
"""
    p = ArgumentParser(
        prog=APP_NAME,
        description=DESC,
        formatter_class=RawDescriptionHelpFormatter,
        epilog=CLI_EPILOG,
    )
    subparsers = p.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("generate", help="Generate a synthetic blended-target dataset.")
    gen.add_argument("--config", required=True, help="Generation spec JSON file.")
    gen.add_argument("--out", required=True, help="Output dataset CSV path.")
    gen.add_argument("--seed", type=int, default=0, help="Data seed. Default: %(default)s")
    gen.set_defaults(func=lambda a: cmd_generate(a.config, a.out, a.seed))

    for name, helpmsg in (("train", "Train the configured variant for each seed."),
                          ("ablate", "Run the five ablation variants (plus extras) for each seed."),
                          ("sweep-k", "Train amean for each k in the k list.")):
        sub = subparsers.add_parser(name, help=helpmsg)
        sub.add_argument("--config", required=True, help="Experiment config JSON file.")
        sub.add_argument("--out", default=None, help="Output directory; overrides the config 'out_dir'.")
        sub.add_argument("--threads", type=int, default=1,
                         help="Worker processes for independent runs. Default: %(default)s")
        sub.add_argument("--seed", type=int, default=None,
                         help="Train with this single seed; overrides the config 'seeds' (not 'data_seed').")
        if name == "sweep-k":
            sub.add_argument("--k-list", dest="k_list", type=int, nargs="*", default=None,
                             help="Values of k; overrides the config 'k_list'.")
    subparsers.choices["train"].set_defaults(func=lambda a: cmd_train(a.config, a.out, a.threads, a.seed))
    subparsers.choices["ablate"].set_defaults(func=lambda a: cmd_ablate(a.config, a.out, a.threads, a.seed))
    subparsers.choices["sweep-k"].set_defaults(
        func=lambda a: cmd_sweep_k(a.config, a.k_list, a.out, a.threads, a.seed))

    ev = subparsers.add_parser("eval", help="Evaluate a checkpoint on a dataset.")
    ev.add_argument("--checkpoint", required=True, help="checkpoint.amean file of a run.")
    ev.add_argument("--dataset", required=True, help="Dataset CSV file.")
    ev.add_argument("--out", required=True, help="Output directory for report.json and embeddings.csv.")
    ev.set_defaults(func=lambda a: cmd_eval(a.checkpoint, a.dataset, a.out))

    return p


def cli(argv=None):
    parser = cli_parser()
    try:
        args: Namespace = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors; 2 is reserved for numeric failures
        sys.exit(EXIT_CONFIG if e.code else EXIT_OK)
    logger.info(f"{APP_NAME} {args.command} options:\n{args}")
    sys.exit(args.func(args))
