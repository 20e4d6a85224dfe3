#!/usr/bin/env python3

"""
Module: evaluation.py

  Blending-target metrics and the per-run MetricsReport.

    acc_btda              sum_j alpha_j Acc^(j): accuracy on the mixed target,
                          weighted by the sub-target proportions alpha
    ant                   gain over the source-only model and the negative-transfer flag
    rnt                   Acc_BTDA minus the alpha-weighted accuracies of the
                          per-sub-target (multi-target) models
    equal_weight_metrics  the same three with alpha_j = 1/k

  The gain is reported signed; `ant_flag` is True when it is negative.
"""
from dataclasses import asdict, dataclass, fields
import logging
from pathlib import Path
import sys
from typing import Dict, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)
try:
    import numpy as np
    import pandas as pd
    from sklearn.metrics import adjusted_rand_score
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean.constants import BENCHMARK_WEIGHTS, SIMPLEX_TOL
from amean.data import BlendedDataset
from amean.errors import ConfigurationError, ContractError
from amean.io_utils import load_json, save_json
from amean.meta_learner import MetaPartition
from amean.networks import ModelBundle


def check_simplex(weights: Sequence[float], tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Return the weights as an array; ContractError unless they are >= 0 and sum to 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ContractError("Weights must be a non-empty vector.")
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise ContractError(f"Weights must lie on the simplex (sum {w.sum():.12g}).")
    return w


def benchmark_weights(benchmark: str, domains: Sequence[str] = None) -> np.ndarray:
    """Mixture weights of a public benchmark's domains, renormalized over `domains`
    (all domains, in table order, when None).
    """
    if benchmark not in BENCHMARK_WEIGHTS:
        raise ConfigurationError(f"Unknown benchmark {benchmark!r}; choose from {sorted(BENCHMARK_WEIGHTS)}.")
    table = BENCHMARK_WEIGHTS[benchmark]
    domains = list(table) if domains is None else list(domains)
    missing = [dom for dom in domains if dom not in table]
    if missing:
        raise ConfigurationError(f"{benchmark}: unknown domain(s) {missing}.")
    w = np.array([table[dom] for dom in domains])

    return w / w.sum()


def _vector(lbl: str, values: Sequence[float], k: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (k,):
        raise ContractError(f"{lbl}: expected {k} values, got {v.size}.")
    return v


def acc_btda(per_subtarget_acc: Sequence[float], weights: Sequence[float]) -> float:
    w = check_simplex(weights)
    return float(np.dot(_vector("per-sub-target accuracies", per_subtarget_acc, w.size), w))


def ant(acc_btda: float, acc_source_only: float) -> Tuple[float, bool]:
    """(signed gain over source-only, negative-transfer flag)."""
    gain = float(acc_btda) - float(acc_source_only)
    return gain, gain < 0


def rnt(acc_btda: float, mtda_accs: Sequence[float], weights: Sequence[float]) -> float:
    w = check_simplex(weights)
    return float(acc_btda) - float(np.dot(_vector("MTDA accuracies", mtda_accs, w.size), w))


def equal_weight_metrics(per_subtarget_acc: Sequence[float],
                         source_only_per_subtarget: Optional[Sequence[float]] = None,
                         mtda_accs: Optional[Sequence[float]] = None
                         ) -> Tuple[float, Optional[float], Optional[float]]:
    """(Acc_EW, gain_EW, RNT_EW); a term whose input is None is returned as None."""
    accs = np.asarray(per_subtarget_acc, dtype=np.float64)
    k = accs.size
    acc_ew = float(accs.mean())
    gain_ew = rnt_ew = None
    if source_only_per_subtarget is not None:
        gain_ew = acc_ew - float(_vector("source-only accuracies", source_only_per_subtarget, k).mean())
    if mtda_accs is not None:
        rnt_ew = acc_ew - float(_vector("MTDA accuracies", mtda_accs, k).mean())
    return acc_ew, gain_ew, rnt_ew


@dataclass
class MetricsReport:
    variant: str
    seed: Optional[int]
    split: str
    per_subtarget_acc: List[float]
    weights: List[float]
    subtarget_sizes: List[int]
    acc_btda: float
    pooled_acc: float
    acc_source_only: Optional[float] = None
    gain: Optional[float] = None
    ant_flag: Optional[bool] = None
    mtda_accs: Optional[List[float]] = None
    acc_mtda: Optional[float] = None
    rnt: Optional[float] = None
    acc_ew: Optional[float] = None
    gain_ew: Optional[float] = None
    ant_ew_flag: Optional[bool] = None
    rnt_ew: Optional[float] = None
    partition_ari: Optional[float] = None

    def __post_init__(self):
        for acc in (*self.per_subtarget_acc, self.acc_btda, self.pooled_acc):
            if not 0.0 <= acc <= 1.0:
                raise ContractError(f"Accuracy {acc} outside [0, 1].")
        expected = float(np.dot(self.per_subtarget_acc, self.weights))
        if abs(expected - self.acc_btda) > 1e-12:
            raise ContractError(f"acc_btda {self.acc_btda} != weighted sum {expected}.")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, fp: Union[str, Path]) -> Path:
        return save_json(self.to_dict(), fp)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{key: val for key, val in d.items() if key in names})


def load_report(fp: Union[str, Path]) -> MetricsReport:
    return MetricsReport.from_dict(load_json(fp))


def subtarget_accuracies(bundle: ModelBundle, dataset: BlendedDataset,
                         split: str = "test") -> Tuple[np.ndarray, np.ndarray, float]:
    """(per-sub-target accuracies, per-sub-target sizes, pooled accuracy) on a target split."""
    oracle = dataset.oracle(split)
    correct = bundle.predict(oracle.x) == oracle.y
    sizes = np.bincount(oracle.subtarget, minlength=dataset.k)
    if np.any(sizes == 0):
        raise ContractError(f"Sub-target(s) {np.flatnonzero(sizes == 0).tolist()} have no {split} samples.")
    accs = np.bincount(oracle.subtarget, weights=correct, minlength=dataset.k) / sizes
    return accs, sizes, float(correct.mean())


def subtarget_accuracy(bundle: ModelBundle, dataset: BlendedDataset, j: int, split: str = "test") -> float:
    """Accuracy of one model on sub-target j alone (a single-target leg)."""
    oracle = dataset.oracle(split)
    mask = oracle.subtarget == j
    if not mask.any():
        raise ContractError(f"Sub-target {j} has no {split} samples.")
    return float(np.mean(bundle.predict(oracle.x[mask]) == oracle.y[mask]))


def partition_ari(partition: Optional[MetaPartition], dataset: BlendedDataset) -> Optional[float]:
    """Adjusted Rand index of a target-train partition against the hidden sub-target IDs."""
    if partition is None:
        return None
    truth = dataset.oracle("train").subtarget
    if partition.n != truth.size:
        raise ContractError(f"Partition covers {partition.n} samples, the target train split has {truth.size}.")
    return float(adjusted_rand_score(truth, partition.assignment))


def evaluate_bundle(bundle: ModelBundle, dataset: BlendedDataset, split: str = "test",
                    partition: Optional[MetaPartition] = None,
                    source_only_accs: Optional[Sequence[float]] = None,
                    mtda_accs: Optional[Sequence[float]] = None,
                    weights: Optional[Sequence[float]] = None,
                    variant: str = "", seed: Optional[int] = None) -> MetricsReport:
    """Classify the split's target records and assemble the report.
    weights: mixture weights alpha; the empirical sub-target proportions of the
    split when None. Source-only and MTDA fields stay None without their inputs.
    """
    accs, sizes, pooled = subtarget_accuracies(bundle, dataset, split)
    w = sizes / sizes.sum() if weights is None else check_simplex(weights)
    acc = acc_btda(accs, w)
    report = MetricsReport(variant=variant, seed=seed, split=split, per_subtarget_acc=accs.tolist(),
                           weights=w.tolist(), subtarget_sizes=sizes.tolist(), acc_btda=acc,
                           pooled_acc=pooled, partition_ari=partition_ari(partition, dataset))

    if source_only_accs is not None:
        report.acc_source_only = acc_btda(source_only_accs, w)
        report.gain, report.ant_flag = ant(acc, report.acc_source_only)
    if mtda_accs is not None:
        report.mtda_accs = [float(a) for a in mtda_accs]
        report.acc_mtda = float(np.dot(report.mtda_accs, w))
        report.rnt = rnt(acc, report.mtda_accs, w)
    report.acc_ew, report.gain_ew, report.rnt_ew = equal_weight_metrics(accs, source_only_accs, mtda_accs)
    if report.gain_ew is not None:
        report.ant_ew_flag = report.gain_ew < 0

    logger.info(f"{variant or 'model'} (seed {seed}): Acc_BTDA {acc:.4f}, pooled {pooled:.4f}, "
                f"per sub-target {np.round(accs, 4).tolist()}")
    return report


def export_embeddings(bundle: ModelBundle, dataset: BlendedDataset, fp: Union[str, Path],
                      split: str = "test") -> Path:
    """CSV of (index, class, subtarget, f_1..f_h) for the target records of a split."""
    fp = Path(fp)
    oracle = dataset.oracle(split)
    feats = bundle.embed_features(oracle.x)
    df = pd.DataFrame({"index": np.arange(len(oracle.y)), "class": oracle.y, "subtarget": oracle.subtarget})
    feat_df = pd.DataFrame(feats, columns=[f"f_{i + 1}" for i in range(feats.shape[1])])
    try:
        fp.parent.mkdir(parents=True, exist_ok=True)
        pd.concat([df, feat_df], axis=1).to_csv(fp, index=False, float_format="%.17g")
    except OSError as e:
        raise OSError(f"Cannot write embeddings to {fp!s}: {e}") from e

    return fp


def summarize_reports(reports: Dict[str, List[MetricsReport]], key: str = "variant") -> pd.DataFrame:
    """One row per group: Acc_BTDA mean, std (ddof=1; 0 for a single seed) and seed count."""
    rows = []
    for name, group in reports.items():
        vals = np.array([r.acc_btda for r in group])
        rows.append({key: name, "acc_btda_mean": float(vals.mean()),
                     "acc_btda_std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                     "n_seeds": int(vals.size)})
    return pd.DataFrame(rows)
