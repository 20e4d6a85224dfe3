#!/usr/bin/env python3

"""
Module: data.py

  Synthetic blended-target datasets and their CSV file I/O.

  The source domain is m Gaussian class clusters in R^d. Each of the k hidden
  sub-target domains pushes the same clusters through its DomainTransformSpec:
    * a label-conditional offset moving class c toward class (c + j + 1) mod m
      (category misalignment between sub-targets),
    * per-dimension scaling, a rotation in the (x_1, x_2) plane, a translation,
    * extra isotropic noise.
  Target samples are allocated to sub-targets by the mixture weights pi and
  split 80/20 (train/test), stratified by (class, sub-target).

  Trainers only see `BlendedDataset.trainer_view()`; hidden class and
  sub-target fields of target records are reachable through `oracle(split)`.

  CSV columns: role, split, x_1..x_d, class, subtarget
  (source rows: split 'train', subtarget -1).
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path
import re
import sys
from typing import Tuple, Union

logger = logging.getLogger(__name__)
try:
    import numpy as np
    import pandas as pd
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean.errors import ConfigurationError, GenerationError, ParseError, SchemaError
from amean.io_utils import load_json
from amean.seeding import stream


MAX_CENTER_ATTEMPTS = 100
MIN_SEPARATION = 4.0  # in units of cluster std
SPLITS = ("train", "test")
BASE_COLUMNS = ("role", "split", "class", "subtarget")


@dataclass(frozen=True)
class DomainTransformSpec:
    rotation: float = 0.0
    translation: Tuple[float, ...] = ()
    scale: Tuple[float, ...] = ()
    label_offset: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if any(s == 0 for s in self.scale):
            raise ConfigurationError("Domain transform scales must be nonzero.")
        if self.noise_std < 0:
            raise ConfigurationError("Domain transform noise_std must be >= 0.")

    def vector(self, values: Tuple[float, ...], d: int, fill: float) -> np.ndarray:
        if not values:
            return np.full(d, fill)
        if len(values) == 1:
            return np.full(d, float(values[0]))
        if len(values) != d:
            raise ConfigurationError(f"Transform vector has length {len(values)}, expected {d}.")
        return np.asarray(values, dtype=np.float64)

    def rotation_matrix(self, d: int) -> np.ndarray:
        R = np.eye(d)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        R[:2, :2] = [[c, -s], [s, c]]
        return R

    def apply(self, x: np.ndarray, labels: np.ndarray, centers: np.ndarray, index: int,
              rng: np.random.Generator) -> np.ndarray:
        d = x.shape[1]
        m = centers.shape[0]
        toward = centers[(labels + index + 1) % m] - centers[labels]
        out = x + self.label_offset * toward
        out = out * self.vector(self.scale, d, 1.0)
        out = out @ self.rotation_matrix(d).T
        out = out + self.vector(self.translation, d, 0.0)
        if self.noise_std > 0:
            out = out + rng.normal(0.0, self.noise_std, size=out.shape)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DomainTransformSpec":
        keys = {"rotation", "translation", "scale", "label_offset", "noise_std"}
        unknown = sorted(set(d) - keys)
        if unknown:
            raise SchemaError(f"Unknown transform key {unknown[0]!r}.", name=unknown[0])
        d = dict(d)
        for key in ("translation", "scale"):
            if key in d:
                val = d[key]
                d[key] = tuple(float(v) for v in (val if isinstance(val, (list, tuple)) else [val]))
        return cls(**d)


@dataclass(frozen=True)
class GenerationSpec:
    """Documented keys of a generation spec JSON document (all but 'transforms' optional):
      d, m, k, n_source, n_target, weights (pi, length k), cluster_std,
      center_scale (centers drawn in [-center_scale, center_scale]^d),
      centers (m explicit class centers of length d; replaces the random draw),
      test_fraction, transforms (list of k DomainTransformSpec dicts).
    """
    d: int = 2
    m: int = 4
    k: int = 2
    n_source: int = 1000
    n_target: int = 1000
    weights: Tuple[float, ...] = ()
    cluster_std: float = 0.5
    center_scale: float = 5.0
    test_fraction: float = 0.2
    transforms: Tuple[DomainTransformSpec, ...] = ()
    centers: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.d < 2 or self.m < 2 or self.k < 2:
            raise ConfigurationError(f"Generation needs d, m, k >= 2 (got d={self.d}, m={self.m}, k={self.k}).")
        if len(self.transforms) != self.k:
            raise ConfigurationError(f"Need one transform per sub-target: {len(self.transforms)} != k={self.k}.")
        w = self.mixture
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"Mixture weights must lie on the simplex, got {w.tolist()}.")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError("test_fraction must be in (0, 1).")
        if self.cluster_std <= 0 or self.n_source < self.m or self.n_target < self.k:
            raise ConfigurationError("cluster_std > 0, n_source >= m and n_target >= k are required.")
        if self.centers and (len(self.centers) != self.m or any(len(c) != self.d for c in self.centers)):
            raise ConfigurationError(f"centers must be {self.m} points of length {self.d}.")

    @property
    def mixture(self) -> np.ndarray:
        if not self.weights:
            return np.full(self.k, 1.0 / self.k)
        return np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationSpec":
        keys = {"d", "m", "k", "n_source", "n_target", "weights", "cluster_std",
                "center_scale", "test_fraction", "transforms", "centers"}
        unknown = sorted(set(d) - keys)
        if unknown:
            raise SchemaError(f"Unknown generation spec key {unknown[0]!r}.", name=unknown[0])
        d = dict(d)
        d["transforms"] = tuple(DomainTransformSpec.from_dict(t) for t in d.get("transforms", []))
        if "weights" in d:
            d["weights"] = tuple(float(w) for w in d["weights"])
        if "centers" in d:
            if not all(isinstance(c, (list, tuple)) for c in d["centers"]):
                raise ConfigurationError("centers must be a list of points.")
            d["centers"] = tuple(tuple(float(v) for v in c) for c in d["centers"])
        return cls(**d)


def load_generation_spec(fp: Union[str, Path]) -> GenerationSpec:
    return GenerationSpec.from_dict(load_json(fp))


@dataclass(frozen=True)
class TrainerView:
    """What a trainer may read: labeled source data and unlabeled target train samples."""
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    m: int
    d: int


@dataclass(frozen=True)
class OracleView:
    """Hidden target fields of one split; for evaluation and oracle variants only."""
    x: np.ndarray
    y: np.ndarray
    subtarget: np.ndarray


@dataclass(frozen=True, eq=False)
class BlendedDataset:
    source_x: np.ndarray
    source_y: np.ndarray
    _target_x: np.ndarray = field(repr=False)
    _target_y: np.ndarray = field(repr=False)
    _target_sub: np.ndarray = field(repr=False)
    _target_split: np.ndarray = field(repr=False)
    pi: np.ndarray
    m: int
    d: int
    k: int

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_target(self) -> int:
        return self._target_x.shape[0]

    def _mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}.")
        return self._target_split == split

    def trainer_view(self) -> TrainerView:
        return TrainerView(self.source_x, self.source_y, self._target_x[self._mask("train")], self.m, self.d)

    def oracle(self, split: str = "test") -> OracleView:
        mask = self._mask(split)
        return OracleView(self._target_x[mask], self._target_y[mask], self._target_sub[mask])

    def subtarget_proportions(self, split: str = "test") -> np.ndarray:
        sub = self.oracle(split).subtarget
        return np.bincount(sub, minlength=self.k) / sub.size

    def to_frame(self) -> pd.DataFrame:
        n_s = self.n_source
        x = np.vstack([self.source_x, self._target_x])
        df = pd.DataFrame({
            "role": ["source"] * n_s + ["target"] * self.n_target,
            "split": ["train"] * n_s + list(self._target_split),
        })
        for i in range(self.d):
            df[f"x_{i + 1}"] = x[:, i]
        df["class"] = np.concatenate([self.source_y, self._target_y]).astype(np.int64)
        df["subtarget"] = np.concatenate([np.full(n_s, -1), self._target_sub]).astype(np.int64)
        return df

    def equals(self, other: "BlendedDataset") -> bool:
        """Field-by-field, value-exact comparison."""
        if (self.m, self.d, self.k) != (other.m, other.d, other.k):
            return False
        pairs = [(self.source_x, other.source_x), (self.source_y, other.source_y),
                 (self._target_x, other._target_x), (self._target_y, other._target_y),
                 (self._target_sub, other._target_sub), (self._target_split, other._target_split),
                 (self.pi, other.pi)]
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)


def largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts summing to `total`, proportional to weights."""
    raw = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    # stable sort: ties go to the smaller index
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _min_gap(centers: np.ndarray) -> float:
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    return float(dist[np.triu_indices(len(centers), 1)].min())


def sample_centers(spec: GenerationSpec, rng: np.random.Generator) -> np.ndarray:
    """Class centers with pairwise distance >= 4 cluster std (rejection sampling).
    Explicit spec.centers are checked against the same bound and draw nothing from rng.
    """
    min_dist = MIN_SEPARATION * spec.cluster_std
    if spec.centers:
        centers = np.asarray(spec.centers, dtype=np.float64)
        if _min_gap(centers) < min_dist:
            raise GenerationError(f"Explicit class centers are closer than {min_dist:g}.")
        return centers
    for _ in range(MAX_CENTER_ATTEMPTS):
        centers = rng.uniform(-spec.center_scale, spec.center_scale, size=(spec.m, spec.d))
        if _min_gap(centers) >= min_dist:
            return centers
    raise GenerationError(
        f"Could not place {spec.m} centers {min_dist:g} apart in [-{spec.center_scale:g}, "
        f"{spec.center_scale:g}]^{spec.d} after {MAX_CENTER_ATTEMPTS} attempts."
    )


def _balanced_labels(n: int, m: int) -> np.ndarray:
    return np.repeat(np.arange(m), largest_remainder(n, np.full(m, 1.0 / m)))


def generate_blended(spec: GenerationSpec, seed: int = 0) -> BlendedDataset:
    rng = stream(seed, "data")
    centers = sample_centers(spec, rng)

    source_y = _balanced_labels(spec.n_source, spec.m)
    source_x = centers[source_y] + rng.normal(0.0, spec.cluster_std, size=(spec.n_source, spec.d))

    xs, ys, subs, splits = [], [], [], []
    for j, n_j in enumerate(largest_remainder(spec.n_target, spec.mixture)):
        if n_j == 0:
            continue
        y = _balanced_labels(int(n_j), spec.m)
        base = centers[y] + rng.normal(0.0, spec.cluster_std, size=(n_j, spec.d))
        x = spec.transforms[j].apply(base, y, centers, j, rng)
        split = np.full(n_j, "train", dtype=object)
        for c in range(spec.m):
            idx = np.flatnonzero(y == c)
            n_test = int(round(spec.test_fraction * idx.size))
            split[rng.permutation(idx)[:n_test]] = "test"
        xs.append(x)
        ys.append(y)
        subs.append(np.full(n_j, j))
        splits.append(split)

    target_sub = np.concatenate(subs).astype(np.int64)
    pi = np.bincount(target_sub, minlength=spec.k) / target_sub.size
    ds = BlendedDataset(source_x, source_y.astype(np.int64), np.vstack(xs), np.concatenate(ys).astype(np.int64),
                        target_sub, np.concatenate(splits).astype(str), pi, spec.m, spec.d, spec.k)
    logger.info(f"Generated dataset: n_s={ds.n_source}, n_t={ds.n_target}, sub-target sizes="
                f"{np.bincount(target_sub, minlength=spec.k).tolist()}")
    return ds


# .............................................................................
# file I/O

def save_dataset(ds: BlendedDataset, fp: Union[str, Path]) -> Path:
    fp = Path(fp)
    fp.parent.mkdir(parents=True, exist_ok=True)
    ds.to_frame().to_csv(fp, index=False, float_format="%.17g")
    return fp


def _column(df: pd.DataFrame, col: str, kind: type) -> np.ndarray:
    """Convert a string column, raising ParseError at the first bad row (header is line 1)."""
    values = df[col].to_numpy()
    try:
        return np.array([kind(v) for v in values])
    except ValueError:
        for i, v in enumerate(values):
            try:
                kind(v)
            except ValueError:
                raise ParseError(f"column {col!r}: cannot parse {v!r}", line=i + 2) from None
        raise


def load_dataset(fp: Union[str, Path]) -> BlendedDataset:
    fp = Path(fp)
    if not fp.exists():
        raise FileNotFoundError(f"Not found: {fp!s}")
    try:
        df = pd.read_csv(fp, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        raise ParseError(f"{fp!s}: malformed row: {e}", line=int(found.group(1)) if found else None) from e
    for col in BASE_COLUMNS + ("x_1", "x_2"):
        if col not in df.columns:
            raise SchemaError(f"{fp!s}: missing required column {col!r}.", name=col)
    xcols = [c for c in df.columns if c.startswith("x_")]
    d = len(xcols)
    for i in range(1, d + 1):
        if f"x_{i}" not in df.columns:
            raise SchemaError(f"{fp!s}: missing required column 'x_{i}'.", name=f"x_{i}")

    x = np.column_stack([_column(df, f"x_{i}", float) for i in range(1, d + 1)])
    cls = _column(df, "class", int)
    sub = _column(df, "subtarget", int)
    role = df["role"].to_numpy()
    split = df["split"].to_numpy().astype(str)
    for i, (r, s) in enumerate(zip(role, split)):
        if r not in ("source", "target") or s not in SPLITS:
            raise ParseError(f"bad role/split {r!r}/{s!r}", line=i + 2)
    src = role == "source"
    tgt = ~src
    m = int(cls.max()) + 1
    k = int(sub[tgt].max()) + 1 if tgt.any() else 0
    pi = np.bincount(sub[tgt], minlength=k) / max(tgt.sum(), 1)
    return BlendedDataset(x[src], cls[src].astype(np.int64), x[tgt], cls[tgt].astype(np.int64),
                          sub[tgt].astype(np.int64), split[tgt], pi, m, d, k)
