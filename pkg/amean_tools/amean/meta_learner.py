#!/usr/bin/env python3

"""
Module: meta_learner.py

  Unsupervised meta-learner: a deep embedded clustering (DEC) autoencoder
  over target "feedback" inputs [x | F(x) | C(F(x))], whose hard cluster
  assignments split the mixed target into k meta-sub-targets.

  * soft_assign, target_distribution: Student's-t soft assignments Q and
    their sharpened auxiliary distribution P (numpy).
  * soft_assign_tensor, dec_objective: the same, as differentiable graphs.
  * centroid_gradient: explicit (p - q)-weighted centroid update rule.
  * init_centroids: k-means on current embeddings (scikit-learn).
  * train_meta_learner: AE pretraining, k-means init, then mini-batch DEC epochs.
  * split_targets: argmax assignment into a MetaPartition.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path
import sys
from typing import List, Optional, Sequence, Union

logger = logging.getLogger(__name__)
try:
    import numpy as np
    import pandas as pd
    from sklearn.cluster import KMeans
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean import autodiff as ad
from amean.autodiff import Tensor
from amean.constants import PROB_CLAMP
from amean.errors import ConfigurationError, ContractError, DegenerateClusterError, SchemaError
from amean.io_utils import mf
from amean.networks import MLP, SGD, build_meta_learner
from amean.parameters import DecConfig
from amean.seeding import int_seed, stream


def soft_assign(embeddings: np.ndarray, centroids: np.ndarray, t_dof: float = 1.0) -> np.ndarray:
    """q_ij = (1 + |z_i - mu_j|^2 / a)^(-(a+1)/2), normalized over j."""
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    d2 = ((z[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    num = (1.0 + d2 / t_dof) ** (-(t_dof + 1.0) / 2.0)
    return num / num.sum(axis=1, keepdims=True)


def target_distribution(q: np.ndarray) -> np.ndarray:
    """p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), with f_j = sum_i q_ij."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ContractError(f"target_distribution needs at least 2 rows, got shape {q.shape}.")
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise DegenerateClusterError(f"Empty cluster(s) {np.flatnonzero(f <= 0).tolist()}: zero frequency.")
    w = q ** 2 / f
    return w / w.sum(axis=1, keepdims=True)


def soft_assign_tensor(z: Tensor, centroids: Tensor, t_dof: float = 1.0) -> Tensor:
    """Differentiable soft_assign; gradients reach both z and the centroids."""
    d2 = ad.tsum(z * z, axis=1, keepdims=True) + ad.tsum(centroids * centroids, axis=1) \
        - 2.0 * (z @ centroids.T)
    num = (1.0 + d2 / t_dof) ** (-(t_dof + 1.0) / 2.0)
    return num / ad.tsum(num, axis=1, keepdims=True)


def kl_to_target(q: Tensor, p: np.ndarray) -> Tensor:
    """mean_i sum_j p_ij log(p_ij / q_ij), with p held constant."""
    logp = np.log(np.clip(p, PROB_CLAMP, 1.0))
    logq = ad.log(ad.clip(q, PROB_CLAMP, 1.0))
    return ad.mean(ad.tsum(p * (logp - logq), axis=1))


def centroid_gradient(z: np.ndarray, centroids: np.ndarray, p: np.ndarray, q: np.ndarray,
                      t_dof: float = 1.0) -> np.ndarray:
    """d KL(P||Q) / d mu_j for the batch-mean KL with P fixed:
        -(a+1)/a * mean_i (1 + |z_i - mu_j|^2/a)^-1 (p_ij - q_ij)(z_i - mu_j)
    """
    diff = z[:, None, :] - centroids[None, :, :]           # (n, k, e)
    w = 1.0 / (1.0 + (diff ** 2).sum(axis=2) / t_dof)       # (n, k)
    coef = w * (p - q)
    return -(t_dof + 1.0) / t_dof * (coef[:, :, None] * diff).mean(axis=0)


@dataclass(slots=True)
class DecTerms:
    loss: Tensor
    rec: float
    kl: float
    z: Tensor
    q: Tensor
    p: np.ndarray


def dec_objective(U1: MLP, U2: MLP, centroids: Tensor, inputs: np.ndarray, t_dof: float = 1.0,
                  sign: float = 1.0, rec_target: str = "full", d: int = None,
                  encoder_inputs: np.ndarray = None) -> DecTerms:
    """Reconstruction MSE + sign * KL(P||Q) on precomputed meta inputs.
    `encoder_inputs` (e.g. corrupted copies) feed U1; `inputs` are the reconstruction target.
    """
    if inputs.shape[0] < 2:
        raise ContractError("The clustering objective needs a batch of at least 2 samples.")
    enc_in = Tensor(inputs if encoder_inputs is None else encoder_inputs)
    z = U1(enc_in)
    recon = U2(z)
    if rec_target == "x":
        if d is None:
            raise ContractError("rec_target 'x' needs the input dim d.")
        rec = ad.mse(ad.columns(recon, 0, d), inputs[:, :d])
    else:
        rec = ad.mse(recon, inputs)
    q = soft_assign_tensor(z, centroids, t_dof)
    p = target_distribution(q.data)
    kl = kl_to_target(q, p)
    loss = rec + sign * kl
    return DecTerms(loss, rec.item(), kl.item(), z, q, p)


def init_centroids(embeddings: np.ndarray, k: int, seed: int = 0,
                   n_init: int = 20, max_iter: int = 100) -> np.ndarray:
    """k-means centroids (best inertia over n_init restarts)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if k < 1 or n < k:
        raise ConfigurationError(f"k-means needs 1 <= k <= n, got k={k}, n={n}.")
    if k == 1:
        return embeddings.mean(axis=0, keepdims=True)
    km = KMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, random_state=int_seed(seed, "kmeans"))
    km.fit(embeddings)
    return km.cluster_centers_.astype(np.float64)


def meta_inputs(T: np.ndarray, F: MLP, C: MLP) -> np.ndarray:
    """[x | F(x) | C(F(x))] with F and C frozen."""
    feat = F(Tensor(T))
    probs = C(feat)
    return np.concatenate([np.asarray(T, dtype=np.float64), feat.data, probs.data], axis=1)


@dataclass(eq=False)
class MetaPartition:
    """Hard split of the target indices into k meta-sub-targets."""
    assignment: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 2 or self.assignment.shape != (self.q.shape[0],):
            raise ContractError("MetaPartition: one assignment per q row is required.")
        if np.any(self.assignment < 0) or np.any(self.assignment >= self.q.shape[1]):
            raise ContractError("MetaPartition: assignment outside [0, k).")

    @classmethod
    def from_q(cls, q: np.ndarray) -> "MetaPartition":
        # argmax returns the first maximum: ties go to the smallest index
        return cls(np.argmax(q, axis=1), q)

    @classmethod
    def from_labels(cls, labels: np.ndarray, k: int) -> "MetaPartition":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, np.eye(k)[labels])

    @property
    def k(self) -> int:
        return self.q.shape[1]

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def groups(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.assignment == j) for j in range(self.k)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def is_argmax_consistent(self) -> bool:
        return bool(np.all(self.q[np.arange(self.n), self.assignment] >= self.q.max(axis=1)))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"target_index": np.arange(self.n), "meta_sub_target": self.assignment})
        for j in range(self.k):
            df[f"q_{j + 1}"] = self.q[:, j]
        return df

    def save(self, fp: Union[str, Path]) -> Path:
        fp = Path(fp)
        fp.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(fp, index=False, float_format="%.17g")
        return fp


def load_partition(fp: Union[str, Path]) -> MetaPartition:
    fp = Path(fp)
    if not fp.exists():
        raise FileNotFoundError(f"Not found: {fp!s}")
    df = pd.read_csv(fp, float_precision="round_trip")
    for col in ("target_index", "meta_sub_target", "q_1"):
        if col not in df.columns:
            raise SchemaError(f"{fp!s}: missing column {col!r}.", name=col)
    qcols = [c for c in df.columns if c.startswith("q_")]
    df = df.sort_values("target_index")
    return MetaPartition(df["meta_sub_target"].to_numpy(), df[qcols].to_numpy(dtype=np.float64))


@dataclass(eq=False)
class MetaLearnerFit:
    U1: MLP
    U2: MLP
    centroids: np.ndarray
    t_dof: float
    epochs: int = 0
    converged: bool = False
    restarts: int = 0
    rec_initial: float = float("nan")
    rec_pretrained: float = float("nan")
    change_fractions: List[float] = field(default_factory=list)

    def embed(self, inputs: np.ndarray) -> np.ndarray:
        return self.U1(Tensor(inputs)).data

    def soft_assign(self, inputs: np.ndarray) -> np.ndarray:
        return soft_assign(self.embed(inputs), self.centroids, self.t_dof)


def _full_rec_loss(U1: MLP, U2: MLP, inputs: np.ndarray, rec_target: str, d: int) -> float:
    recon = U2(U1(Tensor(inputs))).data
    if rec_target == "x":
        return float(np.mean((recon[:, :d] - inputs[:, :d]) ** 2))
    return float(np.mean((recon - inputs) ** 2))


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # the clustering objective needs >= 2 samples per batch:
    return [b for b in out if b.size >= 2]


def _corrupt(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std <= 0:
        return x
    return x + rng.normal(0.0, std, size=x.shape)


def train_meta_learner(T: np.ndarray, F: MLP, C: MLP, config: DecConfig, seed: int = 0,
                       enc_hidden: Sequence[int] = (500, 1000),
                       dec_hidden: Sequence[int] = (1000, 1000),
                       enc_activation: str = "linear",
                       init: Optional[MetaLearnerFit] = None) -> MetaLearnerFit:
    """Fit the DEC meta-learner on target samples T with F and C frozen.

    Cold start (init is None): fresh U1/U2, autoencoder pretraining on
    reconstruction alone, then k-means centroids on the encoder outputs.
    Warm start: continue from `init` (U1, U2 and centroids), skipping both.
    Then mini-batch epochs update U2 by the reconstruction gradient, U1 by the
    reconstruction + clustering gradient, and the centroids by the explicit
    (p - q)-weighted rule, until the fraction of hard-assignment changes
    between epochs drops below config.tol or config.max_epochs is reached.
    A degenerate (empty) cluster restarts the centroids once with a new seed.
    """
    inputs = meta_inputs(T, F, C)
    n, n_in = inputs.shape
    d = np.asarray(T).shape[1]
    k = config.k
    if n < k:
        raise ConfigurationError(f"Meta-learner needs at least k={k} target samples, got {n}.")
    rng = stream(seed, "dec")

    if init is None:
        U1, U2 = build_meta_learner(n_in, k, stream(seed, "meta-init"), enc_hidden, dec_hidden, enc_activation)
    else:
        U1, U2 = init.U1, init.U2
    fit = MetaLearnerFit(U1, U2, np.zeros((k, k)), config.t_dof)
    fit.rec_initial = _full_rec_loss(U1, U2, inputs, config.rec_target, d)

    opt = SGD(U1.parameters() + U2.parameters(), lr=config.lr, momentum=config.momentum)
    if init is None:
        for _ in range(config.pretrain_epochs):
            for idx in _batches(n, config.batch_size, rng):
                batch = inputs[idx]
                opt.zero_grad()
                recon = U2(U1(Tensor(_corrupt(batch, config.corruption_std, rng))))
                if config.rec_target == "x":
                    loss = ad.mse(ad.columns(recon, 0, d), batch[:, :d])
                else:
                    loss = ad.mse(recon, batch)
                ad.backward(loss)
                opt.step()
        fit.centroids = init_centroids(fit.embed(inputs), k, seed, config.kmeans_n_init, config.kmeans_max_iter)
    else:
        fit.centroids = np.array(init.centroids, dtype=np.float64)
    fit.rec_pretrained = _full_rec_loss(U1, U2, inputs, config.rec_target, d)
    logger.info(mf("Meta-learner pretraining: reconstruction {:.5g} -> {:.5g}",
                   fit.rec_initial, fit.rec_pretrained))

    prev = np.argmax(fit.soft_assign(inputs), axis=1)
    mu = Tensor(fit.centroids)
    for epoch in range(1, config.max_epochs + 1):
        for idx in _batches(n, config.batch_size, rng):
            batch = inputs[idx]
            opt.zero_grad()
            try:
                terms = dec_objective(U1, U2, mu, batch, config.t_dof, config.sign, config.rec_target, d,
                                      encoder_inputs=_corrupt(batch, config.corruption_std, rng))
            except DegenerateClusterError:
                if fit.restarts >= 1:
                    raise
                fit.restarts += 1
                logger.warning("Degenerate cluster in the meta-learner: restarting centroids once.")
                mu = Tensor(init_centroids(fit.embed(inputs), k, seed + 1,
                                           config.kmeans_n_init, config.kmeans_max_iter))
                continue
            ad.backward(terms.loss)
            opt.step()
            step = centroid_gradient(terms.z.data, mu.data, terms.p, terms.q.data, config.t_dof)
            mu = Tensor(mu.data - config.lr * config.sign * step)

        fit.centroids = mu.data.copy()
        current = np.argmax(fit.soft_assign(inputs), axis=1)
        changed = float(np.mean(current != prev))
        fit.change_fractions.append(changed)
        fit.epochs = epoch
        prev = current
        if changed < config.tol:
            fit.converged = True
            break

    logger.info(mf("Meta-learner: {} epochs, converged={}, restarts={}", fit.epochs, fit.converged, fit.restarts))
    return fit


def split_targets(T: np.ndarray, U1: MLP, centroids: np.ndarray, F: MLP, C: MLP,
                  t_dof: float = 1.0) -> MetaPartition:
    """Assign each target sample to the meta-sub-target maximizing its soft assignment."""
    z = U1(Tensor(meta_inputs(T, F, C))).data
    return MetaPartition.from_q(soft_assign(z, centroids, t_dof))
