#!/usr/bin/env python3

"""
Module: losses.py

  Scalar objectives of AMEAN, built as autodiff graphs over a ModelBundle:

    v_st            lambda * (E_s log D_st + E_t log(1 - D_st)) + source cross-entropy
    v_mt            sum_j E_{x in group j} log D_mt(F(x))_j
    v_mt_confusion  E_t D_mt(F(x))^T log D_mt(F(x))   (negative entropy of D_mt)
    l_ent           E_t -C(F(x))^T log C(F(x))
    l_vir           VAT penalty on source + rho * VAT penalty on target
    clustering_loss reconstruction MSE + KL(P||Q) of the meta-learner

  and their compositions:
    joint_objective        V_st + gamma V_mt + beta L_ent + L_vir, with the
                           adversarial paths routed through grad_reverse
    alternating_objectives discriminator phase: V_st + V_mt (features detached)
                           generator phase: V_st + gamma V~_mt + beta L_ent + L_vir

  All logs are natural logs of probabilities clamped to [1e-12, 1 - 1e-12].
"""
from dataclasses import dataclass
import logging
import math
from typing import Dict, Optional

import numpy as np

from amean import autodiff as ad
from amean.autodiff import Tensor
from amean.constants import PROB_CLAMP, VAT_XI
from amean.errors import ContractError, NonFiniteLossError
from amean.meta_learner import dec_objective, meta_inputs
from amean.networks import MLP, ModelBundle
from amean.parameters import HyperParams


logger = logging.getLogger(__name__)

DISCRIMINATOR = "discriminator"
GENERATOR = "generator"


@dataclass(slots=True)
class Batch:
    """One mini-batch: labeled source half and (optionally tagged) target half."""
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    groups: Optional[np.ndarray] = None
    t_index: Optional[np.ndarray] = None
    empty_groups: tuple = ()


def _clamped_log(p: Tensor) -> Tensor:
    return ad.log(ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def _np_neg_entropy(p: np.ndarray) -> float:
    return float(np.mean(np.sum(p * np.log(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)), axis=1)))


def one_hot(labels: np.ndarray, m: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(np.float64)
    if np.any(labels < 0) or np.any(labels >= m):
        raise ContractError(f"Class labels must lie in [0, {m}).")
    return np.eye(m)[labels.astype(np.int64)]


def _check_nonempty(lbl: str, x: np.ndarray):
    if x is None or len(x) == 0:
        raise ContractError(f"Empty {lbl} batch.")


def _features(bundle: ModelBundle, x, detach: bool) -> Tensor:
    feat = bundle.features(Tensor(x) if not isinstance(x, Tensor) else x)
    return feat.detach() if detach else feat


def classification_loss(bundle: ModelBundle, xs: np.ndarray, ys: np.ndarray, detach: bool = False) -> Tensor:
    """Mean source cross-entropy -y^T log C(F(x))."""
    _check_nonempty("source", xs)
    probs = bundle.classify(_features(bundle, xs, detach))
    if detach:
        probs = probs.detach()
    y = one_hot(ys, bundle.m)
    return -ad.mean(ad.tsum(y * _clamped_log(probs), axis=1))


def adversarial_loss(bundle: ModelBundle, xs: np.ndarray, xt: np.ndarray,
                     reverse: bool = False, detach: bool = False) -> Tensor:
    """E_s log D_st(F(x)) + E_t log(1 - D_st(F(x))).
    reverse: grad_reverse before the trunk and after the head, so D_st ascends
    this term while F descends it within one backward pass.
    """
    _check_nonempty("source", xs)
    _check_nonempty("target", xt)
    probs = []
    for x in (xs, xt):
        feat = _features(bundle, x, detach)
        if reverse:
            feat = ad.grad_reverse(feat, 1.0)
        ps = bundle.source_prob(bundle.discriminate_st(feat))
        if reverse:
            ps = ad.grad_reverse(ps, 1.0)
        probs.append(ps)
    ps, pt = probs
    return ad.mean(_clamped_log(ps)) + ad.mean(_clamped_log(1.0 - pt))


def v_st(bundle: ModelBundle, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray, lam: float,
         reverse: bool = False, detach: bool = False) -> Tensor:
    """lambda * adversarial DA loss + source classification loss."""
    return lam * adversarial_loss(bundle, xs, xt, reverse, detach) + classification_loss(bundle, xs, ys, detach)


def _mt_probs(bundle: ModelBundle, xt, reverse: bool, detach: bool) -> Tensor:
    feat = _features(bundle, xt, detach)
    if reverse:
        feat = ad.grad_reverse(feat, 1.0)
    probs = bundle.discriminate_mt(feat)
    if reverse:
        probs = ad.grad_reverse(probs, 1.0)
    return probs


def v_mt(bundle: ModelBundle, xt: np.ndarray, groups: np.ndarray,
         reverse: bool = False, detach: bool = False) -> Tensor:
    """Sum over meta-sub-targets of the mean log-probability D_mt gives each
    sample's own meta-sub-target. Groups absent from the batch contribute nothing.
    """
    _check_nonempty("target", xt)
    groups = np.asarray(groups, dtype=np.int64)
    k = bundle.k
    if groups.shape != (len(xt),):
        raise ContractError("v_mt needs one meta-sub-target index per target sample.")
    if np.any(groups < 0) or np.any(groups >= k):
        raise ContractError(f"Meta-sub-target index outside [0, {k}).")
    counts = np.bincount(groups, minlength=k)
    weights = 1.0 / counts[groups]
    own = ad.tsum(np.eye(k)[groups] * _clamped_log(_mt_probs(bundle, xt, reverse, detach)), axis=1)
    return ad.tsum(own * weights)


def v_mt_confusion(bundle: ModelBundle, xt: np.ndarray) -> Tensor:
    """Mean of D_mt(F(x))^T log D_mt(F(x)); in [-ln k, 0]."""
    _check_nonempty("target", xt)
    probs = bundle.discriminate_mt(bundle.features(Tensor(xt)))
    return ad.mean(ad.tsum(probs * _clamped_log(probs), axis=1))


def l_ent(bundle: ModelBundle, xt: np.ndarray) -> Tensor:
    """Mean conditional entropy of the classifier on target samples; in [0, ln m]."""
    _check_nonempty("target", xt)
    probs = bundle.classify(bundle.features(Tensor(xt)))
    return -ad.mean(ad.tsum(probs * _clamped_log(probs), axis=1))


def _kl_rows(p: np.ndarray, q: Tensor) -> Tensor:
    """Per-row KL(p || q) with p constant."""
    logp = np.log(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
    return ad.tsum(p * (logp - _clamped_log(q)), axis=1)


def vat_perturbation(bundle: ModelBundle, x: np.ndarray, epsilon: float,
                     rng: np.random.Generator, xi: float = VAT_XI) -> np.ndarray:
    """One power-iteration step toward the direction that most changes C(F(x)).
    Each row of the result has norm epsilon; a row whose gradient vanishes
    falls back to epsilon times its random unit direction.
    """
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0:
        return np.zeros_like(x)
    p = bundle.classify(bundle.features(Tensor(x))).data
    u = rng.standard_normal(x.shape)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r0 = Tensor(xi * u, requires_grad=True)
    kl = ad.tsum(_kl_rows(p, bundle.classify(bundle.features(Tensor(x) + r0))))
    (g,) = ad.grad(kl, [r0])
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, epsilon * g / safe, epsilon * u)


def vat_kl(bundle: ModelBundle, x: np.ndarray, r: np.ndarray) -> Tensor:
    """Mean KL(C(F(x)) || C(F(x + r))), the clean prediction held constant."""
    p = bundle.classify(bundle.features(Tensor(x))).data
    return ad.mean(_kl_rows(p, bundle.classify(bundle.features(Tensor(x + r)))))


def l_vir(bundle: ModelBundle, xs: np.ndarray, xt: np.ndarray, epsilon: float, rho: float,
          rng: np.random.Generator) -> Tensor:
    """Virtual adversarial penalty: source term + rho * target term."""
    if epsilon < 0:
        raise ContractError(f"VAT radius must be >= 0, got {epsilon}.")
    if epsilon == 0:
        return Tensor(0.0)
    total = vat_kl(bundle, xs, vat_perturbation(bundle, xs, epsilon, rng))
    if rho > 0:
        total = total + rho * vat_kl(bundle, xt, vat_perturbation(bundle, xt, epsilon, rng))
    return total


def clustering_loss(U1: MLP, U2: MLP, centroids: Tensor, xt: np.ndarray, F: MLP, C: MLP,
                    t_dof: float = 1.0, sign: float = 1.0, rec_target: str = "full") -> Tensor:
    """Mean reconstruction of [x | F(x) | C(F(x))] + sign * KL(P||Q) over the batch.
    P is recomputed on the batch and held constant.
    """
    _check_nonempty("target", xt)
    inputs = meta_inputs(xt, F, C)
    return dec_objective(U1, U2, centroids, inputs, t_dof, sign, rec_target, d=np.asarray(xt).shape[1]).loss


@dataclass(slots=True)
class LossTerms:
    """The scalar to differentiate plus the recorded components; None marks a term not computed."""
    total: Tensor
    v_st: Optional[float] = None
    v_mt: Optional[float] = None
    v_mt_confusion: Optional[float] = None
    l_ent: Optional[float] = None
    l_vir: Optional[float] = None
    gamma: float = 0.0

    def components(self) -> Dict[str, Optional[float]]:
        return {"v_st": self.v_st, "v_mt": self.v_mt, "v_mt_confusion": self.v_mt_confusion,
                "l_ent": self.l_ent, "l_vir": self.l_vir}

    def record(self) -> Dict[str, float]:
        """Components as floats, nan for absent terms."""
        return {key: math.nan if val is None else val for key, val in self.components().items()}

    def check_finite(self, iteration: int):
        """Raise NonFiniteLossError naming the first non-finite term."""
        for term, val in self.components().items():
            if val is not None and not math.isfinite(val):
                raise NonFiniteLossError(term, iteration, val)
        if not math.isfinite(self.total.item()):
            raise NonFiniteLossError("objective", iteration, self.total.item())

        return


def _confusion_value(bundle: ModelBundle, xt: np.ndarray) -> float:
    return _np_neg_entropy(bundle.discriminate_mt(bundle.features(Tensor(xt))).data)


def joint_terms(bundle: ModelBundle, batch: Batch, hp: HyperParams, gamma: float,
                rng: np.random.Generator) -> LossTerms:
    tv_st = v_st(bundle, batch.xs, batch.ys, batch.xt, hp.lam, reverse=True)
    total = tv_st
    out = LossTerms(total, v_st=tv_st.item(), gamma=gamma)
    if batch.groups is not None:
        tv_mt = v_mt(bundle, batch.xt, batch.groups, reverse=True)
        out.v_mt = tv_mt.item()
        out.v_mt_confusion = _confusion_value(bundle, batch.xt)
        total = total + gamma * tv_mt
    if hp.beta > 0:
        ent = l_ent(bundle, batch.xt)
        out.l_ent = ent.item()
        total = total + hp.beta * ent
    vir = l_vir(bundle, batch.xs, batch.xt, hp.epsilon, hp.rho, rng)
    out.l_vir = vir.item()
    out.total = total + vir if hp.epsilon > 0 else total
    return out


def joint_objective(bundle: ModelBundle, batch: Batch, hp: HyperParams, iteration: int,
                    max_iter: int, rng: np.random.Generator) -> Tensor:
    """V_st + gamma(iter) V_mt + beta L_ent + L_vir; one descent step on it
    updates F, C and (through grad_reverse) lets D_st, D_mt ascend their terms.
    """
    return joint_terms(bundle, batch, hp, hp.gamma_at(iteration, max_iter), rng).total


def alternating_terms(bundle: ModelBundle, batch: Batch, hp: HyperParams, phase: str, gamma: float,
                      rng: np.random.Generator) -> LossTerms:
    if phase == DISCRIMINATOR:
        tv_st = v_st(bundle, batch.xs, batch.ys, batch.xt, hp.lam, detach=True)
        out = LossTerms(tv_st, v_st=tv_st.item(), gamma=gamma)
        if batch.groups is not None:
            tv_mt = v_mt(bundle, batch.xt, batch.groups, detach=True)
            out.v_mt = tv_mt.item()
            out.total = tv_st + tv_mt
        return out
    if phase != GENERATOR:
        raise ContractError(f"Unknown phase {phase!r}; choose {DISCRIMINATOR!r} or {GENERATOR!r}.")

    tv_st = v_st(bundle, batch.xs, batch.ys, batch.xt, hp.lam_generator)
    total = tv_st
    out = LossTerms(total, v_st=tv_st.item(), gamma=gamma)
    if batch.groups is not None:
        conf = v_mt_confusion(bundle, batch.xt)
        out.v_mt_confusion = conf.item()
        total = total + gamma * conf
    if hp.beta > 0:
        ent = l_ent(bundle, batch.xt)
        out.l_ent = ent.item()
        total = total + hp.beta * ent
    vir = l_vir(bundle, batch.xs, batch.xt, hp.epsilon, hp.rho, rng)
    out.l_vir = vir.item()
    out.total = total + vir if hp.epsilon > 0 else total
    return out


def alternating_objectives(bundle: ModelBundle, batch: Batch, hp: HyperParams, phase: str,
                           iteration: int, max_iter: int, rng: np.random.Generator) -> Tensor:
    """Discriminator phase: V_st + V_mt on detached features, to be maximized
    by D_st, D_mt. Generator phase: V_st + gamma V~_mt + beta L_ent + L_vir,
    to be minimized by F, C.
    """
    return alternating_terms(bundle, batch, hp, phase, hp.gamma_at(iteration, max_iter), rng).total


def source_only_terms(bundle: ModelBundle, batch: Batch) -> LossTerms:
    ce = classification_loss(bundle, batch.xs, batch.ys)
    return LossTerms(ce, v_st=ce.item(), gamma=0.0)
