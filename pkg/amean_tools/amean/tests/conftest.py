#!/usr/bin/env python3

"""
Module  amean/tests/conftest.py

  Shared fixtures: small smooth bundles, tiny datasets and configs sized to
  keep the default (not slow) test session fast.
"""
import numpy as np
import pytest

from amean import autodiff as ad
from amean.constants import ALTERNATING, JOINT
from amean.data import DomainTransformSpec, GenerationSpec, generate_blended
from amean.losses import Batch
from amean.networks import MLP, LayerSpec, build_bundle, stack_specs
from amean.parameters import DecConfig, HyperParams, NetworkConfig, TrainConfig


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def check_gradients(fn, params, tol: float = 1e-4):
    """Compare ad.grad of scalar fn() with central differences for each param."""
    analytic = ad.grad(fn(), params)
    for p, g in zip(params, analytic):
        num = ad.numeric_grad(fn, p)
        assert rel_err(g, num) < tol, f"{p.name or 'tensor'}: rel err {rel_err(g, num):.3g}"


def smooth_bundle(mode: str = JOINT, d: int = 3, m: int = 3, k: int = 2, h: int = 4, seed: int = 0):
    """A bundle whose F and trunk use sigmoid activations, so finite differences
    never straddle a ReLU kink.
    """
    bundle = build_bundle(d, m, k, h=h, mode=mode, seed=seed, f_hidden=(5,), trunk_dim=4,
                          enc_hidden=(6,), dec_hidden=(6,))
    rng = np.random.default_rng(seed + 100)
    bundle.F = MLP("F", stack_specs([d, 5, h], "sigmoid", "sigmoid"), rng)
    bundle.trunk = MLP("trunk", [LayerSpec(h, 4, "sigmoid")], rng)
    return bundle


@pytest.fixture
def joint_bundle():
    return smooth_bundle(JOINT)


@pytest.fixture
def alt_bundle():
    return smooth_bundle(ALTERNATING)


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(3)
    return Batch(xs=rng.normal(size=(6, 3)), ys=np.array([0, 1, 2, 0, 1, 2]),
                 xt=rng.normal(size=(6, 3)), groups=np.array([0, 0, 0, 1, 1, 1]))


@pytest.fixture
def small_spec():
    return GenerationSpec(
        d=2, m=3, k=2, n_source=150, n_target=200, weights=(0.5, 0.5), cluster_std=0.4,
        center_scale=4.0,
        transforms=(
            DomainTransformSpec(rotation=0.2, translation=(1.0, 0.0), label_offset=0.2, noise_std=0.1),
            DomainTransformSpec(rotation=-0.3, translation=(-1.0, 1.0), scale=(1.2, 0.9), label_offset=0.3),
        ),
    )


@pytest.fixture
def small_dataset(small_spec):
    return generate_blended(small_spec, seed=0)


def tiny_config(**changes) -> TrainConfig:
    cfg = TrainConfig(
        hyper=HyperParams(M=4, batch_size=16, lr=0.01),
        dec=DecConfig(k=2, batch_size=64, pretrain_epochs=2, max_epochs=3, kmeans_n_init=2, kmeans_max_iter=20),
        network=NetworkConfig(h=6, f_hidden=[8], trunk_dim=6, enc_hidden=[12], dec_hidden=[12]),
        outer_loops=2,
        log_every=1000,
    )
    return cfg.replace(**changes) if changes else cfg


@pytest.fixture
def tiny_train_config():
    return tiny_config()
