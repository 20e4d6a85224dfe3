#!/usr/bin/env python3

"""
Module  amean/tests/test_networks.py
"""
import numpy as np
import pytest

from amean import autodiff as ad
from amean.constants import ALTERNATING, JOINT
from amean.errors import CheckpointError, ConfigurationError, DimensionError
from amean.networks import (SGD, LayerSpec, MLP, build_bundle, forward_meta, load_bundle,
                            read_checkpoint_meta, save_bundle, stack_specs)


SMALL = dict(h=4, f_hidden=(5,), trunk_dim=4, enc_hidden=(6,), dec_hidden=(6,))


def test_same_seed_same_weights():
    b1 = build_bundle(3, 3, 2, seed=7, **SMALL)
    b2 = build_bundle(3, 3, 2, seed=7, **SMALL)
    b3 = build_bundle(3, 3, 2, seed=8, **SMALL)
    assert b1.checksum() == b2.checksum()
    assert b1.checksum() != b3.checksum()


def test_biases_start_at_zero():
    bundle = build_bundle(3, 3, 2, **SMALL)
    for name, p in bundle.named_parameters():
        if name.endswith(".b"):
            assert not p.data.any()


@pytest.mark.parametrize("mode,width", [(JOINT, 2), (ALTERNATING, 1)])
def test_head_shapes(mode, width):
    bundle = build_bundle(3, 4, 3, mode=mode, **SMALL)
    x = np.random.default_rng(0).normal(size=(5, 3))
    feat = bundle.features(ad.Tensor(x))
    assert feat.shape == (5, 4)
    assert bundle.discriminate_st(feat).shape == (5, width)
    assert bundle.source_prob(bundle.discriminate_st(feat)).shape == (5, 1)
    mt = bundle.discriminate_mt(feat).data
    assert mt.shape == (5, 3)
    np.testing.assert_allclose(mt.sum(axis=1), 1.0, atol=1e-12)


def test_classifier_rows_on_simplex():
    bundle = build_bundle(3, 4, 2, **SMALL)
    probs = bundle.predict_proba(np.random.default_rng(1).normal(size=(20, 3)))
    assert probs.shape == (20, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0)


def test_heads_share_the_trunk():
    bundle = build_bundle(3, 3, 2, **SMALL)
    x = ad.Tensor(np.random.default_rng(2).normal(size=(4, 3)))
    trunk = bundle.trunk.parameters()
    ps = bundle.source_prob(bundle.discriminate_st(bundle.features(x)))
    g_st = ad.grad(ad.tsum(ad.log(ps)), trunk)
    g_mt = ad.grad(ad.tsum(ad.log(bundle.discriminate_mt(bundle.features(x)))), trunk)
    assert any(np.any(g != 0) for g in g_st)
    assert any(np.any(g != 0) for g in g_mt)


def test_wrong_input_width():
    bundle = build_bundle(3, 3, 2, **SMALL)
    with pytest.raises(DimensionError):
        bundle.predict(np.ones((2, 4)))


@pytest.mark.parametrize("kwargs", [dict(k=1), dict(mode="sideways"), dict(h=0)])
def test_build_rejects(kwargs):
    args = dict(d=3, m=3, k=2, **SMALL)
    args.update(kwargs)
    with pytest.raises(ConfigurationError):
        build_bundle(**args)


def test_layer_chain_checked():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError, match="chain"):
        MLP("bad", [LayerSpec(3, 4), LayerSpec(5, 2)], rng)
    with pytest.raises(ConfigurationError):
        LayerSpec(3, 4, activation="tanh")


def test_stack_specs_output_activation():
    specs = stack_specs([3, 5, 5, 2], "relu", "softmax", dropout=0.2)
    assert [s.activation for s in specs] == ["relu", "relu", "softmax"]
    assert [s.dropout for s in specs] == [0.2, 0.2, 0.0]


def test_dropout_only_while_training():
    bundle = build_bundle(3, 3, 2, dropout=0.5, **SMALL)
    x = np.random.default_rng(3).normal(size=(6, 3))
    clean = bundle.embed_features(x)
    np.testing.assert_array_equal(clean, bundle.embed_features(x))
    bundle.dropout_rng = np.random.default_rng(0)
    noisy = bundle.features(ad.Tensor(x)).data
    bundle.dropout_rng = None
    assert not np.array_equal(clean, noisy)


def test_forward_meta_width_checked():
    bundle = build_bundle(3, 3, 2, **SMALL)
    x = np.ones((4, 3))
    feat = bundle.features(ad.Tensor(x))
    probs = bundle.classify(feat)
    assert forward_meta(bundle.U1, x, feat, probs).shape == (4, 2)
    with pytest.raises(DimensionError):
        forward_meta(bundle.U1, x, feat, np.ones((4, 2)))
    with pytest.raises(DimensionError):
        forward_meta(bundle.U1, x, feat, np.ones((3, 3)))


def test_sgd_momentum_step():
    p = ad.parameter(np.array([1.0, -1.0]))
    opt = SGD([p], lr=0.1, momentum=0.5)
    for _ in range(2):
        opt.zero_grad()
        ad.backward(ad.tsum(p * np.array([1.0, 2.0])))
        opt.step()
    # v1 = -0.1 g, v2 = 0.5 v1 - 0.1 g = -0.15 g
    np.testing.assert_allclose(p.data, [1.0 - 0.25, -1.0 - 0.5])


class TestCheckpoint:

    @pytest.mark.parametrize("mode", [JOINT, ALTERNATING])
    def test_round_trip_is_bit_exact(self, tmp_path, mode):
        bundle = build_bundle(3, 4, 3, mode=mode, seed=11, **SMALL)
        bundle.centroids.data = np.random.default_rng(0).normal(size=(3, 3))
        fp = save_bundle(bundle, tmp_path / "run" / "model.amean", extra={"variant": "amean", "seed": "11"})
        loaded = load_bundle(fp)
        assert loaded.checksum() == bundle.checksum()
        assert loaded.mode == mode
        assert loaded.meta["variant"] == "amean"
        x = np.random.default_rng(5).normal(size=(7, 3))
        np.testing.assert_array_equal(loaded.predict_proba(x), bundle.predict_proba(x))

    def test_meta_readable_without_loading(self, tmp_path):
        fp = save_bundle(build_bundle(3, 3, 2, **SMALL), tmp_path / "m.amean", extra={"split": "test"})
        meta = read_checkpoint_meta(fp)
        assert meta["d"] == "3"
        assert meta["split"] == "test"

    def test_layer_mismatch_names_the_layer(self, tmp_path):
        fp = save_bundle(build_bundle(3, 3, 2, **SMALL), tmp_path / "m.amean")
        raw = fp.read_bytes().replace(b"\nf_hidden 5\n", b"\nf_hidden 7\n", 1)
        fp.write_bytes(raw)
        with pytest.raises(CheckpointError) as excinfo:
            load_bundle(fp)
        assert excinfo.value.layer == "F.0.W"

    def test_truncated_payload(self, tmp_path):
        fp = save_bundle(build_bundle(3, 3, 2, **SMALL), tmp_path / "m.amean")
        fp.write_bytes(fp.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_bundle(fp)

    def test_not_a_checkpoint(self, tmp_path):
        fp = tmp_path / "junk.amean"
        fp.write_text("hello\n")
        with pytest.raises(CheckpointError):
            load_bundle(fp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_bundle(tmp_path / "nope.amean")
