#!/usr/bin/env python3

"""
Module  amean/tests/test_data.py
"""
from dataclasses import fields
from pathlib import Path

import numpy as np
import pytest

from amean.data import (DomainTransformSpec, GenerationSpec, TrainerView, generate_blended,
                        largest_remainder, load_dataset, load_generation_spec, save_dataset)
from amean.errors import ConfigurationError, GenerationError, ParseError, SchemaError


TOOL_PARAM = Path(__file__).parents[2].joinpath("tool_param")

HAND_WRITTEN = """role,split,x_1,x_2,class,subtarget
source,train,0.5,-1.25,0,-1
source,train,1.0,2.0,1,-1
source,train,-3.5,0.125,0,-1
source,train,4.0,4.0,1,-1
target,train,0.1,0.2,0,0
target,train,0.30000000000000004,-0.7,1,0
target,test,10.0,-10.0,1,0
target,train,1e-3,2.5e2,0,1
target,test,-0.0,7.75,1,1
target,train,3.0,3.0,0,1
"""


def _shift_spec(n_source=2000, n_target=2000):
    return GenerationSpec(
        d=2, m=4, k=2, n_source=n_source, n_target=n_target, cluster_std=0.5,
        transforms=(DomainTransformSpec(), DomainTransformSpec(translation=(3.0, -2.0))),
    )


class TestGenerate:

    def test_equal_weights_split_exactly(self):
        spec = GenerationSpec(d=2, m=4, k=2, n_target=1000, weights=(0.5, 0.5),
                              transforms=(DomainTransformSpec(), DomainTransformSpec()))
        ds = generate_blended(spec, seed=0)
        sub = np.concatenate([ds.oracle("train").subtarget, ds.oracle("test").subtarget])
        assert np.bincount(sub).tolist() == [500, 500]
        np.testing.assert_allclose(ds.pi, [0.5, 0.5])

    def test_sizes_follow_weights(self):
        spec = load_generation_spec(TOOL_PARAM / "hard_task.json")
        ds = generate_blended(spec, seed=1)
        assert ds.n_target == 1600
        assert ds.n_source == 1200
        counts = np.bincount(np.concatenate([ds.oracle(s).subtarget for s in ("train", "test")]))
        assert counts.tolist() == [640, 480, 320, 160]
        assert ds.pi.sum() == pytest.approx(1.0)

    def test_identity_and_translated_means(self):
        ds = generate_blended(_shift_spec(), seed=3)
        x = np.vstack([ds.oracle(s).x for s in ("train", "test")])
        sub = np.concatenate([ds.oracle(s).subtarget for s in ("train", "test")])
        src_mean = ds.source_x.mean(axis=0)
        for j, shift in enumerate([(0.0, 0.0), (3.0, -2.0)]):
            xj = x[sub == j]
            # both sides carry the same class composition, so only the cluster noise differs
            se = 0.5 * np.sqrt(1.0 / len(xj) + 1.0 / ds.n_source)
            diff = xj.mean(axis=0) - src_mean
            assert np.all(np.abs(diff - np.array(shift)) < 3 * se)

    def test_test_split_is_stratified(self, small_dataset, small_spec):
        test = small_dataset.oracle("test")
        train = small_dataset.oracle("train")
        for j in range(small_spec.k):
            for c in range(small_spec.m):
                n_test = np.sum((test.subtarget == j) & (test.y == c))
                n_all = n_test + np.sum((train.subtarget == j) & (train.y == c))
                assert n_test == round(0.2 * n_all)

    def test_same_seed_same_bytes(self, small_spec, tmp_path):
        a = save_dataset(generate_blended(small_spec, seed=5), tmp_path / "a.csv")
        b = save_dataset(generate_blended(small_spec, seed=5), tmp_path / "b.csv")
        c = save_dataset(generate_blended(small_spec, seed=6), tmp_path / "c.csv")
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_label_offset_moves_class_toward_its_neighbour(self):
        x = np.zeros((2, 2))
        labels = np.array([0, 1])
        centers = np.array([[0.0, 0.0], [4.0, 0.0]])
        out = DomainTransformSpec(label_offset=0.5).apply(x, labels, centers, 0, np.random.default_rng(0))
        np.testing.assert_allclose(out, [[2.0, 0.0], [-2.0, 0.0]])

    def test_infeasible_separation(self):
        spec = GenerationSpec(d=2, m=40, k=2, n_source=400, cluster_std=1.0, center_scale=0.5,
                              transforms=(DomainTransformSpec(), DomainTransformSpec()))
        with pytest.raises(GenerationError, match="100 attempts"):
            generate_blended(spec, seed=0)

    def test_explicit_centers(self):
        centers = ((-3.0, 0.0), (3.0, 0.0))
        spec = GenerationSpec(d=2, m=2, k=2, n_source=400, cluster_std=0.5, centers=centers,
                              transforms=(DomainTransformSpec(), DomainTransformSpec()))
        ds = generate_blended(spec, seed=0)
        for c, center in enumerate(centers):
            np.testing.assert_allclose(ds.source_x[ds.source_y == c].mean(axis=0), center, atol=0.15)

    def test_explicit_centers_keep_the_separation(self):
        spec = GenerationSpec(d=2, m=2, k=2, cluster_std=0.5, centers=((0.0, 0.0), (1.0, 0.0)),
                              transforms=(DomainTransformSpec(), DomainTransformSpec()))
        with pytest.raises(GenerationError, match="closer"):
            generate_blended(spec, seed=0)

    @pytest.mark.parametrize("centers", [((0.0, 0.0),), ((0.0, 0.0), (4.0,))])
    def test_explicit_centers_shape(self, centers):
        with pytest.raises(ConfigurationError):
            GenerationSpec.from_dict({"m": 2, "centers": [list(c) for c in centers], "transforms": [{}, {}]})

    def test_default_task_layout(self):
        spec = load_generation_spec(TOOL_PARAM / "default_task.json")
        ds = generate_blended(spec, seed=0)
        assert ds.n_target == 1000 and ds.k == 2
        # classes differ along x_1, sub-targets along x_2
        assert np.all(np.abs(ds.source_x[:, 1]) < 4)
        x = np.vstack([ds.oracle(s).x for s in ("train", "test")])
        sub = np.concatenate([ds.oracle(s).subtarget for s in ("train", "test")])
        assert np.all(x[sub == 0, 1] > 4) and np.all(x[sub == 1, 1] < -4)
        means = [ds.source_x[ds.source_y == c, 0].mean() for c in range(ds.m)]
        np.testing.assert_allclose(means, [-4.5, -1.5, 1.5, 4.5], atol=0.15)

    @pytest.mark.parametrize("kwargs", [
        dict(weights=(0.7, 0.7)),
        dict(k=3),
        dict(d=1),
        dict(test_fraction=1.0),
    ])
    def test_invalid_spec(self, kwargs):
        args = dict(d=2, m=3, k=2, transforms=(DomainTransformSpec(), DomainTransformSpec()))
        args.update(kwargs)
        with pytest.raises(ConfigurationError):
            GenerationSpec(**args)

    def test_zero_scale_rejected(self):
        with pytest.raises(ConfigurationError):
            DomainTransformSpec(scale=(1.0, 0.0))

    def test_unknown_spec_key(self):
        with pytest.raises(SchemaError) as excinfo:
            GenerationSpec.from_dict({"d": 2, "colour": "red", "transforms": []})
        assert excinfo.value.name == "colour"

    def test_scalar_transform_values_broadcast(self):
        spec = load_generation_spec(TOOL_PARAM / "hard_task.json")
        np.testing.assert_array_equal(spec.transforms[0].vector(spec.transforms[0].translation, 16, 0.0),
                                      np.full(16, 0.8))

    def test_largest_remainder(self):
        assert largest_remainder(10, np.array([1 / 3, 1 / 3, 1 / 3])).tolist() == [4, 3, 3]
        assert largest_remainder(1600, np.array([0.4, 0.3, 0.2, 0.1])).sum() == 1600


class TestFirewall:

    def test_trainer_view_has_no_hidden_fields(self, small_dataset):
        names = {f.name for f in fields(TrainerView)}
        assert names == {"source_x", "source_y", "target_x", "m", "d"}
        view = small_dataset.trainer_view()
        assert view.target_x.shape == (len(small_dataset.oracle("train").x), 2)
        np.testing.assert_array_equal(view.target_x, small_dataset.oracle("train").x)

    def test_unknown_split(self, small_dataset):
        with pytest.raises(ValueError):
            small_dataset.oracle("validation")


class TestFileIO:

    def test_round_trip(self, small_dataset, tmp_path):
        loaded = load_dataset(save_dataset(small_dataset, tmp_path / "ds.csv"))
        assert loaded.equals(small_dataset)

    def test_hand_written_file(self, tmp_path):
        fp = tmp_path / "hand.csv"
        fp.write_text(HAND_WRITTEN)
        ds = load_dataset(fp)
        assert (ds.d, ds.m, ds.k) == (2, 2, 2)
        np.testing.assert_array_equal(ds.source_x, [[0.5, -1.25], [1.0, 2.0], [-3.5, 0.125], [4.0, 4.0]])
        np.testing.assert_array_equal(ds.source_y, [0, 1, 0, 1])
        train, test = ds.oracle("train"), ds.oracle("test")
        np.testing.assert_array_equal(train.x, [[0.1, 0.2], [0.30000000000000004, -0.7], [1e-3, 250.0],
                                                [3.0, 3.0]])
        np.testing.assert_array_equal(train.y, [0, 1, 0, 0])
        np.testing.assert_array_equal(train.subtarget, [0, 0, 1, 1])
        np.testing.assert_array_equal(test.x, [[10.0, -10.0], [-0.0, 7.75]])
        np.testing.assert_array_equal(test.subtarget, [0, 1])
        np.testing.assert_allclose(ds.pi, [0.5, 0.5])

    def test_missing_column_is_named(self, tmp_path):
        fp = tmp_path / "bad.csv"
        fp.write_text(HAND_WRITTEN.replace("subtarget", "domain", 1))
        with pytest.raises(SchemaError) as excinfo:
            load_dataset(fp)
        assert excinfo.value.name == "subtarget"

    def test_bad_value_reports_the_line(self, tmp_path):
        fp = tmp_path / "bad.csv"
        fp.write_text(HAND_WRITTEN.replace("4.0,4.0,1", "4.0,four,1"))
        with pytest.raises(ParseError) as excinfo:
            load_dataset(fp)
        assert excinfo.value.line == 5
        assert "x_2" in str(excinfo.value)

    def test_bad_role(self, tmp_path):
        fp = tmp_path / "bad.csv"
        fp.write_text(HAND_WRITTEN.replace("target,test,10.0", "oracle,test,10.0"))
        with pytest.raises(ParseError) as excinfo:
            load_dataset(fp)
        assert excinfo.value.line == 8

    def test_ragged_row(self, tmp_path):
        fp = tmp_path / "bad.csv"
        fp.write_text(HAND_WRITTEN + "target,train,1.0,2.0,0,1,extra,fields\n")
        with pytest.raises(ParseError):
            load_dataset(fp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.csv")
