import dataclasses
import struct

import numpy as np
import pytest
from oracles import separable_set

from cystseg.errors import (
    CorruptModelFile,
    FeatureLengthMismatch,
    SingleClassTrainingSet,
    TooFewSamples,
    VersionMismatch,
)
from cystseg.forest import (
    N_TREES,
    NODE_DTYPE,
    ForestModel,
    TrainingSet,
    Tree,
    load_model,
    model_bytes,
    parse_model,
    predict,
    save_model,
    train_forest,
)


@pytest.fixture(scope="module")
def separable():
    X, y = separable_set(200, 1.0, seed=3)
    return TrainingSet(X, y), train_forest(TrainingSet(X, y), seed=7)


def test_fifty_trees_and_oob(separable):
    _, m = separable
    assert m.n_trees == N_TREES == 50
    assert m.oob_accuracy >= 0.95


def test_resubstitution(separable):
    ts, m = separable
    assert np.mean((m.predict_proba(ts.X) >= 0.5) == (ts.y == 1)) >= 0.95


def test_same_seed_same_bytes(separable):
    ts, m = separable
    assert model_bytes(train_forest(ts, seed=7)) == model_bytes(m)
    assert model_bytes(train_forest(ts, seed=8)) != model_bytes(m)


def test_jobs_do_not_change_model(separable):
    ts, m = separable
    assert model_bytes(train_forest(ts, seed=7, jobs=2)) == model_bytes(m)


def test_save_load_predictions(separable, tmp_path, rng):
    _, m = separable
    save_model(m, tmp_path / "m.ocsf")
    back = load_model(tmp_path / "m.ocsf")
    X = rng.uniform(-6, 6, (100, 2))
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
    assert back.train_seed == 7 and back.format_version == 1


def test_probabilities_in_range(separable, rng):
    _, m = separable
    p = m.predict_proba(rng.normal(0, 10, (500, 2)))
    assert p.min() >= 0.0 and p.max() <= 1.0


def test_node_features_in_range(separable):
    _, m = separable
    for t in m.trees:
        assert np.all(t.nodes["feature"] < 2)


def test_single_class_and_too_few():
    X = np.random.default_rng(0).random((30, 3))
    with pytest.raises(SingleClassTrainingSet):
        train_forest(TrainingSet(X, np.ones(30, int)))
    with pytest.raises(TooFewSamples):
        train_forest(TrainingSet(X[:10], np.arange(10) % 2))


def _leaf(c0, c1):
    return (-1, 0.0, -1, -1, c0, c1)


def test_pure_cyst_forest():
    tree = Tree(np.array([_leaf(0.0, 4.0)], dtype=NODE_DTYPE))
    m = ForestModel([tree] * 3, 69, 8)
    assert predict(m, np.random.default_rng(1).random(69)) == 1.0


def test_hand_traced_tree():
    nodes = np.array([(0, 0.5, 1, 2, 3.0, 5.0), _leaf(3.0, 1.0), _leaf(0.0, 4.0)],
                     dtype=NODE_DTYPE)
    m = ForestModel([Tree(nodes)], 69, 8)
    f = np.zeros(69)
    f[0] = 0.2
    assert predict(m, f) == 0.25
    f[0] = 0.7
    assert predict(m, f) == 1.0
    with pytest.raises(FeatureLengthMismatch):
        predict(m, np.zeros(68))


def test_monotone_feature_transform(separable):
    ts, m = separable
    shifted = TrainingSet(np.exp(ts.X), ts.y)
    m2 = train_forest(shifted, seed=7)
    # splits depend only on value order, so every tree keeps its shape and counts
    for a, b in zip(m.trees, m2.trees):
        for k in ("feature", "left", "right", "count0", "count1"):
            assert np.array_equal(a.nodes[k], b.nodes[k])
    assert m2.oob_accuracy == pytest.approx(m.oob_accuracy, abs=0.02)


def test_corrupt_files(separable, tmp_path):
    _, m = separable
    raw = model_bytes(m)
    with pytest.raises(CorruptModelFile):
        parse_model(raw[:-7])
    with pytest.raises(CorruptModelFile):
        parse_model(raw[:10])
    with pytest.raises(CorruptModelFile):
        parse_model(b"XXXX" + raw[4:])
    with pytest.raises(CorruptModelFile):
        parse_model(raw + b"\0")
    future = raw[:4] + struct.pack("<I", 2) + raw[8:]
    with pytest.raises(VersionMismatch):
        parse_model(future)
    (tmp_path / "t.ocsf").write_bytes(raw[:100])
    with pytest.raises(CorruptModelFile):
        load_model(tmp_path / "t.ocsf")


def test_oob_recorded_in_file(separable):
    _, m = separable
    back = parse_model(model_bytes(m))
    assert back.oob_accuracy == m.oob_accuracy
    assert dataclasses.replace(back, trees=[]).n_trees == 0
