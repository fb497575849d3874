import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventdart.classify import (ClassifierPipeline, MulticlassModel, SvmModel, hinge_objective,
                                read_model, svm_score, svm_train, svm_update_online,
                                train_classifier, train_multiclass, write_model)
from eventdart.dart import build_grid
from eventdart.errors import DegenerateTraining, NoEvidence, ShapeError
from eventdart.synth import SHAPES, ShapeTrack, SyntheticSceneConfig, synth_generate


def test_two_point_toy_separates():
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])
    m = svm_train(X, np.array([1.0, -1.0]), C=10.0, epochs=200)
    assert svm_score(m, X[0]) > 0 > svm_score(m, X[1])
    assert m.w[0] > 0 and abs(m.w[1]) < 1e-12


def test_label_flip_is_antisymmetric(rng):
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    a = svm_train(X, y, seed=5)
    b = svm_train(X, -y, seed=5)
    assert np.allclose(a.w, -b.w, atol=1e-12) and a.b == pytest.approx(-b.b, abs=1e-12)


def test_separable_blobs_reach_zero_hinge(rng):
    X = np.vstack([rng.normal(3, 0.3, (30, 2)), rng.normal(-3, 0.3, (30, 2))])
    y = np.r_[np.ones(30), -np.ones(30)]
    m = svm_train(X, y, C=100.0, epochs=100)
    assert np.all(y * svm_score(m, X) >= 1 - 1e-6)
    assert m.objective[-1] < 0.01


def test_score_matches_dot_product(rng):
    m = SvmModel(rng.normal(size=5), 0.3)
    psi = rng.random((4, 5))
    assert np.allclose(svm_score(m, psi), psi @ m.w + 0.3, atol=1e-15)
    with pytest.raises(ShapeError):
        svm_score(m, np.zeros(4))


def test_objective_oracle(rng):
    m = SvmModel(np.array([1.0, -2.0]), 0.5, lam=0.1)
    X = np.array([[1.0, 1.0], [0.0, -1.0]])
    y = np.array([1.0, -1.0])
    # margins: -0.5 and -2.5 -> hinge 1.5 and 3.5
    assert hinge_objective(m, X, y) == pytest.approx(0.05 * 5.25 + 2.5)


def test_online_update_examples():
    m = SvmModel(np.array([0.0, 0.0]), 0.0, lam=0.5)
    svm_update_online(m, np.array([1.0, 2.0]), +1, rate=0.1)
    assert m.w.tolist() == pytest.approx([0.1, 0.2]) and m.b == pytest.approx(0.1)
    m2 = SvmModel(np.array([10.0, 0.0]), 0.0, lam=0.5)
    svm_update_online(m2, np.array([1.0, 0.0]), +1, rate=0.1)
    # margin holds: shrink only
    assert m2.w.tolist() == pytest.approx([9.5, 0.0]) and m2.steps == 1


def test_online_rate_is_frozen_fraction(rng):
    X = rng.normal(size=(20, 2))
    m = svm_train(X, np.where(X[:, 0] > 0, 1.0, -1.0), epochs=3)
    assert m.final_step == pytest.approx(1 / (m.lam * m.steps))
    assert m.online_rate == pytest.approx(0.01 * m.final_step)


def test_score_mean():
    m = SvmModel(np.zeros(1))
    assert m.score_mean is None
    m.record_score(1.0)
    m.record_score(2.0)
    assert m.score_mean == 1.5


def test_training_errors():
    with pytest.raises(DegenerateTraining):
        svm_train(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(ShapeError):
        svm_train(np.zeros((3, 2)), np.array([1.0, -1.0]))
    with pytest.raises(DegenerateTraining):
        train_multiclass(np.zeros((3, 2)), [1, 1, 1])


def test_train_is_bit_reproducible(rng):
    X = rng.normal(size=(50, 4))
    y = np.where(X[:, 1] > 0, 1.0, -1.0)
    a, b = svm_train(X, y, seed=3), svm_train(X, y, seed=3)
    assert a.w.tobytes() == b.w.tobytes() and a.b == b.b


def test_multiclass_tie_goes_to_lowest_label():
    m = MulticlassModel([7, 2, 5], [SvmModel(np.zeros(2), 1.0) for _ in range(3)])
    assert m.predict(np.zeros(2)) == 2


@given(st.floats(0.01, 100), st.integers(0, 2 ** 31 - 1))
def test_argmax_invariant_to_positive_scaling(c, seed):
    r = np.random.default_rng(seed)
    models = [SvmModel(r.normal(size=3), float(r.normal())) for _ in range(4)]
    scaled = [SvmModel(m.w * c, m.b * c) for m in models]
    psi = r.normal(size=(10, 3))
    assert np.array_equal(MulticlassModel([0, 1, 2, 3], models).predict(psi),
                          MulticlassModel([0, 1, 2, 3], scaled).predict(psi))


def test_multiclass_blobs(rng):
    centres = np.array([[0, 5], [5, 0], [-5, -5]])
    X = np.vstack([rng.normal(c, 0.5, (20, 2)) for c in centres])
    labels = np.repeat([3, 1, 8], 20)
    m = train_multiclass(X, labels)
    assert np.mean(m.predict(X) == labels) == 1.0


def test_model_round_trip(tmp_path, rng):
    m = train_multiclass(rng.normal(size=(30, 3)), np.repeat([0, 1, 2], 10))
    m.models[0].record_score(0.25)
    write_model(tmp_path / "m.svm", m)
    back = read_model(tmp_path / "m.svm")
    assert back.labels == m.labels
    for a, b in zip(m.models, back.models):
        assert a.w.tobytes() == b.w.tobytes() and a.b == b.b and a.score_sum == b.score_sum


# -- toy pipeline ---------------------------------------------------------------------

def toy_set(seed, n_per=6):
    streams, labels = [], []
    r = np.random.default_rng(seed)
    for lab, name in enumerate(["triangle", "square", "star"]):
        for _ in range(n_per):
            cx, cy = r.uniform(14, 20, 2)
            cfg = SyntheticSceneConfig(ShapeTrack(SHAPES[name], ((0, cx, cy),),
                                                  angle0=float(r.uniform(-0.2, 0.2))),
                                       width=34, height=34, duration_us=300_000, edge_rate=0.05)
            s, _, _ = synth_generate(cfg, seed=int(r.integers(1 << 30)))
            streams.append(s)
            labels.append(lab)
    return streams, labels


@pytest.fixture(scope="module")
def toy_pipeline():
    streams, labels = toy_set(0)
    return train_classifier(streams, labels, K=40, seed=0, max_descriptors=20_000,
                            kmeans_iters=20, theta_noise=5000, theta_ref=1000)


def test_toy_pipeline_classifies(toy_pipeline):
    streams, labels = toy_set(1, 4)
    pred = [toy_pipeline.classify(s) for s in streams]
    assert np.mean(np.array(pred) == np.array(labels)) >= 0.8


def test_pipeline_is_pure(toy_pipeline):
    s = toy_set(2, 1)[0][0]
    assert np.array_equal(toy_pipeline.represent(s), toy_pipeline.represent(s))


def test_prefix_accuracy_trend(toy_pipeline):
    streams, labels = toy_set(3, 4)
    ends = [50_000, 150_000, 300_000]
    acc = []
    for k, end in enumerate(ends):
        preds = [toy_pipeline.model.predict(toy_pipeline.represent_prefixes(s, [end])[0])
                 for s in streams]
        acc.append(np.mean(np.array(preds) == np.array(labels)))
    assert acc[-1] >= acc[0]


def test_prefixes_match_truncated_streams(toy_pipeline):
    s = toy_set(4, 1)[0][0]
    end = 120_000
    t0 = int(s.t[0])
    trunc = s.select(s.t < t0 + end)
    assert np.allclose(toy_pipeline.represent_prefixes(s, [end])[0],
                       toy_pipeline.represent(trunc), atol=1e-12)


def test_empty_stream_raises(toy_pipeline):
    s = toy_set(5, 1)[0][0]
    with pytest.raises(NoEvidence):
        toy_pipeline.represent(s.select(np.zeros(len(s), bool)))
