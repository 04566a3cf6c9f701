import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from eyemod import synth
from eyemod.estimators import ConvNetClassifier, EyeDiagramTransformer


def frames(n=3, seed=0):
    out = []
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        out.append(synth.modulate(synth.ModulationScheme.QPSK,
                                  synth.FrameSpec(seed=seed + i), rng))
    return out


def blob_data(n_per_class=12, seed=0):
    """Two trivially separable image classes: bright top vs bright bottom."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 0.2, size=(2 * n_per_class, 16, 24, 2))
    x[:n_per_class, :8] += 0.7
    x[n_per_class:, 8:] += 0.7
    y = np.array(["top"] * n_per_class + ["bottom"] * n_per_class)
    return x.astype(np.float32), y


def test_transformer_shape():
    t = EyeDiagramTransformer(out_h=32, out_w=64, render_h=32, render_w=64)
    out = t.fit_transform(frames(3))
    assert out.shape == (3, 32, 64, 2)
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_transformer_is_stateless_and_cloneable():
    t = EyeDiagramTransformer(out_h=16, out_w=16)
    params = t.get_params()
    assert params["out_h"] == 16
    assert clone(t).get_params() == params


def test_classifier_fits_separable_blobs():
    x, y = blob_data()
    clf = ConvNetClassifier(stem_channels=4, block_channels=(8,),
                            epochs=30, batch_size=8, learning_rate=0.01,
                            init_scale=0.3, random_state=0)
    clf.fit(x, y)
    assert set(clf.classes_) == {"top", "bottom"}
    assert (clf.predict(x) == y).mean() == 1.0
    proba = clf.predict_proba(x)
    assert proba.shape == (len(x), 2)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)


def test_classifier_rejects_bad_input_shape():
    clf = ConvNetClassifier()
    with pytest.raises(ValueError, match="must be"):
        clf.fit(np.zeros((4, 16, 24)), np.zeros(4))


def test_classifier_not_fitted():
    with pytest.raises(NotFittedError):
        ConvNetClassifier().predict(np.zeros((1, 16, 24, 2)))


def test_classifier_sklearn_params_roundtrip():
    clf = ConvNetClassifier(epochs=5, batch_size=16)
    cloned = clone(clf)
    assert cloned.get_params()["epochs"] == 5
    assert cloned.get_params()["batch_size"] == 16
