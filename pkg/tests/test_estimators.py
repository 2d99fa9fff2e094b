import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from faust_adapt.data import make_blobs_pair, make_two_moons_pair
from faust_adapt.estimators import DomainAdapter, SourceNetClassifier
from faust_adapt.models import head_digest


@pytest.fixture(scope="module")
def fitted_source():
    src, tgt = make_two_moons_pair(500, rotation_deg=25.0, noise=0.1, seed=3)
    clf = SourceNetClassifier(max_epochs=50, seed=1).fit(src.samples, src.labels)
    return clf, src, tgt


class TestSourceNetClassifier:
    def test_fit_predict_source_domain(self, fitted_source):
        clf, src, _ = fitted_source
        acc = (clf.predict(src.samples) == src.labels).mean()
        assert acc >= 0.95

    def test_predict_proba_rows_on_simplex(self, fitted_source):
        clf, src, _ = fitted_source
        proba = clf.predict_proba(src.samples[:20])
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_not_fitted_raises(self):
        with pytest.raises(NotFittedError):
            SourceNetClassifier().predict(np.zeros((2, 2)))

    def test_get_params_roundtrip_clone(self):
        clf = SourceNetClassifier(label_smoothing=0.2, max_epochs=7, seed=4)
        cloned = clone(clf)
        assert cloned.get_params() == clf.get_params()

    def test_label_encoding_arbitrary_classes(self):
        src, _ = make_blobs_pair(400, n_classes=3, seed=2)
        labels = np.array(["red", "green", "blue"])[src.labels]
        clf = SourceNetClassifier(max_epochs=10, seed=0).fit(src.samples, labels)
        preds = clf.predict(src.samples[:10])
        assert set(preds) <= {"red", "green", "blue"}

    def test_input_validation(self):
        clf = SourceNetClassifier()
        with pytest.raises(ValueError, match="non-finite"):
            clf.fit(np.array([[np.nan, 1.0]]), np.array([0]))


class TestDomainAdapter:
    def test_adapts_without_labels(self, fitted_source):
        clf, _, tgt = fitted_source
        adapter = DomainAdapter(source=clf, max_epochs=2, seed=0)
        adapter.fit(tgt.samples)
        preds = adapter.predict(tgt.samples[:50])
        assert preds.shape == (50,)
        assert hasattr(adapter, "run_log_")

    def test_source_estimator_not_mutated(self, fitted_source):
        clf, _, tgt = fitted_source
        digest_before = head_digest(clf.model_)
        params_before = [p.data.copy() for _, p in clf.model_.named_parameters()]
        DomainAdapter(source=clf, max_epochs=2, seed=0).fit(tgt.samples)
        assert head_digest(clf.model_) == digest_before
        for (_, p), before in zip(clf.model_.named_parameters(), params_before):
            np.testing.assert_array_equal(p.data, before)

    def test_head_frozen_in_adapted_model(self, fitted_source):
        clf, _, tgt = fitted_source
        adapter = DomainAdapter(source=clf, max_epochs=2, seed=0).fit(tgt.samples)
        assert head_digest(adapter.model_) == head_digest(clf.model_)

    def test_checkpoint_path_source(self, fitted_source, tmp_path):
        clf, _, tgt = fitted_source
        path = str(tmp_path / "src.fckpt")
        clf.save(path)
        adapter = DomainAdapter(source=path, max_epochs=1, seed=0).fit(tgt.samples)
        assert adapter.predict(tgt.samples[:5]).shape == (5,)

    def test_missing_source_rejected(self):
        with pytest.raises(ValueError, match="source"):
            DomainAdapter().fit(np.zeros((70, 2)))

    def test_sklearn_param_surface(self):
        adapter = DomainAdapter(alpha=0.8, beta=0.2, gamma=1, views=3)
        params = adapter.get_params()
        assert params["alpha"] == 0.8 and params["gamma"] == 1
        cloned = clone(adapter)
        assert cloned.get_params() == params

    def test_gamma_validated_at_fit(self, fitted_source):
        clf, _, tgt = fitted_source
        with pytest.raises(ValueError, match="gamma"):
            DomainAdapter(source=clf, gamma=3, max_epochs=1).fit(tgt.samples)


def test_raster_shape_path():
    from faust_adapt.data import make_tiny_digits_pair

    src, tgt = make_tiny_digits_pair(500, seed=1)
    flat_src = src.samples.reshape(len(src), -1)
    clf = SourceNetClassifier(max_epochs=6, raster_shape=(16, 16), seed=0)
    clf.fit(flat_src, src.labels)
    proba = clf.predict_proba(tgt.samples.reshape(len(tgt), -1)[:10])
    assert proba.shape == (10, 4)
