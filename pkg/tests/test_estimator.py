import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from kgperturb.chem import scaffold_key
from kgperturb.estimator import DeltaRegressor, ScaffoldSplitter

SMALL_NET = dict(epochs=2, batch_size=16, embed_dim=8, enc_hidden=8, delta_hidden=8, fanouts=(4, 3), seed=0)


@pytest.fixture(scope="module")
def xy(small_synth):
    data = small_synth.data
    X = np.column_stack([data.drug_ids, data.cell_ids])
    return X, data.Y


def regressor(ds, **kw):
    return DeltaRegressor(ds.graph, ds.data.baseline_ids, ds.data.baselines, **{**SMALL_NET, **kw})


@pytest.mark.parametrize("model", ["mlp", "mlp_targets", "gat"])
def test_fit_predict_shapes_and_determinism(small_synth, xy, model):
    X, y = xy
    a = regressor(small_synth, model=model).fit(X[:60], y[:60])
    pred = a.predict(X[60:80])
    assert pred.shape == (20, y.shape[1]) and np.isfinite(pred).all()
    b = regressor(small_synth, model=model).fit(X[:60], y[:60])
    np.testing.assert_array_equal(pred, b.predict(X[60:80]))


def test_zero_epochs_predicts_baseline_plus_initial_delta(small_synth, xy):
    X, y = xy
    est = regressor(small_synth, model="mlp", epochs=0).fit(X, y)
    assert len(est.history_) == 0
    assert est.predict(X[:3]).shape == (3, y.shape[1])


def test_clone_keeps_params_and_drops_fit(small_synth, xy):
    X, y = xy
    est = regressor(small_synth, model="mlp").fit(X[:40], y[:40])
    twin = clone(est)
    assert twin.get_params()["embed_dim"] == 8 and twin.get_params()["graph"].node_ids == small_synth.graph.node_ids
    assert not hasattr(twin, "model_")
    with pytest.raises(NotFittedError):
        twin.predict(X[:2])


def test_fit_requires_graph_and_baselines(xy):
    X, y = xy
    with pytest.raises(ValueError):
        DeltaRegressor().fit(X, y)


def test_x_must_be_pairs(small_synth, xy):
    X, y = xy
    with pytest.raises(ValueError):
        regressor(small_synth, model="mlp").fit(X[:, :1], y)


def test_scaffold_splitter_keeps_groups_apart(small_synth, xy):
    X, _ = xy
    splitter = ScaffoldSplitter(small_synth.graph, n_splits=3, seed=0)
    keys = np.array([scaffold_key(small_synth.graph.smiles[d]) for d in X[:, 0]], dtype=object)
    np.testing.assert_array_equal(splitter.groups(X), keys)
    folds = list(splitter.split(X))
    assert len(folds) == splitter.get_n_splits() == 3
    for train, test in folds:
        assert set(keys[train]).isdisjoint(keys[test])
        assert len(train) + len(test) == len(X)
        assert 0.75 <= len(train) / len(X) <= 0.95
    assert [t.tolist() for t, _ in folds] == [t.tolist() for t, _ in splitter.split(X)]


def test_splitter_drives_cross_validation(small_synth, xy):
    X, y = xy
    scores = cross_val_score(regressor(small_synth, model="mlp", epochs=1), X, y,
                             cv=ScaffoldSplitter(small_synth.graph, n_splits=2))
    assert scores.shape == (2,) and np.isfinite(scores).all()
