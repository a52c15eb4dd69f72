import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvib import data, evaluation
from dvib.evaluation import adjusted_rand_index, train_probe
from dvib.model import DvibModel, ModelDims


def pair_count_ari(pred, truth):
    """Brute-force oracle: enumerate all sample pairs."""
    n = len(pred)
    same_both = same_pred = same_truth = 0
    for i, j in itertools.combinations(range(n), 2):
        p, t = pred[i] == pred[j], truth[i] == truth[j]
        same_both += p and t
        same_pred += p
        same_truth += t
    total = n * (n - 1) / 2
    expected = same_pred * same_truth / total
    max_index = 0.5 * (same_pred + same_truth)
    if max_index == expected:
        return 1.0
    return (same_both - expected) / (max_index - expected)


def two_clusters(rng, n=400):
    labels = rng.integers(0, 2, n)
    x = rng.normal(scale=0.3, size=(n, 2)) + np.where(labels[:, None] == 1, [3.0, 3.0], [-3.0, -3.0])
    return x, labels


def test_separable_clusters(rng):
    x, labels = two_clusters(rng)
    tr, te = data.train_test_split(len(x), 0)
    probe = train_probe(x[tr], labels[tr])
    assert evaluation.accuracy(probe.predict(x[te]), labels[te]) == 1.0


def test_shuffled_labels_at_chance(rng):
    n, k = 3000, 4
    x = rng.normal(size=(n, 5))
    labels = rng.permutation(np.arange(n) % k)
    tr, te = data.train_test_split(n, 1)
    acc = evaluation.accuracy(train_probe(x[tr], labels[tr]).predict(x[te]), labels[te])
    assert abs(acc - 1 / k) <= 3 * math.sqrt((1 / k) * (1 - 1 / k) / len(te))


def test_duplicated_columns(rng):
    x, labels = two_clusters(rng)
    doubled = np.hstack([x, x])
    a = train_probe(doubled, labels, seed=3).predict(doubled)
    b = train_probe(doubled, labels, seed=3).predict(doubled)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, train_probe(x, labels, seed=3).predict(x))


def test_single_class_rejected():
    with pytest.raises(ValueError, match="two classes"):
        train_probe(np.ones((5, 2)), np.zeros(5, dtype=int))


def test_probe_predicts_original_label_values(rng):
    x, labels = two_clusters(rng)
    probe = train_probe(x, labels * 5 + 2)
    assert set(probe.predict(x)) <= {2, 7}


# ---------------------------------------------------------------------------


def test_ari_identity_and_permutation():
    truth = np.array([0, 0, 1, 1, 2, 2, 2, 1])
    assert adjusted_rand_index(truth, truth) == 1.0
    assert adjusted_rand_index(np.array([2, 0, 1])[truth], truth) == 1.0


def test_ari_hand_contingency():
    pred, truth = [0, 0, 1, 1, 2, 2], [0, 0, 0, 1, 1, 1]
    # contingency rows (pred) x cols (truth): [[2,0],[1,1],[0,2]]
    index = 1 + 0 + 0 + 0 + 0 + 1
    rows = 3 * 1
    cols = 3 + 3
    expected = rows * cols / 15
    hand = (index - expected) / (0.5 * (rows + cols) - expected)
    assert adjusted_rand_index(pred, truth) == pytest.approx(hand, abs=1e-15)
    assert hand == pytest.approx(0.24242424242424243)


def test_ari_random_labelings_match_pair_oracle():
    r = np.random.default_rng(77)
    for _ in range(100):
        n = int(r.integers(2, 40))
        pred, truth = r.integers(0, int(r.integers(1, 6)), n), r.integers(0, int(r.integers(1, 6)), n)
        assert abs(adjusted_rand_index(pred, truth) - pair_count_ari(pred, truth)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=40), st.permutations(range(5)), st.integers(0, 2**31))
def test_ari_properties(labels, perm, seed):
    x = np.array(labels)
    other = np.random.default_rng(seed).integers(0, 3, len(x))
    if len(set(labels)) >= 2:
        assert adjusted_rand_index(x, x) == pytest.approx(1.0)
    relabeled = np.array(perm)[x]
    assert adjusted_rand_index(relabeled, other) == pytest.approx(adjusted_rand_index(x, other), abs=1e-12)
    assert adjusted_rand_index(other, relabeled) == pytest.approx(adjusted_rand_index(other, x), abs=1e-12)


def test_ari_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_factor():
    return data.gen_factor_dataset(n=2000, d_x=24, d_y=24, seed=1)


def _model(ds, seed=0):
    return DvibModel(ModelDims(ds.d_x, ds.d_y, d_s=8, d_p=4, hidden=(32,)), np.random.default_rng(seed))


def test_grid_shape(small_factor):
    grid = evaluation.disentanglement_grid(_model(small_factor), small_factor, probe_epochs=50)
    assert len(grid) == 12
    cells = {(r.representation, r.label_set) for r in grid}
    assert cells == set(itertools.product(evaluation.REPRESENTATIONS, evaluation.LABEL_SETS))
    assert all(r.n_test == 400 and 0 <= r.accuracy <= 1 and -1 <= r.ari <= 1 for r in grid)


def test_grid_null_models(small_factor):
    # encoders whose heads ignore the input carry no label information
    blind = _model(small_factor)
    for name in ("enc_x_s", "enc_x_p", "enc_y_s", "enc_y_p"):
        getattr(blind, name).head_mean.weight[:] = 0.0
    for r in evaluation.disentanglement_grid(blind, small_factor, probe_epochs=100):
        assert abs(r.ari) <= 0.05
    # a random network on labels that are independent of both views
    rng = np.random.default_rng(0)
    shuffled = data.MultiviewDataset(
        small_factor.x, small_factor.y, rng.permutation(small_factor.shared_label),
        rng.permutation(small_factor.private_label_x), rng.permutation(small_factor.private_label_y),
    )
    for r in evaluation.disentanglement_grid(_model(small_factor), shuffled, probe_epochs=100):
        assert abs(r.ari) <= 0.05


def test_grid_deterministic(small_factor):
    m = _model(small_factor)
    a = evaluation.grid_to_csv(evaluation.disentanglement_grid(m, small_factor, probe_epochs=50))
    b = evaluation.grid_to_csv(evaluation.disentanglement_grid(m, small_factor, probe_epochs=50))
    assert a == b


def test_grid_csv_round_trip():
    reports = [evaluation.ProbeReport("z_x_s", "shared", 0.5, 0.25, 10)]
    text = evaluation.grid_to_csv(reports)
    assert text.splitlines()[0] == "representation,label_set,accuracy,ari,n_test"
    assert evaluation.grid_from_csv(text) == reports


def test_best_label_sets():
    reports = [
        evaluation.ProbeReport("z_x_p", "shared", 0.3, 0.0, 10),
        evaluation.ProbeReport("z_x_p", "private_x", 0.9, 0.8, 10),
        evaluation.ProbeReport("z_x_p", "private_y", 0.25, 0.0, 10),
    ]
    assert evaluation.best_label_sets(reports) == {"z_x_p": "private_x"}


def test_overlapping_split_rejected(small_factor):
    idx = np.arange(10)
    with pytest.raises(AssertionError):
        evaluation.disentanglement_grid(_model(small_factor), small_factor, split=(idx, idx), probe_epochs=5)
