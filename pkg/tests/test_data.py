import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slm.data import (
    Dataset,
    SynthConfig,
    bin_labels,
    load_csv,
    normalize_split,
    split_sizes,
    synth_generate,
    synth_scores,
    write_csv,
)
from slm.errors import InvalidInputError


def test_load_small_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,label\n1,2,0\n3.5,-4,1\n0,0,1\n")
    ds = load_csv(path, "label")
    np.testing.assert_array_equal(ds.x, [[1, 2], [3.5, -4], [0, 0]])
    np.testing.assert_array_equal(ds.y, [0, 1, 1])
    assert ds.feature_names == ["a", "b"]


def test_bad_cell_names_row_and_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,label\n1,2,0\n3,oops,1\n")
    with pytest.raises(InvalidInputError, match=r"row 3, column 'b'"):
        load_csv(path, "label")


def test_missing_label_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError, match="label column"):
        load_csv(path, "label")


def test_nan_rejected(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,label\nnan,1\n")
    with pytest.raises(InvalidInputError, match="non-finite"):
        load_csv(path, "label")


def test_csv_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((20, 4)) * 1e3, rng.standard_normal(20), task="regression")
    write_csv(ds, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv", "label", task="regression")
    np.testing.assert_array_equal(back.x, ds.x)
    np.testing.assert_array_equal(back.y, ds.y)


def test_classification_labels_round_trip(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("f,label\n1,5\n2,-1\n3,5\n")
    ds = load_csv(path, "label")
    np.testing.assert_array_equal(ds.y, [1, 0, 1])
    write_csv(ds, tmp_path / "c2.csv")
    np.testing.assert_array_equal(load_csv(tmp_path / "c2.csv", "label").class_values, [-1.0, 5.0])


def test_split_sizes():
    assert split_sizes(10) == (7, 1, 2)
    with pytest.raises(InvalidInputError):
        split_sizes(10, (0.5, 0.5, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 500))
def test_split_sizes_sum_to_n(n):
    assert sum(split_sizes(n)) == n


def test_normalization_uses_train_statistics():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((200, 3)) * [1, 5, 0] + [0, 3, 7]
    ds = normalize_split(Dataset(x, rng.integers(0, 2, 200)), seed=4)
    xt, _ = ds.part("train")
    np.testing.assert_allclose(xt[:, :2].mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(xt[:, :2].std(axis=0), 1, atol=1e-9)
    assert np.all(ds.x[:, 2] == 0)  # constant column
    assert sorted(np.unique(ds.split)) == ["test", "train", "val"]
    assert (ds.split == "train").sum() == 140


def test_regression_labels_standardized():
    rng = np.random.default_rng(2)
    ds = normalize_split(Dataset(rng.standard_normal((50, 2)), 10 + 3 * rng.standard_normal(50), task="regression"))
    _, yt = ds.part("train")
    assert yt.mean() == pytest.approx(0, abs=1e-9) and yt.std() == pytest.approx(1)


def test_bin_labels():
    np.testing.assert_array_equal(np.bincount(bin_labels(np.arange(100.0))), [10] * 10)
    assert np.all(bin_labels(np.arange(7.0), 1) == 0)
    skewed = np.random.default_rng(0).exponential(size=1000) ** 3
    counts = np.bincount(bin_labels(skewed))
    assert np.all(np.abs(counts - 100) <= 1)


def test_bin_labels_with_reference():
    ref = np.arange(100.0)
    np.testing.assert_array_equal(bin_labels(np.array([-5.0, 55.0, 500.0]), 10, reference=ref), [0, 5, 9])


# --- synthetic ---------------------------------------------------------------


def test_synth_scores_at_zero():
    t = synth_scores(np.zeros((1, 10)), 2)[0]
    np.testing.assert_allclose(t, [1.0, 1.0, -np.log(1.1), 0.0, 1.0])
    assert t.sum() - 3 == pytest.approx(-0.09531, abs=1e-5)


def test_synth_literal_threshold_matches_score_rule():
    cfg = SynthConfig(group_size=10, n_features=60, n_samples=2000, noise_scale=0.0, threshold=3.0, seed=5)
    ds = synth_generate(cfg)
    expected = (synth_scores(ds.x[:, :50], 10).sum(axis=1) - 3.0 > 0).astype(int)
    np.testing.assert_array_equal(ds.y, expected)
    # the literal constant puts most samples in the positive class
    assert ds.y.mean() > 0.9


def test_synth_default_is_balanced():
    ds = synth_generate(SynthConfig(group_size=10, n_features=100, n_samples=10_000, seed=3))
    assert 0.2 < ds.y.mean() < 0.8


def test_synth_deterministic_and_named():
    cfg = SynthConfig(group_size=2, n_features=15, n_samples=30, seed=9)
    a, b = synth_generate(cfg), synth_generate(cfg)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.feature_names[:3] == ["s1_0", "s1_1", "s2_0"]
    np.testing.assert_array_equal(a.salient, np.arange(10))


def test_synth_permuted_salient_tracks_columns():
    ds = synth_generate(SynthConfig(group_size=2, n_features=30, n_samples=5, permute_columns=True, seed=1))
    assert all(ds.feature_names[j].startswith("s") for j in ds.salient)
    assert len(ds.salient) == 10


def test_synth_validation():
    with pytest.raises(InvalidInputError):
        SynthConfig(group_size=5, n_features=20)


def test_columns_subset_tracks_salient():
    ds = synth_generate(SynthConfig(group_size=2, n_features=20, n_samples=5))
    sub = ds.columns([0, 15, 3])
    np.testing.assert_array_equal(sub.salient, [0, 2])
    assert sub.feature_names == ["s1_0", "noise_5", "s2_1"]
