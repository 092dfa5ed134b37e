import numpy as np
import pytest

from fedvgcn.graph import (
    DataError,
    Dataset,
    StatisticsMismatchError,
    align_nodes,
    five_fold,
    load_dataset_dir,
    load_planetoid,
    make_synthetic_dataset,
    split_vertical,
    verify_statistics,
    write_planetoid,
)

TOY_CONTENT = "paper_a\t1\t0\t1\tml\npaper_b\t0\t1\t0\tdb\npaper_c\t1\t1\t0\tml\n"
TOY_CITES = "paper_a\tpaper_b\npaper_c\tpaper_a\n"


@pytest.fixture()
def toy_paths(tmp_path):
    content = tmp_path / "toy.content"
    cites = tmp_path / "toy.cites"
    content.write_text(TOY_CONTENT)
    cites.write_text(TOY_CITES)
    return str(content), str(cites)


class TestLoader:
    def test_toy_fixture_echo(self, toy_paths):
        ds = load_planetoid(*toy_paths)
        assert ds.node_ids == ("paper_a", "paper_b", "paper_c")
        assert ds.stats() == (3, 2, 3, 2)
        np.testing.assert_array_equal(ds.features[0], [1, 0, 1])
        # labels sorted alphabetically: db=0, ml=1
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])
        assert ds.edges == ((0, 1), (0, 2))

    def test_duplicate_and_reverse_edges_collapse(self, tmp_path):
        (tmp_path / "d.content").write_text(TOY_CONTENT)
        (tmp_path / "d.cites").write_text(
            "paper_a\tpaper_b\npaper_b\tpaper_a\npaper_a\tpaper_b\n"
        )
        ds = load_dataset_dir(str(tmp_path), "d")
        assert ds.edges == ((0, 1),)
        assert ds.dropped_edges["duplicate"] == 2

    def test_unknown_endpoints_dropped_with_count(self, tmp_path):
        (tmp_path / "d.content").write_text(TOY_CONTENT)
        (tmp_path / "d.cites").write_text("paper_a\tghost\npaper_a\tpaper_b\n")
        ds = load_dataset_dir(str(tmp_path), "d")
        assert ds.edges == ((0, 1),)
        assert ds.dropped_edges["unknown_endpoint"] == 1

    def test_self_citation_dropped(self, tmp_path):
        (tmp_path / "d.content").write_text(TOY_CONTENT)
        (tmp_path / "d.cites").write_text("paper_a\tpaper_a\n")
        ds = load_dataset_dir(str(tmp_path), "d")
        assert ds.edges == ()
        assert ds.dropped_edges["self_loop"] == 1

    def test_malformed_row_rejected(self, tmp_path):
        (tmp_path / "d.content").write_text("only_id\n")
        (tmp_path / "d.cites").write_text("")
        with pytest.raises(DataError):
            load_dataset_dir(str(tmp_path), "d")

    def test_empty_content_rejected(self, tmp_path):
        (tmp_path / "d.content").write_text("")
        (tmp_path / "d.cites").write_text("")
        with pytest.raises(DataError):
            load_dataset_dir(str(tmp_path), "d")

    def test_inconsistent_width_rejected(self, tmp_path):
        (tmp_path / "d.content").write_text("a\t1\t0\tml\nb\t1\tml\n")
        (tmp_path / "d.cites").write_text("")
        with pytest.raises(DataError):
            load_dataset_dir(str(tmp_path), "d")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset_dir(str(tmp_path), "nothere")

    def test_writer_roundtrip(self, tmp_path):
        ds = make_synthetic_dataset(n_nodes=20, n_features=9, n_classes=3, seed=5)
        write_planetoid(ds, str(tmp_path), "synth")
        back = load_dataset_dir(str(tmp_path), "synth")
        assert back.stats() == ds.stats()
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.edges == ds.edges


class TestVerifyStatistics:
    def test_mismatch_is_loud(self, toy_paths):
        ds = load_planetoid(*toy_paths)
        with pytest.raises(StatisticsMismatchError) as err:
            verify_statistics(ds, "cora")
        assert "2708" in str(err.value)

    def test_unknown_name(self, toy_paths):
        ds = load_planetoid(*toy_paths)
        with pytest.raises(DataError):
            verify_statistics(ds, "wikipedia")


class TestAlignNodes:
    def test_identical_sets(self):
        assert align_nodes({3, 1, 2}, {2, 1, 3}) == [1, 2, 3]

    def test_partial_overlap(self):
        assert align_nodes({1, 2, 3}, {2, 3, 4}) == [2, 3]

    def test_disjoint_errors(self):
        with pytest.raises(DataError):
            align_nodes({1}, {2})

    def test_order_independent(self):
        a = ["x", "b", "m"]
        b = ["m", "x", "q"]
        assert align_nodes(a, b) == align_nodes(reversed(b), reversed(a))


class TestSplitVertical:
    def test_column_counts(self):
        ds = make_synthetic_dataset(n_nodes=30, n_features=1433, n_classes=3, seed=1)
        va, vb = split_vertical(ds, 0.5, 0.5, seed=4)
        assert va.features.shape[1] == 716
        assert vb.features.shape[1] == 717

    def test_reconstruction(self):
        ds = make_synthetic_dataset(n_nodes=40, n_features=17, seed=2)
        va, vb = split_vertical(ds, 0.4, 0.6, seed=9)
        rebuilt = np.empty_like(ds.features)
        rebuilt[:, va.feature_cols] = va.features
        rebuilt[:, vb.feature_cols] = vb.features
        np.testing.assert_array_equal(rebuilt, ds.features)
        assert sorted(va.edges + vb.edges) == sorted(ds.edges)
        assert not (set(va.edges) & set(vb.edges))
        assert not (set(va.feature_cols) & set(vb.feature_cols))

    def test_deterministic(self):
        ds = make_synthetic_dataset(seed=3)
        first = split_vertical(ds, 0.5, 0.5, seed=11)
        second = split_vertical(ds, 0.5, 0.5, seed=11)
        np.testing.assert_array_equal(first[0].feature_cols, second[0].feature_cols)
        assert first[0].edges == second[0].edges
        np.testing.assert_array_equal(first[1].features, second[1].features)

    def test_labels_on_b_only(self):
        ds = make_synthetic_dataset(seed=3)
        va, vb = split_vertical(ds, 0.5, 0.5, seed=1)
        assert va.labels is None
        np.testing.assert_array_equal(vb.labels, ds.labels)

    def test_edge_halves_on_ten_edge_graph(self):
        ds = make_synthetic_dataset(n_nodes=12, n_features=6, seed=6)
        # craft exactly 10 edges
        ds = Dataset(
            node_ids=ds.node_ids,
            features=ds.features,
            labels=ds.labels,
            edges=tuple((i, i + 1) for i in range(10)),
            num_classes=ds.num_classes,
        )
        va, vb = split_vertical(ds, 0.5, 0.5, seed=0)
        assert len(va.edges) == 5 and len(vb.edges) == 5

    def test_bad_ratio(self):
        ds = make_synthetic_dataset(seed=3)
        for ratio in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DataError):
                split_vertical(ds, ratio, 0.5, seed=0)

    def test_empty_side_rejected(self):
        ds = make_synthetic_dataset(n_nodes=10, n_features=3, seed=1)
        with pytest.raises(DataError):
            split_vertical(ds, 0.01, 0.5, seed=0)


class TestFiveFold:
    def test_ten_node_partition(self):
        ds = make_synthetic_dataset(n_nodes=10, n_features=4, seed=7)
        folds = five_fold(ds, seed=3)
        assert len(folds) == 5
        all_test = np.concatenate([f.test_ids for f in folds])
        assert sorted(all_test.tolist()) == list(range(10))
        for f in folds:
            assert len(f.test_ids) == 2
            assert not set(f.test_ids) & set(f.train_ids)
            assert len(f.test_ids) + len(f.train_ids) == 10

    def test_cora_sized_fold_sizes(self):
        ds = make_synthetic_dataset(n_nodes=2708, n_features=4, seed=8, target_edges=2708)
        sizes = sorted(len(f.test_ids) for f in five_fold(ds, seed=0))
        assert sizes == [541, 541, 542, 542, 542]

    def test_deterministic(self):
        ds = make_synthetic_dataset(n_nodes=25, seed=9)
        f1 = five_fold(ds, seed=5)
        f2 = five_fold(ds, seed=5)
        for a, b in zip(f1, f2):
            np.testing.assert_array_equal(a.test_ids, b.test_ids)
            np.testing.assert_array_equal(a.train_ids, b.train_ids)

    def test_too_few_nodes(self):
        ds = make_synthetic_dataset(n_nodes=4, n_features=3, seed=1)
        with pytest.raises(DataError):
            five_fold(ds, seed=0)
