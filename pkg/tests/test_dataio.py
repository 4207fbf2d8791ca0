import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphem.dataio import (DatasetManifest, EpochMetric, IntegrityError,
                            ResultRecord, load_bundle, load_citation,
                            read_edge_list, read_results, row_normalize,
                            save_bundle, write_edge_list, write_results)
from graphem.graphs import Graph


@pytest.fixture
def toy_graph():
    features = np.array([[1.0, 3.0, 0.0],
                         [0.0, 0.0, 0.0],
                         [2.0, 2.0, 4.0],
                         [0.5, 0.0, 0.5]])
    return Graph(4, [[0, 1], [1, 2], [2, 3]], features, [0, 0, 1, 1], 2,
                 {"train": [0, 2], "val": [1], "test": [3]})


class TestBundles:
    def test_round_trip(self, toy_graph, tmp_path):
        path = tmp_path / "g.json"
        save_bundle(toy_graph, path)
        g2 = load_bundle(path)
        assert g2.n_nodes == toy_graph.n_nodes
        np.testing.assert_array_equal(g2.edges, toy_graph.edges)
        np.testing.assert_array_equal(g2.features, toy_graph.features)
        np.testing.assert_array_equal(g2.labels, toy_graph.labels)
        for k in toy_graph.splits:
            np.testing.assert_array_equal(g2.splits[k], toy_graph.splits[k])

    def test_sparse_feature_encoding(self, tmp_path):
        payload = {
            "n_nodes": 3, "C": 2, "edges": [[0, 1], [1, 2]],
            "features": {"shape": [3, 4], "rows": [0, 2], "cols": [1, 3],
                         "vals": [5.0, 7.0]},
            "labels": [0, 1, 1],
            "splits": {"train": [0], "val": [1], "test": [2]},
        }
        path = tmp_path / "g.json"
        path.write_text(json.dumps(payload))
        g = load_bundle(path)
        expected = np.zeros((3, 4))
        expected[0, 1] = 5.0
        expected[2, 3] = 7.0
        np.testing.assert_array_equal(g.features, expected)


class TestEdgeList:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "edges.txt"
        edges = np.array([[0, 1], [2, 3]])
        write_edge_list(edges, path)
        np.testing.assert_array_equal(read_edge_list(path), edges)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("# header\n0 1\n\n1 2\n")
        np.testing.assert_array_equal(read_edge_list(path),
                                      [[0, 1], [1, 2]])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("0 1 2\n")
        with pytest.raises(ValueError):
            read_edge_list(path)


class TestLoadCitation:
    def make_manifest(self, toy_graph, tmp_path, expected_stats=None):
        bundle = tmp_path / "g.json"
        save_bundle(toy_graph, bundle)
        return DatasetManifest(name="toy", bundle=str(bundle),
                               expected_stats=expected_stats)

    def test_features_row_normalized(self, toy_graph, tmp_path):
        g = load_citation(self.make_manifest(toy_graph, tmp_path))
        np.testing.assert_allclose(g.features[0], [0.25, 0.75, 0.0])
        np.testing.assert_allclose(g.features[0].sum(), 1.0)

    def test_zero_row_left_alone(self, toy_graph, tmp_path):
        g = load_citation(self.make_manifest(toy_graph, tmp_path))
        np.testing.assert_array_equal(g.features[1], [0.0, 0.0, 0.0])

    def test_sparsity_pattern_preserved(self, toy_graph, tmp_path):
        g = load_citation(self.make_manifest(toy_graph, tmp_path))
        np.testing.assert_array_equal(g.features != 0,
                                      toy_graph.features != 0)

    def test_pure_same_files_same_graph(self, toy_graph, tmp_path):
        m = self.make_manifest(toy_graph, tmp_path)
        a, b = load_citation(m), load_citation(m)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.edges, b.edges)

    def test_expected_stats_accepted(self, toy_graph, tmp_path):
        stats = {"n_nodes": 4, "n_edges": 3, "d": 3, "C": 2,
                 "train": 2, "val": 1, "test": 1}
        load_citation(self.make_manifest(toy_graph, tmp_path, stats))

    def test_stat_mismatch_names_field(self, toy_graph, tmp_path):
        m = self.make_manifest(toy_graph, tmp_path, {"n_edges": 99})
        with pytest.raises(IntegrityError, match="n_edges"):
            load_citation(m)

    def test_separate_files(self, toy_graph, tmp_path):
        write_edge_list(toy_graph.edges, tmp_path / "edges.txt")
        (tmp_path / "features.json").write_text(
            json.dumps(toy_graph.features.tolist()))
        (tmp_path / "labels.json").write_text(
            json.dumps(toy_graph.labels.tolist()))
        (tmp_path / "splits.json").write_text(json.dumps(
            {k: v.tolist() for k, v in toy_graph.splits.items()}))
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps({
            "name": "toy", "edges": "edges.txt",
            "features": "features.json", "labels": "labels.json",
            "splits": "splits.json"}))
        g = load_citation(DatasetManifest.from_json(manifest_path))
        assert g.n_nodes == 4
        np.testing.assert_array_equal(g.edges, toy_graph.edges)

    def test_missing_piece_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            load_citation(DatasetManifest(name="broken", edges="e.txt"))


class TestRowNormalize:
    def test_negative_sum_rows_still_scaled(self):
        out = row_normalize(np.array([[2.0, 2.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.0, 0.0]])


def make_record(i=0, experiment="exp", seed=0):
    history = [EpochMetric(e, 1.0 / (e + 1), min(1.0, 0.1 * e))
               for e in range(3)]
    return ResultRecord(experiment=experiment, seed=seed,
                        hyperparams={"lr": 0.05, "idx": i},
                        history=history, test_accuracy=0.75,
                        derived={"inter_class_ratio": 0.4})


class TestResults:
    def test_empty_list_header_only(self, tmp_path):
        path = tmp_path / "results.csv"
        write_results([], path)
        assert path.read_text().strip() == \
            "experiment,seed,epoch,split,metric,value"

    def test_single_record_round_trip(self, tmp_path):
        path = tmp_path / "results.csv"
        rec = make_record()
        write_results([rec], path)
        assert read_results(path) == [rec]
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 3 * 2 + 1 + 1  # header, history, test, derived

    def test_epochs_must_increase(self, tmp_path):
        rec = make_record()
        rec.history.append(EpochMetric(0, 0.5, 0.5))
        with pytest.raises(ValueError):
            write_results([rec], tmp_path / "r.csv")

    def test_accuracy_range_checked(self, tmp_path):
        rec = make_record()
        rec.test_accuracy = 1.5
        with pytest.raises(ValueError):
            write_results([rec], tmp_path / "r.csv")

    def test_missing_directory_reports_path(self, tmp_path):
        with pytest.raises(OSError, match="no/such"):
            write_results([make_record()], tmp_path / "no" / "such" / "r.csv")

    @given(st.lists(
        st.tuples(st.text(min_size=1, max_size=20)
                  .filter(lambda s: "\x00" not in s),
                  st.integers(0, 2 ** 31 - 1),
                  st.floats(allow_nan=False, allow_infinity=False,
                            width=64),
                  st.floats(0.0, 1.0)),
        min_size=1, max_size=8))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_lossless(self, rows):
        import tempfile
        records = []
        for k, (name, seed, loss, acc) in enumerate(rows):
            records.append(ResultRecord(
                experiment=name, seed=seed,
                hyperparams={"lr": loss, "k": k},
                history=[EpochMetric(0, loss, acc)],
                test_accuracy=acc, derived={"metric": loss}))
        with tempfile.TemporaryDirectory() as tmp:
            path = f"{tmp}/results.csv"
            write_results(records, path)
            assert read_results(path) == records

    def test_hundred_unicode_records_round_trip(self, tmp_path):
        records = [make_record(i, experiment=f"实验-{i}-ε", seed=i)
                   for i in range(100)]
        path = tmp_path / "results.csv"
        write_results(records, path)
        assert read_results(path) == records
