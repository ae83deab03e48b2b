import json
import os

import numpy as np
import pytest

from ueprobe.errors import CheckFailure, NumericalError
from ueprobe.harness import (
    ExperimentConfig,
    ReportRow,
    UncertaintyReport,
    config_digest,
    default_options,
    merged_options,
    run_digit_table,
    run_mnist_interp,
    run_theorem_check,
    run_toy2d,
    write_report,
)
from ueprobe.numerics import LN2, binary_entropy

TINY_TOY = {
    "n_per_class": 40,
    "resolution": 5,
    "mcdropout.arch": [2, 16, 2],
    "mcdropout.epochs": 5,
    "mcdropout.n_passes": 10,
    "mfvi.arch": [2, 16, 2],
    "mfvi.epochs": 5,
    "mfvi.predict_draws": 10,
    "hmc.arch": [2, 16, 2],
    "hmc.n_samples": 10,
    "hmc.burn_in": 5,
    "hmc.map_epochs": 10,
}

TINY_MNIST_METHOD_OPTS = {
    "n_pairs": 4,
    "t_steps": 7,
    "encoder.arch": [784, 32, 8, 2],
    "encoder.epochs": 4,
    "gp.subsample": 100,
    "mcdropout.arch": [784, 16, 2],
    "mcdropout.epochs": 4,
    "mcdropout.n_passes": 10,
    "mfvi.arch": [784, 16, 2],
    "mfvi.epochs": 4,
    "mfvi.predict_draws": 10,
    "hmc.arch": [784, 16, 2],
    "hmc.n_samples": 5,
    "hmc.burn_in": 3,
    "hmc.map_epochs": 4,
}


@pytest.fixture(scope="module")
def tiny_toy_report():
    cfg = ExperimentConfig(experiment="toy2d", methods=("gp", "mcdropout", "mfvi", "hmc"),
                           seed=5, options=TINY_TOY)
    return run_toy2d(cfg)


class TestWriteReport:
    def _report(self):
        rows = [
            ReportRow("a", "gp", "x=1;y=2", 0.25, float(binary_entropy(0.25))),
            ReportRow("b", "gp", "x=2;y=3", 0.5, LN2),
            ReportRow("a", "mcdropout", "x=1;y=2", 1.0, 0.0),
        ]
        return UncertaintyReport(rows=rows, metadata={"seed": 1, "entropy_units": "nats"})

    def test_empty_csv_is_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        write_report(UncertaintyReport(), path, "csv")
        assert path.read_text() == "probe_id,method,descriptor,p_class1,entropy_nats\n"

    def test_row_count(self, tmp_path):
        path = tmp_path / "r.csv"
        write_report(self._report(), path, "csv")
        assert len(path.read_text().splitlines()) == 4

    def test_nine_significant_digits(self, tmp_path):
        path = tmp_path / "r.csv"
        rows = [ReportRow("p", "gp", "d", 1 / 3, float(binary_entropy(1 / 3)))]
        write_report(UncertaintyReport(rows=rows), path, "csv")
        assert "0.333333333" in path.read_text()

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_report(self._report(), a, "json")
        write_report(self._report(), b, "json")
        assert a.read_bytes() == b.read_bytes()

    def test_json_mirrors_rows(self, tmp_path):
        path = tmp_path / "r.json"
        write_report(self._report(), path, "json")
        doc = json.loads(path.read_text())
        assert doc["metadata"]["entropy_units"] == "nats"
        assert len(doc["rows"]) == 3
        assert doc["rows"][0]["probe_id"] == "a"

    def test_duplicate_rows_rejected(self, tmp_path):
        rows = [ReportRow("a", "gp", "d", 0.5, LN2), ReportRow("a", "gp", "d", 0.5, LN2)]
        with pytest.raises(NumericalError):
            write_report(UncertaintyReport(rows=rows), tmp_path / "x.csv", "csv")

    def test_bad_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_report(UncertaintyReport(), tmp_path / "x.yaml", "yaml")

    def test_3100_rows_give_3101_lines(self, tmp_path):
        rows = [
            ReportRow(f"pair{i:03d}_t{j:02d}", "gp", f"pair={i};t={j}", 0.5, LN2)
            for i in range(100)
            for j in range(31)
        ]
        path = tmp_path / "sweep.csv"
        write_report(UncertaintyReport(rows=rows), path, "csv")
        assert len(path.read_text().splitlines()) == 3101


class TestConfig:
    def test_unknown_option_rejected(self):
        cfg = ExperimentConfig(experiment="toy2d", options={"nonsense": 1})
        with pytest.raises(ValueError):
            merged_options(cfg)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="toy2d", methods=("gp", "oracle"))

    def test_methods_canonical_order(self):
        cfg = ExperimentConfig(experiment="toy2d", methods=("hmc", "gp"))
        assert cfg.methods == ("gp", "hmc")

    def test_digest_stable_and_sensitive(self):
        a = ExperimentConfig(experiment="toy2d", seed=1)
        b = ExperimentConfig(experiment="toy2d", seed=1)
        c = ExperimentConfig(experiment="toy2d", seed=2)
        d = ExperimentConfig(experiment="toy2d", seed=1, options={"resolution": 10})
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest(c)
        assert config_digest(a) != config_digest(d)

    def test_defaults_exist_for_all_experiments(self):
        for exp in ("toy2d", "mnist-interp", "digit-table", "theorem-check"):
            assert default_options(exp)


class TestToy2d:
    def test_row_count_and_alignment(self, tiny_toy_report):
        rep = tiny_toy_report
        assert len(rep.rows) == 4 * 25
        by_method = {}
        for row in rep.rows:
            by_method.setdefault(row.method, set()).add(row.probe_id)
        ids = list(by_method.values())
        assert all(s == ids[0] for s in ids)

    def test_entropy_recomputes_from_probability(self, tiny_toy_report):
        for row in tiny_toy_report.rows:
            assert abs(row.entropy_nats - float(binary_entropy(row.p_class1))) < 1e-9

    def test_metadata_complete(self, tiny_toy_report):
        md = tiny_toy_report.metadata
        assert md["experiment"] == "toy2d"
        assert md["entropy_units"] == "nats"
        assert set(md["method_info"]) == {"gp", "mcdropout", "mfvi", "hmc"}
        assert all("train_accuracy" in info for info in md["method_info"].values())
        assert len(md["config_digest"]) == 64

    def test_deterministic_end_to_end(self, tiny_toy_report, tmp_path):
        cfg = ExperimentConfig(experiment="toy2d", methods=("gp", "mcdropout", "mfvi", "hmc"),
                               seed=5, options=TINY_TOY)
        rep2 = run_toy2d(cfg)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report(tiny_toy_report, a, "csv")
        write_report(rep2, b, "csv")
        assert a.read_bytes() == b.read_bytes()

    def test_thread_count_does_not_change_results(self, tiny_toy_report, monkeypatch):
        monkeypatch.setenv("UE_PROBE_THREADS", "3")
        cfg = ExperimentConfig(experiment="toy2d", methods=("gp", "mcdropout", "mfvi", "hmc"),
                               seed=5, options=TINY_TOY)
        rep = run_toy2d(cfg)
        a = {(r.probe_id, r.method): r.p_class1 for r in tiny_toy_report.rows}
        b = {(r.probe_id, r.method): r.p_class1 for r in rep.rows}
        assert a == b

    def test_save_then_load_models(self, tmp_path):
        opts = dict(TINY_TOY, save_models=str(tmp_path / "models"))
        cfg = ExperimentConfig(experiment="toy2d", methods=("mcdropout", "mfvi", "hmc"),
                               seed=5, options=opts)
        rep_save = run_toy2d(cfg)
        saved = sorted(os.listdir(tmp_path / "models"))
        assert saved == ["hmc.uep", "mcdropout.uep", "mfvi.uep"]
        assert set(rep_save.metadata["model_hashes"]) == {"hmc", "mcdropout", "mfvi"}

        opts2 = dict(TINY_TOY, load_models=str(tmp_path / "models"))
        cfg2 = ExperimentConfig(experiment="toy2d", methods=("mcdropout", "mfvi", "hmc"),
                                seed=5, options=opts2)
        rep_load = run_toy2d(cfg2)
        assert rep_load.metadata["model_hashes"] == rep_save.metadata["model_hashes"]
        a = {(r.probe_id, r.method): r.p_class1 for r in rep_save.rows}
        b = {(r.probe_id, r.method): r.p_class1 for r in rep_load.rows}
        assert a == b


class TestTheoremCheck:
    def test_passes_with_defaults(self):
        cfg = ExperimentConfig(experiment="theorem-check", methods=("gp",), seed=0)
        rep = run_theorem_check(cfg)
        assert rep.metadata["theorem"]["violations"] == []
        ray = [r for r in rep.metadata["theorem"]["probes"] if r["probe_id"].startswith("ray")]
        assert any(r["kstar_inf"] < 1e-10 for r in ray)

    def test_coverage_violation_raises_with_report(self):
        cfg = ExperimentConfig(
            experiment="theorem-check", methods=("gp",), seed=0,
            options={"ray_distances": [4.0]},
        )
        with pytest.raises(CheckFailure) as exc_info:
            run_theorem_check(cfg)
        assert exc_info.value.report is not None
        assert exc_info.value.detail


class TestSyntheticMnistPipeline:
    def test_interp_experiment_mechanics(self, synthetic_mnist):
        opts = dict(TINY_MNIST_METHOD_OPTS)
        opts.update(
            mnist_train_images=synthetic_mnist["train_images"],
            mnist_train_labels=synthetic_mnist["train_labels"],
            mnist_test_images=synthetic_mnist["test_images"],
            mnist_test_labels=synthetic_mnist["test_labels"],
        )
        cfg = ExperimentConfig(experiment="mnist-interp",
                               methods=("gp", "mcdropout", "mfvi", "hmc"), seed=3, options=opts)
        rep = run_mnist_interp(cfg)
        assert len(rep.rows) == 4 * 4 * 7
        curves = rep.metadata["mean_entropy_per_t"]
        assert set(curves) == {"gp", "mcdropout", "mfvi", "hmc"}
        assert all(len(c) == 7 for c in curves.values())
        for row in rep.rows:
            assert abs(row.entropy_nats - float(binary_entropy(row.p_class1))) < 1e-9
        # curve values recompute from the rows
        t_grid = rep.metadata["t_grid"]
        per_t = {m: [[] for _ in t_grid] for m in curves}
        for row in rep.rows:
            t_index = int(row.probe_id.split("_t")[1])
            per_t[row.method][t_index].append(row.entropy_nats)
        for m, curve in curves.items():
            for t, values in zip(t_grid, per_t[m]):
                assert abs(curve[f"{t:.9g}"] - np.mean(values)) < 1e-9

    def test_digit_table_mechanics(self, synthetic_mnist):
        opts = {
            "mnist_train_images": synthetic_mnist["train_images"],
            "mnist_train_labels": synthetic_mnist["train_labels"],
            "mnist_test_images": synthetic_mnist["test_images"],
            "mnist_test_labels": synthetic_mnist["test_labels"],
            "mcdropout.arch": [784, 16, 2],
            "mcdropout.epochs": 4,
            "mcdropout.n_passes": 10,
        }
        cfg = ExperimentConfig(experiment="digit-table", methods=("mcdropout",), seed=3,
                               options=opts)
        rep = run_digit_table(cfg)
        assert len(rep.rows) == 80  # 8 test samples x 10 classes
        table = rep.metadata["per_digit_mean_entropy"]
        assert set(table) == {str(c) for c in range(10)}
        for c in range(10):
            class_rows = [r.entropy_nats for r in rep.rows if r.descriptor == f"class={c}"]
            assert abs(table[str(c)] - np.mean(class_rows)) < 1e-9
