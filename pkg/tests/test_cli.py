"""End-to-end command-line pipeline: file formats, determinism, exit codes."""

import csv
import hashlib
import json
import os
import shutil

import pytest

from mpo_tomo.cli import main

CONFIG = {
    "version": 1,
    "protocol": {"n_qubits": 5, "eps_ad": 0.098, "eps_pd": 0.092},
    "measurement": {"shots": 10**7, "seed": 7},
    "analysis": {"le_pairs": "all"},
}


def write_config(path, cfg=CONFIG):
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return str(path)


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """One full simulate/reconstruct/analyze run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json")
    out = str(root / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert main(["reconstruct", "--config", cfg, "--out", out]) == 0
    assert main(["analyze", "--config", cfg, "--out", out]) == 0
    return cfg, out


def _checksum_tree(path):
    digest = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(path)):
        for name in sorted(files):
            digest.update(name.encode())
            with open(os.path.join(dirpath, name), "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


class TestSimulate:
    def test_setting_files_and_truth(self, pipeline_run):
        _, out = pipeline_run
        files = sorted(os.listdir(os.path.join(out, "dataset")))
        assert len(files) == 32  # 2^5 measurement settings
        assert files[0].startswith("setting_") and files[0].endswith(".csv")
        assert os.path.exists(os.path.join(out, "truth_mpo.json"))
        with open(os.path.join(out, "dataset", files[0])) as fh:
            header = fh.readline().strip()
        assert header == "window_start,basis_word,value,se,shots"

    def test_rows_partition_across_settings(self, pipeline_run):
        _, out = pipeline_run
        total = 0
        for name in os.listdir(os.path.join(out, "dataset")):
            with open(os.path.join(out, "dataset", name)) as fh:
                total += sum(1 for _ in fh) - 1
        assert total == 6**5  # one window at N=5

    def test_deterministic_rerun(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out1 = str(tmp_path / "a")
        out2 = str(tmp_path / "b")
        assert main(["simulate", "--config", cfg, "--out", out1]) == 0
        assert main(["simulate", "--config", cfg, "--out", out2]) == 0
        assert _checksum_tree(out1) == _checksum_tree(out2)

    def test_zero_shots_rejected(self, tmp_path):
        bad = dict(CONFIG)
        bad["measurement"] = {"shots": 0, "seed": 1}
        cfg = write_config(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestConfigValidation:
    def test_unknown_top_level_key(self, tmp_path):
        bad = dict(CONFIG)
        bad["extra"] = 1
        cfg = write_config(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_unknown_section_key(self, tmp_path):
        bad = json.loads(json.dumps(CONFIG))
        bad["measurement"]["shotz"] = 5
        cfg = write_config(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_missing_version(self, tmp_path):
        bad = {k: v for k, v in CONFIG.items() if k != "version"}
        cfg = write_config(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_seed_must_be_explicit(self, tmp_path):
        bad = json.loads(json.dumps(CONFIG))
        del bad["measurement"]["seed"]
        cfg = write_config(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_analyze_without_fit(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        assert main(["analyze", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestReconstruct:
    def test_outputs(self, pipeline_run):
        _, out = pipeline_run
        fit_dir = os.path.join(out, "fit")
        for name in (
            "mpo.json",
            "covariance.bin",
            "covariance_header.json",
            "fit_report.json",
            "stages.json",
            "correlations_pauli.csv",
        ):
            assert os.path.exists(os.path.join(fit_dir, name)), name
        stages = json.load(open(os.path.join(fit_dir, "stages.json")))
        assert stages["bond_dimensions"]["1"]["estimate"] == 4
        assert stages["gauss_newton"]["converged"]
        assert "inversion_residuals" in stages
        header = json.load(open(os.path.join(fit_dir, "covariance_header.json")))
        assert header["order"] == "row-major"
        assert "site-major" in header["parameter_ordering"]

    def test_missing_setting_file(self, pipeline_run, tmp_path):
        cfg, out = pipeline_run
        broken = tmp_path / "broken"
        shutil.copytree(out, broken)
        removed = sorted(os.listdir(broken / "dataset"))[3]
        os.remove(broken / "dataset" / removed)
        code = main(["reconstruct", "--config", cfg, "--out", str(broken)])
        assert code == 3

    def test_end_to_end_exact_recovery(self, tmp_path):
        # an exact (zero-SE) ideal dataset reconstructs the ideal state
        from mpo_tomo.cli import _setting_of_word
        from mpo_tomo.cluster import ideal_cluster_mpo
        from mpo_tomo.measurement import exact_local_moments, moment_word_string
        from mpo_tomo.mpo import fidelity, load_json

        cfg_doc = {
            "version": 1,
            "protocol": {"n_qubits": 6, "eps_ad": 0.0, "eps_pd": 0.0},
            "measurement": {"shots": 10**9, "seed": 3},
        }
        cfg = write_config(tmp_path / "cfg.json", cfg_doc)
        out = tmp_path / "run"
        table = exact_local_moments(ideal_cluster_mpo(6), 5)
        os.makedirs(out / "dataset")
        handles = {}
        for start, word, value, se in table.rows():
            label = _setting_of_word(word, start, 5)
            if label not in handles:
                handles[label] = open(out / "dataset" / f"setting_{label}.csv", "w")
                handles[label].write("window_start,basis_word,value,se,shots\n")
            handles[label].write(
                f"{start},{moment_word_string(word)},{value!r},{se!r},1000000000\n"
            )
        for fh in handles.values():
            fh.close()
        dataset_before = _checksum_tree(out / "dataset")
        assert main(["reconstruct", "--config", cfg, "--out", str(out)]) == 0
        mpo = load_json(os.path.join(out, "fit", "mpo.json"))
        assert fidelity(mpo, ideal_cluster_mpo(6)) >= 1 - 1e-9
        # downstream stages never mutate upstream artifacts
        assert _checksum_tree(out / "dataset") == dataset_before
        # ideal truth: analyze reports fidelity 1, bound 1, LE 0.5 everywhere
        assert main(["analyze", "--config", cfg, "--out", str(out)]) == 0
        report = json.load(open(out / "report.json"))
        assert report["fidelity"] == pytest.approx(1.0, abs=1e-7)
        assert report["stabilizer_bound"] == pytest.approx(1.0, abs=1e-7)
        with open(out / "le_matrix.csv") as fh:
            for row in csv.DictReader(fh):
                assert float(row["value"]) == pytest.approx(0.5, abs=1e-7)

    def test_non_convergence_exit_code_with_partial_outputs(self, tmp_path):
        cfg_doc = json.loads(json.dumps(CONFIG))
        cfg_doc["fit"] = {"max_iterations": 1}
        cfg = write_config(tmp_path / "cfg.json", cfg_doc)
        out = str(tmp_path / "run")
        assert main(["simulate", "--config", cfg, "--out", out]) == 0
        assert main(["reconstruct", "--config", cfg, "--out", out]) == 4
        # partial outputs are still written and flagged as unconverged
        report = json.load(open(os.path.join(out, "fit", "fit_report.json")))
        assert report["converged"] is False
        assert os.path.exists(os.path.join(out, "fit", "mpo.json"))


class TestAnalyze:
    def test_report_values(self, pipeline_run):
        _, out = pipeline_run
        report = json.load(open(os.path.join(out, "report.json")))
        assert abs(report["fidelity"] - 0.616) < 0.05
        assert abs(report["stabilizer_bound"] - 0.40) < 0.10
        assert 0 < report["fidelity_se"] < 0.01
        assert abs(report["error_model"]["eps_ad"][0] - 0.098) < 0.01
        assert abs(report["error_model"]["eps_pd"][0] - 0.092) < 0.02

    def test_le_matrix_upper_triangle(self, pipeline_run):
        _, out = pipeline_run
        with open(os.path.join(out, "le_matrix.csv")) as fh:
            rows = list(csv.DictReader(fh))
        n = 5
        pairs = {(int(r["r"]), int(r["r_prime"])) for r in rows}
        assert pairs == {(r, rp) for r in range(1, n) for rp in range(r + 1, n + 1)}
        assert len(rows) == n * (n - 1) // 2
        for row in rows:
            assert 0.0 <= float(row["value"]) <= 0.5 + 1e-9

    def test_stabilizer_csv(self, pipeline_run):
        _, out = pipeline_run
        with open(os.path.join(out, "stabilizers.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        for row in rows:
            assert abs(float(row["value"]) - float(row["model_value"])) < 0.05

    def test_density_corner(self, pipeline_run):
        _, out = pipeline_run
        with open(os.path.join(out, "density_corner.csv")) as fh:
            rows = list(csv.DictReader(fh))
        # N=5: first/last 16 basis states cover all 32
        assert len(rows) == 32 * 32
        diag = {r["bra"]: float(r["abs"]) for r in rows if r["bra"] == r["ket"]}
        assert all(abs(v - 2**-5) < 0.02 for v in diag.values())

    def test_le_distance_rows(self, pipeline_run):
        _, out = pipeline_run
        with open(os.path.join(out, "le_distance.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["k"]) for r in rows] == [1, 2, 3, 4]


class TestLogging:
    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MPO_TOMO_LOG", "chatty")
        cfg = write_config(tmp_path / "cfg.json")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_threads_validated(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        code = main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--threads", "0"])
        assert code == 2
