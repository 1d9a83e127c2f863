import json
import os
import pathlib
import subprocess
import sys

import pytest

from coalition_attrib.cli import main

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def sampled_config(tmp_path, **overrides):
    payload = {
        "model": "x1 + x2",
        "data": {"parametric": {"laws": {"x1": {"uniform": [-1, 2]},
                                         "x2": {"uniform": [0, 3]}}}},
        "instance": {"x1": 0, "x2": 0},
        "estimator": {"kind": "sampled", "permutations": 600, "draws": 4},
        "seed": 3,
    }
    payload.update(overrides)
    return write_config(tmp_path, payload)


class TestExplain:
    def test_exact_to_stdout(self, capsys):
        doc = run_json(capsys, "explain", "--config",
                       str(CONFIGS / "linear_uniform.json"))
        body = doc["body"]
        assert body["kind"] == "attribution"
        assert body["mode"] == "marginal"
        phis = {f["name"]: f["phi"] for f in body["features"]}
        assert phis["x1"] == pytest.approx(-0.5, abs=1e-9)
        assert phis["x2"] == pytest.approx(-1.5, abs=1e-9)
        assert body["base"] == pytest.approx(2.0, abs=1e-9)
        md = doc["metadata"]
        assert md["command"] == "explain"
        assert md["kernel_backend"] in ("compiled", "python")
        assert "package_version" in md and "created_at" in md

    def test_output_file(self, capsys, tmp_path):
        target = tmp_path / "report.json"
        code, out, err = run(capsys, "explain", "--config",
                             str(CONFIGS / "linear_uniform.json"),
                             "--output", str(target))
        assert code == 0 and out == ""
        doc = json.loads(target.read_text())
        assert doc["body"]["kind"] == "attribution"
        assert not [p for p in os.listdir(tmp_path)
                    if p.startswith(".report-")]

    def test_csv_format(self, capsys):
        code, out, err = run(capsys, "explain", "--config",
                             str(CONFIGS / "linear_uniform.json"),
                             "--format", "csv")
        assert code == 0
        assert out.splitlines()[0] == "feature,phi"
        assert "metadata" not in out

    def test_model_file_indirection(self, capsys, tmp_path):
        (tmp_path / "model.txt").write_text("x1 + x2\n")
        cfg = write_config(tmp_path, {
            "model": {"file": "model.txt"},
            "data": {"parametric": {"laws": {"x1": {"uniform": [-1, 2]},
                                             "x2": {"uniform": [0, 3]}}}},
            "instance": {"x1": 0, "x2": 0},
        })
        doc = run_json(capsys, "explain", "--config", cfg)
        assert doc["body"]["base"] == pytest.approx(2.0, abs=1e-9)

    def test_grouped_combination_option(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1 + x2",
            "data": {"parametric": {"laws": {"x1": {"uniform": [-1, 2]},
                                             "x2": {"uniform": [0, 3]}}}},
            "instance": {"x1": 0, "x2": 0},
            "options": {"combination": "grouped"},
        })
        doc = run_json(capsys, "explain", "--config", cfg)
        assert doc["body"]["estimator"]["combination"] == "grouped"

    def test_sampled_seed_flag_overrides_config(self, capsys, tmp_path):
        cfg = sampled_config(tmp_path)
        a = run_json(capsys, "explain", "--config", cfg)
        b = run_json(capsys, "explain", "--config", cfg, "--seed", "4")
        assert a["metadata"]["seed"] == 3
        assert b["metadata"]["seed"] == 4
        assert a["body"]["features"] != b["body"]["features"]

    def test_workers_do_not_change_the_body(self, capsys, tmp_path):
        cfg = sampled_config(tmp_path)
        a = run_json(capsys, "explain", "--config", cfg, "--workers", "1")
        b = run_json(capsys, "explain", "--config", cfg, "--workers", "3")
        assert a["body"] == b["body"]
        assert b["metadata"]["workers"] == 3


class TestOtherCommands:
    def test_deltas(self, capsys):
        doc = run_json(capsys, "deltas", "--config",
                       str(CONFIGS / "threshold_cancellation.json"))
        body = doc["body"]
        assert body["kind"] == "coalition-deltas"
        assert body["feature"] == "x2"
        assert body["cancellation"] is True
        assert abs(body["phi"]) <= 1e-6
        deltas = {tuple(c["members"]): c["delta"]
                  for c in body["coalitions"]}
        assert deltas[()] == pytest.approx(-0.5, abs=1e-6)
        assert deltas[("x1",)] == pytest.approx(0.5, abs=1e-6)

    def test_fairness_screen(self, capsys):
        doc = run_json(capsys, "fairness-screen", "--config",
                       str(CONFIGS / "fairness_cohort_20.json"))
        body = doc["body"]
        assert body["kind"] == "fairness-screen"
        assert body["verdict"] == "PASS"
        assert body["max_abs_phi"] == 0.0
        assert "necessary" in body["caveat"]

    def test_compare_modes(self, capsys):
        doc = run_json(capsys, "compare-modes", "--config",
                       str(CONFIGS / "mode_divergence_a.json"))
        body = doc["body"]
        assert body["kind"] == "mode-comparison"
        assert set(body["flagged"]) == {"x1", "x2"}
        assert body["max_gap"] == pytest.approx(0.25, abs=1e-9)

    def test_causal_chain(self, capsys):
        doc = run_json(capsys, "explain", "--config",
                       str(CONFIGS / "causal_chain.json"))
        body = doc["body"]
        assert body["mode"] == "causal"
        phis = {f["name"]: f["phi"] for f in body["features"]}
        assert phis["x1"] == pytest.approx(0.25, abs=1e-9)
        assert phis["x2"] == pytest.approx(0.25, abs=1e-9)

    def test_asymmetric_chain(self, capsys):
        doc = run_json(capsys, "explain", "--config",
                       str(CONFIGS / "asymmetric_chain.json"))
        body = doc["body"]
        assert body["mode"] == "asymmetric"
        phis = {f["name"]: f["phi"] for f in body["features"]}
        assert phis["x1"] == pytest.approx(0.5, abs=1e-9)
        assert phis["x2"] == pytest.approx(0.0, abs=1e-9)

    def test_validate(self, capsys):
        doc = run_json(capsys, "validate", "--config",
                       str(CONFIGS / "validate_linear.json"))
        body = doc["body"]
        assert body["kind"] == "validation"
        assert body["passed"] is True
        statuses = {p["property"]: p["status"] for p in body["properties"]}
        assert statuses["efficiency"] == "pass"
        assert statuses["linearity"] == "pass"


class TestConfigurationErrors:
    def expect_config_error(self, capsys, *argv, needle=None):
        code, out, err = run(capsys, *argv)
        assert code == 1
        assert out == ""
        payload = json.loads(err.splitlines()[-1])
        assert payload["stage"] == "configuration"
        if needle:
            assert needle in payload["message"]
        return payload

    def test_missing_config_file(self, capsys, tmp_path):
        self.expect_config_error(capsys, "explain", "--config",
                                 str(tmp_path / "absent.json"),
                                 needle="cannot read")

    def test_malformed_json(self, capsys, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        self.expect_config_error(capsys, "explain", "--config", str(path),
                                 needle="not valid JSON")

    def test_unknown_top_level_key(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {"model": "x1", "bogus": 1,
                                      "data": {"parametric": {"laws": {
                                          "x1": {"normal": [0, 1]}}}},
                                      "instance": {"x1": 0}})
        payload = self.expect_config_error(capsys, "explain", "--config",
                                           cfg, needle="unknown key")
        assert "bogus" in json.dumps(payload)

    def test_unknown_nested_key(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}},
            "reference": {"mode": "marginal", "bogus": True},
            "instance": {"x1": 0}})
        payload = self.expect_config_error(capsys, "explain", "--config",
                                           cfg)
        assert "reference.bogus" in json.dumps(payload)

    def test_exact_estimator_rejects_sampling_knobs(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}},
            "instance": {"x1": 0},
            "estimator": {"kind": "exact", "permutations": 100}})
        self.expect_config_error(capsys, "explain", "--config", cfg)

    def test_row_out_of_range(self, capsys, tmp_path):
        csv_path = tmp_path / "d.csv"
        csv_path.write_text("x1\n0\n1\n")
        cfg = write_config(tmp_path, {
            "model": "x1", "data": {"csv": "d.csv"},
            "instance": {"row": 5}})
        self.expect_config_error(capsys, "explain", "--config", cfg,
                                 needle="out of range")

    def test_missing_instance(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}}})
        self.expect_config_error(capsys, "explain", "--config", cfg,
                                 needle="instance")

    def test_causal_needs_graph(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}},
            "reference": {"mode": "causal"},
            "instance": {"x1": 0}})
        self.expect_config_error(capsys, "explain", "--config", cfg,
                                 needle="graph")

    def test_deltas_unknown_feature(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}},
            "instance": {"x1": 0},
            "options": {"feature": "zz"}})
        self.expect_config_error(capsys, "deltas", "--config", cfg)

    def test_fairness_needs_csv_cohort(self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1",
            "data": {"parametric": {"laws": {"x1": {"normal": [0, 1]}}}},
            "options": {"sensitive": "x1"}})
        self.expect_config_error(capsys, "fairness-screen", "--config", cfg,
                                 needle="cohort")

    def test_unwritable_output(self, capsys, tmp_path):
        code, out, err = run(
            capsys, "explain", "--config",
            str(CONFIGS / "linear_uniform.json"),
            "--output", str(tmp_path / "no" / "such" / "dir" / "r.json"))
        assert code == 1
        assert json.loads(err.splitlines()[-1])["stage"] == "output"


class TestComputationErrors:
    def test_coupled_parametric_causal_is_a_computation_failure(
            self, capsys, tmp_path):
        cfg = write_config(tmp_path, {
            "model": "x1 + x2",
            "data": {"parametric": {
                "laws": {"x1": {"normal": [0, 1]},
                         "x2": {"normal": [0, 1]}},
                "covariance": [[1.0, 0.5], [0.5, 1.0]]}},
            "reference": {"mode": "causal",
                          "graph": {"nodes": ["x1", "x2"],
                                    "edges": [["x1", "x2"]]}},
            "instance": {"x1": 1, "x2": 1}})
        code, out, err = run(capsys, "explain", "--config", cfg)
        assert code == 2
        assert out == ""
        payload = json.loads(err.splitlines()[-1])
        assert payload["stage"] == "computation"


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "coalition_attrib.cli", "explain",
             "--config", str(CONFIGS / "linear_uniform.json")],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert doc["body"]["kind"] == "attribution"

    def test_byte_identical_csv_across_processes(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            target = tmp_path / name
            proc = subprocess.run(
                [sys.executable, "-m", "coalition_attrib.cli", "explain",
                 "--config", str(CONFIGS / "linear_uniform_sampled.json"),
                 "--format", "csv", "--output", str(target)],
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append(target.read_bytes())
        assert outs[0] == outs[1]
