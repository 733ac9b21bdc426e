"""End-to-end command-line runs: exit codes, metadata headers, CSV shapes.

Every test drives the installed entry point in a subprocess, the way a
sweep script would, and checks the contract pieces downstream tooling
relies on: stable metadata headers, byte-identical reruns, probability
masses that sum to one, dotted-path overrides, and the documented exit
codes for config, solver, and assertion failures.
"""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from mecsched.markov import build_c, build_phi, solve_discounted
from mecsched.model import CompactState, EdgeEntry, paper_defaults
from mecsched.valuefn import ValueParams, components

DESK_PARAMS = {"admission_threshold": 3, "seg_min": 2, "seg_max": 6,
               "arrival_prob": 0.2}


def run_cli(*argv, cwd=None):
    return subprocess.run([sys.executable, "-m", "mecsched.cli", *argv],
                          capture_output=True, text=True, cwd=cwd,
                          timeout=600)


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_csv(path):
    meta, header, rows = {}, None, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return meta, header, rows


def canonical_sha(payload):
    import hashlib
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class TestSimulate:
    CONFIG = {
        "params": DESK_PARAMS,
        "simulate": {"policies": ["baseline", "all_local"],
                     "arrival_probs": [0.2, 0.5],
                     "episodes": 4, "horizon": 60},
    }

    def test_end_to_end(self, tmp_path):
        cfg = write_config(tmp_path, self.CONFIG)
        out = run_cli("simulate", "--config", cfg, "--out", str(tmp_path))
        assert out.returncode == 0, out.stderr
        result = json.loads(out.stdout)
        assert result["metrics_rows"] == 4  # 2 policies x 2 arrival probs
        meta, header, rows = read_csv(tmp_path / "metrics.csv")
        assert header == ["policy", "arrival_prob", "p_r", "seed_base",
                          "episodes", "discounted_cost_mean",
                          "discounted_cost_ci", "per_device_cost",
                          "edge_ratio", "task_scale"]
        assert len(rows) == 4
        assert meta["schema"] == "metrics-v1"
        assert meta["config_sha256"] == canonical_sha(self.CONFIG)
        assert meta["seed"] == "0"
        assert "mecsched_version" in meta
        assert {r[0] for r in rows} == {"baseline", "all_local"}
        assert all(r[4] == "4" for r in rows)

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, self.CONFIG)
        a, b = tmp_path / "a", tmp_path / "b"
        for out_dir in (a, b):
            res = run_cli("simulate", "--config", cfg, "--out", str(out_dir))
            assert res.returncode == 0, res.stderr
        for name in ("metrics.csv", "pmfs.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_pmf_masses_sum_to_one(self, tmp_path):
        cfg = write_config(tmp_path, self.CONFIG)
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        _, header, rows = read_csv(tmp_path / "pmfs.csv")
        assert header == ["policy", "arrival_prob", "kind", "bin", "mass"]
        groups = {}
        for policy, prob, kind, _, mass in rows:
            groups.setdefault((policy, prob, kind), 0.0)
            groups[(policy, prob, kind)] += float(mass)
        assert groups
        for total in groups.values():
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_set_override_changes_run(self, tmp_path):
        cfg = write_config(tmp_path, self.CONFIG)
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path),
                      "--set", "simulate.episodes=2",
                      "--set", "simulate.arrival_probs=[0.3]")
        assert res.returncode == 0, res.stderr
        _, _, rows = read_csv(tmp_path / "metrics.csv")
        assert len(rows) == 2
        assert all(r[1] == "0.3" and r[4] == "2" for r in rows)

    def test_missing_section_exits_config(self, tmp_path):
        cfg = write_config(tmp_path, {"params": DESK_PARAMS})
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 2
        err = json.loads(res.stderr)
        assert err["error"] == "config"
        assert "simulate" in err["detail"]

    def test_schema_violation_exits_config(self, tmp_path):
        bad = {"params": DESK_PARAMS,
               "simulate": {"episodes": 4, "bogus_knob": 1}}
        cfg = write_config(tmp_path, bad)
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 2
        assert "schema violation" in json.loads(res.stderr)["detail"]

    @pytest.mark.parametrize("override", [
        "simulate.episodes", "params=3", "simulate.episodes.deep=1"])
    def test_bad_set_syntax_exits_config(self, tmp_path, override):
        cfg = write_config(tmp_path, self.CONFIG)
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path),
                      "--set", override)
        assert res.returncode == 2

    def test_invalid_model_params_exit_config(self, tmp_path):
        bad = dict(self.CONFIG)
        bad["params"] = dict(DESK_PARAMS, discount=1.5)
        cfg = write_config(tmp_path, bad)
        res = run_cli("simulate", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 2
        assert "invalid model parameters" in json.loads(res.stderr)["detail"]


class TestValue:
    def test_empty_state_matches_chain_solve(self, tmp_path):
        cfg = write_config(tmp_path, {"params": DESK_PARAMS, "value": {}})
        res = run_cli("value", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        report = json.loads(res.stdout)
        params = paper_defaults(**DESK_PARAMS)
        vp = ValueParams.from_distributions(params)
        phi = build_phi(params, params.receive_power_w, params.arrival_prob)
        c = build_c(params, params.receive_power_w, vp.varpi, vp.cbar)
        x0 = float(solve_discounted(phi, c, params.discount)[0])
        assert report["w1"] == 0.0 and report["w2"] == 0.0
        assert report["total"] == pytest.approx(x0, rel=1e-12)
        assert report["devices"] == 0
        assert report["diagnostics"]["chain_dim"] == 19

    def test_occupied_state_matches_library(self, tmp_path):
        state_spec = [
            {"device_id": 1, "pathloss": 2e-9, "queue_segments": 5},
            {"device_id": 2, "pathloss": 6e-9, "queue_segments": 3},
        ]
        cfg = write_config(tmp_path, {"params": DESK_PARAMS,
                                      "value": {"state": state_spec,
                                                "dump_chain": True}})
        res = run_cli("value", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        report = json.loads(res.stdout)
        params = paper_defaults(**DESK_PARAMS)
        vp = ValueParams.from_distributions(params)
        state = CompactState(tuple(EdgeEntry(s["device_id"], s["pathloss"],
                                             s["queue_segments"])
                                   for s in state_spec))
        a, b, c = components(state, vp)
        assert report["w1"] == pytest.approx(a, rel=1e-12)
        assert report["w2"] == pytest.approx(b, rel=1e-12)
        assert report["w3"] == pytest.approx(c, rel=1e-12)
        chain = (tmp_path / "chain.csv").read_text().splitlines()
        assert chain[0] == "row,col,value"
        assert len(chain) > 19

    def test_descending_ids_exit_config(self, tmp_path):
        state_spec = [
            {"device_id": 2, "pathloss": 2e-9, "queue_segments": 5},
            {"device_id": 1, "pathloss": 6e-9, "queue_segments": 3},
        ]
        cfg = write_config(tmp_path, {"params": DESK_PARAMS,
                                      "value": {"state": state_spec}})
        res = run_cli("value", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 2
        assert "invalid state spec" in json.loads(res.stderr)["detail"]


class TestLearn:
    def test_estimator_mode(self, tmp_path):
        cfg = write_config(tmp_path, {
            "params": DESK_PARAMS,
            "learn": {"mode": "estimator", "frames": 300, "log_every": 50}})
        res = run_cli("learn", "--config", cfg, "--out", str(tmp_path),
                      "--seed", "5")
        assert res.returncode == 0, res.stderr
        report = json.loads(res.stdout)
        assert 0.0 <= report["estimates"]["p_hat"] <= 1.0
        meta, header, rows = read_csv(tmp_path / "learning.csv")
        assert header == ["t", "n", "P_hat", "varpi_hat", "cbar_hat"]
        assert [r[0] for r in rows] == ["50", "100", "150", "200", "250",
                                        "300"]
        assert meta["seed"] == "5"

    def test_sgd_mode(self, tmp_path):
        cfg = write_config(tmp_path, {
            "params": DESK_PARAMS,
            "learn": {"mode": "sgd", "iterations": 5, "initial_p_r": 1e-9}})
        res = run_cli("learn", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        report = json.loads(res.stdout)
        assert report["sgd"]["iterations"] == 5
        assert 1e-12 <= report["sgd"]["p_r"] <= 1.0
        _, header, rows = read_csv(tmp_path / "sgd.csv")
        assert header == ["n", "p_r", "gradient"]
        assert [r[0] for r in rows] == ["1", "2", "3", "4", "5"]

    def test_joint_mode_writes_both_files(self, tmp_path):
        cfg = write_config(tmp_path, {
            "params": DESK_PARAMS,
            "learn": {"mode": "joint", "frames": 60, "iterations": 2,
                      "log_every": 20}})
        res = run_cli("learn", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "learning.csv").exists()
        assert (tmp_path / "sgd.csv").exists()
        report = json.loads(res.stdout)
        assert set(report["files"]) == {str(tmp_path / "learning.csv"),
                                        str(tmp_path / "sgd.csv")}


class TestBoundCheck:
    def test_passing_run(self, tmp_path):
        cfg = write_config(tmp_path, {
            "params": DESK_PARAMS,
            "bound_check": {"states": 2, "episodes": 30, "horizon": 80,
                            "analytic_rel_tol": 0.5}})
        res = run_cli("bound-check", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 0, res.stderr
        report = json.loads(res.stdout)
        assert all(report["assertions"].values())
        _, header, rows = read_csv(tmp_path / "bound_check.csv")
        assert header == ["state_id", "n_devices", "w_hat_baseline",
                          "w_hat_improved", "analytic_w_baseline",
                          "paired_ci99", "mc_se_baseline"]
        assert len(rows) == 2

    def test_failing_run_exits_assert(self, tmp_path):
        # a horizon far too short for the discounted tail: the Monte Carlo
        # mean cannot reach the infinite-horizon analytic value
        cfg = write_config(tmp_path, {
            "params": DESK_PARAMS,
            "bound_check": {"states": 3, "episodes": 40, "horizon": 5}})
        res = run_cli("bound-check", "--config", cfg, "--out", str(tmp_path))
        assert res.returncode == 4
        err = json.loads(res.stderr)
        assert err["error"] == "assertion"
        assert "analytic_matches_mc" in err["detail"]
        # the CSV is still written for inspection
        assert (tmp_path / "bound_check.csv").exists()
