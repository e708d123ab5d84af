"""Service endpoints and the CLI as its thin client."""

import json

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from byzcoin_lab.cli import main
from byzcoin_lab.service.app import app

client = TestClient(app)

BASE_CONFIG = {
    "name": "svc", "seed": 2, "window": 8, "branching": 2,
    "block_size_bytes": 4096, "duration_s": 900.0, "max_microblocks": 3,
    "block_interval_s": 1e9,
}


class TestAnalysisEndpoints:
    def test_health(self):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"

    def test_doublespend(self):
        response = client.post("/analyze/doublespend",
                               json={"attacker_share": 0.1, "confirmations": 2})
        assert response.status_code == 200
        assert response.json()["probability"] == pytest.approx(0.0509, abs=5e-4)

    def test_doublespend_validation(self):
        response = client.post("/analyze/doublespend",
                               json={"attacker_share": 1.5, "confirmations": 2})
        assert response.status_code == 422

    def test_membership(self):
        response = client.post("/analyze/membership",
                               json={"window": 144, "byzantine_prob": 0.25})
        body = response.json()
        assert body["tolerated"] == 48
        assert body["probability"] == pytest.approx(0.990, abs=5e-4)

    def test_membership_table(self):
        body = client.get("/analyze/membership/table").json()
        assert body["windows"] == [12, 100, 144, 288, 1008, 2016]
        assert body["formatted"]["0.25"] == ["0.842", "0.972", "0.990", "0.999", "0.999", "1.000"]
        assert body["formatted"]["0.30"] == ["0.723", "0.779", "0.832", "0.902", "0.989", "0.999"]

    def test_selfish(self):
        body = client.post("/analyze/selfish", json={"power": 0.25, "extra_bits": 2}).json()
        assert body["gain"] == pytest.approx(0.2562, abs=1e-4)
        assert body["profitable"] is True

    def test_required_wait(self):
        body = client.post("/analyze/required-wait",
                           json={"attacker_share": 0.0, "target": 0.001}).json()
        assert body["confirmations"] == 1
        response = client.post("/analyze/required-wait",
                               json={"attacker_share": 0.49999, "target": 1.0})
        assert response.json()["confirmations"] == 0


class TestScenarioEndpoints:
    def test_run_scenario(self):
        response = client.post("/scenarios/run", json={"config": BASE_CONFIG})
        assert response.status_code == 200
        body = response.json()
        assert body["report"]["safety_ok"] is True
        assert body["report"]["committed_blocks"] == 3
        assert body["trace_csv"].startswith("time_ms,node,event,bytes,height")
        assert body["blocks_csv"].startswith("height,latency_s")

    def test_run_rejects_unknown_keys(self):
        config = dict(BASE_CONFIG)
        config["blocksize"] = 1
        response = client.post("/scenarios/run", json={"config": config})
        assert response.status_code == 400
        assert "blocksize" in response.json()["detail"]

    def test_seed_override(self):
        first = client.post("/scenarios/run",
                            json={"config": BASE_CONFIG, "seed": 77}).json()
        assert first["report"]["seed"] == 77

    def test_sweep(self):
        response = client.post("/scenarios/sweep", json={
            "config": BASE_CONFIG, "axis": "hosts", "values": [5, 8],
        })
        body = response.json()
        assert len(body["points"]) == 2
        assert all(p["report"] is not None for p in body["points"])
        assert body["latency_csv"].splitlines()[0] == "hosts,mean_commit_latency_s,committed_blocks,error"


class TestCli:
    def setup_method(self):
        self.runner = CliRunner()

    def write_config(self, tmp_path, **overrides):
        import yaml

        config = dict(BASE_CONFIG)
        config.update(overrides)
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(config))
        return str(path)

    def test_run_clean_exit_zero(self, tmp_path):
        path = self.write_config(tmp_path)
        result = self.runner.invoke(main, ["run", path, "--out-dir", str(tmp_path / "out")])
        assert result.exit_code == 0, result.output
        assert "safety audit      : PASS" in result.output
        report = json.loads((tmp_path / "out" / "svc-report.json").read_text())
        assert report["committed_blocks"] == 3
        assert (tmp_path / "out" / "svc-trace.csv").exists()

    def test_run_seed_repeat_byte_identical_csv(self, tmp_path):
        path = self.write_config(tmp_path)
        self.runner.invoke(main, ["run", path, "--seed", "6", "--out-dir", str(tmp_path / "a")])
        self.runner.invoke(main, ["run", path, "--seed", "6", "--out-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "svc-trace.csv").read_bytes() == \
            (tmp_path / "b" / "svc-trace.csv").read_bytes()
        assert (tmp_path / "a" / "svc-blocks.csv").read_bytes() == \
            (tmp_path / "b" / "svc-blocks.csv").read_bytes()

    def test_run_config_error_exit_two(self, tmp_path):
        path = self.write_config(tmp_path, not_a_key=5)
        result = self.runner.invoke(main, ["run", path])
        assert result.exit_code == 2
        assert "not_a_key" in result.output

    def test_stalled_run_with_clean_audit_exits_zero(self, tmp_path):
        path = self.write_config(
            tmp_path, window=11, duration_s=2500.0, max_microblocks=None,
            adversaries=[{"behavior": "vote-withholder", "miners": 1, "genesis_shares": 4}],
        )
        result = self.runner.invoke(main, ["run", path])
        assert result.exit_code == 0, result.output
        assert "stalled           : True" in result.output
        assert "safety audit      : PASS" in result.output

    def test_sweep_cli(self, tmp_path):
        path = self.write_config(tmp_path)
        result = self.runner.invoke(main, [
            "sweep", path, "--axis", "hosts", "--values", "5,8",
            "--out-dir", str(tmp_path / "sweep"),
        ])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "sweep" / "sweep-hosts.csv").exists()

    def test_analyze_matches_published_values(self):
        result = self.runner.invoke(main, ["analyze", "selfish", "-c", "0.25", "-n", "2"])
        assert result.exit_code == 0
        assert "0.2562" in result.output

        result = self.runner.invoke(main, ["analyze", "doublespend", "-q", "0", "-z", "6"])
        assert result.exit_code == 0
        assert "= 0" in result.output

        result = self.runner.invoke(main, ["analyze", "membership", "--paper-table"])
        assert result.exit_code == 0
        assert "0.842" in result.output and "0.990" in result.output

    def test_analyze_csv_mode(self):
        result = self.runner.invoke(main, ["analyze", "membership", "--paper-table", "--csv"])
        lines = result.output.strip().splitlines()
        assert lines[0] == "p,12,100,144,288,1008,2016"
        assert lines[1].startswith("0.25,0.842")
