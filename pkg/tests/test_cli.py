import json
import socket
import threading

import numpy as np
import pytest

from trimpc.cli import (
    EXIT_CONFIG,
    EXIT_HANDSHAKE,
    EXIT_OK,
    main,
)


def free_ports(k):
    socks = [socket.socket() for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def write_party_config(tmp_path, party, ports, f=14, iterations=2, tag=""):
    cfg = {
        "party": party,
        "mode": "sockets",
        "ring": {"n": 64, "f": f},
        "seed": "cli-sockets",
        "timeout": 20,
        "endpoints": {
            "P0": {"host": "127.0.0.1", "port": ports[0]},
            "P1": {"host": "127.0.0.1", "port": ports[1]},
        },
        "job": {
            "type": "train-lr",
            "iterations": iterations,
            "batch_size": 32,
            "learning_rate": 0.01,
            "seed": 3,
        },
        "out": str(tmp_path / f"stats-{party}{tag}.json"),
    }
    path = tmp_path / f"cfg-{party}{tag}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestBenchAndTrain:
    def test_bench_sin_writes_rows(self, tmp_path, capsys):
        out = tmp_path / "sin.jsonl"
        assert main(["bench", "--suite", "sin", "--out", str(out)]) == EXIT_OK
        row = json.loads(out.read_text().splitlines()[0])
        assert row["online_bits_per_elem"] == 38

    def test_bench_softmax_comm(self, capsys):
        assert main(["bench", "--suite", "softmax-comm"]) == EXIT_OK
        rows = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l]
        by_m = {r["classes"]: r for r in rows}
        assert by_m[10]["measured_per_iter_online_bits"] == 1408
        assert by_m[10]["online_rounds_16_steps"] == 32

    def test_train_lr_jsonl(self, tmp_path):
        out = tmp_path / "lr.jsonl"
        rc = main(
            ["train-lr", "--iterations", "3", "--batch-size", "32", "--seed", "1",
             "--out", str(out)]
        )
        assert rc == EXIT_OK
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert {"iter", "loss_proxy", "auc", "domain_warnings"} <= set(lines[0])
        assert "comm" in lines[-1]

    def test_train_cnn_toy(self, tmp_path):
        out = tmp_path / "cnn.jsonl"
        rc = main(
            ["train-cnn-toy", "--iterations", "2", "--batch-size", "4",
             "--lr", "0.05", "--out", str(out)]
        )
        assert rc == EXIT_OK
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert "train_acc" in lines[0]

    def test_train_lr_from_csv(self, tmp_path):
        data = tmp_path / "d.csv"
        rng = np.random.default_rng(0)
        rows = []
        for _ in range(64):
            y = rng.integers(0, 2)
            rows.append(f"{y - 0.5 + rng.normal():.4f},{y + rng.normal():.4f},{y}")
        data.write_text("\n".join(rows))
        rc = main(
            ["train-lr", "--data", str(data), "--iterations", "2",
             "--batch-size", "16", "--out", str(tmp_path / "o.jsonl")]
        )
        assert rc == EXIT_OK


class TestConfigErrors:
    def test_missing_config_file(self):
        assert main(["run-party", "--config", "/nonexistent.json"]) == EXIT_CONFIG

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run-party", "--config", str(p)]) == EXIT_CONFIG

    def test_bad_party_name(self, tmp_path):
        p = tmp_path / "bad2.json"
        p.write_text(json.dumps({"party": "P9"}))
        assert main(["run-party", "--config", str(p)]) == EXIT_CONFIG

    def test_bad_csv_is_config_error(self, tmp_path):
        data = tmp_path / "bad.csv"
        data.write_text("1.0,oops,0\n")
        rc = main(["train-lr", "--data", str(data), "--iterations", "1"])
        assert rc == EXIT_CONFIG


class TestRunPartySockets:
    def _run_three(self, tmp_path, fs, tag=""):
        ports = free_ports(2)
        rcs = {}

        def run(party, f):
            cfg = write_party_config(tmp_path, party, ports, f=f, tag=tag)
            rcs[party] = main(["run-party", "--config", cfg])

        threads = [
            threading.Thread(target=run, args=(p, f))
            for p, f in zip(("P0", "P1", "P2"), fs)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join(60)
        return rcs

    def test_happy_path_all_exit_zero(self, tmp_path):
        rcs = self._run_three(tmp_path, (14, 14, 14))
        assert rcs == {"P0": EXIT_OK, "P1": EXIT_OK, "P2": EXIT_OK}
        stats = json.loads((tmp_path / "stats-P0.json").read_text())
        assert stats["rounds"]["online"] > 0

    def test_ring_mismatch_fails_handshake(self, tmp_path):
        rcs = self._run_three(tmp_path, (14, 13, 14), tag="mm")
        assert EXIT_HANDSHAKE in rcs.values()
        assert all(rc != EXIT_OK for rc in rcs.values())

    def test_local_sim_mode_single_process(self, tmp_path):
        cfg = {
            "party": "P0",
            "mode": "local-sim",
            "ring": {"n": 64, "f": 14},
            "seed": "cli-local",
            "job": {"type": "train-lr", "iterations": 2, "batch_size": 32, "seed": 1},
            "out": str(tmp_path / "stats.json"),
        }
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["run-party", "--config", str(p)]) == EXIT_OK
        stats = json.loads((tmp_path / "stats.json").read_text())
        assert {"edges", "rounds"} <= set(stats)


class TestReportMerge:
    def test_merges_edges_and_rounds(self, tmp_path):
        r1 = {"edges": [{"from": "P0", "to": "P1", "phase": "online", "bits": 64,
                         "bytes": 8.0, "wire_bytes": 29}],
              "rounds": {"offline": 0, "online": 3}}
        r2 = {"edges": [{"from": "P2", "to": "P1", "phase": "offline", "bits": 128,
                         "bytes": 16.0, "wire_bytes": 37}],
              "rounds": {"offline": 0, "online": 3}}
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        p1.write_text(json.dumps(r1))
        p2.write_text(json.dumps(r2))
        out = tmp_path / "m.json"
        assert main(["report-merge", str(p1), str(p2), "--out", str(out)]) == EXIT_OK
        merged = json.loads(out.read_text())
        assert len(merged["edges"]) == 2
        assert merged["rounds"]["online"] == 3
