import functools
import hashlib
import http.server
import json
import threading

import pytest

import texttpp.cli as cli
from texttpp.core import load_dataset, save_dataset
from texttpp.gradcheck import GradCheckResult

TRAIN_FLAGS = [
    "--hidden-size", "8", "--num-layers", "1", "--num-heads", "2", "--ffn-size", "16",
    "--max-epoch", "2", "--num-integrals", "4", "--batch-size", "4",
]  # fmt: skip


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture
def data_file(tmp_path, toy_dataset):
    path = tmp_path / "toy.json"
    save_dataset(toy_dataset, path)
    return path


@pytest.fixture
def trained(tmp_path, data_file):
    out = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_file), "--output-dir", str(out), *TRAIN_FLAGS]) == 0
    return out


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        args = ["simulate", "poisson", "--rate", "2", "--types", "1", "--horizon", "100", "--seed", "7"]
        assert run([*args, "--out", tmp_path / "a.json"])[0] == 0
        assert run([*args, "--out", tmp_path / "b.json"])[0] == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_hawkes(self, tmp_path):
        out = tmp_path / "h.json"
        code, _ = run(["simulate", "hawkes", "--types", "2", "--mu", "0.2", "--adjacency", "0.3",
                       "--horizon", "20", "--num-sequences", "5", "--out", out])  # fmt: skip
        assert code == 0
        ds = load_dataset(out)
        assert ds.num_types == 2 and [t.text for t in ds.types] == ["type alpha", "type beta"]

    def test_unstable_hawkes_is_usage_error(self, tmp_path):
        code, _ = run(["simulate", "hawkes", "--types", "1", "--adjacency", "1.5", "--out", tmp_path / "x.json"])
        assert code == 1


class TestStatsPerturb:
    def test_stats_json(self, data_file, toy_dataset, capsys):
        code, out = run(["stats", data_file, "--json"], capsys)
        assert code == 0
        stats = json.loads(out.out)
        assert stats["num_types"] == 3 and stats["num_sequences"] == 12
        assert stats["num_events"] == sum(len(s) for s in toy_dataset.sequences)

    def test_stats_text(self, data_file, capsys):
        code, out = run(["stats", data_file], capsys)
        assert code == 0 and "event types    3" in out.out

    def test_perturb(self, data_file, tmp_path, toy_dataset):
        out = tmp_path / "p.json"
        assert run(["perturb", data_file, "--ratio", "0.05", "--seed", "1", "--out", out])[0] == 0
        ds = load_dataset(out)
        assert len(ds) == len(toy_dataset)
        assert all((s.times[1:] >= s.times[:-1]).all() for s in ds.sequences)

    def test_negative_ratio(self, data_file, tmp_path):
        assert run(["perturb", data_file, "--ratio", "-1", "--out", tmp_path / "p.json"])[0] == 1


class TestTrainEval:
    def test_outputs(self, trained):
        assert {p.name for p in trained.iterdir()} >= {"config.yaml", "train_log.jsonl", "model.json"}
        log = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2]
        assert {"train_objective", "val_objective", "val_accuracy", "val_rmse", "val_ll_per_event"} <= set(log[0])

    def test_eval_schema(self, trained, capsys):
        code, out = run(["eval", "--checkpoint", trained / "model.json"], capsys)
        assert code == 0
        metrics = json.loads(out.out)
        assert set(metrics) == {"ll_per_event", "accuracy", "rmse", "num_events", "num_sequences", "conventions"}
        assert metrics["conventions"]["split"] == "test"

    def test_config_file_and_override(self, tmp_path, data_file):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(f"data: {data_file}\nhidden_size: 8\nnum_layers: 1\nffn_size: 16\nmax_epoch: 3\nnum_integrals: 4\n")
        out = tmp_path / "run"
        assert run(["train", "--config", cfg, "--max-epoch", "1", "--output-dir", out])[0] == 0
        log = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log) == 1
        saved = (out / "config.yaml").read_text()
        assert "max_epoch: 1" in saved and "hidden_size: 8" in saved

    def test_predict(self, trained, tmp_path, toy_dataset):
        out = tmp_path / "pred.jsonl"
        assert run(["predict", "--checkpoint", trained / "model.json", "--out", out])[0] == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == sum(len(s) for s in toy_dataset.sequences)
        assert rows[0]["next_type_text"] in {"Nice Question", "Good Answer", "Popular Question"}
        assert abs(sum(rows[0]["type_probs"]) - 1) < 1e-12

    def test_eval_determinism(self, tmp_path, data_file):
        outs = []
        for name in ("a", "b"):
            run_dir = tmp_path / name
            assert run(["train", "--data", data_file, "--output-dir", run_dir, *TRAIN_FLAGS])[0] == 0
            assert run(["eval", "--checkpoint", run_dir / "model.json", "--out", run_dir / "m.json"])[0] == 0
            outs.append((run_dir / "m.json").read_bytes())
        assert outs[0] == outs[1]


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        code, out = run(["train", "--bogus"], capsys)
        assert code == 1 and "error" in out.err

    def test_no_command(self):
        assert run([])[0] == 1

    def test_missing_data(self, tmp_path):
        assert run(["stats", tmp_path / "nope.json"])[0] == 2

    def test_schema_violation(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "x", "types": ["a"], "sequences": [{"id": "s", "times": [1, 0], "types": [0, 0]}]}))
        assert run(["stats", bad])[0] == 2

    def test_malformed_config(self, tmp_path, data_file):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("learning_rate: [unclosed\n")
        assert run(["train", "--config", cfg, "--data", data_file])[0] == 1

    def test_unknown_config_key(self, tmp_path, data_file):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("learning_rat: 0.1\n")
        assert run(["train", "--config", cfg, "--data", data_file])[0] == 1

    def test_bad_value(self, data_file, tmp_path):
        assert run(["train", "--data", data_file, "--hidden-size", "eight", "--output-dir", tmp_path])[0] == 1

    def test_train_without_data(self):
        assert run(["train"])[0] == 1

    def test_divergence_exit(self, monkeypatch, data_file, tmp_path):
        def boom(*a, **k):
            raise cli.NumericalError("diverged at epoch 1, batch 0")

        monkeypatch.setattr(cli.TPPEstimator, "fit", boom)
        assert run(["train", "--data", data_file, "--output-dir", tmp_path / "r"])[0] == 3

    @pytest.mark.parametrize("err,code", [(1e-9, 0), (1e-2, 3)])
    def test_gradcheck_exit(self, monkeypatch, capsys, err, code):
        fake = [GradCheckResult("thp", "sinusoidal", {"w": err}, 10, 0.1)]
        monkeypatch.setattr(cli, "run_suite", lambda seed=0: fake)
        rc, out = run(["gradcheck"], capsys)
        assert rc == code and "max relative error" in out.out


@pytest.fixture
def http_root(tmp_path):
    root = tmp_path / "www"
    root.mkdir()
    handler = functools.partial(QuietHandler, directory=str(root))
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield root, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


class QuietHandler(http.server.SimpleHTTPRequestHandler):
    def log_message(self, *args):
        pass


class TestFetch:
    def test_download_and_cache(self, http_root, data_file, tmp_path, capsys):
        root, url = http_root
        payload = data_file.read_bytes()
        (root / "toy.json").write_bytes(payload)
        digest = hashlib.sha256(payload).hexdigest()
        cache = tmp_path / "cache"
        code, out = run(["fetch", f"{url}/toy.json", "--sha256", digest, "--cache-dir", cache], capsys)
        assert code == 0 and "fetched" in out.out
        assert (cache / "toy.json").read_bytes() == payload
        code, out = run(["fetch", f"{url}/toy.json", "--sha256", digest, "--cache-dir", cache], capsys)
        assert code == 0 and "cached" in out.out

    def test_hash_mismatch(self, http_root, data_file, tmp_path):
        root, url = http_root
        (root / "toy.json").write_bytes(data_file.read_bytes())
        code, _ = run(["fetch", f"{url}/toy.json", "--sha256", "0" * 64, "--cache-dir", tmp_path / "c"])
        assert code == 2 and not (tmp_path / "c" / "toy.json").exists()

    def test_invalid_payload_not_cached(self, http_root, tmp_path):
        root, url = http_root
        (root / "junk.json").write_bytes(b"not json")
        digest = hashlib.sha256(b"not json").hexdigest()
        code, _ = run(["fetch", f"{url}/junk.json", "--sha256", digest, "--cache-dir", tmp_path / "c"])
        assert code == 2 and not list((tmp_path / "c").iterdir())

    def test_unreachable(self, tmp_path):
        code, _ = run(["fetch", "http://127.0.0.1:9/x.json", "--sha256", "0" * 64, "--cache-dir", tmp_path, "--timeout", "2"])
        assert code == 2
