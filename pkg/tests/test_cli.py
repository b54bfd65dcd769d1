import json

import pytest

from accd.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def campaign_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli("synth", "campaign", "--users", "40", "--coordinated", "5", "--bins", "80", "--seed", "1", "--out", str(out))
    assert code == EXIT_OK
    return out


class TestExitCodes:
    def test_unknown_flag_is_usage(self, capsys):
        assert run_cli("detect", "--frobnicate") == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_is_usage(self):
        assert run_cli("dance") == EXIT_USAGE

    def test_missing_file_is_data_error(self, tmp_path):
        assert run_cli("detect", "--events", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "run")) == EXIT_DATA

    def test_bad_row_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"user_id": "a", "timestamp": -3}\n')
        assert run_cli("ingest", "--events", str(bad)) == EXIT_DATA


class TestSynth:
    def test_campaign_files(self, campaign_dir):
        truth = json.loads((campaign_dir / "truth.json").read_text())
        assert len(truth["planted_pairs"]) == 4
        lines = (campaign_dir / "events.jsonl").read_text().splitlines()
        assert len(lines) > 100
        row = json.loads(lines[0])
        assert {"user_id", "timestamp", "action_type"} <= set(row)

    def test_coupled(self, tmp_path, capsys):
        assert run_cli("synth", "coupled", "--steps", "120", "--coupling", "0.1", "--out", str(tmp_path)) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["direction"] == "x->y"
        assert (tmp_path / "series.jsonl").exists()

    def test_frame(self, tmp_path):
        assert run_cli("synth", "frame", "--n", "50", "--out", str(tmp_path)) == EXIT_OK
        assert len((tmp_path / "frame.jsonl").read_text().splitlines()) == 50

    def test_blobs(self, tmp_path):
        assert run_cli("synth", "blobs", "--n", "40", "--out", str(tmp_path)) == EXIT_OK
        assert len((tmp_path / "blobs.jsonl").read_text().splitlines()) == 40


class TestIngest:
    def test_summary(self, campaign_dir, capsys):
        assert run_cli("ingest", "--events", str(campaign_dir / "events.jsonl")) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["users"] <= 40
        assert summary["bucket_key"].startswith("u")


@pytest.fixture(scope="module")
def run_dir(campaign_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run_cli(
        "detect",
        "--events", str(campaign_dir / "events.jsonl"),
        "--out", str(out),
        "--store", str(out / "store"),
        "--seed", "1",
    )
    assert code == EXIT_OK
    return out


class TestDetectAndDownstream:
    def test_artifacts(self, run_dir):
        assert (run_dir / "manifest.json").exists()
        assert (run_dir / "edges.jsonl").exists()

    def test_replay(self, run_dir, capsys):
        assert run_cli("replay", "--run", str(run_dir)) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["run_id"]

    def test_validate_command(self, campaign_dir, run_dir, tmp_path, capsys):
        out = tmp_path / "effects.jsonl"
        code = run_cli(
            "validate",
            "--events", str(campaign_dir / "events.jsonl"),
            "--edges", str(run_dir / "edges.jsonl"),
            "--out", str(out),
        )
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["edges"] == len(out.read_text().splitlines())

    def test_classify_command(self, campaign_dir, tmp_path, capsys):
        store = tmp_path / "store"
        store.mkdir()
        truth = json.loads((campaign_dir / "truth.json").read_text())
        labels = store / "labels.jsonl"
        rows = []
        for i, uid in enumerate(truth["coordinated_users"]):
            rows.append({"user": uid, "label": "Fake", "source": "human", "ts": 0, "rev": 1})
        for i, uid in enumerate(truth["background_users"][:8]):
            rows.append({"user": uid, "label": "Individual", "source": "human", "ts": 0, "rev": 1})
        labels.write_text("".join(json.dumps(r) + "\n" for r in rows))
        out = tmp_path / "clf"
        code = run_cli("classify", "--events", str(campaign_dir / "events.jsonl"), "--store", str(store), "--out", str(out))
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["trained"] is True
        assert (out / "model.bin").exists()
        assert (out / "queue.jsonl").exists()


def test_config_file_with_flag_override(campaign_dir, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"influence_floor": 0.9, "seed": 99, "cross_fraction": 0.1}))
    out = tmp_path / "run"
    code = run_cli(
        "detect",
        "--events", str(campaign_dir / "events.jsonl"),
        "--out", str(out),
        "--config", str(config),
        "--seed", "7",  # flag overrides the file
    )
    assert code == EXIT_OK
    capsys.readouterr()
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["influence_floor"] == 0.9
    assert report["config"]["cross_fraction"] == 0.1
    assert report["config"]["seed"] == 7


def test_unknown_config_key_is_data_error(campaign_dir, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"influence_flour": 0.9}))
    code = run_cli(
        "detect",
        "--events", str(campaign_dir / "events.jsonl"),
        "--out", str(tmp_path / "run"),
        "--config", str(config),
    )
    assert code == EXIT_USAGE


def test_detect_empty_events(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "run"
    assert run_cli("detect", "--events", str(empty), "--out", str(out)) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["n_candidates"] == 0 and report["n_validated"] == 0
    assert (out / "edges.jsonl").read_text() == ""


def test_bench_tiny(tmp_path, capsys):
    out = tmp_path / "bench.json"
    code = run_cli("bench", "--users", "30", "--clusters", "3", "--bins", "70", "--workers", "1", "--out", str(out))
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["scheduled_pairs"] < report["naive_pairs"]
    assert report["speedup"] > 0
