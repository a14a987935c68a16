import json
import socket
import threading

import pytest

from fgse.cli import main

TINY = {"model": {"d_model": 8, "n_heads": 2, "window": 6}, "training": {"epochs": 1, "downsample": 1}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "-o", str(root / "suite.jsonl"), "--subjects", "2", "--episodes", "2", "--seed", "3"]) == 0
    (root / "run.json").write_text(json.dumps(TINY))
    assert main(["train", str(root / "suite.jsonl"), "--config", str(root / "run.json"), "--fold", "all",
                 "-o", str(root / "runs")]) == 0
    return root


def _lines(text):
    return [json.loads(x) for x in text.splitlines() if x.startswith("{")]


def test_synth_outputs(workspace):
    manifest = json.loads((workspace / "suite.manifest.json").read_text())
    assert manifest["episodes"] == 4 and manifest["seed"] == 3
    assert (workspace / "suite.vocab.json").exists()


def test_train_outputs(workspace):
    runs = workspace / "runs"
    assert (runs / "fold0.ckpt.json").exists() and (runs / "fold1.ckpt.json").exists()
    assert (runs / "fold0.metrics.csv").read_text().startswith("epoch,loss")
    manifest = json.loads((runs / "manifest.json").read_text())
    assert {"config", "seed", "dataset_hash", "version"} <= set(manifest)


def test_eval_and_stream_agree(workspace, capsys):
    ckpt = workspace / "runs" / "fold1.ckpt.json"
    pred = workspace / "pred.jsonl"
    assert main(["eval", str(ckpt), "--data", str(workspace / "suite.jsonl"), "--predictions", str(pred)]) == 0
    rows = _lines(capsys.readouterr().out)
    assert rows[0]["fold"] == 1 and 0 <= rows[0]["f1_macro"] <= 1
    assert rows[-1]["folds"] == 1
    evald = {json.loads(x)["episode"]: json.loads(x)["labels"] for x in pred.read_text().splitlines()}

    # stream the held-out subject's episodes
    test_lines = [x for x in (workspace / "suite.jsonl").read_text().splitlines() if json.loads(x)["subject"] == 1]
    src = workspace / "test.jsonl"
    src.write_text("\n".join(test_lines) + "\n")
    assert main(["stream", str(ckpt), str(src)]) == 0
    out = _lines(capsys.readouterr().out)
    streamed = {}
    eps = [json.loads(x)["episode"] for x in test_lines]
    labels = [[r["label"] for r in out[i:i + 2]] for i in range(0, len(out), 2)]
    assert len(labels) == len(test_lines)
    for ep, lab in zip(eps, labels):
        streamed.setdefault(ep, []).append(lab)
    assert streamed == {ep: evald[ep] for ep in streamed}


def test_stream_downsampled_and_stdin(workspace, capsys, monkeypatch):
    import io
    ckpt = workspace / "runs" / "fold0.ckpt.json"
    lines = (workspace / "suite.jsonl").read_text().splitlines()[:40]
    monkeypatch.setattr("sys.stdin", io.StringIO("\n".join(lines)))
    assert main(["stream", str(ckpt), "-", "-D", "3", "--provisional"]) == 0
    out = _lines(capsys.readouterr().out)
    final = [r for r in out if not r.get("provisional")]
    assert sorted({r["t"] for r in final}) == sorted({json.loads(x)["t"] for x in lines})
    assert any(r.get("provisional") for r in out)


def test_stream_over_tcp(workspace, capsys):
    ckpt = workspace / "runs" / "fold0.ckpt.json"
    payload = "\n".join((workspace / "suite.jsonl").read_text().splitlines()[:10]).encode() + b"\n"
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)

    def serve():
        conn, _ = srv.accept()
        conn.sendall(payload)
        conn.close()

    th = threading.Thread(target=serve)
    th.start()
    assert main(["stream", str(ckpt), f"tcp://127.0.0.1:{srv.getsockname()[1]}"]) == 0
    th.join()
    srv.close()
    assert len(_lines(capsys.readouterr().out)) == 20


def test_bench_reports_throughput_and_delay(workspace, capsys):
    assert main(["bench", str(workspace / "suite.jsonl"), "--config", str(workspace / "run.json"),
                 "--frames", "60", "-D", "3", "--manifest", str(workspace / "bench.json")]) == 0
    out = capsys.readouterr().out
    report = _lines(out)[-1]
    assert "graphs/s" in out and report["graphs"] == 60
    assert report["structural_delay_s"] == 6 / report["fps"] and report["fps"] == 5.0
    assert json.loads((workspace / "bench.json").read_text())["command"] == "bench"


def test_scaling_and_ablation(workspace, capsys):
    csv_path = workspace / "scaling.csv"
    assert main(["scaling", str(workspace / "suite.jsonl"), "--config", str(workspace / "run.json"),
                 "--windows", "4", "6", "--seeds", "0", "--folds", "0", "-o", str(csv_path)]) == 0
    assert len(csv_path.read_text().splitlines()) == 3
    assert main(["ablation", str(workspace / "suite.jsonl"), "--config", str(workspace / "run.json"),
                 "--seeds", "0", "--folds", "0", "-o", str(workspace / "abl.csv")]) == 0
    variants = [r["variant"] for r in _lines(capsys.readouterr().out) if "variant" in r]
    assert variants == ["majority_voting", "center", "single", "global_mean"]


def test_convert(tmp_path, capsys):
    frames = [{"t": t, "objects": [{"id": 0, "class": "RightHand", "box": [0.2 * t, 0, 0, .1, .1, .1]},
                                   {"id": 1, "class": "screw", "box": [1, 0, 0, .1, .1, .1]}]} for t in range(3)]
    doc = {"subject": 1, "fps": 30, "frames": frames,
           "labels": ["approach:screw", "approach:screw", "grab:screw"]}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    assert main(["convert", str(tmp_path / "c.json"), "--format", "coax-boxes", "-o", str(tmp_path / "c.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "merged label pairs" in out and "grab" in out
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 3
    assert (tmp_path / "c.manifest.json").exists()


def test_usage_errors_exit_2(workspace, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["convert", "x", "--format", "csv", "-o", "y"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"widht": 3}}))
    assert main(["train", str(workspace / "suite.jsonl"), "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"trainig": {}}))
    assert main(["train", str(workspace / "suite.jsonl"), "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"training": {"epoch": 1}}))
    assert main(["train", str(workspace / "suite.jsonl"), "--config", str(bad)]) == 2
    assert main(["train"]) == 2
    assert main(["eval", str(tmp_path / "none.ckpt.json"), "--data", str(workspace / "suite.jsonl")]) == 2
    assert main(["train", str(workspace / "suite.jsonl"), "--config", str(workspace / "run.json"),
                 "--fold", "9"]) == 2
    assert main(["train", str(workspace / "suite.jsonl"), "--fold", "first"]) == 2
    assert not (tmp_path / "runs").exists()
    err = capsys.readouterr().err
    assert "widht" in err and "trainig" in err


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    broken = tmp_path / "broken.jsonl"
    broken.write_text("{\"t\": 0}\n{nope\n")
    ckpt = workspace / "runs" / "fold0.ckpt.json"
    assert main(["stream", str(ckpt), str(broken)]) == 1
    assert "broken.jsonl:1" in capsys.readouterr().err
    assert main(["convert", str(tmp_path / "missing.json"), "--format", "bimacs-json", "-o", str(tmp_path / "o")]) == 1


def test_thread_cap(workspace, monkeypatch, capsys):
    monkeypatch.setenv("FGSE_THREADS", "1")
    assert main(["bench", str(workspace / "suite.jsonl"), "--config", str(workspace / "run.json"),
                 "--frames", "10"]) == 0
    assert _lines(capsys.readouterr().out)[-1]["threads"] == "1"
    monkeypatch.setenv("FGSE_THREADS", "many")
    assert main(["bench", str(workspace / "suite.jsonl"), "--frames", "10"]) == 2
