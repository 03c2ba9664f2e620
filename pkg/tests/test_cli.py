import json
import subprocess
import sys

import pytest

from segcap.cli import main

REFS = ['{"image_id": "img1", "caption": "a girl sits at a table"}',
        '{"image_id": "img1", "caption": "a young girl at a table"}',
        '{"image_id": "img2", "caption": "a dog runs on grass"}']
CANDS = ['{"image_id": "img1", "candidate_id": 0, "caption": "a girl at a table", "score": -1.0}',
         '{"image_id": "img1", "candidate_id": 1, "caption": "a young girl", "score": -2.0}',
         '{"image_id": "img2", "candidate_id": 0, "caption": "a dog on grass", "score": -1.5}',
         '{"image_id": "img2", "candidate_id": 1, "caption": "a dog runs", "score": -2.5}']
PROPS = [
    '{"image_id": "C1", "kind": "reference", "props": [["girl"], ["table"], ["girl", "sit-at", "table"]]}',
    '{"image_id": "C1", "kind": "reference", "props": [["girl"], ["girl", "young"]]}',
    '{"image_id": "C1", "kind": "candidate", "candidate_id": 0, "props": [["girl"], ["table"], ["girl", "sit-at", "table"]]}',
    '{"image_id": "C1", "kind": "candidate", "candidate_id": 1, "props": [["girl"], ["table"], ["girl", "sit-at", "table"]]}',
    '{"image_id": "C2", "kind": "reference", "props": [["girl"], ["table"], ["girl", "sit-at", "table"]]}',
    '{"image_id": "C2", "kind": "reference", "props": [["girl"], ["girl", "young"]]}',
    '{"image_id": "C2", "kind": "candidate", "candidate_id": 0, "props": [["girl"], ["table"], ["girl", "sit-at", "table"]]}',
    '{"image_id": "C2", "kind": "candidate", "candidate_id": 1, "props": [["Girl"], ["girl", "young"]]}',
]
UNITS = ['{"id": "u1", "image_id": "img1", "units": [5, 5, 5, 7, 7, 32], "duration_s": 2.0, "text": "A girl, sitting!"}',
         '{"id": "u2", "image_id": "img2", "units": [7, 7, 5, 5, 32, 32], "duration_s": 20.0, "text": "a dog"}']


@pytest.fixture
def files(tmp_path):
    out = {}
    for name, lines in [("refs", REFS), ("cands", CANDS), ("props", PROPS), ("units", UNITS)]:
        p = tmp_path / f"{name}.jsonl"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out[name] = str(p)
    out["dir"] = tmp_path
    return out


def run(argv, capsys):
    code = main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


def test_eval_spice_worked_example(files, capsys):
    code, out, _ = run(["eval", "spice", "--props", files["props"], "--mode", "m-spice", "--n", "2",
                        "--out", "-"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["per_image"]["C2"]["f1"] == 1.0
    assert rep["per_image"]["C1"]["f1"] == pytest.approx(6 / 7)
    assert {"precision", "recall"} <= set(rep)


def test_eval_ngram(files, capsys):
    code, out, _ = run(["eval", "ngram", "--candidates", files["cands"], "--references", files["refs"],
                        "--metric", "bleu4,rouge"], capsys)
    rep = json.loads(out)
    assert code == 0 and set(rep["metrics"]) == {"bleu4", "rouge"} and rep["num_images"] == 2


def test_eval_ngram_id_mismatch(files, capsys, tmp_path):
    short = tmp_path / "short.jsonl"
    short.write_text(CANDS[0] + "\n")
    code, _, err = run(["eval", "ngram", "--candidates", str(short), "--references", files["refs"]], capsys)
    assert code == 1
    e = error_of(err)
    assert e["error"] == "IdMismatch" and "img2" in e["message"]


def test_rle_round_trip(files, capsys, tmp_path):
    enc = tmp_path / "enc.jsonl"
    assert run(["rle", "encode", "--in", files["units"], "--keep-durations", "--out", str(enc)], capsys)[0] == 0
    first = json.loads(enc.read_text().splitlines()[0])
    assert first["units"] == [5, 7, 32] and first["durations"] == [3, 2, 1]
    code, out, _ = run(["rle", "expand", "--in", str(enc)], capsys)
    assert code == 0
    assert [json.loads(l)["units"] for l in out.splitlines()] == [[5, 5, 5, 7, 7, 32], [7, 7, 5, 5, 32, 32]]


def test_rle_expand_without_durations(files, capsys):
    code, _, err = run(["rle", "expand", "--in", files["units"]], capsys)
    assert code == 1 and error_of(err)["error"] == "MissingDurations"


def test_stats(files, capsys):
    code, out, _ = run(["stats", "--in", files["units"], "--max-duration", "15"], capsys)
    s = json.loads(out)
    assert code == 0
    assert s["num_utterances"] == 2 and s["duration_mean_s"] == 2.0 and s["vocabulary_size"] == 4


def test_fit_and_decode(files, capsys, tmp_path):
    model = tmp_path / "model.json"
    assert run(["fit", "--in", files["units"], "--order", "3", "--rle", "--out", str(model)], capsys)[0] == 0
    header = json.loads(model.read_text())
    assert {"order", "alpha", "vocabulary"} <= set(header)
    ctx = tmp_path / "ctx.jsonl"
    ctx.write_text('{"image_id": "img1"}\n{"image_id": "img2"}\n')
    code, out, _ = run(["decode", "--model", str(model), "--contexts", str(ctx), "--method", "beam",
                        "--beam", "3", "--n", "2"], capsys)
    rows = [json.loads(l) for l in out.splitlines()]
    assert code == 0 and len(rows) == 4
    assert rows[0]["caption"] == "5 7 32" and rows[0]["candidate_id"] == 0


def test_decode_bad_model_file(files, capsys, tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    ctx = tmp_path / "ctx.jsonl"
    ctx.write_text('{"image_id": "a"}\n')
    code, _, err = run(["decode", "--model", str(bad), "--contexts", str(ctx)], capsys)
    assert code == 1


def test_vocab(files, capsys):
    code, out, _ = run(["vocab", "--candidates", files["cands"], "--n", "2", "--min-count", "2"], capsys)
    assert code == 0 and json.loads(out)["vocab_size"] == 3


def test_report(files, capsys, tmp_path):
    pts = tmp_path / "pts.jsonl"
    pts.write_text('{"method": "b", "n": 2, "metric": "m", "value": 0.5}\n'
                   '{"method": "a", "n": 1, "metric": "m", "value": 1}\n')
    code, out, _ = run(["report", "--points", str(pts), "--format", "csv"], capsys)
    assert code == 0 and out == "method,n,metric,value\na,1,m,1.0\nb,2,m,0.5\n"


def test_validate(files, capsys, tmp_path):
    code, out, _ = run(["validate", "--candidates", files["cands"], "--references", files["refs"]], capsys)
    assert code == 0 and out == ""
    dup = tmp_path / "dup.jsonl"
    dup.write_text("\n".join(CANDS + [CANDS[0]]) + "\n")
    code, out, err = run(["validate", "--candidates", str(dup)], capsys)
    diag = json.loads(out.splitlines()[0])
    assert code == 1 and diag["kind"] == "DuplicateKey" and diag["line"] == 5
    assert run(["validate"], capsys)[0] == 1


def test_missing_input_exit_2(files, capsys):
    code, _, err = run(["stats", "--in", "/nonexistent/u.jsonl"], capsys)
    e = error_of(err)
    assert code == 2 and e["path"] == "/nonexistent/u.jsonl"


def test_malformed_record_exit_1(files, capsys, tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(REFS[0] + "\n" + '{"image_id": 3}\n')
    code, _, err = run(["eval", "ngram", "--candidates", files["cands"], "--references", str(p)], capsys)
    e = error_of(err)
    assert code == 1 and e["error"] == "MalformedRecord" and e["line"] == 2


def test_usage_errors_exit_1(capsys):
    assert run(["eval", "spice"], capsys)[0] == 1
    assert run(["frobnicate"], capsys)[0] == 1
    assert run(["stats", "--in", "x", "--threads", "0"], capsys)[0] == 1


def test_config_file_and_flag_override(files, capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"props": files["props"], "mode": "avg", "n": 2}))
    code, out, _ = run(["eval", "spice", "--config", str(cfg)], capsys)
    assert code == 0 and json.loads(out)["mode"] == "avg"
    code, out, _ = run(["eval", "spice", "--config", str(cfg), "--mode", "oracle"], capsys)
    assert json.loads(out)["mode"] == "oracle"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(["eval", "spice", "--props", files["props"], "--config", str(cfg)], capsys)
    assert code == 1 and "bogus" in error_of(err)["message"]
    cfg.write_text("[1]")
    assert run(["eval", "spice", "--props", files["props"], "--config", str(cfg)], capsys)[0] == 1


def test_simulate_writes_directory(capsys, tmp_path):
    out = tmp_path / "sim"
    code, _, _ = run(["simulate", "--conditions", "RLE+clean", "--n-per-context", "5", "--order", "3",
                      "--out", str(out)], capsys)
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["points.csv", "report.json"]
    assert (out / "points.csv").read_text().startswith("method,n,metric,value\n")


def test_threads_env_default(monkeypatch, files, capsys):
    monkeypatch.setenv("SEGCAP_THREADS", "3")
    from segcap.cli import build_parser
    args = build_parser().parse_args(["stats", "--in", files["units"]])
    assert args.threads == 3


def test_console_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "segcap", "stats", "--in", files["units"]],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["num_utterances"] == 2
    assert proc.stderr == ""
