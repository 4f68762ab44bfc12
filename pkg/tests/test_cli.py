import csv
import io
import json

import pytest
from click.testing import CliRunner

from rdceg.cli import main


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args, code=0):
        res = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
        assert res.exit_code == code, res.output
        return res.output

    return invoke


@pytest.fixture
def falls_fit(run, tmp_path):
    run("simulate", "--model", "falls", "--n", 600, "--seed", 3, "-o", "d.jsonl")
    run("fit", "--data", "d.jsonl", "--model", "falls", "--alpha", 1, "--tau", 20, "-o", "fit.json")
    return tmp_path / "fit.json"


def test_simulate_is_byte_identical_without_timestamp(run):
    a = run("simulate", "--model", "smoking-a", "--n", 50, "--seed", 1, "--no-timestamp")
    b = run("simulate", "--model", "smoking-a", "--n", 50, "--seed", 1, "--no-timestamp")
    assert a == b
    stamped = run("simulate", "--model", "smoking-a", "--n", 50, "--seed", 1)
    # only the provenance header differs
    assert stamped.splitlines()[1:] == a.splitlines()[1:]
    assert "generated_at" in stamped.splitlines()[0]
    text = run("simulate", "--model", "smoking-a", "--n", 5, "--format", "csv", "--no-timestamp")
    assert text.splitlines()[1].startswith("id,entry,step_index")


def test_fit_output(run, falls_fit):
    d = json.loads(falls_fit.read_text())
    assert d["schema"] == "rdceg.fit/1"
    assert d["n_individuals"] == 600
    assert d["config"]["prior"]["alpha_total"] == 1.0
    assert set(d["search"]) == {"score", "staging", "clustering", "trace"}
    dot = run("fit", "--data", "d.jsonl", "--model", "falls", "--format", "dot")
    assert dot.startswith('digraph "falls"') and "w_inf" in dot
    again = run("fit", "--data", "d.jsonl", "--model", "falls", "--alpha", 1, "--tau", 20)
    assert again == falls_fit.read_text()


def test_fit_on_empty_data(run, tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    d = json.loads(run("fit", "--data", "empty.jsonl", "--model", "smoking-b"))
    assert d["score"] == 0.0 and d["n_individuals"] == 0


def test_query_commands(run):
    d = json.loads(run("query", "--model", "smoking-a", "--vertices", "w1,w2"))
    assert d["report"]["kind"] == "cut"
    assert [s["kind"] for s in d["statements"]] == ["position", "stage"]
    d = json.loads(run("query", "--model", "smoking-a", "--rollout", 2,
                       "--event", "w0,w1,w0',w1',w_inf", "--event", "w0,w2,w0',w2',w_inf"))
    assert d["intrinsic"]["intrinsic"] is False
    assert d["intrinsic"]["counterexample"][-1] == "w_inf"
    d = json.loads(run("query", "--model", "smoking-a", "--rollout", 2, "--vertices", "w1',w2'"))
    # the quit edges bypass the second copies
    assert d["report"]["kind"] == "neither" and d["statements"] == [] and "statements_note" in d
    d = json.loads(run("query", "--model", "smoking-a", "--find", "fine-cuts"))
    assert ["w1", "w2"] in d["fine-cuts"]


def test_query_against_fit_file(run, falls_fit):
    d = json.loads(run("query", "--graph", falls_fit, "--slice", 1, "--find", "cuts"))
    assert d["cuts"][0] == ["w0"]


def test_smp_commands(run, falls_fit):
    d = json.loads(run("smp", "--model", "smoking-b"))
    assert d["smp"]["states"] == ["w0", "w1", "w_inf"]
    text = run("smp", "--model", "smoking-a", "--first-passage", "w0:w_inf", "--samples", 2000,
               "--format", "csv", "--seed", 4)
    rows = dict(csv.reader(io.StringIO(text)))
    assert float(rows["hit_probability"]) == 1.0
    assert text == run("smp", "--model", "smoking-a", "--first-passage", "w0:w_inf", "--samples", 2000,
                       "--format", "csv", "--seed", 4)
    dot = run("smp", "--graph", falls_fit, "--format", "dot")
    assert "doublecircle" in dot
    d = json.loads(run("smp", "--model", "epilepsy_like", "--keep", "root,w_inf"))
    assert d["smp"]["states"] == ["root", "w_inf"]


def test_diagnose(run, falls_fit):
    d = json.loads(run("diagnose", "--truth", "falls"))
    assert d["errors"]["situational"] == pytest.approx(0.0, abs=1e-6)
    d = json.loads(run("diagnose", "--truth", "falls", "--fit", falls_fit, "--data", "d.jsonl"))
    assert d["errors"]["situational"] > 0
    assert d["leave_one_out"] or d["notes"]
    text = run("diagnose", "--truth", "falls", "--fit", falls_fit, "--format", "csv")
    assert text.splitlines()[0] == "kind,element,error"


def test_repro_small(run, tmp_path):
    out = run("repro", "falls-study", "--scale", 0.01, "--sizes", "300", "--rows", "rows.csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6 and {r["n"] for r in rows} == {"300"}
    assert len((tmp_path / "rows.csv").read_text().splitlines()) == 7


def test_config_file_defaults(run, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 7, "simulate": {"model": "smoking-b", "n": 20, "timestamp": False}}))
    a = run("--config", cfg, "simulate")
    b = run("simulate", "--model", "smoking-b", "--n", 20, "--seed", 7, "--no-timestamp")
    assert a == b
    cfg.write_text(json.dumps({"simulate": {"bogus": 1}}))
    run("--config", cfg, "simulate", "--model", "falls", "--n", 1, code=2)


@pytest.mark.parametrize(
    "args",
    [
        ["simulate", "--model", "nope", "--n", 5],
        ["simulate", "--model", "falls", "--n", 0],
        ["query", "--model", "smoking-a"],
        ["query", "--model", "smoking-a", "--vertices", "nowhere"],
        ["query", "--model", "smoking-a", "--slice", 3, "--vertices", "w0"],
        ["smp", "--model", "falls", "--first-passage", "w0"],
        ["smp", "--model", "falls", "--format", "csv"],
        ["smp", "--model", "falls", "--keep", "zzz"],
        ["smp"],
        ["fit", "--model", "falls"],
    ],
)
def test_validation_errors_exit_with_two(run, args):
    run(*args, code=2)


def test_runtime_errors_exit_with_one(run):
    out = run("smp", "--model", "falls", "--keep", "w0,w_inf", code=1)
    assert "condensation rejected" in out


def test_bad_data_file_is_a_validation_error(run, tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"id": 1, "steps": [{"label": "fly", "hold": 1}], "terminal": "critical"}\n')
    out = run("fit", "--data", "bad.jsonl", "--model", "falls", code=2)
    assert "line 1" in out
