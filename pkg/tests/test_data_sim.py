import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdceg.data import DataError, Dataset, PathObservation, dump_dataset, load_dataset, sufficient_stats
from rdceg.models import GroundTruthModel, builtin_models, falls_model, smoking_model
from rdceg.simulate import simulate_population, simulate_stats


@pytest.mark.parametrize("name", sorted(builtin_models()))
def test_population_and_direct_stats_agree(name):
    m = builtin_models()[name]
    ds = simulate_population(m, 700, seed=5, generated_at=None)
    assert sufficient_stats(ds, m.modified) == simulate_stats(m, 700, seed=5)


def test_simulation_is_deterministic_and_blocked():
    m = smoking_model("a")
    a = simulate_population(m, 1500, seed=2, generated_at=None)
    b = simulate_population(m, 1500, seed=2, generated_at=None)
    assert a.to_jsonl() == b.to_jsonl()
    assert a != simulate_population(m, 1500, seed=3, generated_at=None)
    # the first block of 1024 does not depend on how many follow
    c = simulate_population(m, 1024, seed=2, generated_at=None)
    assert a.observations[:1024] == c.observations
    assert "generated_at" in simulate_population(m, 5, seed=2).provenance
    with pytest.raises(ValueError):
        simulate_population(m, 0, seed=1)


def test_transition_frequencies_and_holding_means():
    m = smoking_model("a")
    stats = simulate_stats(m, 20_000, seed=7)
    t = m.modified.tree
    use, not_use = t.edge_from_ref("w0/use"), t.edge_from_ref("w0/not_use")
    n0 = stats.counts[use] + stats.counts[not_use]
    p = stats.counts[use] / n0
    assert abs(p - 0.6) < 4 * math.sqrt(0.24 / n0)
    quit1 = t.edge_from_ref("w1/quit")
    h = np.asarray(stats.holds[quit1])
    # Weibull with shape 1 and scale 60 is exponential with mean 60
    assert abs(h.mean() - 60.0) < 4 * 60.0 / math.sqrt(h.size)


def test_dropout_is_per_visit():
    m = smoking_model("a")
    ds = simulate_population(m, 5000, seed=1, generated_at=None)
    visits = drops = 0
    for ob in ds.observations:
        labels = [lab for lab, _ in ob.steps]
        # every use/not_use step is followed by a visit to w1 or w2
        visits += labels.count("use") + labels.count("not_use")
        drops += ob.terminal == "dropout"
    assert abs(drops / visits - 0.05) < 4 * math.sqrt(0.05 * 0.95 / visits)


def test_terminals():
    ds = simulate_population(falls_model(), 800, seed=0, generated_at=None)
    kinds = {ob.terminal for ob in ds.observations}
    assert kinds <= {"critical", "dropout", "censored"}
    assert "critical" in kinds


@pytest.mark.parametrize("suffix", [".jsonl", ".csv"])
def test_file_roundtrip(tmp_path, suffix):
    m = falls_model()
    ds = simulate_population(m, 300, seed=4, generated_at=None)
    path = tmp_path / f"d{suffix}"
    dump_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    assert back.provenance == ds.provenance
    assert sufficient_stats(back, m.modified) == sufficient_stats(ds, m.modified)


def test_format_inference(tmp_path):
    with pytest.raises(DataError, match="infer"):
        load_dataset(tmp_path / "x.txt")


@pytest.mark.parametrize(
    "line,message",
    [
        ("{not json", "invalid JSON"),
        ('{"id": 1, "steps": [], "terminal": "nowhere"}', "terminal"),
        ('{"id": 1, "steps": [{"label": "use", "hold": -2}], "terminal": "critical"}', "holding time"),
        ('{"id": 1, "terminal": "critical"}', "malformed"),
        ('{"schema": "other/9"}', "schema"),
    ],
)
def test_jsonl_errors_name_the_line(tmp_path, line, message):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": 0, "steps": [], "terminal": "dropout"}\n' + line + "\n")
    with pytest.raises(DataError, match=message) as err:
        load_dataset(p)
    assert err.value.line == 2


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,step_index,label,hold,terminal\n1,0,use,1.0,critical\n1,2,quit,1.0,critical\n")
    with pytest.raises(DataError, match="sequence") as err:
        load_dataset(p)
    assert err.value.line == 3
    p.write_text("id,label\n1,use\n")
    with pytest.raises(DataError, match="header"):
        load_dataset(p)
    p.write_text("")
    assert len(load_dataset(p)) == 0


def test_replay_errors():
    tree = smoking_model("a").modified
    ok = PathObservation(0, "w0", (("use", 1.0), ("quit", 2.0)), "critical")
    assert sufficient_stats([ok], tree).counts
    cases = [
        (PathObservation(1, "w0", (("fly", 1.0),), "dropout"), "no edge"),
        (PathObservation(1, "w0", (("use", None),), "dropout"), "needs a holding time"),
        (PathObservation(1, "w5", (), "dropout"), "enters"),
        (PathObservation(1, "w0", (("use", 1.0), ("quit", 1.0), ("use", 1.0)), "critical"), "past a leaf"),
    ]
    for ob, message in cases:
        with pytest.raises(DataError, match=message) as err:
            sufficient_stats([ok, ob], tree)
        assert err.value.line == 2


def test_model_json_roundtrip():
    for m in builtin_models().values():
        again = GroundTruthModel.from_dict(json.loads(m.to_json()))
        assert again.to_dict() == m.to_dict()
        assert again.staging == m.staging and again.clustering == m.clustering


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def test_counts_are_conserved(seed, n):
    m = smoking_model("b")
    stats = simulate_stats(m, n, seed)
    t = m.modified.tree
    out_w0 = stats.counts.get(t.edge_from_ref("w0/use"), 0) + stats.counts.get(t.edge_from_ref("w0/not_use"), 0)
    fails = stats.counts.get(t.edge_from_ref("w1/fail"), 0) + stats.counts.get(t.edge_from_ref("w2/fail"), 0)
    # each individual leaves the root once, then once more per failure, unless censored there
    assert out_w0 <= n + fails
    for e, h in stats.holds.items():
        assert len(h) == stats.counts[e]
        assert all(x >= 0 for x in h)
