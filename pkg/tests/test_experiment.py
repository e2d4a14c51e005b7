import csv

import numpy as np
import pytest

from rftransfer.evaluation import MetricReport, smape_diff_percent
from rftransfer.exceptions import ConfigError, InputError, ParseError
from rftransfer.experiment import (ExperimentConfig, ResultRecord, SyntheticSettings,
                                   config_from_dict, emit_results, ingest_csv,
                                   load_config, read_records, run_experiment,
                                   run_significance, stream, subsample, write_csv)
from rftransfer.forest import Dataset, ForestParams
from rftransfer.transfer import TransferSettings


def tiny_config(**kw):
    base = dict(sizes=[20], repetitions=1, seed=3,
                synthetic=SyntheticSettings(functions=["sphere"], dimensions=[2],
                                            source_points_per_dim=100,
                                            test_points_per_dim=100),
                forest=ForestParams(n_trees=10),
                optimizer=TransferSettings(total_budget=300))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_records():
    return run_experiment(tiny_config())


def test_cardinality_single_cell(tiny_records):
    assert len(tiny_records) == 3
    assert [r.variant for r in tiny_records] == ["original", "scratch", "transferred"]
    assert all(r.error is None and 0.0 <= r.smape <= 1.0 for r in tiny_records)
    assert tiny_records[0].size is None and tiny_records[0].opt_loss is None
    assert tiny_records[2].opt_loss is not None


def test_cardinality_formula():
    cfg = tiny_config(sizes=[10, 15], repetitions=2,
                      synthetic=SyntheticSettings(functions=["sphere", "F3"],
                                                  dimensions=[2],
                                                  source_points_per_dim=50,
                                                  test_points_per_dim=50),
                      optimizer=TransferSettings(total_budget=100))
    recs = run_experiment(cfg)
    n_cells = 2 * 1 * 2
    assert len(recs) == n_cells * (1 + 2 * 2)


def test_deterministic(tiny_records):
    again = run_experiment(tiny_config())
    assert [r.row() for r in again] == [r.row() for r in tiny_records]


def test_seed_changes_results(tiny_records):
    other = run_experiment(tiny_config(seed=4))
    assert [r.smape for r in other] != [r.smape for r in tiny_records]


def test_streams_are_distinct():
    a = stream(0, "sphere", 2, 0, "transfer_sample", 50).generate_state(4)
    b = stream(0, "sphere", 2, 0, "transfer_sample", 20).generate_state(4)
    c = stream(0, "sphere", 2, 1, "transfer_sample", 50).generate_state(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, stream(0, "sphere", 2, 0, "transfer_sample", 50).generate_state(4))


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(sizes=[50, 20])
    with pytest.raises(ConfigError):
        tiny_config(sizes=[])
    with pytest.raises(ConfigError):
        tiny_config(repetitions=0)
    with pytest.raises(ConfigError):
        tiny_config(mode="csv")
    with pytest.raises(ConfigError):
        tiny_config(synthetic=SyntheticSettings(functions=["nope"]))


def test_config_unknown_keys():
    with pytest.raises(ConfigError, match="typo"):
        config_from_dict({"experiment": {"typo": 1}})
    with pytest.raises(ConfigError, match="n_tree"):
        config_from_dict({"forest": {"n_tree": 5}})
    with pytest.raises(ConfigError):
        config_from_dict({"extras": {}})


def test_load_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[experiment]\nsizes = [10, 50]\nseed = 7\n\n'
                 '[synthetic]\nfunctions = ["ellipsoid"]\ndimensions = [2, 5]\n\n'
                 '[forest]\nn_trees = 20\n\n[optimizer]\ntotal_budget = 1000\n')
    cfg = load_config(p)
    assert cfg.sizes == [10, 50] and cfg.seed == 7 and cfg.log_transform
    assert cfg.forest.n_trees == 20 and cfg.optimizer.total_budget == 1000
    assert cfg.synthetic.dimensions == [2, 5]
    p.write_text("[experiment\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


# ---------------------------------------------------------------------------
# CSV plumbing

def test_ingest_counts(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,5,6\n")
    data = ingest_csv(p)
    assert (data.n, data.d) == (2, 2)
    assert np.array_equal(data.X, [[1, 2], [4, 5]]) and np.array_equal(data.y, [3, 6])


def test_ingest_crlf(tmp_path):
    p = tmp_path / "a.csv"
    p.write_bytes(b"x1,y\r\n1.5,2\r\n3,4\r\n")
    assert ingest_csv(p).n == 2


@pytest.mark.parametrize("body, line", [
    ("a,b,y\n1,2,3\n", 1),
    ("x1,x2,y\n1,2,3\n1,2\n", 3),
    ("x1,x2,y\n1,2,3\n4,5,6\n7,oops,9\n", 4),
    ("x1,y\n1,nan\n", 2),
])
def test_ingest_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ParseError) as info:
        ingest_csv(p)
    assert info.value.line == line
    assert f"bad.csv:{line}:" in str(info.value)


def test_ingest_empty_body(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("x1,x2,y\n")
    with pytest.raises(InputError):
        ingest_csv(p)
    p.write_text("")
    with pytest.raises(ParseError):
        ingest_csv(p)


def test_csv_roundtrip(tmp_path, rng):
    data = Dataset(rng.normal(size=(50, 3)) * 1e3, rng.normal(size=50) * 1e-7)
    back = ingest_csv(write_csv(data, tmp_path / "r.csv"))
    assert np.allclose(back.X, data.X, rtol=0, atol=1e-12)
    assert np.allclose(back.y, data.y, rtol=0, atol=1e-12)


def test_subsample_full_is_permutation(rng):
    data = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10.0))
    sub = subsample(data, 10, 1)
    assert sorted(sub.y) == list(data.y)
    one = Dataset([[1.0]], [2.0])
    assert subsample(one, 1, 0).y[0] == 2.0
    assert np.array_equal(subsample(data, 4, 9).y, subsample(data, 4, 9).y)
    with pytest.raises(InputError):
        subsample(data, 11, 0)
    with pytest.raises(InputError):
        subsample(data, 0, 0)


def test_subsample_distinct_rows():
    data = Dataset(np.arange(30.0).reshape(30, 1), np.arange(30.0))
    assert len(set(subsample(data, 25, 2).y)) == 25


def test_subsample_frequency():
    data = Dataset(np.arange(10.0).reshape(10, 1), np.arange(10.0))
    g = np.random.default_rng(0)
    counts = np.bincount([int(subsample(data, 1, g).y[0]) for _ in range(10_000)],
                         minlength=10)
    assert np.all(np.abs(counts / 10_000 - 0.1) <= 0.03)


def test_csv_mode_run(tmp_path, rng):
    X = rng.uniform(-5, 5, (200, 2))
    write_csv(Dataset(X, (X ** 2).sum(1)), tmp_path / "s.csv")
    Xt = rng.uniform(-5, 5, (80, 2))
    write_csv(Dataset(Xt, ((Xt - 0.5) ** 2).sum(1)), tmp_path / "t.csv")
    cfg = config_from_dict({
        "experiment": {"mode": "csv", "sizes": [10, 20], "repetitions": 2},
        "csv": {"source": str(tmp_path / "s.csv"), "target": str(tmp_path / "t.csv"),
                "name": "toy"},
        "forest": {"n_trees": 5},
        "optimizer": {"total_budget": 100},
    })
    assert cfg.log_transform is False
    recs = run_experiment(cfg)
    assert len(recs) == 2 * (1 + 2 * 2)
    assert all(r.function == "toy" and r.error is None for r in recs)


def test_csv_mode_rejects_log(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("x1,y\n1,2\n")
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": {"mode": "csv", "log_transform": True},
                          "csv": {"source": str(p), "target": str(p)}})


# ---------------------------------------------------------------------------
# emission

def _rec(variant, smape, size=50, rep=0, fn="sphere"):
    return ResultRecord(fn, 2, None if variant == "original" else size, rep,
                        variant, smape, 0.1 if variant == "transferred" else None)


def test_emit_single_rep_summary(tmp_path):
    recs = [_rec("original", 0.3), _rec("scratch", 0.12), _rec("transferred", 0.02)]
    emit_results(recs, tmp_path)
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    row = rows[0]
    for v, m in [("original", 0.3), ("scratch", 0.12), ("transferred", 0.02)]:
        assert float(row[f"{v}_mean"]) == m and float(row[f"{v}_std"]) == 0.0
    with open(tmp_path / "records.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "function,dim,size,rep,variant,smape,opt_loss,wall_ms"
    assert lines[1].split(",")[2] == "" and lines[1].split(",")[6] == ""


def test_emit_heatmap_recomputes(tmp_path, tiny_records):
    recs = []
    g = np.random.default_rng(1)
    for rep in range(4):
        recs.append(_rec("original", g.uniform(0.2, 0.4), rep=rep))
        for size in (20, 50):
            recs.append(_rec("scratch", g.uniform(0.1, 0.2), size, rep))
            recs.append(_rec("transferred", g.uniform(0.0, 0.1), size, rep))
    emit_results(recs, tmp_path)
    with open(tmp_path / "heatmap.csv") as fh:
        heat = list(csv.DictReader(fh))
    assert len(heat) == 2
    for row in heat:
        size = int(row["size"])
        s = [r.smape for r in recs if r.variant == "scratch" and r.size == size]
        t = [r.smape for r in recs if r.variant == "transferred" and r.size == size]
        ref = smape_diff_percent(MetricReport(float(np.mean(s)), 0, 4),
                                 MetricReport(float(np.mean(t)), 0, 4))
        assert float(row["smape_diff_percent"]) == pytest.approx(ref, rel=1e-12)
        assert float(row["smape_diff_percent"]) > 0


def test_emit_byte_identical(tmp_path, tiny_records):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_results(tiny_records, a)
    emit_results(list(reversed(tiny_records)), b)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "curve_sphere.csv" in names and "table.md" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_emit_errors_file(tmp_path):
    recs = [_rec("original", 0.3), _rec("scratch", 0.12),
            ResultRecord("sphere", 2, 50, 0, "transferred", None, error="boom")]
    emit_results(recs, tmp_path)
    assert "boom" in (tmp_path / "errors.csv").read_text()


def test_emit_empty_and_unwritable(tmp_path):
    with pytest.raises(InputError):
        emit_results([], tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_results([_rec("original", 0.3)], blocker / "sub")


def test_records_roundtrip(tmp_path, tiny_records):
    emit_results(tiny_records, tmp_path)
    back = read_records(tmp_path / "records.csv")
    assert [r.row() for r in back] == [r.row() for r in tiny_records]


# ---------------------------------------------------------------------------
# significance

def _cell(orig, scr, tr, reps=10):
    recs = []
    for rep in range(reps):
        recs += [_rec("original", orig[rep], rep=rep), _rec("scratch", scr[rep], rep=rep),
                 _rec("transferred", tr[rep], rep=rep)]
    return recs


def test_significance_transferred_best():
    (cell,) = run_significance(_cell([0.30] * 10, [0.12] * 10, [0.02] * 10))
    assert not cell.inconclusive
    assert cell.transferred_beats_original
    assert cell.better_of_transferred_scratch == "transferred"


def test_significance_identical_vectors():
    v = list(np.linspace(0.1, 0.2, 10))
    (cell,) = run_significance(_cell(v, v, v))
    assert not cell.transferred_beats_original
    assert cell.better_of_transferred_scratch is None
    assert not cell.report.pairwise.significant.any()


def test_significance_alpha_one():
    g = np.random.default_rng(0)
    v = [list(g.uniform(0, 1, 10)) for _ in range(3)]
    (cell,) = run_significance(_cell(*v), alpha=1.0)
    off = ~np.eye(3, dtype=bool)
    assert cell.report.pairwise.significant[off].all()


def test_significance_inconclusive():
    (cell,) = run_significance(_cell([0.3], [0.1], [0.05], reps=1))
    assert cell.inconclusive and not cell.transferred_beats_original
