import csv
import json
import subprocess
import sys

import pytest

from rqsim.cli import main
from rqsim.patterns import load_pattern_file

SPEC = json.dumps({"pattern_count": 120, "overlap_rate": 0.3})


@pytest.fixture
def db_file(tmp_path):
    path = tmp_path / "db.jsonl"
    assert main(["gen-dataset", "--synthetic-spec", SPEC, "--seed", "5", "--out", str(path)]) == 0
    return path


def test_gen_dataset_formats(tmp_path, db_file):
    csv_path = tmp_path / "db.csv"
    assert main(["gen-dataset", "--synthetic-spec", SPEC, "--seed", "5", "--out", str(csv_path), "--format", "csv"]) == 0
    assert load_pattern_file(csv_path) == load_pattern_file(db_file)
    assert len(load_pattern_file(db_file)) == 120


def test_spec_from_file(tmp_path, db_file):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(SPEC)
    out = tmp_path / "again.jsonl"
    assert main(["gen-dataset", "--synthetic-spec", str(spec_path), "--seed", "5", "--out", str(out)]) == 0
    assert out.read_bytes() == db_file.read_bytes()


def test_stats(db_file, capsys):
    assert main(["stats", "--db", str(db_file)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["pattern_count"] == 120
    assert main(["stats", "--db", str(db_file), "--format", "csv"]) == 0
    assert "pattern_count" in capsys.readouterr().out


def test_simulate_matches_synthetic_source(tmp_path, db_file):
    args = ["simulate", "--block-size", "3", "--block-size", "8", "--scenario", "all", "--seed", "5"]
    assert main([*args, "--db", str(db_file), "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--synthetic-spec", SPEC, "--out", str(tmp_path / "b")]) == 0
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert sa == sb
    assert {c["scenario"] for c in sa["cells"]} == {"1bd", "1bd_improved", "abd"}
    assert all(c["unsound"] == 0 for c in sa["cells"])


def test_simulate_options(tmp_path, db_file):
    out = tmp_path / "o"
    rc = main([
        "simulate", "--db", str(db_file), "--block-size", "4", "--dummy-db-size", "300", "--dummy-db-size", "full",
        "--dedupe", "--variable-n", "2:6", "--scenario", "1bd_improved", "--trials", "2", "--sample", "30",
        "--out", str(out),
    ])
    assert rc == 0
    cells = json.loads((out / "summary.json").read_text())["cells"]
    assert [(c["S"], c["visits"] + c["out_of_model"]) for c in cells] == [(300, 60), ("full", 60)]
    assert not (out / "compare.csv").exists()


def test_pattern_based_padding(tmp_path):
    db = tmp_path / "mixed.jsonl"
    lines = []
    for i in range(12):
        n = 3 if i % 2 else 4
        lines.append(json.dumps({"primary": f"p{i}.org", "secondaries": [f"s{i}-{j}.org" for j in range(n - 1)]}))
    db.write_text("\n".join(lines) + "\n")
    out = tmp_path / "pb"
    rc = main([
        "simulate", "--db", str(db), "--block-size", "3", "--strategy", "pattern_based",
        "--padding-multiple", "4", "--out", str(out),
    ])
    assert rc == 0
    (cell,) = json.loads((out / "summary.json").read_text())["cells"]
    assert cell["visits"] == 12
    assert cell["median_k"] == cell["max_k"] == 3
    assert cell["skipped"] == 0


def test_pattern_based_reports_skipped(tmp_path, db_file):
    out = tmp_path / "pb"
    rc = main([
        "simulate", "--db", str(db_file), "--block-size", "2", "--strategy", "pattern_based",
        "--padding-multiple", "4", "--out", str(out),
    ])
    assert rc == 0
    (cell,) = json.loads((out / "summary.json").read_text())["cells"]
    assert cell["skipped"] > 0
    assert cell["visits"] + cell["skipped"] + cell["out_of_model"] == 120


def test_analyze(tmp_path, db_file, capsys):
    out = tmp_path / "m"
    assert main(["analyze", "--db", str(db_file), "--block-size", "10", "--block-size", "50", "--out", str(out)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["N"] for r in rows] == [10, 50]
    assert rows[0]["F_N"] < rows[1]["F_N"]
    model = json.loads((out / "model.json").read_text())
    assert set(model) == {"10", "50"}
    with (out / "e_by_length.csv").open() as fh:
        assert next(csv.reader(fh)) == ["N", "M", "E"]


def test_compare(tmp_path, db_file, capsys):
    out = tmp_path / "c"
    assert main(["compare", "--db", str(db_file), "--block-size", "5", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("N,S,analytic_F")
    assert (out / "compare.csv").read_text() == printed


@pytest.mark.parametrize(
    "argv",
    [
        ["stats", "--db", "/nonexistent.jsonl"],
        ["simulate", "--synthetic-spec", '{"pattern_count": -1}', "--block-size", "3", "--out", "x"],
        ["simulate", "--synthetic-spec", '{"bogus": 1}', "--block-size", "3", "--out", "x"],
        ["simulate", "--synthetic-spec", "[1, 2]", "--block-size", "3", "--out", "x"],
        ["analyze", "--synthetic-spec", SPEC, "--block-size", "0"],
    ],
)
def test_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("rqsim: error:")


def test_bad_db_content(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"primary": "a.com", "secondaries": []}\nnot json\n')
    assert main(["stats", "--db", str(path)]) == 1
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["simulate"], ["simulate", "--db", "x", "--block-size", "3"], ["simulate", "--dummy-db-size", "0"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code != 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rqsim", "analyze", "--synthetic-spec", SPEC, "--block-size", "3", "--format", "csv"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("N,Q_size,F_N")
