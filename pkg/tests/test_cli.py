import csv
import io
import json

import pytest

from sabrgrid.cli import main, run
from sabrgrid.config import ConfigError, RunConfig, parse_config

MINIMAL = """\
[swaption]
a = 1
b = 2
strike = 0.055

[market]
preset = reference
"""


def test_minimal_document_uses_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.strike == 0.055 and cfg.lam == 0.1 and cfg.theta == 0.5 and cfg.time_steps == 256
    assert cfg == RunConfig()


def test_explicit_market_block():
    text = """\
[swaption]   # comment after a header
a = 1
b = 3
strike = 0.05
[market]
forwards = 0.02, 0.03, 0.035
vols = 0.0, 0.2, 0.25
[model]
sigma = 0.3
lambda = 0.2
[numerics]
mode = sparse
levels = 4..6
solver = direct
[output]
format = json
timing = no
"""
    cfg = parse_config(text)
    assert cfg.forwards == (0.02, 0.03, 0.035) and cfg.dates == (0.0, 1.0, 2.0, 3.0)
    assert cfg.levels == (4, 6) and cfg.mode == "sparse" and cfg.fmt == "json" and not cfg.timing
    assert cfg.lam == 0.2


@pytest.mark.parametrize("text,match,line", [
    ("", "missing required section", None),
    (MINIMAL + "[model]\nbeta = 1.5\n", "beta outside", None),
    (MINIMAL + "[model]\ngamma = 1\n", "unknown key 'gamma'", 9),
    (MINIMAL + "[extras]\n", "unknown section", 8),
    ("a = 1\n", "section", 1),
    (MINIMAL + "[numerics]\nlevels = 6..4\n", "levels", 9),
    (MINIMAL + "[numerics]\nsolver = cg\n", "solver", 9),
    (MINIMAL.replace("b = 2", "b = 12"), "exceeds", None),
    (MINIMAL + "[model]\nsigma = 0.3\nsigma = 0.2\n", "duplicate", 10),
    ("[swaption]\na = 1\n[market]\nforwards = 0.01, 0.02\n", "vols", None),
])
def test_config_errors(text, match, line):
    with pytest.raises(ConfigError, match=match) as err:
        parse_config(text)
    if line is not None:
        assert err.value.line == line


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_full_mode_error_column(capsys):
    assert main(["--mode", "full", "--levels", "3..6", "--solver", "direct", "--no-timing"]) == 0
    out = rows(capsys.readouterr().out)
    assert [r["level"] for r in out] == ["3", "4", "5", "6"]
    expected = [1.870098, 0.546151, 0.143647, 0.015297]
    for r, ref in zip(out, expected):
        assert float(r["error_bp"]) == pytest.approx(ref, rel=0.02)
        assert r["time_s"] == ""
    assert out[0]["grid_points"] == "81"
    assert len({r["config_hash"] for r in out}) == 1


def test_sparse_row_point_count(capsys):
    assert main(["--mode", "sparse", "--level", "10", "--solver", "direct"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert row["grid_points"] == "8193"
    assert float(row["time_s"]) > 0


def test_mc_single_path_marker(capsys):
    assert main(["--mode", "mc", "--paths", "1"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert row["level"] == "mc" and row["paths"] == "1"
    assert row["ci_low_bp"] == "NA" and row["ci_high_bp"] == "NA"


def test_reports_identical_across_workers(tmp_path):
    outs = []
    for workers in ("1", "4"):
        path = tmp_path / f"r{workers}.csv"
        args = ["--mode", "compare", "--libors", "2", "--sigma", "0.3", "--levels", "4..5",
                "--paths", "4000", "--steps", "32", "--workers", workers, "--no-timing",
                "--out", str(path)]
        assert main(args) == 0
        outs.append(path.read_bytes())
        assert path.with_suffix(".png").stat().st_size > 0
    assert outs[0] == outs[1]
    table = rows(outs[0].decode())
    assert table[-1]["level"] == "mc" and table[0]["inside_ci"] in ("true", "false")


def test_json_output(tmp_path):
    path = tmp_path / "out.json"
    assert main(["--mode", "full", "--level", "3", "--format", "json", "--out", str(path),
                 "--no-figure"]) == 0
    doc = json.loads(path.read_text())
    assert doc["rows"][0]["level"] == 3 and doc["exact_bp"] == pytest.approx(0.659096, abs=1e-6)
    assert not path.with_suffix(".png").exists()


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL + "[model]\nbeta = 2\n")
    assert main(["--config", str(bad)]) == 1
    assert main(["--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["--mode", "sparse", "--libors", "3", "--level", "1"]) == 1
    cfg = tmp_path / "strict.ini"
    cfg.write_text(MINIMAL + "[numerics]\nlevels = 4\ntolerance = 1e-14\nmax_iterations = 1\n")
    assert main(["--config", str(cfg)]) == 2
    assert main(["--level", "3", "--out", str(tmp_path / "no" / "dir.csv")]) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "numerical failure" in err and "i/o error" in err


def test_run_returns_rows():
    report = run(RunConfig(mode="full", levels=(3, 4), solver="direct"))
    assert [r.level for r in report.rows] == [3, 4]
    assert report.exact_bp == pytest.approx(0.659096, abs=1e-6)
    assert report.columns[-1] == "config_hash"
