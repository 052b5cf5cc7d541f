import csv
import json

import pytest

from demixer.cli import build_config, main, parse_config_text
from demixer.errors import ConfigError

TINY = """# two quick points
c = 1.5
rho = 0.5
D = 2
restarts = 1
g_over_c = 0.5, 1.0
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_comments_and_lines():
    found = parse_config_text("# header\nc = 2.0  # trailing\n\nD = 3\n")
    assert found == {"c": (2.0, 2), "D": (3, 4)}


@pytest.mark.parametrize("text, line", [
    ("c = 1\nbogus = 2\n", 2),
    ("c = 1\nc = 2\n", 2),
    ("D = five\n", 1),
    ("just words\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.line == line


def test_validation_errors():
    with pytest.raises(ConfigError) as err:
        build_config("sweep", "c = 1\nrho = -1\ng_over_c = 1\n")
    assert err.value.line == 2
    with pytest.raises(ConfigError):
        build_config("sweep", "g_over_c = 2, 1\n")
    with pytest.raises(ConfigError):
        build_config("sweep", "g_over_c = 1\ng_min = 0\n")
    with pytest.raises(ConfigError):
        build_config("sweep", "g_over_c = 1\n", overrides=["D=0"])
    with pytest.raises(ConfigError):
        build_config("nonsense", "")


def test_grid_from_range():
    cfg = build_config("sweep", "g_min = 0\ng_max = 3\ng_step = 0.25\n")
    assert cfg.grid[0] == 0.0 and cfg.grid[-1] == 3.0 and len(cfg.grid) == 13


def test_overrides_win():
    cfg = build_config("pair", TINY, overrides=["D = 4", "seed=7"], workers=3)
    assert cfg.values["D"] == 4 and cfg.optimizer.seed == 7 and cfg.workers == 3


def test_empty_grid_exits_2_without_files(tmp_path, capsys):
    out = tmp_path / "out"
    status = main(["sweep", "--config", write(tmp_path, "c = 1.5\n"), "--out", str(out)])
    assert status == 2
    assert not out.exists()
    assert "empty" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["bethe", "--config", str(tmp_path / "none.cfg")]) == 2


def test_bethe_table(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, "gammas = 0.52, 1.5, 2.38, 3.0\n")
    assert main(["bethe", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "bethe.csv")))
    assert len(rows) == 4
    e = [float(r["e"]) for r in rows]
    assert e == sorted(e) and len(set(e)) == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["mode"] == "bethe"


def test_pair_run_is_deterministic_across_workers(tmp_path):
    cfg = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pair", "--config", cfg, "--out", str(a)]) == 0
    assert main(["pair", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    assert (a / "pair.csv").read_bytes() == (b / "pair.csv").read_bytes()
    rows = list(csv.DictReader(open(a / "pair.csv")))
    assert [float(r["g_over_c"]) for r in rows] == [0.5, 1.0]
    assert all(r["converged"] == "true" for r in rows)


def test_resume_skips_converged_points(tmp_path, caplog):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    first = (out / "sweep.csv").read_bytes()
    (out / "sweep.csv").unlink()
    caplog.set_level("INFO", logger="demixer")
    assert main(["sweep", "--config", cfg, "--out", str(out), "--resume"]) == 0
    assert (out / "sweep.csv").read_bytes() == first
    assert caplog.text.count("restored from checkpoint") == 2


def test_resume_ignores_torn_checkpoint(tmp_path):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    first = (out / "sweep.csv").read_bytes()
    (out / "checkpoints" / "sweep_0001.json").write_text("{\"truncated\": ")
    assert main(["sweep", "--config", cfg, "--out", str(out), "--resume"]) == 0
    assert (out / "sweep.csv").read_bytes() == first


def test_correlations_mode(tmp_path):
    cfg = write(tmp_path, TINY + "x_max = 100\nn_x = 20\n")
    out = tmp_path / "out"
    assert main(["correlations", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "correlations_0000.csv")))
    assert rows[0] == ["x", "C11", "C22", "C12", "C21"] and len(rows) == 21
