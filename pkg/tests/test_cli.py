import csv
import json

import pytest

from stressgate.cli import main

from conftest import cantilever_spec


@pytest.fixture
def spec_path(tmp_path):
    path = tmp_path / "mini.json"
    cantilever_spec(16, 8, id=1).dump(path)
    return path


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_solve(spec_path, tmp_path, capsys):
    rc = main(["solve", str(spec_path), "--max-iter", "30", "--tail", "10", "--out", str(tmp_path / "o")])
    out = _json_out(capsys)
    assert rc == (0 if out["evaluation"]["all_gates_pass"] else 1)
    assert out["compliance"] > 0 and out["n_iter"] == 40
    assert (tmp_path / "o" / "density.png").read_bytes()[:4] == b"\x89PNG"
    assert json.loads((tmp_path / "o" / "result.json").read_text())["compliance"] == out["compliance"]


def test_solve_vf_override(spec_path, capsys):
    main(["solve", str(spec_path), "--vf", "0.5", "--max-iter", "10", "--tail", "0", "--sigma-yield", "1e-9"])
    out = _json_out(capsys)
    assert out["evaluation"]["gates"]["volume_fraction"]["passed"]
    assert not out["evaluation"]["gates"]["max_stress"]["passed"]


def test_run_score_stats_export(spec_path, tmp_path, capsys):
    run_dir = tmp_path / "run"
    spec2 = tmp_path / "two.json"
    cantilever_spec(20, 10, id=2).dump(spec2)
    rc = main(["run", "--condition", "rule", "--condition", "exact_hotspot", "--spec", str(spec_path),
               "--spec", str(spec2), "--seeds", "42", "--sigma-yield", "1e-6", "--t-max", "2",
               "--max-iter", "30", "--tail", "10", "--out", str(run_dir)])
    out = _json_out(capsys)
    assert rc == 0 and out["accounting"]["rule"]["completed"] == 2
    with open(run_dir / "matrix.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    assert len(list((run_dir / "traces").glob("*.json"))) == 4

    main(["score", "--matrix", str(run_dir / "matrix.csv"), "--baseline", "rule", "--endpoints", "any"])
    score = _json_out(capsys)
    assert score["exact_hotspot"]["any"]["complete"] == [1, 2]

    main(["stats", "--wilcoxon", "--matrix", str(run_dir / "matrix.csv"), "--condition", "exact_hotspot"])
    st = _json_out(capsys)
    assert st["n_pairs"] == 2 and st["method"] in ("exact", "undefined")

    (run_dir / "figures" / "localization.csv").unlink()
    assert main(["export-figures", "--run-dir", str(run_dir)]) == 0
    with open(run_dir / "figures" / "localization.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {r["condition"] for r in rows} == {"exact_hotspot"}


def test_stats_requires_flag(capsys):
    assert main(["stats"]) == 2


def test_unknown_condition_rejected():
    with pytest.raises(SystemExit):
        main(["run", "--condition", "oracle"])
