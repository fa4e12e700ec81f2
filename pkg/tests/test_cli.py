import json

import pytest

from src.config import settings as settings_module
from src.core.tree_io import load_tree
from src.main import main

BASE_CONFIG = {
    "dimension": 2,
    "order": 1,
    "verbose": False,
    "shape": {"kind": "sphere", "center": [0.5, 0.5], "radius": 0.25},
    "refine": {"base_level": 2, "boundary_level": 4},
    "partition": {"rank_count": 2, "load_tol": 0.1},
    "solver": {"rel_tol": 1e-10, "abs_tol": 1e-12, "max_iter": 5000},
    "study": {
        "convergence_levels": [3, 4, 5],
        "condition_lengths": [1, 2],
        "condition_level": 3,
        "dof_base_level": 2,
        "dof_object_levels": [4],
        "sdf_levels": [3, 4],
        "bench_iterations": 2,
        "bench_warmup": 0,
        "bench_sweep": [1, 2],
    },
}


@pytest.fixture(autouse=True)
def _reset_settings(monkeypatch):
    monkeypatch.setattr(settings_module, "_settings", None)


def _config(tmp_path, **changes):
    data = json.loads(json.dumps(BASE_CONFIG))
    data.update(changes)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _run(config, out, command, *extra):
    return main(["--config", str(config), "--out", str(out), *extra, command])


def test_mesh_outputs(tmp_path):
    out = tmp_path / "out"
    assert _run(_config(tmp_path), out, "mesh") == 0
    for name in ("tree.bin", "mesh.vtu", "nodes.csv", "partition.csv", "mesh.json"):
        assert (out / name).exists()
    summary = json.loads((out / "mesh.json").read_text(encoding="utf-8"))
    assert summary["elements"] == len(load_tree(out / "tree.bin"))
    assert summary["max_level"] == 4
    assert summary["hanging_nodes"] > 0
    assert len((out / "partition.csv").read_text(encoding="utf-8").splitlines()) == 3


def test_reruns_are_byte_identical(tmp_path):
    config = _config(tmp_path)
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(config, first, "mesh") == 0
    assert _run(config, second, "mesh", "--workers", "3") == 0
    for name in ("tree.bin", "nodes.csv", "partition.csv", "mesh.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_solve(tmp_path):
    out = tmp_path / "out"
    assert _run(_config(tmp_path), out, "solve") == 0
    report = json.loads((out / "solve.json").read_text(encoding="utf-8"))
    assert report["converged"] is True
    assert report["rank_count"] == 2
    assert report["l2_error"] < 0.2
    assert (out / "solution.vtu").exists()


def test_convergence(tmp_path):
    out = tmp_path / "out"
    assert _run(_config(tmp_path, shape={"kind": "none"}), out, "convergence") == 0
    table = json.loads((out / "convergence.json").read_text(encoding="utf-8"))
    assert [row["level"] for row in table["rows"]] == [3, 4, 5]
    assert 1.8 <= table["l2_order"] <= 2.2


def test_condition(tmp_path):
    out = tmp_path / "out"
    assert _run(_config(tmp_path), out, "condition") == 0
    lines = (out / "condition.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "length,variant,dofs,kappa"
    assert len(lines) == 5
    trends = json.loads((out / "condition.json").read_text(encoding="utf-8"))["trends"]
    assert set(trends) == {"incomplete_decreasing", "stretched_nondecreasing", "stretched_jump"}


def test_dof_compare_and_sdf_study(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path)
    assert _run(config, out, "dof-compare") == 0
    rows = json.loads((out / "dof-compare.json").read_text(encoding="utf-8"))["rows"]
    assert rows[0]["f_elem"] > 1.0
    assert _run(config, out, "sdf-study") == 0
    sdf = json.loads((out / "sdf-study.json").read_text(encoding="utf-8"))
    assert [row["level"] for row in sdf["rows"]] == [3, 4]


def test_matvec_bench_sweep(tmp_path):
    out = tmp_path / "out"
    assert _run(_config(tmp_path), out, "matvec-bench", "--seed", "5") == 0
    assert (out / "bench_w1.csv").exists()
    assert (out / "bench_w2.csv").exists()
    bench = json.loads((out / "bench.json").read_text(encoding="utf-8"))
    assert [run["meta"]["workers"] for run in bench["runs"]] == [1.0, 2.0]


def test_fully_carved_domain_fails(tmp_path, capsys):
    config = _config(tmp_path, shape={"kind": "sphere", "center": [0.5, 0.5], "radius": 1.0})
    assert _run(config, tmp_path / "out", "mesh") == 1
    assert "错误:" in capsys.readouterr().err


def test_bad_config_fails(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("order = 1\nspeed = 3\n", encoding="utf-8")
    assert main(["--config", str(path), "mesh"]) == 1
    assert "未知配置键 speed" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.toml"), "mesh"]) == 1


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["render"])
