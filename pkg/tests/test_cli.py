import csv
import json

import pytest

from skfgraph.cli import main
from skfgraph.slds_core import build_diffusion_slds, model_to_dict


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


SMALL = {"diffusion": {"z": 6, "etas": [0.01, 1.0, 0.19, 0.71]}}


def test_validate_shorthand(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, SMALL)]) == 0
    assert "valid: r=4 z=6" in capsys.readouterr().out


def test_validate_bad_priors(tmp_path, capsys):
    doc = model_to_dict(build_diffusion_slds(z=4, diffusivities=(0.1, 0.5)))
    doc["priors"] = [0.5, 0.4]
    assert main(["validate", "--config", write(tmp_path, doc)]) == 1
    assert "priors" in capsys.readouterr().out


def test_partition_out_of_range(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["validate", "--config", cfg, "--partition", "{1,5}|{2}"]) == 1
    assert "index out of range" in capsys.readouterr().out
    assert main(["cluster", "--config", cfg, "--partition", "{1,5}|{2}", "--out", str(tmp_path)]) == 1
    assert "index out of range" in capsys.readouterr().err


def test_malformed_json_reports_position(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, '{"model":\n  {"diffusion": }}')]) == 3
    assert "cfg.json:2:" in capsys.readouterr().err


def test_unknown_field_is_parse_error(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, {"model": SMALL, "colour": 1})]) == 3
    assert "colour" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.json")]) == 3


def test_runtime_error_exit_code(tmp_path):
    # alpha * eta above the explicit-scheme limit
    bad = {"diffusion": {"z": 6, "etas": [3.0], "alpha": 0.25}}
    assert main(["graph", "--config", write(tmp_path, bad), "--out", str(tmp_path)]) == 2


def test_single_mode_edges_file_is_header_only(tmp_path):
    cfg = write(tmp_path, {"diffusion": {"z": 5, "etas": [0.3]}})
    assert main(["graph", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "edges.csv").read_text().splitlines()
    assert lines[0] == "i,j,d" and len(lines) == 2 and lines[1].startswith("# skfgraph")


def test_default_diffusion_graph_outputs(tmp_path):
    out = tmp_path / "g"
    assert main(["graph", "--out", str(out)]) == 0
    rows = list(csv.reader((out / "partitions.csv").read_text().splitlines()[1:-1]))
    nontrivial = [r[1] for r in rows if r[1] != "{1}|{2}|{3}|{4}"]
    assert nontrivial[:3] == ["{1,3}|{2}|{4}", "{1}|{2,4}|{3}", "{1,3}|{2,4}"]
    edges = (out / "edges.csv").read_text().splitlines()
    assert len(edges) == 8 and all(float(e.split(",")[2]) > 0 for e in edges[1:-1])


@pytest.mark.parametrize("command,outputs", [
    ("simulate", ["simulation.csv"]),
    ("graph", ["edges.csv", "partitions.csv", "graph.json"]),
    ("mc-compare", ["mc_comparison.csv"]),
])
def test_reruns_are_byte_identical(tmp_path, command, outputs):
    cfg = write(tmp_path, SMALL)
    args = ["--config", cfg, "--runs", "20", "--steps", "3", "--partition", "{1,3}|{2,4}"]
    assert main([command, *args, "--out", str(tmp_path / "a")]) == 0
    assert main([command, *args, "--out", str(tmp_path / "b")]) == 0
    for name in outputs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_metadata_line_records_seed(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["simulate", "--config", cfg, "--seed", "77", "--steps", "2", "--out", str(tmp_path)]) == 0
    last = (tmp_path / "simulation.csv").read_text().splitlines()[-1]
    assert last.startswith("# skfgraph 0.1.0 seed=77 config=")


def test_budget_cluster(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["cluster", "--config", cfg, "--budget", "0", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "partitions.csv").read_text().splitlines()))
    assert rows[1][1] == "{1}|{2}|{3}|{4}"


def test_reproduce_writes_every_artifact(tmp_path, capsys):
    out = tmp_path / "rp"
    assert main(["reproduce-paper", "--runs", "30", "--steps", "3", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["completed"] == ["edges", "partitions", "predicted_excess", "mc_comparison", "prediction_vs_mc", "bench", "summary"]
    for name in ("edges.csv", "partitions.csv", "predicted_excess.csv", "mc_comparison.csv", "prediction_vs_mc.csv", "bench.csv", "summary.csv"):
        assert (out / name).read_text().splitlines()[-1].startswith("# skfgraph")
    summary = list(csv.reader((out / "summary.csv").read_text().splitlines()[1:-1]))
    flagged = [row for row in summary if row[1] == "FLAGGED"]
    assert [row[0] for row in flagged] == ["prediction vs SKF MC {1,2}|{3,4}"]
