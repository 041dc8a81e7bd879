import filecmp
import json
import subprocess
import sys

import pytest

from foliate.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, load_config, main

FLAT = """
output_dir = "run"
[metric]
id = "euclidean"
[solver]
L = 8
freeze_tau = true
[solver.schedule]
r_min = 0.08
r_max = 0.3
count = {count}
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_missing_metric_id(tmp_path):
    assert main(["solve", "--config", write(tmp_path, "[solver]\nL = 8\n")]) == EXIT_VALIDATION


def test_unknown_key(tmp_path):
    assert main(["curvature", "--config", write(tmp_path, '[metric]\nid = "euclidean"\ncolour = 1\n')]) == EXIT_VALIDATION


def test_bad_type(tmp_path):
    assert main(["curvature", "--config", write(tmp_path, '[metric]\nid = "euclidean"\n[solver]\nL = "big"\n')]) == EXIT_VALIDATION


def test_unparseable_and_missing(tmp_path):
    assert main(["curvature", "--config", write(tmp_path, "[metric\n")]) == EXIT_VALIDATION
    assert main(["curvature", "--config", str(tmp_path / "nope.toml")]) == EXIT_VALIDATION


def test_unknown_metric(tmp_path):
    assert main(["curvature", "--config", write(tmp_path, '[metric]\nid = "torus"\n')]) == EXIT_VALIDATION


def test_json_config(tmp_path):
    cfg = load_config(write(tmp_path, json.dumps({"metric": {"id": "round_s3", "params": {"k": 2.0}}}), "c.json"))
    assert cfg.metric.params["k"] == 2.0
    assert len(cfg.config_hash) == 64


def test_curvature_flat_is_degenerate(tmp_path, capsys):
    assert main(["curvature", "--config", write(tmp_path, '[metric]\nid = "euclidean"\n')]) == EXIT_NUMERICAL
    out = json.loads(capsys.readouterr().out)
    assert out["critical_point"] is None


def test_curvature_space_form(tmp_path, capsys):
    main(["curvature", "--config", write(tmp_path, '[metric]\nid = "round_s3"\n')])
    assert abs(json.loads(capsys.readouterr().out)["curvature"]["sc"] - 6.0) < 1e-12


def test_curvature_bump(tmp_path, capsys):
    cfg = '[metric]\nid = "conformal_bump"\n[metric.params]\nb = 1.0\n'
    assert main(["curvature", "--config", write(tmp_path, cfg)]) == EXIT_OK
    eig = json.loads(capsys.readouterr().out)["critical_point"]["hessian_eigenvalues"]
    assert min(eig) > 10


def test_expand_check_small_L(tmp_path):
    cfg = '[metric]\nid = "euclidean"\n[expand]\nL = 4\n'
    assert main(["expand-check", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_expand_check_flat(tmp_path):
    cfg = '[metric]\nid = "euclidean"\n[expand]\nL = 8\nradii = [0.02, 0.05, 0.1]\ntaus = [[0.0, 0.0, 0.0]]\n'
    assert main(["expand-check", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "expand_check.json").read_text())
    assert all(f["exact"] and "skipped" in f["note"] for f in data["fits"])
    assert data["provenance"]["config_hash"]


def test_solve_requires_nondegenerate_point(tmp_path):
    cfg = FLAT.format(count=6).replace("freeze_tau = true", "freeze_tau = false")
    assert main(["solve", "--config", write(tmp_path, cfg)]) == EXIT_NUMERICAL


def test_solve_and_check_flat(tmp_path):
    path = write(tmp_path, FLAT.format(count=6))
    assert main(["solve", "--config", path]) == EXIT_OK
    fam = json.loads((tmp_path / "run" / "family.json").read_text())
    assert len(fam["leaves"]) == 6
    assert fam["provenance"]["config_hash"] == load_config(path).config_hash
    first = (tmp_path / "run" / "family.json").read_bytes()
    assert main(["solve", "--config", path]) == EXIT_OK
    assert (tmp_path / "run" / "family.json").read_bytes() == first

    check = write(tmp_path, FLAT.format(count=6) + '[foliation]\nfamily = "family.json"\n', "check.toml")
    assert main(["foliation-check", "--config", check, "--workers", "2"]) == EXIT_OK
    report = json.loads((tmp_path / "run" / "foliation_report.json").read_text())
    assert report["report"]["disjoint"] is True
    assert (tmp_path / "run" / "foliation.csv").read_text().startswith("r,lambda,tau_norm,area,energy,eta_gap\n")


def test_foliation_check_deterministic(tmp_path):
    path = write(tmp_path, FLAT.format(count=6))
    assert main(["foliation-check", "--config", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["foliation-check", "--config", path, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("foliation_report.json", "foliation.csv", "eta_fields.json", "family.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_foliation_check_too_few_leaves(tmp_path):
    assert main(["foliation-check", "--config", write(tmp_path, FLAT.format(count=5))]) == EXIT_VALIDATION


def test_uniqueness_zero_perturbations(tmp_path):
    cfg = FLAT.format(count=6) + "[uniqueness]\nr = 0.1\ncount = 0\n"
    assert main(["uniqueness-check", "--config", write(tmp_path, cfg)]) == EXIT_OK
    data = json.loads((tmp_path / "run" / "uniqueness.json").read_text())
    assert data["summary"]["trials"] == 0 and data["summary"]["all_same"]


def test_workers_validated(tmp_path):
    assert main(["curvature", "--config", write(tmp_path, '[metric]\nid = "euclidean"\n'), "--workers", "0"]) == EXIT_VALIDATION


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "foliate.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("curvature", "expand-check", "solve", "foliation-check", "uniqueness-check"):
        assert cmd in out.stdout
