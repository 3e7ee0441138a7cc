import csv
import json

import pytest

from triangulation.cli import main
from triangulation.data import write_csv
from triangulation.kernel import gaussian_kernel
from triangulation.simulation import generate_s1, generate_s2

TABLE1_MODEL_KEYS = {"label", "psi", "psi_ci", "beta", "weight"}
TABLE1_COMBINED_KEYS = {"psi_n", "se", "ci", "degenerate_flag", "inference_branch"}


@pytest.fixture(scope="module")
def s2_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "s2.csv"
    write_csv(generate_s2(5000, "both_ok", 11), p, include_latent=False)
    return p


@pytest.fixture(scope="module")
def s1_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "s1.csv"
    write_csv(generate_s1(2000, "eps71", 11), p, include_latent=False)
    return p


def _config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _s2_estimate_cfg(path, **extra):
    return {
        "data": {"path": str(path), "binary": ["Z", "A", "M"]},
        "roles": {"treatment": "A", "outcome": "Y", "anchor": "Z"},
        "models": [
            {"kind": "backdoor", "adjustment": [], "label": "backdoor"},
            {"kind": "frontdoor", "mediators": ["M"], "adjustment": ["C"], "label": "frontdoor"},
            {"kind": "iv", "mediators": ["M"], "adjustment": ["C"], "label": "iv"},
        ],
        **extra,
    }


def test_estimate_table_layout_and_weights(tmp_path, s2_csv):
    out = tmp_path / "est.json"
    cfg = _config(tmp_path, _s2_estimate_cfg(s2_csv, inference={"branch": "bootstrap", "B": 100}))
    assert main(["estimate", "--config", cfg, "--output", str(out), "--seed", "9"]) == 0
    doc = json.loads(out.read_text())
    assert doc["seed"] == 9 and doc["config"]["seed"] == 9
    assert doc["config"]["kernel"]["lambda"] == "1/n"
    for row in doc["per_model"]:
        assert TABLE1_MODEL_KEYS <= set(row)
        assert row["psi_ci_method"] == "bootstrap_percentile"
    assert TABLE1_COMBINED_KEYS <= set(doc["combined"])
    w = {r["label"]: r["weight"] for r in doc["per_model"]}
    assert w["frontdoor"] + w["iv"] > 0.9 and w["backdoor"] < 0.01


def test_estimate_wald_mismatch_exit_4(tmp_path, s2_csv, capsys):
    cfg = _config(tmp_path, _s2_estimate_cfg(s2_csv, inference={"branch": "wald"}))
    assert main(["estimate", "--config", cfg]) == 4
    assert "influence" in capsys.readouterr().err


def test_estimate_single_model_reduction(tmp_path, s1_csv):
    out = tmp_path / "one.json"
    cfg = _config(tmp_path, {
        "data": {"path": str(s1_csv), "binary": ["Z", "A", "Y"]},
        "roles": {"treatment": "A", "outcome": "Y", "anchor": "Z"},
        "models": [{"kind": "backdoor", "adjustment": ["C1", "C2", "C3"], "estimator": "influence"}],
    })
    assert main(["estimate", "--config", cfg, "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    row = doc["per_model"][0]
    d = gaussian_kernel(row["beta"], 0.1)
    w1 = d / (1 / 2000 + d)
    assert row["weight"] == pytest.approx(w1, rel=1e-12)
    assert doc["combined"]["psi_n"] == pytest.approx(w1 * row["psi"], rel=1e-12)
    assert row["psi_ci_method"] == "influence_function"


def test_diagnose_output(tmp_path, s2_csv, capsys):
    cfg = _config(tmp_path, _s2_estimate_cfg(s2_csv, epsilons=[0.2], kernel={"a": 0.1, "lambda": "1/n"}))
    assert main(["diagnose", "--config", cfg]) == 0
    text = capsys.readouterr().out
    assert "degenerate_flag = false" in text
    assert "28.3" in text and "|I| = 2" in text


def test_diagnose_degenerate(tmp_path, s2_csv, capsys):
    spec = _s2_estimate_cfg(s2_csv, kernel={"a": 0.01})
    spec["models"] = [spec["models"][0]]  # backdoor without C: |beta| far above a
    cfg = _config(tmp_path, spec)
    assert main(["diagnose", "--config", cfg]) == 0
    assert "degenerate_flag = true" in capsys.readouterr().out


def test_lambda_zero_weights_sum_to_one(tmp_path, s2_csv):
    out = tmp_path / "d.json"
    cfg = _config(tmp_path, _s2_estimate_cfg(s2_csv, kernel={"lambda": 0}))
    assert main(["diagnose", "--config", cfg, "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sum(m["weight"] for m in doc["models"]) == pytest.approx(1.0, abs=1e-12)


def test_bad_configs_exit_2(tmp_path, s2_csv, capsys):
    cfg = _config(tmp_path, {"scenario": "S1_eps7", "n": 500, "trials": 1})
    assert main(["simulate", "--config", cfg]) == 2
    assert "S1_eps71" in capsys.readouterr().err
    cfg = _config(tmp_path, {"scenario": "S1_eps71", "n": 500, "bogus": 1}, "b.json")
    assert main(["simulate", "--config", cfg]) == 2
    cfg = _config(tmp_path, _s2_estimate_cfg("/nonexistent.csv"), "c.json")
    assert main(["estimate", "--config", cfg]) == 2
    cfg = _config(tmp_path, _s2_estimate_cfg(s2_csv, kernel={"lambda": "1/m"}), "d.json")
    assert main(["estimate", "--config", cfg]) == 2
    spec = _s2_estimate_cfg(s2_csv)
    spec["models"][0]["adjustment"] = ["nope"]
    assert main(["estimate", "--config", _config(tmp_path, spec, "e.json")]) == 2


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = _config(tmp_path, {"scenario": "S1_eps71", "n": [300, 400], "trials": 1, "seed": 5})
    out = tmp_path / "sim.json"
    assert main(["simulate", "--config", cfg, "--output", str(out)]) == 0
    first = out.read_bytes()
    assert main(["simulate", "--config", cfg, "--output", str(out)]) == 0
    assert out.read_bytes() == first
    doc = json.loads(first)
    assert doc["seed"] == 5 and len(doc["results"]) == 2
    with open(out.with_suffix(".csv")) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "mean_estimate", "band_lo", "band_hi", "coverage_theta", "coverage_psi"]
    assert [r[0] for r in rows[1:]] == ["300", "400"]
