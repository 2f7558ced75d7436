import io
import json

import pytest

from umbilic_yamabe.cli import run


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def _strip(doc):
    doc = json.loads(doc)
    doc.pop("timestamp")
    return doc


def test_constants_reports_hemisphere_constant():
    code, out, _ = _run(["constants"])
    assert code == 0
    doc = json.loads(out)
    assert doc["result"]["value"] == pytest.approx(120 * (3.141592653589793 ** 3 / 120) ** (1 / 3), rel=1e-12)
    assert {"command", "version", "config", "input_hash", "tolerances", "result", "timestamp"} <= set(doc)


def test_verify_passes_and_is_reproducible():
    a = _run(["verify", "--cases", "3"])
    b = _run(["verify", "--cases", "3"])
    assert a[0] == 0 and b[0] == 0
    assert _strip(a[1]) == _strip(b[1])


def test_verify_rejects_degree_above_cap():
    code, _, err = _run(["verify", "--n", "6", "--d", "9"])
    assert code == 2
    assert "--d" in err


def test_malformed_config_names_the_field(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"coeffs": {"example": "standard"}, "epsilon": -1, "delta": 0.25}))
    code, _, err = _run(["solve-v", "--config", str(cfg)])
    assert code == 2
    assert "epsilon" in err
    cfg.write_text("{not json")
    code, _, err = _run(["solve-v", "--config", str(cfg)])
    assert code == 2 and "line 1" in err
    cfg.write_text(json.dumps({"coeffs": {"example": "nonesuch"}, "epsilon": 0.1, "delta": 0.25}))
    code, _, err = _run(["solve-v", "--config", str(cfg)])
    assert code == 2 and "coeffs.example" in err


def test_solve_v_output_is_deterministic(tmp_path):
    cfg = tmp_path / "v.json"
    cfg.write_text(json.dumps({"coeffs": {"example": "standard"}, "epsilon": 0.05, "delta": 0.25}))
    a = _run(["solve-v", "--config", str(cfg)])
    b = _run(["solve-v", "--config", str(cfg)])
    assert a[0] == 0
    assert json.dumps(_strip(a[1]), sort_keys=True) == json.dumps(_strip(b[1]), sort_keys=True)


def test_flat_compare_is_not_demonstrated(tmp_path):
    cfg = tmp_path / "flat.json"
    cfg.write_text(json.dumps({
        "coeffs": {"example": "flat", "n": 6}, "scale": 1.0, "rho0": 1.0, "mode": "nondegenerate",
        "grid": {"deltas": [0.25], "eps_over_delta": [0.25]}, "degree": 3,
        "quadrature": {"samples": 40, "panels": 8, "order": 8}}))
    outdir = tmp_path / "out"
    code, _, _ = _run(["compare", "--config", str(cfg), "--out", str(outdir), "--require-demonstrated"])
    assert code == 1
    files = list(outdir.iterdir())
    assert any(f.suffix == ".json" for f in files)
    doc = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert doc["result"]["verdict"] != "inequality demonstrated"
