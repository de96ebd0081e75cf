import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from spdelab.cli import main
from spdelab.config import from_dict, load_config, loads
from spdelab.constants import c_infinity
from spdelab.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = {"grid": {"T": 0.5, "D": 1.0, "nt": 16, "nx": 8}, "replicas": 60, "seed": 1,
        "stats": {"n_boot": 100}}


def write(tmp_path, cfg, name="cfg.json"):
    cfg = dict(cfg)
    cfg.setdefault("out", str(tmp_path / "out"))
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_defaults_resolve():
    cfg = from_dict({})
    assert cfg.grid.nt == 64 and cfg.mode == "sup" and cfg.drift.is_zero
    assert cfg.model.lipschitz.K_sigma == 1.0


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigurationError, match="'gird'"):
        from_dict({"gird": {}})
    with pytest.raises(ConfigurationError, match="'grid.dt'"):
        from_dict({"grid": {"dt": 0.1}})


def test_grid_size_message():
    with pytest.raises(ConfigurationError, match="nt must be ≥ 2, got 0"):
        from_dict({"grid": {"nt": 0}})
    with pytest.raises(ConfigurationError, match="integer"):
        from_dict({"grid": {"nx": 3.5}})


def test_json_error_has_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"grid": {"nt": 4,}}')
    with pytest.raises(ConfigurationError, match=r"bad.json:1:19"):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config("/nonexistent/cfg.json")


def test_declared_lipschitz_below_closed_form():
    with pytest.raises(ConfigurationError, match="below the closed-form"):
        from_dict({"model": {"sigma": "bounded_sigmoid", "lipschitz": {"K_sigma": 0.5}}})
    with pytest.raises(ConfigurationError, match="below the closed-form"):
        from_dict({"model": {"g": "sine", "lipschitz": {"L_g": 0.9}}})


def test_lipschitz_defaults_to_closed_forms():
    cfg = from_dict({"model": {"g": {"name": "sine", "amplitude": 2.0, "frequency": 0.5},
                               "sigma": "inverse_sqrt"}})
    lip = cfg.model.lipschitz
    assert lip.L_g == 1.0
    assert lip.L_sigma == pytest.approx(2 / (3 * np.sqrt(3)), rel=1e-15)
    assert lip.K_sigma == 1.0
    # a looser declaration is allowed
    assert from_dict({"model": {"g": "sine", "lipschitz": {"L_g": 1.5}}}).model.lipschitz.L_g == 1.5


@pytest.mark.parametrize("given,match", [
    ({"mode": "l1"}, "mode"),
    ({"operator": {"boundary": "robin"}}, "boundary"),
    ({"kernel": {"alphas": [2.5]}}, "alphas"),
    ({"model": {"g": "cubic"}}, "unknown preset"),
    ({"model": {"g": {"name": "sine", "phase": 1}}}, "unknown parameter"),
    ({"stats": {"level": 1.5}}, "level"),
    ({"grid": {"T": -1}}, "T must be > 0"),
    ({"replicas": 0}, "replicas"),
    ({"repr": {"case": "cubic"}}, "repr.case"),
])
def test_validation_errors(given, match):
    with pytest.raises(ConfigurationError, match=match):
        from_dict(given)


def test_digest_and_overrides():
    a = loads(json.dumps(TINY))
    b = loads(json.dumps(TINY, indent=4))
    assert a.digest() == b.digest()
    c = a.with_overrides(seed=2, replicas=None)
    assert c.seed == 2 and c.replicas == a.replicas and c.digest() != a.digest()


def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.json")):
        load_config(p)


def test_constants_command_matches_module(tmp_path):
    p = write(tmp_path, {**TINY, "model": {"g": "sine", "sigma": 1.0}})
    assert main(["constants", "--config", str(p)]) == 0
    out = json.loads((tmp_path / "out" / "constants.json").read_text())
    assert out["c_infinity"] == pytest.approx(c_infinity(out["g_total"], 1.0, 0.5), rel=1e-15)
    assert 1 < out["alpha_star"] < 2
    assert len(out["g_alpha_curve"]) == 19
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["passed"] and man["checks"]["c_infinity_finite"]


def test_kernel_command(tmp_path):
    p = write(tmp_path, TINY)
    assert main(["kernel", "--config", str(p)]) == 0
    meta = json.loads((tmp_path / "out" / "kernel.json").read_text())
    assert meta["g_total"] <= 1 / np.sqrt(np.pi) * np.sqrt(0.5) * 1.001


def test_simulate_command(tmp_path):
    p = write(tmp_path, TINY)
    assert main(["simulate", "--config", str(p), "--replicas", "40"]) == 0
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert agg["replicas"] == 40 and "walsh_variance_T" in agg
    rows = (tmp_path / "out" / "replicas.csv").read_text().splitlines()
    assert rows[0] == "replica,sup_norm,l2_norm,u_T_mid" and len(rows) == 41


def test_zero_drift_verification_passes(tmp_path, capsys):
    p = write(tmp_path, {**TINY, "drift": 0.0})
    assert main(["verify-tci", "--config", str(p)]) == 0
    rep = json.loads((tmp_path / "out" / "tci_report.json").read_text())
    assert rep["ratio"]["value"] == 0.0 and rep["verdict"] == "PASS"
    assert "ratio_upper_ci_below_one" in capsys.readouterr().out


def test_verify_tci_l2_mode(tmp_path):
    p = write(tmp_path, {**TINY, "model": {"sigma": "inverse_sqrt"},
                         "drift": {"name": "feedback_tanh"}, "mode": "l2"})
    assert main(["verify-tci", "--config", str(p)]) == 0


def test_config_error_exit_code(tmp_path, capsys):
    p = write(tmp_path, {"grid": {"nt": 0}})
    assert main(["simulate", "--config", str(p)]) == 2
    assert "nt must be" in capsys.readouterr().err


def test_numeric_failure_is_a_partial_run(tmp_path):
    p = write(tmp_path, {**TINY, "model": {"g": {"name": "linear", "slope": 5000.0}, "u0": 1.0}})
    assert main(["simulate", "--config", str(p)]) == 2
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["partial"] and "BlowUpError" in man["error"]


def test_w2_command(tmp_path, capsys):
    cfg = load_config(CONFIGS / "w2.json")
    assert cfg.w2["a"] == "cloud_a.csv"
    assert main(["w2", "--config", str(CONFIGS / "w2.json"), "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.splitlines()[0]
    res = json.loads(line)
    assert res["method"] == "exact-assignment"
    assert res["w2"] == pytest.approx(np.linalg.norm([1.0, -0.5, 0.25, 0.0, 2.0]), rel=1e-12)


def test_w2_needs_two_clouds(tmp_path):
    p = write(tmp_path, {})
    assert main(["w2", "--config", str(p)]) == 2


@pytest.mark.parametrize("case", ["linear", "mixed", "quadratic"])
def test_repr_check_command(tmp_path, case):
    p = write(tmp_path, {"replicas": 2000, "seed": 4, "repr": {"nt": 16},
                         "stats": {"n_boot": 200}})
    assert main(["repr-check", "--config", str(p), "--case", case]) == 0
    res = json.loads((tmp_path / "out" / "repr_check.json").read_text())
    assert res["case"] == case


def test_outputs_are_byte_identical_across_thread_counts(tmp_path, monkeypatch):
    cfg = {**TINY, "replicas": 600, "model": {"g": "sine"}, "drift": 1.0}
    files = {}
    for threads in ("1", "3"):
        monkeypatch.setenv("SPDELAB_THREADS", threads)
        out = tmp_path / f"t{threads}"
        p = write(tmp_path, {**cfg, "out": str(out)}, f"c{threads}.json")
        assert main(["verify-tci", "--config", str(p)]) == 0
        files[threads] = {f.name: f.read_bytes() for f in out.iterdir() if f.name != "manifest.json"}
    assert files["1"] == files["3"]
    assert set(files["1"]) == {"tci_report.json", "tci_replicas.csv"}


def test_module_entry_point(tmp_path):
    p = write(tmp_path, TINY)
    res = subprocess.run([sys.executable, "-m", "spdelab", "constants", "--config", str(p)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "c_infinity" in res.stdout
