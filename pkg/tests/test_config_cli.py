import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest
import yaml

from evnetd.cli import main
from evnetd.config import ConfigError, load_config

BASE = {
    "network": {"M": 2, "A": 1.0, "Rw": 1.0},
    "crm": {"p_alpha": 0.5, "r_max": 10},
    "policy": {"family": "threshold", "thresholds": [0.25]},
    "numerics": {"D_max": 400},
}


def _write(tmp_path, doc, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_load_config_minimal(tmp_path):
    cfg = load_config(_write(tmp_path, BASE))
    assert cfg.M == 2
    assert cfg.plant.rho == 1.0
    assert cfg.policy.thresholds[0] == 0.25
    assert cfg.policy.p_gamma is None
    assert cfg.D_max == 400


def test_unknown_key_rejected(tmp_path):
    doc = {**BASE, "crm": {"p_alpha": 0.5, "r_max": 10, "palpha": 0.2}}
    with pytest.raises(ConfigError, match="crm.*palpha"):
        load_config(_write(tmp_path, doc))
    with pytest.raises(ConfigError, match="unknown"):
        load_config(_write(tmp_path, {**BASE, "extra": {}}))


def test_probability_range_checked(tmp_path):
    doc = {**BASE, "crm": {"p_alpha": 1.5, "r_max": 10}}
    with pytest.raises(ConfigError, match="p_alpha"):
        load_config(_write(tmp_path, doc))
    doc = {**BASE, "policy": {"family": "constant", "p_gamma": 0.0}}
    with pytest.raises(ConfigError, match="p_gamma"):
        load_config(_write(tmp_path, doc))


def test_family_specific_keys_enforced(tmp_path):
    doc = {**BASE, "policy": {"family": "constant", "p_gamma": 0.5,
                              "mu": 0.5}}
    with pytest.raises(ConfigError, match="do not apply"):
        load_config(_write(tmp_path, doc))


def test_policy_families_expand(tmp_path):
    doc = {**BASE, "policy": {"family": "exponential", "p_gamma": 0.8,
                              "mu": 0.5, "D": 4}}
    cfg = load_config(_write(tmp_path, doc))
    assert np.allclose(cfg.policy.p_gamma, [0.8, 0.4, 0.2, 0.1])
    doc = {**BASE, "policy": {"family": "additive", "p_gamma": 0.3,
                              "eta": 0.2, "D": 3}}
    cfg = load_config(_write(tmp_path, doc))
    assert np.allclose(cfg.policy.p_gamma, [0.3, 0.5, 0.54])


def test_threshold_policy_needs_scalar_plant(tmp_path):
    doc = {**BASE,
           "network": {"M": 2, "A": [[1.1, 0.0], [0.0, 0.5]],
                       "B": [[1.0], [0.0]], "Rw": [[1.0, 0.0], [0.0, 1.0]],
                       "gain": [[1.1, 0.0]]}}
    with pytest.raises(ConfigError, match="scalar"):
        load_config(_write(tmp_path, doc))


def test_malformed_yaml_is_line_anchored(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("network:\n  M: [\n")
    rc = main(["analyze", "--config", str(path), "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "line" in err


def test_analyze_exit_codes_and_schema(tmp_path):
    path = _write(tmp_path, BASE)
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    rc = main(["analyze", "--config", path, "--out", str(tmp_path),
               "--quiet"])
    assert rc == 0
    chain = _rows(tmp_path / "chain.csv")
    assert set(chain[0]) == {"loop", "d", "pi_I", "pi_T"}
    mass = sum(float(r["pi_I"]) for r in chain if r["loop"] == "0")
    assert mass == pytest.approx(1.0, abs=1e-9)
    stab = _rows(tmp_path / "stability.csv")
    assert all(r["verdict"] == "GuaranteedStable" for r in stab)
    assert (tmp_path / "chain.png").exists()
    # the input config is never mutated
    assert hashlib.sha256(Path(path).read_bytes()).hexdigest() == digest

    contended = {**BASE, "network": {"M": 10, "A": 1.0, "Rw": 1.0},
                 "numerics": {"D_max": 4000}}
    rc = main(["analyze", "--config", _write(tmp_path, contended, "m10.yaml"),
               "--out", str(tmp_path), "--quiet"])
    assert rc == 1


def test_design_region_output(tmp_path):
    doc = {
        "network": {"M": 3, "A": 1.0, "Rw": 1.0},
        "crm": {"p_alpha": 0.5, "r_max": 5},
        "policy": {"family": "constant", "p_gamma": 0.5},
        "region": {"rho": 0.9, "n_gamma": 8, "n_alpha": 8,
                   "gamma_min": 0.1, "alpha_min": 0.1},
    }
    rc = main(["design-region", "--config", _write(tmp_path, doc),
               "--out", str(tmp_path), "--quiet"])
    assert rc == 0
    rows = _rows(tmp_path / "region.csv")
    assert set(rows[0]) == {"p_gamma", "p_alpha", "reliability", "p_loss",
                            "stable", "margin"}
    assert len(rows) == 64
    assert all(r["stable"] == "True" for r in rows)  # rho < 1
    assert (tmp_path / "region.png").exists()

    # missing section is a usage error
    rc = main(["design-region", "--config", _write(tmp_path, BASE),
               "--out", str(tmp_path), "--quiet"])
    assert rc == 2


def test_thresholds_output(tmp_path):
    demo = Path(__file__).resolve().parent.parent / "configs" \
        / "majorization_demo.yaml"
    rc = main(["thresholds", "--config", str(demo),
               "--out", str(tmp_path), "--quiet"])
    assert rc == 0
    rows = _rows(tmp_path / "thresholds.csv")
    assert [r["d"] for r in rows] == ["1", "2", "3", "4", "5"]
    assert all(float(r["delta"]) == 1.0 for r in rows)
    for d in range(1, 6):
        for kind in ("idle", "aux"):
            dens = _rows(tmp_path / f"density_{kind}_d{d}.csv")
            assert set(dens[0]) == {"x", "value"}
            cdf = _rows(tmp_path / f"cdf_{kind}_d{d}.csv")
            assert float(cdf[-1]["value"]) == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "cdf_pairs.png").exists()


def test_simulate_output_and_seed_override(tmp_path):
    doc = {**BASE,
           "simulate": {"horizon": 3000, "seed": 5, "record_states": True,
                        "trace_csv": True, "D_bins": 8}}
    path = _write(tmp_path, doc)
    out1, out2, out3 = (tmp_path / s for s in ("a", "b", "c"))
    assert main(["simulate", "--config", path, "--out", str(out1),
                 "--quiet"]) == 0
    assert main(["simulate", "--config", path, "--out", str(out2),
                 "--quiet"]) == 0
    assert main(["simulate", "--config", path, "--out", str(out3),
                 "--seed", "6", "--quiet"]) == 0
    same = (out1 / "summary.csv").read_bytes()
    assert same == (out2 / "summary.csv").read_bytes()
    assert same != (out3 / "summary.csv").read_bytes()

    trace = _rows(out1 / "trace.csv")
    assert set(trace[0]) == {"instant", "loop", "x", "xhat", "gamma",
                             "delta", "d"}
    assert len(trace) == 3000 * 2
    pg = _rows(out1 / "p_gamma_hat.csv")
    assert set(pg[0]) == {"loop", "d", "p_gamma_hat", "visits",
                          "low_confidence"}
    assert (out1 / "running_mean.png").exists()


def test_threads_env_var(tmp_path, monkeypatch):
    doc = {
        "network": {"M": 2, "A": 1.0, "Rw": 1.0},
        "crm": {"p_alpha": 0.5, "r_max": 3},
        "policy": {"family": "constant", "p_gamma": 0.5},
        "region": {"rho": [0.8, 0.9], "n_gamma": 6, "n_alpha": 6,
                   "gamma_min": 0.1, "alpha_min": 0.1},
    }
    monkeypatch.setenv("EVNETD_THREADS", "2")
    rc = main(["design-region", "--config", _write(tmp_path, doc),
               "--out", str(tmp_path), "--quiet"])
    assert rc == 0
    assert (tmp_path / "region_rho0.8.csv").exists()
    assert (tmp_path / "region_rho0.9.csv").exists()
