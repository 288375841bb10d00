import csv
import json
import subprocess
import sys

import pytest

from disp2d import cli
from disp2d.config import BUNDLED, REQUIRED, apply_env, load_config, read_config_file
from disp2d.errors import ConfigError
from disp2d.io import atomic_write_text, csv_schema, write_csv

SMALL = {
    "potential": {"family": "gaussian", "amplitude": -0.1, "length_scale": 1.0},
    "grid": {"scheme": "polar", "n_r": 10, "n_theta": 10, "r_max": 5.0},
    "lowenergy": {"lambda_lo": 1e-5, "lambda_hi": 1e-3, "per_decade": 4},
    "evolution": {"t_list": [5.0, 10.0, 20.0], "lambda_max": 3.0, "dlam": 0.1, "n_low": 12,
                  "tail_check": False},
    "born": {"N_max": 3},
}


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_classify_bundled(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["classify", "--config", "gaussian-well", "--out", str(out)]) == 0
    rep = json.loads((out / "regularity.json").read_text())
    assert rep["regular"] is True and rep["sigma_min"] > 0
    m = manifest(out)
    assert m["status"] == "ok" and m["exit_code"] == 0
    assert m["outputs"] == ["regularity.json"]
    assert m["config_hash"] == rep["config_hash"]


def test_decay_free_exponent(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["decay", "--config", "free", "--out", str(out)]) == 0
    summary = json.loads((out / "decay.json").read_text())
    assert summary["method"] == "free"
    assert summary["exponent"] == pytest.approx(-1.0, abs=0.02)
    rows = read_rows(out / "decay.csv")
    assert len(rows) == 10 and all(r["config_hash"] == summary["config_hash"] for r in rows)


def test_negative_grid_size(tmp_path, capsys):
    bad = json.loads(json.dumps(SMALL))
    bad["grid"]["n_r"] = -4
    out = tmp_path / "o"
    assert cli.main(["classify", "--config", write_cfg(tmp_path, bad), "--out", str(out)]) == 2
    assert "grid.n_r" in capsys.readouterr().err
    m = manifest(out)
    assert m["status"] == "error" and m["exit_code"] == 2 and "grid.n_r" in m["error"]


def test_missing_section(tmp_path, capsys):
    data = {k: v for k, v in SMALL.items() if k != "evolution"}
    out = tmp_path / "o"
    assert cli.main(["evolve", "--config", write_cfg(tmp_path, data), "--out", str(out)]) == 2
    assert "evolution" in capsys.readouterr().err
    assert manifest(out)["exit_code"] == 2


def test_unknown_command_and_bad_json(tmp_path, capsys):
    assert cli.main(["frobnicate", "--config", "free"]) == 2
    assert "usage" in capsys.readouterr().err
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["classify", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["classify", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2


def test_zero_potential_is_validation_error(tmp_path):
    assert cli.main(["classify", "--config", "free", "--out", str(tmp_path / "o")]) == 2


def test_numerical_failure_exit_code(tmp_path):
    # tau above every singular value marks the potential non-regular; expand -> exit 3
    data = {"potential": {"family": "gaussian", "amplitude": -1.0, "length_scale": 1.0},
            "grid": {"scheme": "polar", "n_r": 10, "n_theta": 10, "r_max": 5.0, "r_scale": 0.5},
            "lowenergy": {"tau": 1e6}}
    out = tmp_path / "o"
    assert cli.main(["expand", "--config", write_cfg(tmp_path, data), "--out", str(out)]) == 3
    assert manifest(out)["exit_code"] == 3


def test_evolve_and_born_small(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    out = tmp_path / "o"
    assert cli.main(["evolve", "--config", path, "--out", str(out)]) == 0
    assert len(read_rows(out / "evolution.csv")) == 3
    assert cli.main(["born", "--config", path, "--out", str(out)]) == 0
    rows = read_rows(out / "born.csv")
    assert [int(r["N"]) for r in rows] == [0, 1, 2, 3]
    rho = float(rows[0]["contraction"])
    assert all(float(r["ratio"]) <= 2 * rho for r in rows[1:])


def test_every_csv_matches_schema(tmp_path):
    schema = csv_schema()
    path = write_cfg(tmp_path, {**SMALL, "lemma2": {"t_values": [1, 10], "n_points": 101,
                                                    "refine": 2},
                                "born_chain": {"n_samples": 4, "t_values": [1, 4]}})
    out = tmp_path / "o"
    for cmd in ("evolve", "born", "lemma2", "born-chain", "expand"):
        assert cli.main([cmd, "--config", path, "--out", str(out)]) == 0
    for f in out.glob("*.csv"):
        with open(f, newline="") as fh:
            header = next(csv.reader(fh))
        assert header[-1] == "config_hash"
        assert header == list(schema[f.name]) + ["config_hash"], f.name


def test_env_override_precedence(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, {**SMALL, "seed": 3})
    monkeypatch.setenv("DISP2D_GRID__N_R", "12")
    monkeypatch.setenv("DISP2D_SEED", "5")
    cfg = load_config(path)
    assert cfg.data["grid"]["n_r"] == 12 and cfg.seed == 5
    assert load_config(path, seed=9).seed == 9        # flag beats environment
    monkeypatch.setenv("DISP2D_NOPE__X", "1")
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_section_key_named(tmp_path, capsys):
    data = {**SMALL, "born_chain": {"n": 4}}
    assert cli.main(["born-chain", "--config", write_cfg(tmp_path, data),
                     "--out", str(tmp_path / "o")]) == 2
    assert "born_chain" in capsys.readouterr().err


def test_apply_env_parsing():
    out = apply_env({"grid": {"n_r": 8}}, {"DISP2D_GRID__SCHEME": "polar",
                                           "DISP2D_EVOLUTION__T_LIST": "[1, 2]",
                                           "DISP2D_THREADS": "2", "HOME": "/x"})
    assert out == {"grid": {"n_r": 8, "scheme": "polar"}, "evolution": {"t_list": [1, 2]}}


def test_hash_ignores_output_dir_but_not_seed():
    a = load_config(data=dict(SMALL), output_dir="a", environ={})
    b = load_config(data=dict(SMALL), output_dir="b", environ={})
    c = load_config(data=dict(SMALL), seed=1, environ={})
    assert a.hash == b.hash != c.hash
    assert len(a.hash) == 16


def test_required_sections():
    for cmd, sections in REQUIRED.items():
        cfg = load_config(data={}, environ={})
        with pytest.raises(ConfigError) as ei:
            cfg.require(cmd)
        assert ei.value.field == sections[0]


def test_bundled_configs_load():
    for name in BUNDLED:
        data, source = read_config_file(name)
        assert source == f"bundled:{name}"
        load_config(data=data, environ={})


def test_write_csv_and_atomic(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 0.1), (True, 2.5)], "abc")
    assert p.read_text() == "a,b,config_hash\n1,0.1,abc\ntrue,2.5,abc\n"
    with pytest.raises(ValueError):
        write_csv(tmp_path / "y.csv", ["a", "b"], [(1,)], "abc")
    assert not (tmp_path / "y.csv").exists()
    atomic_write_text(tmp_path / "x.csv", "new")
    assert (tmp_path / "x.csv").read_text() == "new"
    assert [f.name for f in tmp_path.iterdir()] == ["x.csv"]


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "disp2d.cli", "classify", "--config",
                        "two-well-zero-mass", "--out", str(tmp_path), "--threads", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "regularity.json").read_text())
    assert rep["regular"] and abs(rep["integral_of_V"]) < 1e-12
