import json

import numpy as np
import pytest

from pfcrack import bench
from pfcrack.__main__ import _levels, main
from pfcrack.bench import (FSI_SNEDDON_REFERENCE, ExperimentConfig, config_from_dict, default_config,
                           generate_reference, markdown_table, read_rows, run_pipeline, sneddon_cod, sneddon_tcv,
                           write_rows)


def test_sneddon_closed_forms():
    assert abs(sneddon_tcv() - 9.9243e-3) < 5e-8
    assert abs(sneddon_cod(2.0) - 3.159e-2) < 5e-6
    assert abs(sneddon_cod(2.13) - 2.40e-2) < 5e-5
    assert sneddon_cod(2.25) == 0.0 and sneddon_cod(1.75) == 0.0
    # the volume is the integral of the opening
    x = np.linspace(1.8, 2.2, 400001)
    assert abs(np.trapezoid(sneddon_cod(x), x) - sneddon_tcv()) < 1e-6 * sneddon_tcv()


@pytest.mark.parametrize("bad", [
    {"experiment": "nope"}, {"levels": []}, {"levels": [-1]}, {"levels": [0.5]}, {"h0": 0.0},
    {"variants": ["nope"]}, {"cod_method": "nope"}, {"geometry": "nope"}, {"pff": {"E": -1.0}},
    {"fsi": {"nu_f": 0.0}}, {"stokes": {"nu_f": -1.0}},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        config_from_dict(bad)


def test_tcrack_defaults():
    cfg = default_config("fsi-tcrack")
    assert cfg.h0 == 0.01 and cfg.levels == [0, 1, 2]
    f = cfg.fsi_params()
    assert f.E == 5e4 and f.forcing.c1 == 1e-4 and f.forcing.c2 == 5000.0 and f.forcing.x0 == (2.098, 2.002)
    p = cfg.pff_params(0.01)
    assert p.E == 5e4 and p.p == 1e4


def test_config_json_roundtrip_and_hash(tmp_path):
    cfg = default_config("fsi-tcrack", levels=[1])
    cfg.to_json(tmp_path / "c.json")
    back = ExperimentConfig.from_json(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.hash() == cfg.hash()
    assert default_config("fsi-tcrack", levels=[2]).hash() != cfg.hash()


def test_level_parsing():
    assert _levels("0-3") == [0, 1, 2, 3]
    assert _levels("0,2") == [0, 2]
    assert _levels("1,3-4") == [1, 3, 4]


def test_rows_and_markdown(tmp_path):
    rows = [{"level": 0, "h": 0.02, "name": "a"}, {"level": 1, "h": 0.01, "extra": 1.23456789}]
    write_rows(rows, tmp_path / "r.csv")
    back = read_rows(tmp_path / "r.csv")
    assert list(back[0]) == ["level", "h", "name", "extra"]
    assert float(back[1]["extra"]) == 1.23456789 and back[0]["extra"] == ""
    md = markdown_table(back, ["level", "h", "extra"]).splitlines()
    assert md[0] == "| level | h | extra |"
    assert md[3] == "| 1 | 0.01 | 1.2346 |"
    assert markdown_table([]) == ""


def test_stokes_pipeline_through_cli(tmp_path, capsys):
    out = tmp_path / "stokes"
    code = main(["run", "stokes-ellipse", "--levels", "0-1", "--h0", "0.02", "--out", str(out)])
    assert code == 0
    rows = read_rows(out / "results.csv")
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert float(rows[1]["l2_u"]) < float(rows[0]["l2_u"])
    assert float(rows[1]["order_l2_u"]) > 1.5
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == config_from_dict(man["config"]).hash()
    assert set(man["versions"]) >= {"pfcrack", "numpy", "scipy"}
    assert man["status"] == {"0": "ok", "1": "ok"}
    assert "0" in man["stage_times"]
    assert main(["report", str(out / "results.csv"), "--columns", "level,l2_u"]) == 0
    text = capsys.readouterr().out
    assert "| level | l2_u |" in text


def test_failed_level_is_recorded(tmp_path, monkeypatch):
    def boom(cfg, level, timer, outdir):
        if level == 1:
            raise RuntimeError("stage exploded")
        return {"level": level, "h": cfg.h0}

    monkeypatch.setitem(bench._LEVEL_RUNNERS, "sneddon", boom)
    cfg = default_config("sneddon", levels=[0, 1], out=str(tmp_path))
    res = run_pipeline(cfg)
    assert [r["status"] for r in res["rows"]] == ["ok", "failed"]
    assert "stage exploded" in res["rows"][1]["error"]
    assert "RuntimeError" in (tmp_path / "failure_l1.txt").read_text()
    assert res["manifest"]["status"] == {"0": "ok", "1": "failed"}
    assert main(["run", "sneddon", "--levels", "0,1", "--out", str(tmp_path / "cli")]) == 1


def test_reference_on_exact_ellipse(tmp_path):
    rows = generate_reference(levels=(0,), h0=0.016, out=str(tmp_path))
    assert (tmp_path / "reference.csv").exists()
    u = np.array([rows[0]["u_x"], rows[0]["u_y"]])
    ref = np.array(FSI_SNEDDON_REFERENCE)
    assert np.all(np.abs(u / ref - 1) < 0.02)


def test_identical_config_reproduces_results(tmp_path):
    res = []
    for run in ("a", "b"):
        cfg = default_config("sneddon", levels=[0], out=str(tmp_path / run))
        run_pipeline(cfg)
        res.append(read_rows(tmp_path / run / "results.csv"))
    a, b = res
    assert list(a[0]) == list(b[0])
    for k in a[0]:
        if k == "wall_time":
            continue
        try:
            x, y = float(a[0][k]), float(b[0][k])
        except ValueError:
            assert a[0][k] == b[0][k]
            continue
        assert abs(x - y) <= 1e-13 * max(abs(x), 1.0), k
