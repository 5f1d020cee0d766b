import os

import pytest

from magfilm.cli import main, parse_config, run
from magfilm.errors import ConfigError

FAST = """
grid_n = 17
nz = 5
padding = 0.5
voxel_resolution = 16
h_list = 0.2, 0.1
h = 0.1
figures = off
"""


def test_parse_empty_gives_defaults():
    cfg = parse_config("")
    assert cfg.p == 4.0 and cfg.q == 13.0
    assert cfg.alpha == 1.0 and cfg.mu0 == 1.0
    assert cfg.grid_n == 65 and cfg.nz == 9 and cfg.padding == 1.0
    assert cfg.scenario == "identity"
    assert cfg.h_list == (0.4, 0.2, 0.1, 0.05)


def test_parse_comments_and_values():
    cfg = parse_config("# a comment\np = 5.0  # inline\nq = 9\nscenario = fold\n")
    assert cfg.p == 5.0 and cfg.q == 9.0
    assert cfg.scenario == "fold"


def test_parse_rejects_unknown_keys():
    with pytest.raises(ConfigError) as err:
        parse_config("p = 4\nmystery_knob = 2\n")
    assert "mystery_knob" in str(err.value)
    assert "line 2" in str(err.value)


def test_parse_rejects_exponent_violation():
    # q must exceed 3p/(p-3) = 12 for p = 4
    with pytest.raises(ConfigError):
        parse_config("p = 4\nq = 12\n")


def test_parse_rejects_malformed_line():
    with pytest.raises(ConfigError) as err:
        parse_config("p 4\n")
    assert err.value.line == 1


def test_parse_rejects_bad_type():
    with pytest.raises(ConfigError):
        parse_config("grid_n = sixty\n")


def test_parse_rejects_missing_custom_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("scenario = custom\ny_file = missing.field\n"
                     "b_file = missing.field\nm_file = missing.field\n")


def test_eval2d_identity(tmp_path):
    cfg = parse_config(FAST)
    out = run(cfg, "eval2d", out_dir=str(tmp_path / "out"))
    csv = open(os.path.join(out, "eval2d.csv")).read().strip().split("\n")
    assert csv[0].startswith("h,elastic")
    total = float(csv[1].split(",")[6])
    assert total == pytest.approx(10.5, abs=1e-9)


def test_eval2d_custom_roundtrip(tmp_path):
    from magfilm import Grid2, write_field
    from magfilm.scenarios import identity_triple

    t = identity_triple(Grid2(nx=9, ny=9))
    paths = {}
    for name, fld in (("y", t.y), ("b", t.b), ("m", t.M)):
        p = tmp_path / f"{name}.field"
        write_field(fld, p)
        paths[name] = p
    cfg = parse_config(
        f"scenario = custom\ny_file = {paths['y']}\nb_file = {paths['b']}\n"
        f"m_file = {paths['m']}\npadding = 0.5\nfigures = off\n"
    )
    out = run(cfg, "eval2d", out_dir=str(tmp_path / "out"))
    csv = open(os.path.join(out, "eval2d.csv")).read().strip().split("\n")
    assert float(csv[1].split(",")[6]) == pytest.approx(10.5, abs=1e-9)


def test_check_fold_classification(tmp_path):
    cfg = parse_config(FAST + "scenario = fold\nh = 0.05\n")
    out = run(cfg, "check", out_dir=str(tmp_path / "out"))
    kv = dict(line.split("=", 1) for line in
              open(os.path.join(out, "check.kv")).read().strip().split("\n"))
    assert kv["cn_satisfied"] == "0"
    assert kv["area_satisfied"] == "0"
    assert float(kv["avg_inv_constant"]) <= 0.1
    assert kv["self_intersects"] == "1"
    # the audited deformation ships as field files next to the report
    for suffix in ("y", "b", "M"):
        assert os.path.exists(os.path.join(out, f"fold_{suffix}.field"))


def test_eval3d_identity(tmp_path):
    cfg = parse_config(FAST)
    out = run(cfg, "eval3d", out_dir=str(tmp_path / "out"))
    csv = open(os.path.join(out, "eval3d.csv")).read().strip().split("\n")
    row = csv[1].split(",")
    assert float(row[0]) == pytest.approx(0.1)      # h column
    assert float(row[1]) == pytest.approx(9.0)      # elastic
    assert float(row[4]) == pytest.approx(1.0)      # barrier
    assert 0.0 < float(row[5]) < 0.5                # magnetostatic


def test_sweep_cli_gap_column(tmp_path):
    cfg = parse_config(FAST)
    out = run(cfg, "sweep", out_dir=str(tmp_path / "out"))
    lines = open(os.path.join(out, "sweep.csv")).read().strip().split("\n")
    header = lines[0].split(",")
    gap_idx = header.index("gap")
    gaps = [float(line.split(",")[gap_idx]) for line in lines[1:]]
    assert len(gaps) == 2
    assert abs(gaps[1]) < abs(gaps[0])


def test_stray_commands(tmp_path):
    cfg = parse_config(FAST)
    out = run(cfg, "stray2d", out_dir=str(tmp_path / "s2"))
    kv = dict(line.split("=", 1) for line in
              open(os.path.join(out, "stray2d.kv")).read().strip().split("\n"))
    assert float(kv["lambda_eigen"]) == pytest.approx(1.0)
    assert float(kv["magnetostatic"]) == pytest.approx(0.5, abs=1e-10)
    assert os.path.exists(os.path.join(out, "stray2d_U.field"))
    out = run(cfg, "stray3d", out_dir=str(tmp_path / "s3"))
    kv = dict(line.split("=", 1) for line in
              open(os.path.join(out, "stray3d.kv")).read().strip().split("\n"))
    assert 0.0 < float(kv["magnetostatic"]) < 0.5


def test_recover_and_minimize_commands(tmp_path):
    cfg = parse_config(FAST + "minimize_max_iter = 3\nminimize_saddle_probes = 0\n")
    out = run(cfg, "recover", out_dir=str(tmp_path / "r"))
    assert os.path.exists(os.path.join(out, "recover_yh_0p2.field"))
    lines = open(os.path.join(out, "recover.csv")).read().strip().split("\n")
    assert len(lines) == 3
    out = run(cfg, "minimize", out_dir=str(tmp_path / "m"))
    lines = open(os.path.join(out, "minimize_trace.csv")).read().strip().split("\n")
    assert lines[0] == "iter,total,grad_norm,step,min_det"
    assert os.path.exists(os.path.join(out, "minimize_M.field"))


def test_main_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("q = 12\n")
    assert main(["eval2d", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval2d", "--config", str(tmp_path / "nope.cfg")]) == 2

    fold = tmp_path / "fold.cfg"
    fold.write_text(FAST + "scenario = fold\n")
    # fold is not an admissible film state: numerical failure, not a config error
    assert main(["eval2d", "--config", str(fold), "--out", str(tmp_path / "o2")]) == 1

    ok = tmp_path / "ok.cfg"
    ok.write_text(FAST)
    assert main(["eval2d", "--config", str(ok), "--out", str(tmp_path / "o3")]) == 0


def test_main_overrides(tmp_path):
    ok = tmp_path / "ok.cfg"
    ok.write_text(FAST)
    out = tmp_path / "o"
    code = main(["eval2d", "--config", str(ok), "--out", str(out),
                 "--resolution", "9"])
    assert code == 0
    assert os.path.exists(out / "eval2d.csv")


def test_byte_identical_reruns(tmp_path):
    cfg = parse_config(FAST)
    out1 = run(cfg, "sweep", out_dir=str(tmp_path / "a"))
    out2 = run(cfg, "sweep", out_dir=str(tmp_path / "b"))
    b1 = open(os.path.join(out1, "sweep.csv"), "rb").read()
    b2 = open(os.path.join(out2, "sweep.csv"), "rb").read()
    assert b1 == b2


def test_figures_rendered(tmp_path):
    cfg = parse_config(FAST.replace("figures = off", "figures = on"))
    out = run(cfg, "sweep", out_dir=str(tmp_path / "out"))
    assert os.path.exists(os.path.join(out, "sweep.png"))
    out = run(cfg, "check", out_dir=str(tmp_path / "c"))
    assert os.path.exists(os.path.join(out, "check.png"))
    assert os.path.exists(os.path.join(out, "check_surface.png"))
