import subprocess
import sys

import pytest
import yaml

from helmdd.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_THRESHOLD, main

CASE = {
    "name": "cli_case",
    "layout": {"kind": "duct", "n": 2},
    "wavenumbers": 13,
    "boundary": {"alpha": 1, "beta": 1, "data": "exact"},
    "problems": [{"id": "plane_wave", "label": "pw"}],
    "grids": [32, 64],
    "mstar": 12,
}


def _write(tmp_path, **over):
    p = tmp_path / "case.yaml"
    p.write_text(yaml.safe_dump({**CASE, **over}))
    return str(p)


def _run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path / "out"), "--cache-dir", str(tmp_path / "cache")])


def test_convergence_succeeds_and_writes_reports(tmp_path, capsys):
    assert _run(tmp_path, "convergence", _write(tmp_path)) == EXIT_OK
    out = capsys.readouterr().out
    assert "pw" in out and "rate" in out
    d = tmp_path / "out" / "cli_case"
    assert (d / "report.csv").read_text().startswith("problem,n,mstar")
    assert (d / "report.txt").exists() and (d / "timings.csv").exists()


def test_solve_writes_solution_dumps(tmp_path, capsys):
    assert _run(tmp_path, "solve", _write(tmp_path), "--n", "32") == EXIT_OK
    dumps = sorted((tmp_path / "out" / "cli_case" / "solutions").glob("*.grid"))
    assert [p.name for p in dumps] == ["pw_n32_sub1.grid", "pw_n32_sub2.grid"]


@pytest.mark.parametrize("over", [{"mstar": 1}, {"layout": {"kind": "ring"}}, {"problems": [{"id": "x"}]}])
def test_bad_configuration_exits_2(tmp_path, capsys, over):
    assert _run(tmp_path, "convergence", _write(tmp_path, **over)) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert _run(tmp_path, "solve", str(tmp_path / "nope.yaml")) == EXIT_CONFIG


def test_bad_mstar_override_exits_2(tmp_path):
    assert _run(tmp_path, "solve", _write(tmp_path), "--mstar-override", "2") == EXIT_CONFIG


def test_rank_deficient_system_exits_3(tmp_path, capsys):
    cfg = _write(tmp_path, layout={"kind": "duct", "n": 1}, grids=[32], mstar=40)
    assert _run(tmp_path, "convergence", cfg) == EXIT_NUMERIC
    assert "rank deficient" in capsys.readouterr().err


def test_failed_verification_exits_4(tmp_path, capsys):
    cfg = _write(tmp_path, expect=[{"rates": {"min": 7.0, "max": 8.0}}])
    assert _run(tmp_path, "convergence", cfg, "--verify") == EXIT_THRESHOLD
    assert "FAIL" in capsys.readouterr().out


def test_passing_verification_exits_0(tmp_path, capsys):
    cfg = _write(tmp_path, expect=[{"factorizations": 1}])
    assert _run(tmp_path, "convergence", cfg, "--verify", "--grids", "32") == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_supplemental_mode_and_override(tmp_path, capsys):
    assert _run(tmp_path, "convergence", _write(tmp_path), "--grids", "64", "--mode", "supplemental",
                "--mstar-override", "10", "--threads", "2") == EXIT_OK
    assert "64   10" in capsys.readouterr().out


def test_bench_writes_csv(tmp_path, capsys):
    cfg = _write(tmp_path, bench={"grids": [32, 64], "N": [1, 2], "n": 32})
    for vary in ("n", "N"):
        assert _run(tmp_path, "bench", cfg, "--vary", vary, "--repeats", "1") == EXIT_OK
        assert (tmp_path / "out" / "cli_case" / f"bench_{vary}.csv").exists()


def test_cache_list_and_clear(tmp_path, capsys):
    _run(tmp_path, "solve", _write(tmp_path), "--n", "32")
    capsys.readouterr()
    cache = ["--cache-dir", str(tmp_path / "cache")]
    assert main(["cache", "--list", *cache]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("1 cached blocks") and "n=32" in out
    assert main(["cache", "--clear", *cache]) == EXIT_OK
    assert "removed 1" in capsys.readouterr().out
    main(["cache", "--list", *cache])
    assert capsys.readouterr().out.startswith("0 cached blocks")


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "helmdd", "cache", "--list", "--cache-dir", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "0 cached blocks" in r.stdout
    r = subprocess.run([sys.executable, "-m", "helmdd", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2
