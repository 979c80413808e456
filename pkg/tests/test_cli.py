import json
import os
import subprocess
import sys

import pytest

from critwalk import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analytic_summary(capsys):
    code, out, _ = run(["analytic", "--base", "binary", "--p", "0.6", "--quiet"], capsys)
    assert code == 0
    assert "q=0.444444 v=0.025641 κ=2.666667" in out


def test_missing_p_is_a_usage_error(capsys):
    code, _, err = run(["speed", "--base", "binary"], capsys)
    assert code == 2 and "--p" in err


def test_bad_values_are_usage_errors(capsys):
    assert run(["speed", "--p", "0.4"], capsys)[0] == 2
    assert run(["speed", "--p", "0.6", "--family", "levy"], capsys)[0] == 2
    assert run(["nonsense"], capsys)[0] == 2
    assert run(["speed", "--p", "0.6", "--horizon", "1.5"], capsys)[0] == 2


def test_flags_override_config_and_env(tmp_path, capsys, monkeypatch):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"experiment": "speed", "p": 0.7, "replicas": 3, "horizon": 1000}))
    monkeypatch.setenv("CRITWALK_SEED", "9")
    monkeypatch.setenv("CRITWALK_THREADS", "2")
    args = cli.build_parser().parse_args(["speed", "--config", str(f), "--replicas", "5"])
    cfg = cli.effective_config(args)
    assert cfg.replicas == 5 and cfg.horizon == 1000 and cfg.master_seed == 9 and cfg.threads == 2
    args = cli.build_parser().parse_args(["speed", "--config", str(f), "--seed", "4"])
    assert cli.effective_config(args).master_seed == 4
    args = cli.build_parser().parse_args(["covariance", "--config", str(f)])
    with pytest.raises(cli.ConfigError, match="experiment"):
        cli.effective_config(args)


def test_speed_example(capsys):
    code, out, _ = run(["speed", "--p", "1.0", "--base", "binary", "--horizon", "1e5",
                        "--replicas", "100", "--quiet"], capsys)
    assert code == 0 and "[ok] mc_within_3se" in out


def test_outputs_and_manifest_rerun(tmp_path, capsys):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    code, _, err = run(["speed", "--p", "0.7", "--horizon", "2e4", "--replicas", "8", "--threads", "1",
                        "--output-dir", str(d1)], capsys)
    assert code in (0, 1)
    assert "replicas" in err  # heartbeat
    man = json.loads((d1 / "manifest.json").read_text())
    assert man["config"]["replicas"] == 8 and len(man["replica_keys"]) == 8
    assert {"started", "wall_seconds", "artifact_version", "master_seed"} <= set(man)
    run(["speed", "--config", str(d1 / "manifest.json"), "--threads", "2", "--output-dir", str(d2), "--quiet"], capsys)
    assert (d1 / "speed.csv").read_bytes() == (d2 / "speed.csv").read_bytes()
    assert json.loads((d2 / "speed.json").read_text())["n_replicas"] == 8


def test_trap_cap_exit_code(tmp_path, capsys):
    code, _, err = run(["speed", "--base", "mix13", "--p", "0.51", "--horizon", "1e5", "--replicas", "2",
                        "--trap-cap", "5", "--output-dir", str(tmp_path), "--quiet"], capsys)
    assert code == 3 and "cap" in err
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "cap_exceeded"


def test_electrical_validate_subcommand(capsys):
    code, out, _ = run(["electrical-validate", "--replicas", "10", "--quiet"], capsys)
    assert code == 0 and "electrical: PASS" in out


def test_console_script_and_forced_python_backend():
    env = dict(os.environ, CRITWALK_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import critwalk; print(critwalk.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env["CRITWALK_BACKEND"] = "bogus"
    bad = subprocess.run([sys.executable, "-c", "import critwalk"], env=env, capture_output=True, text=True)
    assert bad.returncode != 0 and "CRITWALK_BACKEND" in bad.stderr
    res = subprocess.run([sys.executable, "-m", "critwalk.cli", "analytic", "--p", "1.0", "--quiet"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "v=0.333333" in res.stdout
