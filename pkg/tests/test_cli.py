import math
import os
import re
import subprocess
import sys

import numpy as np
import pytest

from dpdice.bench import theory_error
from dpdice.cli import main
from dpdice.dpnoise import calibrate_sigma
from dpdice.hashing import HashKey
from dpdice.protocol import ProtocolConfig, config_to_text
from dpdice.transport import local_listeners


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_calibrate_table(capsys):
    code, out, _ = run_cli(capsys, "calibrate", "--eps", "0.1", "--delta", "1e-12", "--d", "20")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "eps,delta,d,sigma,eps_d,eps_dp,eps_dp_tight"
    fields = row.split(",")
    b = calibrate_sigma(0.1, 1e-12, 20)
    assert float(fields[3]) == pytest.approx(b.sigma, rel=1e-5)
    assert float(fields[4]) == pytest.approx(b.eps_cdp, rel=1e-5)
    assert float(fields[5]) <= 0.1


def test_sketch_bench_csv_is_reproducible(capsys):
    argv = ["sketch-bench", "--kind", "fms,hll", "--m", "256", "--n", "1e4", "--trials", "5",
            "--seed", "4"]
    _, first, _ = run_cli(capsys, *argv)
    _, second, _ = run_cli(capsys, *argv)
    assert first == second
    lines = first.strip().splitlines()
    assert lines[0].startswith("kind,n,m,w,privacy")
    assert len(lines) == 3


def test_seed_env_overrides_flag(capsys, monkeypatch):
    argv = ["sketch-bench", "--m", "64", "--n", "2000", "--trials", "3"]
    monkeypatch.setenv("DPDICE_SEED", "9")
    _, env_out, _ = run_cli(capsys, *argv, "--seed", "1")
    monkeypatch.delenv("DPDICE_SEED")
    _, flag_out, _ = run_cli(capsys, *argv, "--seed", "9")
    assert env_out == flag_out
    monkeypatch.setenv("DPDICE_SEED", "abc")
    code, _, err = run_cli(capsys, *argv)
    assert code == 1 and "DPDICE_SEED" in err


def test_dp_and_ddp_bench(tmp_path, capsys):
    out = tmp_path / "ddp.csv"
    code, _, _ = run_cli(capsys, "ddp-bench", "--kind", "fms", "--n", "20000", "--trials", "3",
                         "--d", "5,10", "--out", str(out))
    assert code == 0
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 3 and all(",distributed," in r for r in rows[1:])
    code, text, _ = run_cli(capsys, "dp-bench", "--kind", "fm", "--m", "64", "--n", "5000",
                            "--trials", "2", "--eps", "0.1,0.5")
    assert code == 0 and text.count(",central,") == 2


def test_save_and_load_sketch(tmp_path, capsys):
    path = tmp_path / "s.fms"
    code, _, _ = run_cli(capsys, "sketch-bench", "--m", "256", "--n", "5000", "--save-sketch",
                         str(path))
    assert code == 0 and path.exists()
    code, out, _ = run_cli(capsys, "sketch-bench", "--load-sketch", str(path))
    est = float(re.search(r"estimate=([\d.e+]+)", out).group(1))
    assert code == 0 and abs(est / 5000 - 1) < 0.3


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["sketch-bench", "--no-such-flag"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["sketch-bench", "--n", "1.5"])
    assert info.value.code == 1
    code, _, err = run_cli(capsys, "sketch-bench", "--m", "100", "--trials", "1")
    assert code == 1 and "power of two" in err
    code, _, _ = run_cli(capsys, "protocol-run")
    assert code == 1
    code, _, _ = run_cli(capsys, "protocol-run", "--demo", "--role", "cp")
    assert code == 1


def _demo_estimate(capsys, *extra):
    code, out, _ = run_cli(capsys, "protocol-run", "--demo", "--d", "3", "--c", "2", "--m", "64",
                           "--w", "10", "--n", "1000", *extra)
    assert code == 0
    assert "rounds" in out and "bytes total" in out
    return float(re.search(r"estimate\s*:\s*([\d.]+)", out).group(1))


def test_protocol_demo_default_privacy(capsys):
    # at eps=0.1 the summed noise (sd ~74) is large next to m*w = 640 bits, so the
    # delta-method relative error is ~0.81; allow three of those
    b = calibrate_sigma(0.1, 1e-12, 3)
    th = theory_error(1000, 64, 10, math.sqrt(3) * b.sigma)
    est = _demo_estimate(capsys)
    assert abs(est / 1000 - 1) < 3 * th.stderr_noisy


def test_protocol_demo_small_noise_within_40_percent(capsys):
    est = _demo_estimate(capsys, "--sigma", "1.0")
    assert abs(est / 1000 - 1) < 0.4


def test_dealer_gen_and_multiprocess_tcp_run(tmp_path):
    rng = np.random.default_rng(0)
    c, d = 2, 2
    cfg = ProtocolConfig.create(16, 8, d, c, sigma=3.0, hash_key=HashKey.random(rng),
                                session_id=rng.bytes(16))
    addrs, listeners = local_listeners(range(c + d))
    for s in listeners.values():
        s.close()
    conf = tmp_path / "session.conf"
    conf.write_text(config_to_text(cfg, addrs))
    env = {**os.environ, "DPDICE_SEED": "5"}
    cmd = [sys.executable, "-m", "dpdice"]
    gen = subprocess.run(cmd + ["dealer-gen", "--config", str(conf), "--out-dir",
                                str(tmp_path / "mat")], env=env, capture_output=True, text=True)
    assert gen.returncode == 0, gen.stderr
    inputs = []
    for j in range(d):
        path = tmp_path / f"dh{j}.txt"
        path.write_text("\n".join(str(100 * j + k) for k in range(150)))
        inputs.append(path)
    procs = []
    for pid in range(c + d):
        args = ["protocol-run", "--role", "cp" if pid < c else "dh", "--id", str(pid),
                "--config", str(conf), "--transport", "tcp", "--timeout", "30"]
        if pid < c:
            args += ["--dealer", str(tmp_path / "mat" / f"cp{pid}.mat")]
        else:
            args += ["--input", str(inputs[pid - c])]
        procs.append(subprocess.Popen(cmd + args, env=env, stdout=subprocess.PIPE,
                                      stderr=subprocess.PIPE, text=True))
    outs = [p.communicate(timeout=60) for p in procs]
    assert [p.returncode for p in procs] == [0] * (c + d), [e for _, e in outs]
    revealed = {re.search(r"revealed Z\+N: (-?\d+)", o).group(1) for o, _ in outs}
    assert len(revealed) == 1
