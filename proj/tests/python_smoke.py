# SPDX-License-Identifier: MIT
"""End-to-end smoke checks for the pyqep module and the qep CLI."""

import json
import math
import os
import pathlib
import subprocess
import tempfile

import pyqep

CONFIG = json.dumps({
    "model": "cnot",
    "params": {"alpha": 0.8, "beta_eps": 2.5},
    "run": {"mode": "enumerate", "backward_init": "product"},
    "outputs": ["histogram", "ft_report"],
})


def check(cond, label):
    if not cond:
        raise SystemExit(f"smoke: FAILED: {label}")
    print(f"smoke: ok: {label}")


def main():
    check(pyqep.version() == "0.1.0", "version string")

    bundle = pyqep.run_config(CONFIG)
    total = sum(row.probability for row in bundle.histogram)
    mean = sum(row.value * row.probability for row in bundle.histogram)
    check(abs(total - 1.0) < 1e-12, "histogram normalization")
    check(abs(mean - 0.79267620338278388) < 1e-12, "mean entropy production")
    check(bundle.integral_total.available, "integral theorem availability")
    check(abs(bundle.integral_total.value - 1.0) < 1e-12,
          "integral theorem value")
    check(bundle.hash == pyqep.config_hash(CONFIG), "config hash agreement")

    pairs = pyqep.cnot_distribution(0.8, 2.5, "product")
    check(len(pairs) == 8, "record count")
    check(abs(sum(p for _, p in pairs) - 1.0) < 1e-12,
          "distribution normalization")

    pops = pyqep.machine_steady_state()
    check(abs(sum(pops) - 1.0) < 1e-12, "stationary populations normalize")
    check(min(pops) > 0.0, "stationary populations positive")
    flows = pyqep.machine_flows()
    check(abs(sum(flows)) < 1e-15, "first law at stationarity")

    check(abs(pyqep.cavity_power(0.4, 0.2) - 3.2) < 1e-12, "steady drive power")
    check(abs(pyqep.adiabatic_sign_change_time(2.0 * math.log(2.0)) - 1.0)
          < 1e-12, "sign change time")

    with tempfile.TemporaryDirectory() as tmp:
        pyqep.emit(bundle, tmp)
        text = (pathlib.Path(tmp) / "histogram.csv").read_text()
        check(text.startswith(f"# config_hash={bundle.hash}\n"),
              "emitted provenance")

    try:
        pyqep.run_config("{}")
        check(False, "validation raises")
    except ValueError as err:
        check("3 violation(s)" in str(err), "validation raises")

    cli = os.environ.get("QEP_CLI")
    if cli:
        data = pathlib.Path(__file__).resolve().parent / "data"
        with tempfile.TemporaryDirectory() as tmp:
            good = subprocess.run(
                [cli, "run", "--config", str(data / "cnot_enumerate.json"),
                 "--out", tmp],
                capture_output=True, text=True)
            check(good.returncode == 0, "cli exit code")
            check((pathlib.Path(tmp) / "ft_report.json").exists(),
                  "cli report file")
            bad = subprocess.run(
                [cli, "run", "--config", os.devnull, "--out", tmp],
                capture_output=True, text=True)
            check(bad.returncode == 1, "cli validation exit code")

    print("smoke: all checks passed")


if __name__ == "__main__":
    main()
