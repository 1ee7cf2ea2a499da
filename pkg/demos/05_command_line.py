"""
The command-line pipeline
=========================

The same workflow through the ``ivuscal`` command, driven from Python so it
runs anywhere. Every file it writes is reproducible byte for byte.
"""
import subprocess
import sys
import tempfile
from pathlib import Path


def ivuscal(*args):
    cmd = [sys.executable, "-m", "ivuscal", *map(str, args)]
    print("$ ivuscal", " ".join(map(str, args)))
    out = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    print(out)


with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    ivuscal("phantom-gen", "--out", d / "phantom.csv")
    ivuscal("simulate", "--phantom", d / "phantom.csv", "--seed", 5, "--out-dir", d / "sim",
            "--noise-px", 1, "--noise-pose-mm", 0.2, "--frames", "--frame-size", 64, 160)
    files = ["--phantom", d / "phantom.csv", "--observations", d / "sim/observations.csv",
             "--poses", d / "sim/poses.csv"]
    ivuscal("calibrate", *files, "--depth-mm", 90, "--out", d / "est.cal")
    ivuscal("evaluate", "--calib", d / "est.cal", *files)
    ivuscal("evaluate", "--calib", d / "sim/ground_truth.cal", *files)
    ivuscal("reconstruct", "--calib", d / "est.cal", "--poses", d / "sim/poses.csv",
            "--frames", d / "sim/frames", "--spacing-mm", 2, "--out", d / "vol")
    print((d / "vol.json").read_text())
