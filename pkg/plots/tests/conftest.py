import shutil
import subprocess
import sys

import pytest

FALLBACK = "import sys; from fluctlab.cli import main; sys.exit(main(sys.argv[1:]))"


def run_lab(args):
    """Invoke the producing CLI; figures only ever see its files."""
    exe = shutil.which("fluctlab")
    cmd = [exe] if exe else [sys.executable, "-c", FALLBACK]
    proc = subprocess.run(cmd + args, capture_output=True, text=True)
    assert proc.returncode == 0, f"fluctlab {args} failed:\n{proc.stderr}"
    return proc


def write_cfg(path, body):
    path.write_text("[experiment]\n" + body)
    return str(path)


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """CSV artifacts for every figure kind, produced by the real CLI."""
    root = tmp_path_factory.mktemp("artifacts")
    out = {}

    cfg = write_cfg(root / "lln.ini",
                    "N = 64\nM = 64\nT = 0.02\nreplicas = 2\ntests = 3\n"
                    "profile = cosine\namplitude = 0.25\nseed = 0\n")
    run_lab(["lln-check", "--config", cfg, "--out", str(root / "lln"), "--threads", "2"])
    out["lln"] = root / "lln" / "lln-check.csv"

    cfg = write_cfg(root / "kmp.ini",
                    "model = kmp\nm = 1.0\nM = 64\nJ_grid = 0, 2, 4, 8\n"
                    "find_jstar = true\njstar_resolution = 1.0\nseed = 0\n")
    run_lab(["phase-scan", "--config", cfg, "--out", str(root / "kmp")])
    out["phase_kmp"] = root / "kmp" / "phase-scan.csv"

    cfg = write_cfg(root / "ssep.ini",
                    "model = ssep\nm = 0.5\nM = 64\nJ_grid = 0:8:5\nseed = 0\n")
    run_lab(["phase-scan", "--config", cfg, "--out", str(root / "ssep")])
    out["phase_ssep"] = root / "ssep" / "phase-scan.csv"

    cfg = write_cfg(root / "phi.ini",
                    "M = 24\nK = 8\nJ = 0.5\nm = 0.5\nT_grid = 0.5, 1.0, 2.0\nseed = 0\n")
    run_lab(["phi-path", "--config", cfg, "--out", str(root / "phi")])
    out["phi"] = root / "phi" / "phi-path.csv"

    cfg = write_cfg(root / "wave.ini",
                    "model = kmp\nm = 1.0\nM = 32\nJ = 4\nv_grid = 6, 8, 10\nseed = 0\n")
    run_lab(["psi-scan", "--config", cfg, "--out", str(root / "wave")])
    out["wave"] = root / "wave" / "psi-scan-profile.csv"

    return out
