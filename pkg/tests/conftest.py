import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdflayers import cli

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_curve(rng, width, height, margin=1.0):
    return rng.uniform(margin, height - 1 - margin, width)


def smooth_curve(rng, width, height, harmonics=3, amp=None):
    x = np.arange(width)
    amp = amp if amp is not None else height / 8
    c = np.full(width, (height - 1) / 2.0)
    for k in range(1, harmonics + 1):
        c += rng.uniform(0, amp / k) * np.sin(2 * np.pi * k * x / width + rng.uniform(0, 2 * np.pi))
    return np.clip(c, 1.0, height - 2.0)


CONFIG = """\
[run]
seed = 3
[phantom]
n = 6
height = 16
width = 16
n_layers = 2
min_gap = 2
mean_gap = 4
amplitude = 1.5
[model]
head = p_sdf
levels = 2
base_channels = 4
[train]
epochs = 2
batch_size = 3
delta = 6
[evaluation]
n_regions = 2
"""


def run_pipeline(root, config_text=CONFIG):
    """Every subcommand in order; returns the output root."""
    root.mkdir(parents=True, exist_ok=True)
    ini = root / "c.ini"
    ini.write_text(config_text)
    c = ["--config", str(ini)]
    steps = [
        ["phantom-gen", "--out", str(root / "corpus")],
        ["sdf-build", "--corpus", str(root / "corpus"), "--out", str(root / "sdf")],
        ["train", "--corpus", str(root / "corpus"), "--out", str(root / "model")],
        ["predict", "--model", str(root / "model"), "--corpus", str(root / "corpus"), "--out", str(root / "pred")],
        ["extract", "--predictions", str(root / "pred"), "--out", str(root / "curves")],
        ["eval", "--predictions", str(root / "curves"), "--truth", str(root / "corpus"), "--out", str(root / "metrics")],
        ["corrupt", "--scan", str(root / "corpus" / "scan_0000.osk"), "--region", "2:9", "--kind", "speckle",
         "--out", str(root / "noisy" / "s.osk")],
        ["uncertainty-report", "--model", str(root / "model"), "--corpus", str(root / "corpus"),
         "--out", str(root / "unc")],
    ]
    for argv in steps:
        assert cli.main(argv[:1] + c + argv[1:]) == 0, argv[0]
    return root


ACCEPTANCE = {}


def record(n, passed, detail):
    ACCEPTANCE[n] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        passed, detail = ACCEPTANCE.get(n, (None, "deselected, or errored before measuring"))
        status = "NOT RUN" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
