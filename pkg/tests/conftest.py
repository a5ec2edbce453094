import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streamloc.data import generate_corpus
from streamloc.networks import C3D, F2G, C3DConfig, Detector, DetectorConfig, F2GConfig
from streamloc.pipeline import Networks

FRAME = (16, 16)
FEAT = 8


def tiny_networks(num_classes=3, seed=0, with_f2g=True, trained=True):
    """Small untrained-but-flagged networks for plumbing tests (fast, deterministic)."""
    c3d = dict(frame_size=FRAME, widths=(2, 2, 4, 4, 4, 4, 4, 4), feature_dim=FEAT)
    pr = C3D(C3DConfig(out_dim=2, **c3d), seed)
    ar = C3D(C3DConfig(out_dim=2 * num_classes, **c3d), seed + 1)
    det = Detector(DetectorConfig(feature_dim=FEAT, num_classes=num_classes, lstm_width=8), seed + 2)
    f2g = None
    if with_f2g:
        f2g = F2G(F2GConfig(frame_size=FRAME, content_widths=(2, 4), motion_widths=(2, 4), lstm_width=4,
                            decoder_widths=(4,), refine_width=2), seed + 3)
        rng = np.random.default_rng(seed)
        f2g["refine.weight"].data = (rng.standard_normal(f2g["refine.weight"].shape) * 0.1).astype(np.float32)
    for net in (pr, ar, det, f2g):
        if net is not None:
            net.trained = trained
    return Networks(pr, ar, det, f2g)


def small_streams(n=4, seed=0, prefix="s", frame_size=FRAME):
    return generate_corpus(n, seed, prefix, (1, 2), duration_range=(20, 40), gap_range=(10, 20),
                           frame_size=frame_size)


@pytest.fixture(scope="session")
def networks():
    return tiny_networks()


@pytest.fixture(scope="session")
def streams():
    return small_streams()


def pytest_terminal_summary(terminalreporter):
    lines = sys.modules.get("test_acceptance")
    if lines is not None and lines.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines.LINES):
            terminalreporter.write_line(lines.LINES[n])
