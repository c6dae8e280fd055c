import numpy as np
import pytest

from posetransfer.dataio import SplitArrays


def make_splits(n_train=40, n_val=10, n_test=10, W=20, D=2, K=2, seed=0):
    """Small learnable windows: class k carries a sine of period 3 + k samples."""
    rng = np.random.default_rng(seed)
    t = np.arange(W)
    out = {}
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        y = np.arange(n) % K
        X = rng.normal(0, 0.3, size=(n, W, D))
        X += np.stack([np.sin(2 * np.pi * t / (3 + k)) for k in y])[:, :, None]
        out[name] = SplitArrays(X.astype(np.float32), y.astype(np.int64), [f"{name}{i // 2}" for i in range(n)])
    return out


@pytest.fixture
def splits():
    return make_splits()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
