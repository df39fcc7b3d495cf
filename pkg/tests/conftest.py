import numpy as np
import pytest
import torch

from evhdr.network import ModelConfig, NetworkInput


def random_input(cfg: ModelConfig, n=1, h=8, w=8, dtype=torch.float32, seed=0) -> NetworkInput:
    g = torch.Generator().manual_seed(seed)
    n_win = len(cfg.window_starts)
    ldr = torch.rand(n, 3, 3, h, w, generator=g, dtype=dtype)
    linear = ldr ** 2.2 / torch.tensor([0.25, 1.0, 4.0], dtype=dtype).view(1, 3, 1, 1, 1)
    events = torch.randn(n, 3, cfg.bins, h, w, generator=g, dtype=dtype)
    windows = torch.randn(n, n_win, cfg.bins, h, w, generator=g, dtype=dtype)
    return NetworkInput(ldr, linear, events, windows)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> (passed, description, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {desc}: {detail}")
