import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

from glitchloc.synthgen import GeneratorConfig, generate_dataset  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


TINY_GEN = dict(n_train=16, n_validation=8, n_test=8, T=32, D=4, min_frames=20, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(GeneratorConfig(**TINY_GEN), out)
    return out


def param_grad_check(loss_fn, params: dict, rng, per_tensor=3, eps=1e-6):
    """Relative error of backward() against central differences at sampled coordinates.

    ``loss_fn()`` must rebuild the graph from the current parameter values.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic, numeric = [], []
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for k in rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            analytic.append(grad.reshape(-1)[k])
            numeric.append((up - down) / (2 * eps))
    a, n = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))
