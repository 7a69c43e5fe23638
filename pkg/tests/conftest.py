import numpy as np
import pytest
import torch

from adaptjscc.config import DatasetConfig, ExperimentConfig


def central_difference(fn, tensor: torch.Tensor, index, h: float = 1e-6) -> float:
    """d fn / d tensor[index] by central differences (tensor edited in place, then restored)."""
    with torch.no_grad():
        original = tensor[index].item()
        tensor[index] = original + h
        up = float(fn())
        tensor[index] = original - h
        down = float(fn())
        tensor[index] = original
    return (up - down) / (2 * h)


def check_gradients(fn, tensors, n_probes: int = 100, seed: int = 0, h: float = 1e-6, fd_fn=None):
    """Compare autograd against central differences on distinct, randomly probed entries.

    ``fn`` returns a scalar tensor; differences are taken on ``fd_fn`` when given
    (for surrogate-gradient operations). Returns ``(rel_err, analytic, numeric)``
    with ``rel_err = ||autograd - numeric|| / ||numeric||`` over all probes.
    """
    fd_fn = fd_fn or fn
    for t in tensors:
        t.grad = None
    fn().backward()
    offsets = np.cumsum([0] + [t.numel() for t in tensors])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_probes, offsets[-1]), replace=False)
    analytic, numeric = [], []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        t = tensors[k]
        index = np.unravel_index(int(flat - offsets[k]), t.shape)
        analytic.append(t.grad[index].item() if t.grad is not None else 0.0)
        numeric.append(central_difference(fd_fn, t, index, h))
    analytic, numeric = np.array(analytic), np.array(numeric)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-30), analytic, numeric


def tiny_config(**changes) -> ExperimentConfig:
    base = dict(
        stage_epochs=[1, 1, 1],
        policy_warmup_epochs=0,
        batch_size=32,
        dataset=DatasetConfig(name="synthetic", train_subset=64, test_subset=32),
        eval_subset=32,
        eval_snrs=[0.0, 20.0],
    )
    base.update(changes)
    return ExperimentConfig(**base)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


# --- acceptance report -------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_addoption(parser):
    parser.addoption(
        "--run-desk",
        action="store_true",
        default=False,
        help="train the desk-scale models when no cached results exist (hours on CPU)",
    )


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
