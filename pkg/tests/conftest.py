import numpy as np
import pytest

from annalloc.dataset import generate
from annalloc.effectiveness import AffineModel, BoxSet, SyntheticModel, SyntheticModelParams
from annalloc.neuralnet import TrainConfig, fit_dataset

DATA_SEED = 7
TRAIN_SEED = 0

# criterion number -> list of (part, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(criterion: int, part: str, passed: bool, detail: str):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"[criterion {criterion}] {part}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}={'ok' if p else 'FAIL'} [{d}]" for name, p, d in parts)
        tr.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def model():
    return SyntheticModel()


@pytest.fixture(scope="session")
def pwl_model():
    return SyntheticModel(SyntheticModelParams(pwl_variant=True))


@pytest.fixture(scope="session")
def affine_model():
    rng = np.random.default_rng(11)
    slope = rng.normal(size=(3, 5)) * 1e-3
    return AffineModel(slope, None, BoxSet(-40 * np.ones(5), 40 * np.ones(5)))


@pytest.fixture(scope="session")
def full_dataset(model):
    return generate(model, 100_000, seed=DATA_SEED)


@pytest.fixture(scope="session")
def trained(model, full_dataset):
    """The selected 5.16.8.5 network trained with the full default recipe."""
    return fit_dataset(full_dataset, model, "5.16.8.5", TrainConfig(seed=TRAIN_SEED))


@pytest.fixture(scope="session")
def small_trained(model):
    ds = generate(model, 4000, seed=3)
    return fit_dataset(ds, model, "5.16.8.5", TrainConfig(epochs=8, seed=1))
