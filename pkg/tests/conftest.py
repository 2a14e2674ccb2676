import numpy as np
import pytest

from empmp.model import EmpmpModel, ModelConfig

TINY = dict(J=2, P=2, T=5, T_out=3, C=4, K=1, N=2, M=1)


def tiny_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**TINY, **overrides})


def randomize(model: EmpmpModel, rng: np.random.Generator, scale: float = 0.5) -> EmpmpModel:
    """Move every parameter (gains included) to a generic random point."""
    for name, p in model.named_parameters():
        if name.endswith(".gain"):
            p.data[...] = 1.0 + scale * rng.normal(size=p.shape)
        else:
            p.data[...] = scale * rng.normal(size=p.shape) / np.sqrt(max(p.shape[0], 1))
    return model


def distinct_scene(rng: np.random.Generator, J: int, P: int, T: int) -> np.ndarray:
    """Random (3J, P, T) motion whose first-frame hip distance sums are all distinct."""
    if P == 2:
        raise ValueError("two persons always share the same distance sum")
    while True:
        x = rng.normal(size=(3 * J, P, T))
        hips = x[0:3, :, 0].T
        keys = np.sqrt(((hips[:, None] - hips[None]) ** 2).sum(-1)).sum(1)
        if P == 1 or np.min(np.diff(np.sort(keys))) > 1e-3:
            return x


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, what: str, detail: str) -> bool:
    """Store one acceptance line; the terminal summary prints them in order."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {what}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
