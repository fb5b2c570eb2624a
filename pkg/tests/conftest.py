import numpy as np
import pytest

from gdpl.harness.episode import PretrainConfig, pretrain_base


@pytest.fixture(scope="session")
def base():
    """Default frozen base: contrastive dual encoder plus masked-reconstruction domain encoder."""
    return pretrain_base(PretrainConfig())


@pytest.fixture(scope="session")
def quick_base():
    """Cheap base for plumbing tests: short contrastive run, seeded-random domain encoder."""
    return pretrain_base(PretrainConfig(clip_steps=40, domain_encoder="random"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ABLATION_SEEDS = (0, 1, 2, 3, 4)
VARIANTS = {"full": {}, "no-quat": {"quat_enabled": False}, "no-lora": {"lora_enabled": False}}
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def ablation_runs(base):
    """Default episodes for every seed and ablation variant, all on the same frozen base."""
    from gdpl.harness.episode import EpisodeConfig, train_episode

    return {(name, s): train_episode(EpisodeConfig(seed=s, **over), base=base)
            for s in ABLATION_SEEDS for name, over in VARIANTS.items()}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        CRITERIA[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
