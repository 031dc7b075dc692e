import numpy as np
import pytest

from causal_decode.worldsim import WorldConfig, generate_world, random_world_config, sample_scenes


def knife_fork_world(**kw) -> WorldConfig:
    """Three categories (knife, fork, cup) with a strong knife -> fork language prior."""
    cooccur = np.zeros((3, 3))
    cooccur[0, 1] = 25.0
    args = dict(n_categories=3, n_filler=6, cooccur=cooccur, seed=11,
                category_names=["knife", "fork", "cup"], gamma=0.5)
    args.update(kw)
    return WorldConfig(**args)


@pytest.fixture
def small_suite():
    return generate_world(knife_fork_world())


@pytest.fixture
def random_suite():
    cfg = random_world_config(np.random.default_rng(7), n_categories=4, n_filler=6)
    suite = generate_world(cfg)
    scenes = sample_scenes(cfg, 20, np.random.default_rng(8))
    return suite, scenes


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
