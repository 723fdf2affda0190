import pytest

from daftgan.config import Config

TINY = dict(image_size=16, depth=3, channels=(4, 6, 6), spatial_channels=4, text_dim=8, noise_dim=4,
            disc_channels=4, disc_max_channels=8, batch_size=2, steps=4, train_scenes=16, eval_scenes=8,
            checkpoint_every=2)


@pytest.fixture
def tiny_cfg(tmp_path):
    return Config(**TINY, dir=str(tmp_path / "run"))


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A 4-step training run at 16 px, shared read-only across tests."""
    from daftgan.harness.train import train

    out = tmp_path_factory.mktemp("tiny_run")
    cfg = Config(**TINY, dir=str(out))
    train(cfg, out)
    return cfg, out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
