import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cwmg import model as M  # noqa: E402
from cwmg import toy  # noqa: E402
from cwmg.training import train  # noqa: E402
from cwmg.vocab import build_vocabulary  # noqa: E402

TOY_TRAIN = toy.toy_train_config()


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary()


@pytest.fixture(scope="session")
def loop_song():
    return toy.looped_song()


@pytest.fixture(scope="session")
def trained_toy(loop_song):
    """Toy model trained on the 64-word loop (shared across test modules)."""
    cfg = M.toy_config()
    result = train([loop_song], TOY_TRAIN, cfg)
    return cfg, result


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acc.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
