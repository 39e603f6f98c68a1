import logging
from collections.abc import Iterator

import pytest

from hetmix.mixtures import FALLBACKS
from hetmix.settings import get_settings


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    monkeypatch.setenv("HETMIX_THREADS", "1")
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    get_settings.cache_clear()
    FALLBACKS.reset()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def _restore_root_logger() -> Iterator[None]:
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
