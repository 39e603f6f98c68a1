from __future__ import annotations

import numpy as np


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Принимает seed и ключ потока; возвращает Generator на счётчиковом Philox, зависящий только от (seed, key)."""
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def spawn(seed: int, n: int, *key: int) -> list[np.random.Generator]:
    """Принимает seed, число потоков и ключ; возвращает n независимых дочерних потоков."""
    return [make_stream(seed, *key, i) for i in range(n)]
