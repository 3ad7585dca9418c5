"""Batch samplers for supervised fine-tuning.

``balanced_batches`` implements class-balanced oversampling: every draw
first picks a class by a fair coin, then a member of that class uniformly
with replacement, so the minority class is seen as often as the majority
and single samples may repeat within an epoch. ``sequential_batches`` is
the non-oversampled control (shuffled passes over the dataset).
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence

import numpy as np

from ..errors import ConfigurationError


def _class_indices(labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(labels, dtype=np.int64)
    neg = np.flatnonzero(arr == 0)
    pos = np.flatnonzero(arr == 1)
    if len(neg) == 0 or len(pos) == 0:
        raise ConfigurationError(
            f"balanced sampling needs both classes; got {len(pos)} positive / {len(neg)} negative"
        )
    return neg, pos


def balanced_batches(
    labels: Sequence[int], batch_size: int, rng: np.random.Generator | int
) -> Iterator[np.ndarray]:
    """Yield index batches of class-balanced draws with replacement, forever."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    neg, pos = _class_indices(labels)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    while True:
        coins = rng.integers(0, 2, size=batch_size)
        neg_draws = neg[rng.integers(0, len(neg), size=batch_size)]
        pos_draws = pos[rng.integers(0, len(pos), size=batch_size)]
        yield np.where(coins == 1, pos_draws, neg_draws)


def balanced_sampler(dataset: Sequence, batch_size: int, seed: int) -> Iterator[list]:
    """Yield batches of dataset items via class-balanced oversampling.

    ``dataset`` items must expose a ``label`` attribute in {0, 1}.
    Reproducible given ``seed``.
    """
    labels = [item.label for item in dataset]
    for batch in balanced_batches(labels, batch_size, np.random.default_rng(seed)):
        yield [dataset[i] for i in batch]


def sequential_batches(
    n_items: int, batch_size: int, rng: np.random.Generator | int
) -> Iterator[np.ndarray]:
    """Yield index batches from repeated shuffled passes (no oversampling).

    Each pass covers every index exactly once in ceil(n/batch_size)
    batches; the last batch of a pass may be short.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    if n_items < 1:
        raise ConfigurationError(f"n_items must be >= 1, got {n_items}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    while True:
        order = rng.permutation(n_items)
        for start in range(0, n_items, batch_size):
            yield order[start : start + batch_size]
