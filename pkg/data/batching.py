"""
Minibatch index streams.

A non-cycling stream is one shuffled pass: non-overlapping batches that
cover every row once, the last one possibly short. A cycling stream chains
fresh permutations end to end and always yields full batches, forever.
"""
from typing import Iterator, Sized, Union

import numpy as np

from utils.errors import InvalidArgumentError


def batches(
    dataset: Union[Sized, int],
    batch_size: int,
    rng: np.random.Generator,
    cycling: bool = False,
) -> Iterator[np.ndarray]:
    """Yield arrays of row indices into dataset (or into range(n) for an int)."""
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    if cycling and n == 0:
        raise InvalidArgumentError("cannot cycle over an empty dataset")
    return _cycle(n, batch_size, rng) if cycling else _single_pass(n, batch_size, rng)


def _single_pass(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _cycle(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    pending = np.empty(0, dtype=np.int64)
    while True:
        while len(pending) < batch_size:
            pending = np.concatenate([pending, rng.permutation(n)])
        yield pending[:batch_size]
        pending = pending[batch_size:]
