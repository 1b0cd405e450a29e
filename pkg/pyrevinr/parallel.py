"""
.. module:: parallel
   :platform: Unix, Windows
   :synopsis: Fixed-boundary chunking and thread fan-out for batch computations

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, TypeVar

__author__ = 'Will McGinnis'

T = TypeVar('T')


def chunk_slices(n: int, chunk_size: int) -> List[slice]:
    """
    Splits ``range(n)`` into consecutive slices of at most ``chunk_size`` items. Boundaries depend only on
    ``n`` and ``chunk_size``, never on how many workers process them.
    """
    chunk_size = max(int(chunk_size), 1)
    return [slice(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def map_chunks(fn: Callable[[int, slice], T], slices: List[slice], workers: int = 1, ordered: bool = True) -> List[T]:
    """
    Applies ``fn(chunk_index, chunk_slice)`` to every slice.

    With ``ordered`` the results come back in slice order, so any reduction over them is reproducible.
    Otherwise they come back in completion order.
    """
    if workers <= 1 or len(slices) <= 1:
        return [fn(i, s) for i, s in enumerate(slices)]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        if ordered:
            return list(executor.map(fn, range(len(slices)), slices))
        futures = [executor.submit(fn, i, s) for i, s in enumerate(slices)]
        return [f.result() for f in as_completed(futures)]
