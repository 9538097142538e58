"""Rank and linear correlation between predictions and opinion scores."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .tensor import ContractError


class UndefinedCorrelation(ContractError):
    """Correlation requested for a constant input."""


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ContractError("correlation needs two equal-length inputs of size >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelation("correlation is undefined for a constant input")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    return min(1.0, max(-1.0, r))


def plcc(x, y) -> float:
    """Pearson linear correlation, no logistic remapping."""
    return _pearson(*_check(x, y))


def srcc(x, y) -> float:
    """Spearman correlation: Pearson on average-tie ranks."""
    x, y = _check(x, y)
    return _pearson(stats.rankdata(x), stats.rankdata(y))


def krcc(x, y, chunk: int = 1024) -> float:
    """Kendall tau-b with tie corrections.

    Pair counts are exact integers, so the single square root in the
    denominator is the only rounding step (tau-b of [1,2,3] vs [1,3,2] is
    exactly 1/3). Memory is bounded by ``chunk * n`` sign entries.
    """
    x, y = _check(x, y)
    n = x.size
    s = tx = ty = 0
    for lo in range(0, n, chunk):
        dx = np.sign(x[lo:lo + chunk, None] - x[None, :]).astype(np.int64)
        dy = np.sign(y[lo:lo + chunk, None] - y[None, :]).astype(np.int64)
        s += int((dx * dy).sum())
        tx += int((dx == 0).sum())
        ty += int((dy == 0).sum())
    # ordered pairs: the diagonal contributes n ties to each axis and 0 to s
    n0 = n * (n - 1) // 2
    ties_x, ties_y = (tx - n) // 2, (ty - n) // 2
    return (s // 2) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


def correlations(pred, mos) -> dict[str, float]:
    return {"srcc": srcc(pred, mos), "plcc": plcc(pred, mos), "krcc": krcc(pred, mos)}
