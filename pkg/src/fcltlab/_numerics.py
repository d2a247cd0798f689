"""Small numerical helpers shared across modules."""
from __future__ import annotations

import math

import numpy as np


def log_sum_exp(log_terms) -> float:
    """Return ``log(sum(exp(log_terms)))`` without overflow.

    The shifted exponentials are accumulated with :func:`math.fsum`, so the
    result is insensitive to the order of the terms.
    """
    x = np.asarray(log_terms, dtype=np.float64).ravel()
    if x.size == 0:
        return -math.inf
    top = float(np.max(x))
    if not math.isfinite(top):
        return top
    return top + math.log(math.fsum(np.exp(x - top)))


def jackknife_se(values) -> float:
    """Jackknife standard error of the sample mean of ``values``."""
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        return math.nan
    total = math.fsum(x)
    loo = (total - x) / (n - 1)
    centred = loo - loo.mean()
    return math.sqrt((n - 1) / n * math.fsum(centred * centred))


class PreconditionError(ValueError):
    """An input violates a hypothesis that the requested computation relies on."""
