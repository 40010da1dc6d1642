from functools import lru_cache
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def _coefficients(chi):
    b = []
    for k in range(chi + 1):
        num = factorial(chi) * factorial(2 * chi - k) * 2**k
        den = factorial(2 * chi) * factorial(chi - k) * factorial(k)
        b.append(num / den)
    return tuple(b)


def matern_coefficients(chi):
    """Ascending-power coefficients of the polynomial P with
    k(h) = P(t) exp(-t), t = sqrt(2 chi + 1) h, for nu = chi + 1/2.
    """
    if chi < 0:
        raise ValueError("chi must be a non-negative integer")
    return np.array(_coefficients(int(chi)), dtype=np.float64)
