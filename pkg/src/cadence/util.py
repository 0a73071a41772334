"""Shared numeric helpers."""

import numpy as np
from scipy.special import expit as sigmoid  # noqa: F401  (stable logistic)


def softplus(x):
    """Stable log(1 + exp(x)); equals -log(sigmoid(-x))."""
    return np.logaddexp(0.0, x)


def new_rng(seed):
    """Seeded PCG64 generator; the only RNG constructor used in the package."""
    return np.random.Generator(np.random.PCG64(seed))
