import math

import numpy as np
import pytest

from roughsew.controlled_path import from_function
from roughsew.roughpath import lift, smooth_random_samples


def smooth_path(seed, segments=8, dim=2, p=2.0, level=8, amplitude=0.5):
    """Lift of a seeded random Fourier curve sampled on a uniform grid."""
    times, values = smooth_random_samples(
        np.random.default_rng(seed), segments, dim, amplitude=amplitude
    )
    return lift(times, values, p=p, level=level)


def random_walk(seed, segments=16, dim=2, p=2.5, level=5):
    """Lift of a Gaussian random walk on random increasing times."""
    rng = np.random.default_rng(seed)
    times = np.concatenate(([0.0], np.cumsum(rng.uniform(0.05, 1.0, size=segments))))
    values = np.vstack([np.zeros(dim), np.cumsum(rng.normal(size=(segments, dim)), axis=0)])
    return lift(times, values, p=p, level=level)


def random_triples(rng, times, count):
    """Sorted grid triples drawn from ``times``."""
    out = []
    for _ in range(count):
        a, b, c = np.sort(rng.choice(times.size, size=3, replace=False))
        out.append((float(times[a]), float(times[b]), float(times[c])))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_segment():
    """x_t = t on [0, 1] in one dimension, lifted for the kernel series."""
    return lift([0.0, 1.0], [[0.0], [1.0]], p=2, level=12)


def sine_path(X, shift=0.0):
    """Y = sin(x1 + ... + xd + shift) with its symmetric derivatives."""
    fns = [
        (lambda x, j=j: math.sin(float(np.sum(x)) + shift + j * math.pi / 2.0) * np.ones(X.dim**j))
        for j in range(X.order + 1)
    ]
    return from_function(X, fns)


def full_rect(J):
    return (J.driver.times[0], J.driver.times[-1], J.driver2.times[0], J.driver2.times[-1])
