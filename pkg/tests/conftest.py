import numpy as np
import pytest

from nptransfer.core import ClassSamples, make_generator


def finite_difference_gradient(fn, theta, step=1e-6):
    """Central-difference gradient oracle, independent of analytic formulas."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for j in range(theta.shape[0]):
        up = theta.copy()
        dn = theta.copy()
        up[j] += step
        dn[j] -= step
        out[j] = (fn(up) - fn(dn)) / (2.0 * step)
    return out


def random_ball_point(rng, dim, radius):
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1.0 / dim)


@pytest.fixture
def rng():
    return make_generator(20240)


def gaussian_samples(seed, n, mean, sd, class_label, domain_label, intercept=True):
    g = make_generator(seed)
    x = g.standard_normal((n, 1)) * sd + mean
    if intercept:
        x = np.hstack([x, np.ones((n, 1))])
    return ClassSamples(x, class_label, domain_label)
