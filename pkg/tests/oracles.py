"""Independent reference implementations used by the tests."""

import numpy as np


def sampen_counts_bruteforce(x, m, r):
    """O(N^2) template-pair counts over the first N - m templates, i < j."""
    x = np.asarray(x, dtype=float)
    n_templates = len(x) - m
    a = b = 0
    for i in range(n_templates):
        for j in range(i + 1, n_templates):
            dm = max(abs(x[i + k] - x[j + k]) for k in range(m))
            if dm < r:
                b += 1
                if abs(x[i + m] - x[j + m]) < r:
                    a += 1
    return a, b


def pacf_ols(x, max_lag):
    """Last coefficient of the order-k least-squares AR fit, k = 1..max_lag.

    The regression runs over the zero-padded demeaned series (every lagged
    product of the sample enters), whose normal equations are the biased
    sample autocovariances.
    """
    d = np.asarray(x, dtype=float) - np.mean(x)
    n = d.size
    out = []
    for k in range(1, max_lag + 1):
        padded = np.concatenate([np.zeros(k), d, np.zeros(k)])
        rows = n + k
        y = padded[k:k + rows]
        design = np.column_stack([padded[k - j:k - j + rows] for j in range(1, k + 1)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        out.append(coef[-1])
    return np.array(out)


def pacf_ols_covariance(x, max_lag):
    """Plain regression on the observed rows only (no padding)."""
    d = np.asarray(x, dtype=float) - np.mean(x)
    out = []
    for k in range(1, max_lag + 1):
        y = d[k:]
        design = np.column_stack([d[k - j:len(d) - j] for j in range(1, k + 1)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        out.append(coef[-1])
    return np.array(out)


def simulate_ar(coeffs, n, rng, burn=500):
    p = len(coeffs)
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(n + burn):
        x[t] = e[t] + sum(coeffs[j] * x[t - j - 1] for j in range(p) if t - j - 1 >= 0)
    return x[burn:]


def random_stationary_ar(order, rng):
    """AR coefficients from random roots strictly inside the unit circle."""
    roots = rng.uniform(0.2, 0.85, order) * rng.choice([-1, 1], order)
    poly = np.poly(roots)  # 1, -a1, -a2, ...
    return -poly[1:]
