import math

import numpy as np
import pytest

from voldist.ticks import ReturnSeries


def brownian_day_returns(rng, n, sigma2=1.0, gamma=0.0, days=1, omega2=None):
    """Constant-volatility noisy return panel: sigma*dW increments plus
    differenced i.i.d. Gaussian noise with omega^2 = gamma^2 * delta_n * sigma2
    (or a fixed omega^2 when given explicitly)."""
    dn = 1.0 / n
    if omega2 is None:
        omega2 = gamma**2 * dn * sigma2 if gamma > 0.0 else 0.0
    vals = []
    for _ in range(days):
        r = rng.standard_normal(n) * math.sqrt(sigma2 * dn)
        if omega2 > 0.0:
            u = rng.standard_normal(n + 1) * math.sqrt(omega2)
            r = r + np.diff(u)
        vals.append(r)
    return ReturnSeries(dn, np.concatenate(vals), np.full(days, n, dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
