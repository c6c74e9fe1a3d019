"""Effective sample size and run summaries."""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from errors import ConstantChainWarning

logger = logging.getLogger(__name__)


def _autocovariance(x):
    """Biased autocovariance of each row of ``x`` (chains, n) for lags 0..n-1."""
    n = x.shape[1]
    centred = x - x.mean(axis=1, keepdims=True)
    full = fftconvolve(centred, centred[:, ::-1], mode="full", axes=1)
    return full[:, n - 1 :] / n


def ess(chains):
    """Effective sample size of one scalar quantity.

    ``chains`` is a sequence of equal-length chains (or a single 1-D
    chain). Autocorrelations are pooled across chains through the
    within/between variance estimate and truncated with Geyer's initial
    positive sequence, made monotone. The result is capped at the total
    number of draws; a constant quantity returns that total with a
    ConstantChainWarning.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        raise ValueError("ess needs at least 4 draws per chain")
    total = float(m * n)

    acov = _autocovariance(x)
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0 or not np.isfinite(var_plus):
        warnings.warn("chain has zero variance; ESS set to the number of draws", ConstantChainWarning)
        return total

    acov_mean = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov_mean[1]) / var_plus
    rho[1] = rho_odd

    # initial positive sequence
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov_mean[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - acov_mean[t + 2]) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even

    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t]
    tau = max(tau, 1.0 / math.log10(total))
    return float(min(total / tau, total))


@dataclass
class EssReport:
    per_variable: dict = field(default_factory=dict)
    min_ess: float = math.nan
    min_ess_per_s: float = math.nan
    wall_time: float = math.nan

    @property
    def worst_variable(self):
        if not self.per_variable:
            return None
        return min(self.per_variable, key=self.per_variable.get)

    def as_dict(self):
        return {
            "ess": dict(self.per_variable),
            "min_ess": self.min_ess,
            "min_ess_per_s": self.min_ess_per_s,
            "wall_time_s": self.wall_time,
        }


def summarize(trace, wall_time=None, names=None):
    """ESS of every traced variable (or of ``names``), with min ESS and min ESS/s."""
    wall_time = trace.wall_time if wall_time is None else float(wall_time)
    names = list(names) if names is not None else list(trace.names)
    per_variable = {}
    for name in names:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConstantChainWarning)
            per_variable[name] = ess(trace.values(name))
        if caught:
            logger.warning("%s is constant across draws", name)
    min_ess = min(per_variable.values()) if per_variable else math.nan
    per_s = min_ess / wall_time if wall_time and wall_time > 0 else math.inf
    return EssReport(per_variable, min_ess, per_s, wall_time)
