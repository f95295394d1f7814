"""Convergence diagnostics, WAIC, and posterior summaries.

split_rhat rank-normalizes the pooled draws, splits each chain in half, and
compares between- to within-chain variance; values near 1 indicate mixing.
ess estimates the effective sample size from chain autocorrelations with a
pairwise-positive truncation of the correlation sums. waic computes the
widely applicable information criterion -2(lppd - p_waic) from a matrix of
pointwise posterior log likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.special
import scipy.stats

from .errors import InvalidArgumentError


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise InvalidArgumentError("draws must be 1-D or (chains, draws)")
    return x


def split_rhat(draws) -> float:
    """Rank-normalized split potential-scale-reduction statistic.

    Accepts (chains, draws) or a single 1-D chain. Returns NaN when the
    draws are constant (the statistic is undefined there).
    """
    x = _as_chains(draws)
    n_half = x.shape[1] // 2
    if n_half < 10:
        raise InvalidArgumentError("need at least 20 draws per chain")
    halves = [x[:, :n_half], x[:, n_half : 2 * n_half]]
    x = np.concatenate(halves, axis=0)
    if np.allclose(x, x.ravel()[0]):
        return float("nan")
    ranks = scipy.stats.rankdata(x, method="average").reshape(x.shape)
    z = scipy.special.ndtri((ranks - 0.375) / (x.size + 0.25))
    within = z.var(axis=1, ddof=1).mean()
    between = x.shape[1] * z.mean(axis=1).var(ddof=1)
    var_plus = (x.shape[1] - 1) / x.shape[1] * within + between / x.shape[1]
    return float(np.sqrt(var_plus / within))


def _autocovariance(chain: np.ndarray) -> np.ndarray:
    """Biased-normalization autocovariance via FFT."""
    n = chain.shape[0]
    centered = chain - chain.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def ess(draws) -> float:
    """Effective sample size from combined-chain autocorrelations.

    The correlation sum is truncated at the first nonpositive pair of
    successive lags; the estimate is capped at the total draw count.
    """
    x = _as_chains(draws)
    n_chains, n = x.shape
    if n_chains * n < 100:
        raise InvalidArgumentError("need at least 100 draws")
    total = n_chains * n
    acovs = np.stack([_autocovariance(c) for c in x])
    chain_var = x.var(axis=1, ddof=1)
    within = chain_var.mean()
    var_plus = within * (n - 1) / n
    if n_chains > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return float("nan")
    rho = 1.0 - (within - acovs.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Sum rho over pairs (2t, 2t+1) while the pair sums stay positive.
    max_pairs = (n - 1) // 2
    tau = 1.0
    prev = None
    for t in range(1, max_pairs + 1):
        pair = rho[2 * t - 1] + rho[2 * t]
        if pair <= 0:
            break
        if prev is not None:
            pair = min(pair, prev)  # enforce monotone decrease
        tau += 2.0 * pair
        prev = pair
    return float(min(total, total / tau))


@dataclass(frozen=True)
class WaicReport:
    waic: float
    lppd: float
    p_waic: float
    pointwise_lppd: np.ndarray
    pointwise_p: np.ndarray

    @property
    def pointwise(self) -> np.ndarray:
        """Per-subject contribution to waic."""
        return -2.0 * (self.pointwise_lppd - self.pointwise_p)


def waic(loglik: np.ndarray) -> WaicReport:
    """Information criterion from a (draws, n) pointwise log-likelihood matrix."""
    ll = np.atleast_2d(np.asarray(loglik, dtype=float))
    if ll.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 draws")
    bad = ~np.all(np.isfinite(ll), axis=0)
    if np.any(bad):
        raise InvalidArgumentError(
            f"non-finite pointwise log likelihood for subjects {np.flatnonzero(bad).tolist()}"
        )
    s = ll.shape[0]
    pointwise_lppd = scipy.special.logsumexp(ll, axis=0) - np.log(s)
    pointwise_p = ll.var(axis=0, ddof=1)
    lppd = float(pointwise_lppd.sum())
    p_waic = float(pointwise_p.sum())
    return WaicReport(
        waic=-2.0 * (lppd - p_waic),
        lppd=lppd,
        p_waic=p_waic,
        pointwise_lppd=pointwise_lppd,
        pointwise_p=pointwise_p,
    )


QUANTILES = (0.025, 0.5, 0.975)
COLUMNS = ("mean", "sd", "2.5%", "50%", "97.5%")


def summarize(draws: dict, transforms: dict | None = None) -> pd.DataFrame:
    """Summary table over named draw vectors.

    draws maps name -> 1-D array (a PosteriorDraws is accepted and expanded
    to its named parameters). transforms maps name -> "identity" or "exp";
    exp requests are applied to the draws before summarizing, so an
    exp-scale mean is the mean of exponentiated draws. Unknown transform
    targets or kinds are rejected.
    """
    if hasattr(draws, "names") and hasattr(draws, "pooled"):
        draws = {name: draws.pooled(name) for name in draws.names}
    transforms = dict(transforms or {})
    for name, kind in transforms.items():
        if name not in draws:
            raise InvalidArgumentError(f"unknown quantity {name!r}")
        if kind not in ("identity", "exp"):
            raise InvalidArgumentError(f"unknown transform {kind!r}")
    rows = []
    index = []
    for name, values in draws.items():
        x = np.asarray(values, dtype=float).ravel()
        if x.size == 0:
            raise InvalidArgumentError(f"no draws for {name!r}")
        if transforms.get(name) == "exp":
            x = np.exp(x)
        qs = np.quantile(x, QUANTILES)
        rows.append([x.mean(), x.std(ddof=1) if x.size > 1 else 0.0, *qs])
        index.append(name)
    return pd.DataFrame(rows, index=index, columns=list(COLUMNS))


def diagnostics_table(posterior) -> pd.DataFrame:
    """Split-R-hat and ESS for every stored parameter of a PosteriorDraws.

    Quantities whose draw count is below the estimator minimums get NaN
    rather than an error; a report on a short run is still a report.
    """
    rows = []
    for name in posterior.names:
        chains = posterior.by_chain(name)
        try:
            rhat = split_rhat(chains)
        except InvalidArgumentError:
            rhat = np.nan
        try:
            ess_val = ess(chains)
        except InvalidArgumentError:
            ess_val = np.nan
        rows.append([rhat, ess_val])
    table = pd.DataFrame(rows, columns=["rhat", "ess"])
    table.insert(0, "name", list(posterior.names))
    return table


def posterior_summary(posterior) -> pd.DataFrame:
    """Reporting table for a fit: coefficients on both scales, the rest natural.

    Regression coefficients appear twice, once raw and once exponentiated
    (hazard-ratio scale). Baseline rates and variance parameters appear on
    their natural scale. Latent basis weights are omitted; they are carried
    in the draws store for prediction, not for reporting.
    """
    coef = [n for n in posterior.names if n.startswith("beta")]
    natural = [
        n
        for n in posterior.names
        if not (n.startswith("beta") or n.startswith("z0_") or n.startswith("z1_"))
    ]
    blocks = []
    for names, scale, transform in (
        (coef, "coef", None),
        (coef, "hazard_ratio", "exp"),
        (natural, "natural", None),
    ):
        table = summarize(
            {n: posterior.pooled(n) for n in names},
            {n: transform for n in names} if transform else None,
        )
        table.insert(0, "scale", scale)
        table.insert(0, "name", list(table.index))
        blocks.append(table.reset_index(drop=True))
    return pd.concat(blocks, ignore_index=True)
