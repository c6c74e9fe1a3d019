# utils.py
import numpy as np
import pandas as pd


def summarize_draws(df, names, ess=None):
    """Posterior summary table: mean, sd, 5/50/95% quantiles and ESS per variable."""
    ess = ess or {}
    rows = {}
    for name in names:
        col = df[name].to_numpy(dtype=float)
        q5, q50, q95 = np.quantile(col, [0.05, 0.5, 0.95])
        rows[name] = {
            "mean": col.mean(),
            "sd": col.std(ddof=1) if col.size > 1 else 0.0,
            "q5": q5,
            "median": q50,
            "q95": q95,
            "ess": ess.get(name, np.nan),
        }
    return pd.DataFrame.from_dict(rows, orient="index")


def recommend(report):
    """One-line advice on a finished run."""
    msgs = []
    if report.divergences:
        msgs.append(f"{report.divergences} divergent transitions; raise --target-accept or try --mode hmc-m / hmc-r.")
    draws = report.sampler["posterior_draws"] * report.sampler["chains"]
    if report.min_ess < 0.01 * draws:
        msgs.append(f"min ESS {report.min_ess:.0f} is below 1% of the draws; the chain mixes poorly.")
    if msgs:
        return "⚠️ " + " ".join(msgs)
    if report.mode == "hmc-m" and report.reduced_dim < report.original_dim:
        return f"✅ Sampled {report.reduced_dim} of {report.original_dim} latent dimensions; no issues detected."
    return "✅ No sampling issues detected."
