"""Two-sample Student t-tests with Bonferroni correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


@dataclass
class TTestResult:
    t: float
    df: int
    p: float
    mean_a: float
    mean_b: float
    degenerate: bool = False  # zero pooled variance

    def as_dict(self) -> dict:
        return {"t": self.t, "df": self.df, "p": self.p, "mean_a": self.mean_a, "mean_b": self.mean_b,
                "degenerate_variance": self.degenerate}


def two_sample_ttest(group_a, group_b) -> TTestResult:
    """Pooled-variance two-sided t-test; df = n_a + n_b - 2.

    With zero pooled variance: equal means give t = 0, p = 1; unequal means
    give p = 0 and t = +/-inf, flagged as degenerate.
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two values")
    na, nb = len(a), len(b)
    df = na + nb - 2
    ma, mb = a.mean(), b.mean()
    pooled = (((a - ma) ** 2).sum() + ((b - mb) ** 2).sum()) / df
    se = np.sqrt(pooled * (1.0 / na + 1.0 / nb))
    if se == 0.0:
        if ma == mb:
            return TTestResult(0.0, df, 1.0, float(ma), float(mb), degenerate=True)
        return TTestResult(float(np.copysign(np.inf, ma - mb)), df, 0.0, float(ma), float(mb), degenerate=True)
    t = (ma - mb) / se
    p = 2.0 * _st.t.sf(abs(t), df)
    return TTestResult(float(t), df, float(min(p, 1.0)), float(ma), float(mb))


def bonferroni(p_values, alpha: float = 0.05) -> tuple[list[float], list[bool]]:
    """Adjusted p-values min(1, m p) and the rejections at ``alpha``."""
    p = np.asarray(p_values, dtype=np.float64)
    adj = np.minimum(1.0, p * len(p))
    return [float(x) for x in adj], [bool(x < alpha) for x in adj]
