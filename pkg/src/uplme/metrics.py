"""Regression, uncertainty and separation metrics.

Everything here works on 1-d float arrays and assumes a Gaussian predictive
distribution ``N(y_hat, sigma2)`` per sample where uncertainty is involved.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .errors import CorrelationUndefinedError, DegenerateInputError, InvalidInputError

# nominal central-interval levels for the calibration error
CAL_LEVELS = np.round(np.arange(1, 10) / 10.0, 1)

# metric -> True when larger is better
HIGHER_IS_BETTER = {
    "pcc": True,
    "scc": True,
    "ccc": True,
    "rmse": False,
    "cal": False,
    "shp": False,
    "nlpd": False,
}


@dataclass
class MetricReport:
    pcc: float = math.nan
    scc: float = math.nan
    ccc: float = math.nan
    rmse: float = math.nan
    cal: float = math.nan
    shp: float = math.nan
    nlpd: float = math.nan
    n: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d

    def to_text(self) -> str:
        """One ``key=value`` line per metric, floats at 9 significant digits."""
        lines = []
        for key, value in self.as_dict().items():
            lines.append(f"{key}={_fmt(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        known = {f.name for f in fields(cls)} - {"extra"}
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key in ("n", "seed"):
                setattr(report, key, int(raw))
            elif key in known:
                setattr(report, key, float(raw))
            else:
                report.extra[key] = _parse(raw)
        return report


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def _parse(raw: str):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def _vectors(*xs, min_len: int = 1):
    arrs = [np.asarray(x, dtype=np.float64).ravel() for x in xs]
    n = len(arrs[0])
    if any(len(a) != n for a in arrs):
        raise InvalidInputError(f"length mismatch: {[len(a) for a in arrs]}")
    if n < min_len:
        raise InvalidInputError(f"need at least {min_len} samples, got {n}")
    return arrs


def pearson(y, y_hat) -> float:
    y, y_hat = _vectors(y, y_hat, min_len=2)
    dy, dp = y - y.mean(), y_hat - y_hat.mean()
    denom = math.sqrt(float(np.dot(dy, dy)) * float(np.dot(dp, dp)))
    if denom == 0.0:
        raise CorrelationUndefinedError("zero variance in input")
    return float(np.clip(np.dot(dy, dp) / denom, -1.0, 1.0))


def spearman(y, y_hat) -> float:
    """Pearson correlation of average ranks."""
    y, y_hat = _vectors(y, y_hat, min_len=2)
    return pearson(stats.rankdata(y), stats.rankdata(y_hat))


def concordance(y, y_hat) -> float:
    """Lin's concordance correlation coefficient with population moments."""
    y, y_hat = _vectors(y, y_hat, min_len=2)
    my, mp = y.mean(), y_hat.mean()
    vy, vp = np.mean((y - my) ** 2), np.mean((y_hat - mp) ** 2)
    if vy == 0.0 or vp == 0.0:
        raise CorrelationUndefinedError("zero variance in input")
    cov = np.mean((y - my) * (y_hat - mp))
    return float(2.0 * cov / (vy + vp + (my - mp) ** 2))


def rmse(y, y_hat) -> float:
    y, y_hat = _vectors(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def regression_metrics(y, y_hat) -> dict:
    """PCC, SCC, CCC and RMSE.

    A zero-variance vector raises CorrelationUndefinedError whose ``rmse``
    attribute still holds the RMSE.
    """
    y, y_hat = _vectors(y, y_hat, min_len=2)
    err = rmse(y, y_hat)
    try:
        return {
            "pcc": pearson(y, y_hat),
            "scc": spearman(y, y_hat),
            "ccc": concordance(y, y_hat),
            "rmse": err,
        }
    except CorrelationUndefinedError as exc:
        raise CorrelationUndefinedError(str(exc), rmse=err) from None


def nlpd(y, y_hat, sigma2) -> float:
    y, y_hat, sigma2 = _vectors(y, y_hat, sigma2)
    if np.any(sigma2 <= 0):
        raise InvalidInputError("sigma2 must be strictly positive")
    return float(np.mean(0.5 * np.log(2 * np.pi * sigma2) + (y - y_hat) ** 2 / (2 * sigma2)))


def calibration_error(y, y_hat, sigma2, levels=CAL_LEVELS) -> float:
    """Mean squared gap between empirical and nominal central-interval coverage."""
    y, y_hat, sigma2 = _vectors(y, y_hat, sigma2)
    if np.any(sigma2 <= 0):
        raise InvalidInputError("sigma2 must be strictly positive")
    z_abs = np.abs(y - y_hat) / np.sqrt(sigma2)
    levels = np.asarray(levels, dtype=np.float64)
    radius = stats.norm.ppf(0.5 + levels / 2.0)
    coverage = np.mean(z_abs[None, :] <= radius[:, None], axis=1)
    return float(np.mean((coverage - levels) ** 2))


def sharpness(sigma2) -> float:
    (sigma2,) = _vectors(sigma2)
    if np.any(sigma2 <= 0):
        raise InvalidInputError("sigma2 must be strictly positive")
    return float(np.mean(sigma2))


def uq_metrics(y, y_hat, sigma2) -> dict:
    _vectors(y, y_hat, sigma2, min_len=2)
    return {
        "cal": calibration_error(y, y_hat, sigma2),
        "shp": sharpness(sigma2),
        "nlpd": nlpd(y, y_hat, sigma2),
    }


def noise_separation_auroc(sigma2_noisy, sigma2_clean) -> float:
    """P(noisy variance > clean variance) over all pairs, ties counting 1/2."""
    noisy = np.asarray(sigma2_noisy, dtype=np.float64).ravel()
    clean = np.asarray(sigma2_clean, dtype=np.float64).ravel()
    if noisy.size == 0 or clean.size == 0:
        raise InvalidInputError("both groups must be nonempty")
    ranks = stats.rankdata(np.concatenate([noisy, clean]))
    u = ranks[: noisy.size].sum() - noisy.size * (noisy.size + 1) / 2.0
    return float(u / (noisy.size * clean.size))


def welch_t_test(a, b) -> dict:
    """Unequal-variance two-sample t-test with a two-sided p-value."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise InvalidInputError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        raise DegenerateInputError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return {"t": float(t), "p": float(min(p, 1.0)), "df": float(df)}


def metric_report(y, y_hat, sigma2, seed: int = 0) -> MetricReport:
    reg = regression_metrics(y, y_hat)
    uq = uq_metrics(y, y_hat, sigma2)
    return MetricReport(**reg, **uq, n=len(np.ravel(y)), seed=seed)
