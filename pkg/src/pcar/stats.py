"""Self-contained statistics used by the analysis pipeline.

The Student-t tail probability is evaluated through the regularized
incomplete beta function (continued fraction, relative tolerance well
below 1e-10), so p-values and confidence multipliers reproduce to ~1e-12
without depending on scipy. Everything here is a pure function.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

_BETACF_EPS = 1e-14
_BETACF_FPMIN = 1e-300
_BETACF_MAX_ITER = 400


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    if t == 0.0:
        return 1.0
    return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))


def student_t_quantile(q: float, df: float) -> float:
    """Inverse CDF for q in (0.5, 1): the positive t with CDF(t) = q,
    found by bisection on the two-sided tail (monotone in t)."""
    if not 0.5 < q < 1.0:
        raise ValueError("quantile implemented for q in (0.5, 1)")
    target = 2.0 * (1.0 - q)  # two-sided tail mass at the answer
    lo, hi = 0.0, 1.0
    while student_t_two_sided_p(hi, df) > target:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("quantile bracket failed")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if student_t_two_sided_p(mid, df) > target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def _mean(xs) -> float:
    return sum(xs) / len(xs)


def _sample_var(xs) -> float:
    m = _mean(xs)
    return sum((x - m) ** 2 for x in xs) / (len(xs) - 1)


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_t(x, y) -> WelchResult:
    """Two-sample t statistic with unpooled variances, Welch-Satterthwaite
    degrees of freedom, and the two-sided p-value."""
    x, y = [float(v) for v in x], [float(v) for v in y]
    if len(x) < 2 or len(y) < 2:
        raise ValueError("both samples need at least two observations")
    vx, vy = _sample_var(x), _sample_var(y)
    if vx == 0.0 and vy == 0.0:
        raise ValueError("both samples are constant; t is undefined")
    nx, ny = len(x), len(y)
    se2 = vx / nx + vy / ny
    t = (_mean(x) - _mean(y)) / math.sqrt(se2)
    df = se2**2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    return WelchResult(t=t, df=df, p=student_t_two_sided_p(t, df))


def pearson(x, y) -> float:
    """Product-moment correlation."""
    x, y = [float(v) for v in x], [float(v) for v in y]
    if len(x) != len(y):
        raise ValueError("samples must have equal length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    mx, my = _mean(x), _mean(y)
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = sum(d * d for d in dx)
    syy = sum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant sample")
    r = sum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class SummaryRow:
    """One aggregation cell: participant means first, then the mean and a
    95% t-interval across participants. ``degenerate`` flags single-
    participant cells, reported as [mean, mean]."""

    group: str
    phase: int | str
    week: int | str
    metric: str
    mean: float
    ci_low: float
    ci_high: float
    n_participants: int
    degenerate: bool = False


SUMMARY_COLUMNS = (
    "group", "phase", "week", "metric", "mean", "ci_low", "ci_high",
    "n_participants", "degenerate",
)


def mean_of_means(records, group_by=("group", "phase", "week", "metric")) -> list[SummaryRow]:
    """Aggregate records (mappings with at least ``pid``, ``value`` and the
    group_by fields) participant-first. Cells with no records are skipped;
    a warning is emitted when a requested grouping turns out empty."""
    cells: dict[tuple, dict[str, list[float]]] = {}
    for rec in records:
        key = tuple(rec[field] for field in group_by)
        cells.setdefault(key, {}).setdefault(rec["pid"], []).append(float(rec["value"]))
    if not cells:
        warnings.warn("no records to summarize", stacklevel=2)
        return []
    rows = []
    for key, per_pid in cells.items():
        means = [_mean(vals) for vals in per_pid.values()]
        n = len(means)
        center = _mean(means)
        if n == 1:
            row_ci = (center, center)
            degenerate = True
        else:
            se = math.sqrt(_sample_var(means) / n)
            tq = student_t_quantile(0.975, n - 1)
            row_ci = (center - tq * se, center + tq * se)
            degenerate = False
        fields = dict(zip(group_by, key))
        rows.append(
            SummaryRow(
                group=str(fields.get("group", "")),
                phase=fields.get("phase", ""),
                week=fields.get("week", ""),
                metric=str(fields.get("metric", "")),
                mean=center,
                ci_low=row_ci[0],
                ci_high=row_ci[1],
                n_participants=n,
                degenerate=degenerate,
            )
        )
    return rows


def write_summary_csv(rows: list[SummaryRow], fh) -> None:
    """Documented column order: group, phase, week, metric, mean, ci_low,
    ci_high, n_participants, degenerate."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.group, r.phase, r.week, r.metric,
                f"{r.mean:.10g}", f"{r.ci_low:.10g}", f"{r.ci_high:.10g}",
                r.n_participants, int(r.degenerate),
            ]
        )


def pss_trend(scores, indices=None) -> float:
    """Least-squares slope of questionnaire scores over their measurement
    indices (0 = intake). Negative means stress went down."""
    scores = [float(s) for s in scores]
    if len(scores) < 2:
        raise ValueError("need at least two scores for a trend")
    if indices is None:
        indices = list(range(len(scores)))
    else:
        indices = [float(i) for i in indices]
        if len(indices) != len(scores):
            raise ValueError("one index per score")
    mx, my = _mean(indices), _mean(scores)
    sxx = sum((i - mx) ** 2 for i in indices)
    if sxx == 0.0:
        raise ValueError("indices are all identical")
    return sum((i - mx) * (s - my) for i, s in zip(indices, scores)) / sxx
