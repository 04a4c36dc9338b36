"""Delivery timing under hard budget rules.

Hard constraints: at most three contacts per weekday, at least two hours
between contacts, and nothing outside 08:00-21:00. On top of that sits a
small trained model -- a linear scorer through a sigmoid -- that estimates
how likely a contact at the current 5-minute tick is to be engaged with.
It is fit by full-batch gradient descent on a squared-error term plus a
budget-pressure term that pulls the expected number of daily triggers
toward the allowance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta

import numpy as np

WINDOW_START_MINUTE = 8 * 60
WINDOW_END_MINUTE = 21 * 60
WINDOW_MINUTES = WINDOW_END_MINUTE - WINDOW_START_MINUTE  # 780
TICK_MINUTES = 5
GAP_CAP_MINUTES = 780.0  # normalization cap for "minutes since last"
N_FEATURES = 10


@dataclass
class BudgetState:
    """Per-participant delivery budget. ``delivered_today`` counts initiated
    contacts; call ``start_day`` at each day boundary."""

    delivered_today: int = 0
    last_delivery: datetime | None = None
    max_per_day: int = 3
    min_gap_minutes: int = 120
    window_start_minute: int = WINDOW_START_MINUTE
    window_end_minute: int = WINDOW_END_MINUTE
    weekdays_only: bool = True

    def start_day(self) -> None:
        self.delivered_today = 0

    def record_delivery(self, now: datetime) -> None:
        self.delivered_today += 1
        self.last_delivery = now


def _minute_of_day(now: datetime) -> int:
    return now.hour * 60 + now.minute


def eligible(budget: BudgetState, now: datetime) -> bool:
    """All hard rules at once: weekday, inside the window, daily allowance
    left, and enough distance from the previous contact."""
    if budget.weekdays_only and now.weekday() >= 5:
        return False
    minute = _minute_of_day(now)
    if not budget.window_start_minute <= minute < budget.window_end_minute:
        return False
    if budget.delivered_today >= budget.max_per_day:
        return False
    if budget.last_delivery is not None:
        gap = (now - budget.last_delivery).total_seconds() / 60.0
        if gap < budget.min_gap_minutes:
            return False
    return True


def features(now: datetime, budget: BudgetState) -> np.ndarray:
    """Deterministic 10-vector for the timing model:
    [sin hour, cos hour, Mon..Fri one-hot, minutes-since-last (capped,
    normalized), allowance remaining / max, window minutes remaining /
    window length]."""
    x = np.zeros(N_FEATURES)
    minute = _minute_of_day(now)
    angle = 2.0 * math.pi * minute / 1440.0
    x[0] = math.sin(angle)
    x[1] = math.cos(angle)
    dow = now.weekday()
    if dow < 5:
        x[2 + dow] = 1.0
    if budget.last_delivery is None:
        gap = GAP_CAP_MINUTES
    else:
        gap = (now - budget.last_delivery).total_seconds() / 60.0
        gap = min(max(gap, 0.0), GAP_CAP_MINUTES)
    x[7] = gap / GAP_CAP_MINUTES
    x[8] = max(0, budget.max_per_day - budget.delivered_today) / budget.max_per_day
    remaining = max(0, budget.window_end_minute - minute)
    x[9] = min(remaining, WINDOW_MINUTES) / WINDOW_MINUTES
    return x


@dataclass
class TimingModel:
    """Linear scorer with a decision threshold and budget-pressure weight.

    ``feature_mean``/``feature_scale`` hold the standardization fitted at
    training time (identity until trained); scoring applies it, so the
    model is self-contained."""

    weights: np.ndarray
    bias: float = 0.0
    threshold: float = 0.5
    budget_penalty: float = 0.1
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    @classmethod
    def zeros(cls, threshold: float = 0.5, budget_penalty: float = 0.1) -> "TimingModel":
        return cls(weights=np.zeros(N_FEATURES), bias=0.0,
                   threshold=threshold, budget_penalty=budget_penalty)

    @classmethod
    def budget_init(cls, daily_budget: float = 3.0,
                    ticks_per_day: float = WINDOW_MINUTES / TICK_MINUTES,
                    threshold: float = 0.5,
                    budget_penalty: float = 0.1) -> "TimingModel":
        """Zero weights with the bias at the base-rate logit, so the
        budget-pressure term starts near its stationary point instead of
        blowing the first gradient step through the sigmoid."""
        rate = min(max(daily_budget / ticks_per_day, 1e-6), 1 - 1e-6)
        return cls(weights=np.zeros(N_FEATURES),
                   bias=math.log(rate / (1.0 - rate)),
                   threshold=threshold, budget_penalty=budget_penalty)

    def to_json(self) -> str:
        doc = {
            "weights": [float(w) for w in self.weights],
            "bias": self.bias,
            "threshold": self.threshold,
            "budget_penalty": self.budget_penalty,
            "feature_mean": None if self.feature_mean is None
            else [float(v) for v in self.feature_mean],
            "feature_scale": None if self.feature_scale is None
            else [float(v) for v in self.feature_scale],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TimingModel":
        doc = json.loads(text)
        def arr(key):
            return (None if doc.get(key) is None
                    else np.asarray(doc[key], dtype=float))
        return cls(
            weights=np.asarray(doc["weights"], dtype=float),
            bias=float(doc["bias"]),
            threshold=float(doc["threshold"]),
            budget_penalty=float(doc["budget_penalty"]),
            feature_mean=arr("feature_mean"),
            feature_scale=arr("feature_scale"),
        )


def _standardized(model: TimingModel, X: np.ndarray) -> np.ndarray:
    if model.feature_mean is None:
        return X
    return (X - model.feature_mean) / model.feature_scale


def score(model: TimingModel, x: np.ndarray) -> float:
    """sigmoid(w . x + b) on the (standardized) features: the engagement
    likelihood at this tick."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.weights.shape:
        raise ValueError(
            f"feature dimension {x.shape} does not match model {model.weights.shape}"
        )
    z = float(model.weights @ _standardized(model, x) + model.bias)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _unpack_history(history):
    """History rows are (features, label, day index) for each eligible
    tick. The label is 1/0 engagement feedback for ticks where a contact
    went out and None for the rest; unlabeled ticks still count toward the
    expected-daily-triggers budget term."""
    if not history:
        raise ValueError("history is empty")
    xs, ys, days = [], [], []
    for x, y, day in history:
        xs.append(np.asarray(x, dtype=float))
        ys.append(np.nan if y is None else float(y))
        days.append(day)
    X = np.vstack(xs)
    y = np.asarray(ys)
    labeled = ~np.isnan(y)
    if not labeled.any():
        raise ValueError("history has no labeled rows")
    return X, y, labeled, days


def composite_loss(model: TimingModel, history, daily_budget: float) -> float:
    """mean squared error over labeled rows + budget_penalty * (mean
    expected daily triggers - allowance)^2, where a day's expected triggers
    is the sum of its ticks' probabilities."""
    X, y, labeled, days = _unpack_history(history)
    z = _standardized(model, X) @ model.weights + model.bias
    p = 1.0 / (1.0 + np.exp(-z))
    mse = float(np.mean((p[labeled] - y[labeled]) ** 2))
    uniq = sorted(set(days))
    day_sum = {d: 0.0 for d in uniq}
    for pi, d in zip(p, days):
        day_sum[d] += pi
    mean_triggers = float(np.mean([day_sum[d] for d in uniq]))
    return mse + model.budget_penalty * (mean_triggers - daily_budget) ** 2


def train(
    model: TimingModel,
    history,
    daily_budget: float = 3.0,
    epochs: int = 500,
    step: float = 0.05,
) -> TimingModel:
    """Full-batch gradient descent on the composite loss. Features are
    standardized over the history first (per feature axis, like the
    sensing pipeline's preprocessing); the fitted transform ships inside
    the returned model. Deterministic; leaves the input untouched."""
    X, y, labeled, days = _unpack_history(history)
    if model.feature_mean is None:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-9] = 1.0
    else:
        mean, scale = model.feature_mean, model.feature_scale
    X = (X - mean) / scale
    w = model.weights.astype(float).copy()
    b = model.bias
    n_labeled = int(labeled.sum())
    uniq = sorted(set(days))
    n_days = len(uniq)
    day_of = {d: i for i, d in enumerate(uniq)}
    day_idx = np.asarray([day_of[d] for d in days])
    y_fit = np.where(labeled, y, 0.0)

    for _ in range(epochs):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        sig_grad = p * (1.0 - p)
        # classification term over labeled rows
        g = np.where(labeled, 2.0 * (p - y_fit) * sig_grad / n_labeled, 0.0)
        grad_w = X.T @ g
        grad_b = float(np.sum(g))
        # budget-pressure term over every eligible tick
        day_sums = np.bincount(day_idx, weights=p, minlength=n_days)
        pressure = 2.0 * model.budget_penalty * (day_sums.mean() - daily_budget)
        gb = pressure * sig_grad / n_days
        grad_w += X.T @ gb
        grad_b += float(np.sum(gb))
        w -= step * grad_w
        b -= step * grad_b
    return replace(model, weights=w, bias=b, feature_mean=mean, feature_scale=scale)


def expected_daily_triggers(model: TimingModel, history) -> float:
    X, _, _, days = _unpack_history(history)
    z = _standardized(model, X) @ model.weights + model.bias
    p = 1.0 / (1.0 + np.exp(-z))
    uniq = sorted(set(days))
    totals = {d: 0.0 for d in uniq}
    for pi, d in zip(p, days):
        totals[d] += pi
    return float(np.mean([totals[d] for d in uniq]))


def calibrate_threshold(
    model: TimingModel, daily_budget: int = 3, iterations: int = 40
) -> TimingModel:
    """Post-processor step: pick the decision threshold by walking the
    real decide loop over synthetic weekdays (scores evolve with the
    budget state as triggers fire) and bisecting until the realized
    trigger count per day reaches the allowance."""
    week = [datetime(2024, 1, 1) + timedelta(days=i) for i in range(5)]

    def triggers_per_day(theta: float) -> float:
        total = 0
        for day in week:
            budget = BudgetState(max_per_day=daily_budget)
            budget.start_day()
            minute = budget.window_start_minute
            while minute < budget.window_end_minute:
                now = day.replace(hour=minute // 60, minute=minute % 60)
                if eligible(budget, now):
                    if score(model, features(now, budget)) >= theta:
                        budget.record_delivery(now)
                        total += 1
                minute += TICK_MINUTES
        return total / len(week)

    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if triggers_per_day(mid) >= daily_budget:
            lo = mid
        else:
            hi = mid
    theta = min(max(lo, 1e-9), 1.0 - 1e-9)
    return replace(model, threshold=theta)


def decide(model: TimingModel, budget: BudgetState, now: datetime) -> bool:
    """Trigger decision at one tick: hard rules first, then the scorer
    against the threshold. Only valid on the 5-minute grid."""
    if now.minute % TICK_MINUTES != 0 or now.second != 0:
        raise ValueError(f"{now.isoformat()} is not on the 5-minute decision grid")
    if not eligible(budget, now):
        return False
    return score(model, features(now, budget)) >= model.threshold
