"""Factorized SARSA(lambda) over switch-clock state.

One learner ("agent") per action attribute; every agent receives the same
scalar reward but selects over its own value set with its own clocks.
Action values are keyed by (value, clipped clock, context bucket) only, so
a single table write updates every global state sharing that key -- the
replication of equivalent ("ghost") states happens by construction rather
than by enumeration.

Also houses the baseline policies (uniform random, prompt-only control)
and a brute-force planning oracle used to benchmark the learner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lsd import LsdState, advance, initial_state, reward_key

PERIODS = ("morning", "afternoon", "evening")


def period_of_hour(hour: int) -> str:
    """Coarse time-of-day: 8-11 morning, 12-16 afternoon, 17-21 evening."""
    if 8 <= hour <= 11:
        return "morning"
    if 12 <= hour <= 16:
        return "afternoon"
    if 17 <= hour <= 21:
        return "evening"
    raise ValueError(f"hour {hour} outside the 8-21 service window")


@dataclass(frozen=True)
class ContextBucket:
    """Environment context the learner conditions on: time-of-day period
    plus one small personality split."""

    period: str
    trait_bucket: int = 0

    def __post_init__(self) -> None:
        if self.period not in PERIODS:
            raise ValueError(f"unknown period {self.period!r}")
        if self.trait_bucket < 0:
            raise ValueError("trait_bucket must be >= 0")

    @classmethod
    def from_hour(cls, hour: int, trait_bucket: int = 0) -> "ContextBucket":
        return cls(period=period_of_hour(hour), trait_bucket=trait_bucket)

    def index(self, n_trait_buckets: int) -> int:
        if self.trait_bucket >= n_trait_buckets:
            raise ValueError(
                f"trait_bucket {self.trait_bucket} >= configured {n_trait_buckets}"
            )
        return PERIODS.index(self.period) * n_trait_buckets + self.trait_bucket


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered action attributes, each with its finite value list."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self) -> None:
        names = [name for name, _ in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        for name, values in self.attributes:
            if not values:
                raise ValueError(f"attribute {name!r} has no values")
            if len(set(values)) != len(values):
                raise ValueError(f"attribute {name!r} has duplicate values")

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    def name(self, i: int) -> str:
        return self.attributes[i][0]

    def values(self, i: int) -> tuple[str, ...]:
        return self.attributes[i][1]

    def value_index(self, i: int, value: str) -> int:
        try:
            return self.attributes[i][1].index(value)
        except ValueError:
            raise ValueError(
                f"{value!r} is not a value of attribute {self.name(i)!r}"
            ) from None

    def validate_vector(self, vector: tuple[str, ...]) -> tuple[int, ...]:
        """Return per-attribute value indices, or raise."""
        if len(vector) != self.n_attributes:
            raise ValueError(
                f"vector has {len(vector)} entries, schema has {self.n_attributes}"
            )
        return tuple(self.value_index(i, v) for i, v in enumerate(vector))


@dataclass
class Hyperparams:
    """Tabular learner settings. Defaults are ordinary tabular-TD choices."""

    alpha: float = 0.1
    gamma: float = 0.9
    lam: float = 0.6
    epsilon_start: float = 0.2
    epsilon_end: float = 0.02
    epsilon_decay_steps: int = 1000
    q_tau_clip: int | None = None  # None: clip at the clock cap
    ghost_rollout_depth: int = 0  # reserved; only 0 is implemented


class QModel:
    """Per-agent action-value and eligibility tables, keyed by
    (value index, clipped clock index, context bucket index)."""

    def __init__(self, n_values: int, tau_clip: int, n_buckets: int):
        self.n_values = n_values
        self.tau_clip = tau_clip
        self.n_buckets = n_buckets
        self.q = np.zeros((n_values, 2 * tau_clip, n_buckets))
        self._traces: dict[str, np.ndarray] = {}

    def trace(self, stream: str) -> np.ndarray:
        e = self._traces.get(stream)
        if e is None:
            e = np.zeros_like(self.q)
            self._traces[stream] = e
        return e

    def reset_trace(self, stream: str) -> None:
        if stream in self._traces:
            self._traces[stream].fill(0.0)

    def tau_index(self, tau: int) -> int:
        if tau == 0:
            raise ValueError("clocks are never zero")
        c = self.tau_clip
        tau = max(-c, min(c, tau))
        return tau + c if tau < 0 else c + tau - 1


@dataclass(frozen=True)
class Selection:
    """Snapshot of one action choice: the context it was made in, the
    chosen value indices, and each chosen value's clock at choice time."""

    bucket: int
    value_indices: tuple[int, ...]
    taus: tuple[int, ...]


class AgentBundle:
    """A team of independent per-attribute learners sharing one reward.

    The bundle owns internal clocks (one LsdState per attribute, over that
    attribute's values) for self-contained episodic use. Callers that keep
    clocks elsewhere (e.g. one set per participant) pass them explicitly
    to ``select_action`` and drive learning through ``td_step``.

    Single-writer: updates mutate the bundle and must be serialized.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        tau_max: int = 6,
        params: Hyperparams | None = None,
        n_trait_buckets: int = 2,
        seed: int = 0,
    ):
        if params is None:
            params = Hyperparams()
        if params.ghost_rollout_depth != 0:
            raise NotImplementedError(
                "ghost_rollout_depth is reserved; only 0 is implemented"
            )
        self.schema = schema
        self.tau_max = tau_max
        self.params = params
        self.n_trait_buckets = n_trait_buckets
        self.n_buckets = len(PERIODS) * n_trait_buckets
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        clip = params.q_tau_clip if params.q_tau_clip is not None else tau_max
        if not 1 <= clip <= tau_max:
            raise ValueError(f"q_tau_clip must be in 1..{tau_max}, got {clip}")
        self.models = [
            QModel(len(schema.values(i)), clip, self.n_buckets)
            for i in range(schema.n_attributes)
        ]
        self._clocks = [
            initial_state(len(schema.values(i)), tau_max)
            for i in range(schema.n_attributes)
        ]
        self.rounds = 0

    # -- state access ----------------------------------------------------

    @property
    def clocks(self) -> tuple[LsdState, ...]:
        return tuple(self._clocks)

    def reset_clocks(self) -> None:
        self._clocks = [
            initial_state(len(self.schema.values(i)), self.tau_max)
            for i in range(self.schema.n_attributes)
        ]

    def epsilon(self) -> float:
        p = self.params
        if p.epsilon_decay_steps <= 0:
            return p.epsilon_end
        frac = min(1.0, self.rounds / p.epsilon_decay_steps)
        return p.epsilon_start + (p.epsilon_end - p.epsilon_start) * frac

    def action_value(
        self, agent: int, state: LsdState, value_index: int, ctx: ContextBucket
    ) -> float:
        """Q lookup for one agent given a full clock state. Depends only on
        the looked-up value's own clock -- the audit below checks this."""
        qm = self.models[agent]
        ti = qm.tau_index(state.taus[value_index])
        return float(qm.q[value_index, ti, ctx.index(self.n_trait_buckets)])

    # -- action selection -------------------------------------------------

    def _greedy_index(self, agent: int, state: LsdState, bucket: int) -> int:
        qm = self.models[agent]
        q = qm.q
        best, best_v = -math.inf, 0
        for v in range(qm.n_values):
            s = q[v, qm.tau_index(state.taus[v]), bucket]
            if s > best:  # strict: ties keep the lowest index
                best, best_v = s, v
        return best_v

    def _select_indices(
        self, clocks: list[LsdState], bucket: int, eps: float
    ) -> tuple[int, ...]:
        out = []
        for p in range(self.schema.n_attributes):
            u = self.rng.random()
            if u < eps:
                out.append(int(self.rng.integers(self.models[p].n_values)))
            else:
                out.append(self._greedy_index(p, clocks[p], bucket))
        return tuple(out)

    def select_action(
        self, ctx: ContextBucket, clocks: list[LsdState] | None = None
    ) -> tuple[str, ...]:
        """Epsilon-greedy choice per agent over the current (or supplied)
        clocks. One uniform draw is consumed per agent regardless of
        epsilon, so streams stay aligned across configurations."""
        clocks = self._clocks if clocks is None else list(clocks)
        bucket = ctx.index(self.n_trait_buckets)
        idx = self._select_indices(clocks, bucket, self.epsilon())
        return tuple(self.schema.values(p)[i] for p, i in enumerate(idx))

    def greedy_action(
        self, ctx: ContextBucket, clocks: list[LsdState] | None = None
    ) -> tuple[str, ...]:
        """Pure argmax choice; consumes no randomness."""
        clocks = self._clocks if clocks is None else list(clocks)
        bucket = ctx.index(self.n_trait_buckets)
        idx = [
            self._greedy_index(p, clocks[p], bucket)
            for p in range(self.schema.n_attributes)
        ]
        return tuple(self.schema.values(p)[i] for p, i in enumerate(idx))

    def snapshot_selection(
        self, ctx: ContextBucket, action: tuple[str, ...], clocks: list[LsdState]
    ) -> Selection:
        """Record an action against the clocks it was chosen under."""
        idx = self.schema.validate_vector(action)
        return Selection(
            bucket=ctx.index(self.n_trait_buckets),
            value_indices=idx,
            taus=tuple(clocks[p].taus[i] for p, i in enumerate(idx)),
        )

    # -- learning ----------------------------------------------------------

    def td_step(
        self,
        prev: Selection,
        reward: float,
        nxt: Selection | None,
        stream: str = "default",
    ) -> None:
        """One SARSA(lambda) update with replacing traces. ``nxt`` is the
        follow-up choice, or None for a terminal transition (no bootstrap).
        Traces are kept per stream so interleaved trajectories (one stream
        per participant) do not cross-credit."""
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        p = self.params
        for a, qm in enumerate(self.models):
            e = qm.trace(stream)
            v, ti = prev.value_indices[a], qm.tau_index(prev.taus[a])
            cur = qm.q[v, ti, prev.bucket]
            if nxt is None:
                target = reward
            else:
                nv = nxt.value_indices[a]
                nti = qm.tau_index(nxt.taus[a])
                target = reward + p.gamma * qm.q[nv, nti, nxt.bucket]
            delta = target - cur
            e[v, ti, prev.bucket] = 1.0
            qm.q += p.alpha * delta * e
            e *= p.gamma * p.lam
        self.rounds += 1

    def update(
        self,
        ctx: ContextBucket,
        action: tuple[str, ...],
        reward: float,
        next_ctx: ContextBucket,
        next_action: tuple[str, ...],
    ) -> None:
        """Spec transition update over the bundle's internal clocks:
        learn from (ctx, action, reward, next_ctx, next_action), then
        advance each agent's clocks on its chosen value."""
        prev = self.snapshot_selection(ctx, action, self._clocks)
        advanced = [
            advance(self._clocks[a], prev.value_indices[a])
            for a in range(self.schema.n_attributes)
        ]
        nxt = self.snapshot_selection(next_ctx, next_action, advanced)
        self.td_step(prev, reward, nxt)
        self._clocks = advanced

    def step(
        self,
        ctx: ContextBucket,
        action: tuple[str, ...],
        reward: float,
        next_ctx: ContextBucket,
    ) -> tuple[str, ...]:
        """On-policy driver helper: pick the follow-up action from the
        post-transition clocks, apply ``update`` with it, and return it."""
        idx = self.schema.validate_vector(action)
        advanced = [
            advance(self._clocks[a], idx[a])
            for a in range(self.schema.n_attributes)
        ]
        bucket = next_ctx.index(self.n_trait_buckets)
        nxt_idx = self._select_indices(advanced, bucket, self.epsilon())
        next_action = tuple(
            self.schema.values(p)[i] for p, i in enumerate(nxt_idx)
        )
        self.update(ctx, action, reward, next_ctx, next_action)
        return next_action

    def finish_episode(
        self, ctx: ContextBucket, action: tuple[str, ...], reward: float
    ) -> None:
        """Terminal update (no bootstrap), advance clocks, drop traces."""
        prev = self.snapshot_selection(ctx, action, self._clocks)
        self.td_step(prev, reward, None)
        self._clocks = [
            advance(self._clocks[a], prev.value_indices[a])
            for a in range(self.schema.n_attributes)
        ]
        self.end_episode()

    def apply_action(self, action: tuple[str, ...]) -> None:
        """Advance internal clocks without learning (evaluation rollouts)."""
        idx = self.schema.validate_vector(action)
        self._clocks = [
            advance(self._clocks[a], idx[a])
            for a in range(self.schema.n_attributes)
        ]

    def end_episode(self, stream: str = "default") -> None:
        for qm in self.models:
            qm.reset_trace(stream)

    # -- serialization ------------------------------------------------------

    def q_snapshot(self) -> dict:
        """Nested mapping: agent name -> value -> clock -> bucket -> Q."""
        agents = {}
        clip = self.models[0].tau_clip
        taus = [t for t in range(-clip, clip + 1) if t != 0]
        buckets = [
            f"{period}/{t}"
            for period in PERIODS
            for t in range(self.n_trait_buckets)
        ]
        for a, (name, values) in enumerate(self.schema.attributes):
            qm = self.models[a]
            agents[name] = {
                value: {
                    str(tau): {
                        buckets[b]: float(qm.q[v, qm.tau_index(tau), b])
                        for b in range(self.n_buckets)
                    }
                    for tau in taus
                }
                for v, value in enumerate(values)
            }
        return {
            "schema": [[n, list(vs)] for n, vs in self.schema.attributes],
            "tau_max": self.tau_max,
            "q_tau_clip": clip,
            "n_trait_buckets": self.n_trait_buckets,
            "rounds": self.rounds,
            "agents": agents,
        }

    def to_json(self) -> str:
        return json.dumps(self.q_snapshot(), sort_keys=True, indent=2)

    def load_snapshot(self, snap: dict) -> None:
        expect = [[n, list(vs)] for n, vs in self.schema.attributes]
        if snap["schema"] != expect:
            raise ValueError("snapshot schema does not match this bundle")
        if snap["q_tau_clip"] != self.models[0].tau_clip:
            raise ValueError("snapshot clock clip does not match this bundle")
        if snap["n_trait_buckets"] != self.n_trait_buckets:
            raise ValueError("snapshot bucket split does not match this bundle")
        self.rounds = int(snap.get("rounds", 0))
        buckets = [
            f"{period}/{t}"
            for period in PERIODS
            for t in range(self.n_trait_buckets)
        ]
        for a, (name, values) in enumerate(self.schema.attributes):
            qm = self.models[a]
            for v, value in enumerate(values):
                for tau_s, per_bucket in snap["agents"][name][value].items():
                    ti = qm.tau_index(int(tau_s))
                    for b, key in enumerate(buckets):
                        qm.q[v, ti, b] = per_bucket[key]

    @classmethod
    def from_json(cls, text: str, **kwargs) -> "AgentBundle":
        snap = json.loads(text)
        schema = AttributeSchema(
            tuple((n, tuple(vs)) for n, vs in snap["schema"])
        )
        bundle = cls(
            schema,
            tau_max=snap["tau_max"],
            params=replace(
                kwargs.pop("params", Hyperparams()),
                q_tau_clip=snap["q_tau_clip"],
            ),
            n_trait_buckets=snap["n_trait_buckets"],
            **kwargs,
        )
        bundle.load_snapshot(snap)
        return bundle


# -- ghost audit -------------------------------------------------------------


@dataclass
class GhostAuditReport:
    passed: bool
    samples: int
    counterexamples: list = field(default_factory=list)


def ghost_audit(
    bundle: AgentBundle,
    samples: int = 200,
    rng: np.random.Generator | None = None,
    lookup=None,
) -> GhostAuditReport:
    """Check that action-value lookup is a pure function of the looked-up
    value's own clock and the context bucket: any two full clock states
    agreeing at that value must produce identical lookups.

    ``lookup(agent, state, value_index, ctx) -> float`` defaults to the
    bundle's own accessor; pass a deliberately corrupted one to confirm the
    audit catches keying on other values' clocks.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if lookup is None:
        lookup = bundle.action_value
    cap = bundle.tau_max
    nonzero = [t for t in range(-cap, cap + 1) if t != 0]
    report = GhostAuditReport(passed=True, samples=samples)
    for _ in range(samples):
        a = int(rng.integers(bundle.schema.n_attributes))
        n_values = bundle.models[a].n_values
        v = int(rng.integers(n_values))
        tau = nonzero[int(rng.integers(len(nonzero)))]
        ctx = ContextBucket(
            period=PERIODS[int(rng.integers(len(PERIODS)))],
            trait_bucket=int(rng.integers(bundle.n_trait_buckets)),
        )

        def random_state() -> LsdState:
            taus = [
                nonzero[int(rng.integers(len(nonzero)))] for _ in range(n_values)
            ]
            taus[v] = tau
            return LsdState(taus=tuple(taus), tau_max=cap)

        s1, s2 = random_state(), random_state()
        q1, q2 = lookup(a, s1, v, ctx), lookup(a, s2, v, ctx)
        if q1 != q2:
            report.passed = False
            report.counterexamples.append(
                {
                    "agent": a,
                    "value_index": v,
                    "tau": tau,
                    "ctx": (ctx.period, ctx.trait_bucket),
                    "states": (s1.taus, s2.taus),
                    "lookups": (q1, q2),
                }
            )
    return report


# -- baseline policies ---------------------------------------------------------


class _EmaOnly:
    """Sentinel: prompt for a stress rating, deliver no content."""

    def __repr__(self) -> str:  # pragma: no cover
        return "EMA_ONLY"


EMA_ONLY = _EmaOnly()


def random_policy(
    schema: AttributeSchema, rng: np.random.Generator
) -> tuple[str, ...]:
    """Uniform independent draw per attribute."""
    return tuple(
        values[int(rng.integers(len(values)))] for _, values in schema.attributes
    )


def control_policy() -> _EmaOnly:
    """The no-content arm: only a momentary stress prompt is sent."""
    return EMA_ONLY


# -- planning oracle -----------------------------------------------------------

ORACLE_GUARD = 10**7


def plan_oracle(
    reward_fn, k: int, tau_max: int, horizon: int
) -> tuple[tuple[int, ...], float]:
    """Exhaustive search over all arm sequences of the given horizon from
    the all-rested start state. ``reward_fn(arm, clock)`` is evaluated on
    the clock *before* each play. Returns the lexicographically smallest
    optimal sequence and its total reward.

    Refuses instances with more than 10**7 sequences.
    """
    if k < 1 or tau_max < 1 or horizon < 1:
        raise ValueError("k, tau_max and horizon must all be >= 1")
    if k**horizon > ORACLE_GUARD:
        raise ValueError(
            f"instance too large: {k}**{horizon} sequences exceeds the "
            f"{ORACLE_GUARD} enumeration guard"
        )
    best_total = -math.inf
    best_seq: tuple[int, ...] = ()
    prefix: list[int] = []

    def search(state: LsdState, depth: int, total: float) -> None:
        nonlocal best_total, best_seq
        if depth == horizon:
            if total > best_total:  # strict: DFS order keeps lexicographic min
                best_total = total
                best_seq = tuple(prefix)
            return
        for arm in range(k):
            r = reward_fn(*reward_key(state, arm))
            prefix.append(arm)
            search(advance(state, arm), depth + 1, total + r)
            prefix.pop()

    search(initial_state(k, tau_max), 0, 0.0)
    return best_seq, best_total
