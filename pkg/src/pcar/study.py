"""Phase-structured simulated study.

Phase 1 splits the cohort into a prompt-only control group and a random-
content group; at the phase boundary the random group is re-split into a
random arm and a learned-recommendation arm. The simulation walks a
5-minute decision grid across weekdays, enforces the delivery budget,
draws engagement and stress responses from the participant models, and
feeds completed-intervention rewards back into the learner.

Everything is deterministic under the study seed: per-participant streams
are derived by hashing (seed, pid), so enlarging the cohort never perturbs
existing participants.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .agent import (
    AgentBundle,
    AttributeSchema,
    ContextBucket,
    Hyperparams,
    Selection,
    plan_oracle,
    random_policy,
)
from .catalog import Catalog, load_catalog, load_starter_catalog
from .cohort import (
    EngagementParams,
    ParticipantModel,
    accept,
    build_participant,
    control_post_stress,
    draw_preference_map,
    effect_strength,
    post_stress,
    pre_stress,
    update_engagement,
)
from .lsd import LsdState, advance, initial_state
from .scheduler import (
    BudgetState,
    TimingModel,
    calibrate_threshold,
    decide,
    eligible,
    features,
    train,
)
from .stats import SummaryRow, mean_of_means, welch_t, write_summary_csv

SCHEMA_VERSION = 1
STUDY_START = date(2024, 1, 1)  # a Monday; weeks align with calendar weeks
TICK_MINUTES = 5
DAY_TICKS = tuple(range(8 * 60, 21 * 60, TICK_MINUTES))
POST_EMA_DELAY_MINUTES = 10

DEFAULT_CONFIG: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 1,
    "n_participants": 28,
    "weeks_per_phase": 2,
    "phase1_allocation": {"control": 0.25, "random": 0.75},
    "phase2_allocation": {"random": 0.4, "pcar": 0.6},
    "budget": {
        "max_per_day": 3,
        "min_gap_minutes": 120,
        "window_start": "08:00",
        "window_end": "21:00",
        "weekdays_only": True,
    },
    "scheduler": {
        "mode": "uniform_random",  # or "model"
        "trigger_rate": 0.028,
        "threshold": 0.5,
        "budget_penalty": 0.1,
        "train_epochs": 500,
        "train_step": 0.05,
    },
    "agent": {
        "alpha": 0.1,
        "gamma": 0.9,
        "lambda": 0.6,
        "epsilon_start": 0.2,
        "epsilon_end": 0.02,
        "epsilon_decay_steps": None,  # None: sized to the expected feedback volume
        "tau_max": 6,
        "q_tau_clip": 3,
        "ghost_rollout_depth": 0,
        "pretrain_on_phase1": True,  # replay logged phase-1 feedback offline
    },
    "cohort": {
        "mean_acceptance_intervention": 0.50,
        "mean_acceptance_control": 0.77,
        "completion_rate": 0.916,
        "fatigue_decay": 0.6,
        "recovery_rounds": 3,
        "noise_sigma": 0.7,
        "fatigue_enabled": True,
        "control_post_drift": 0.15,
        "effect_best": 1.4,
        "effect_second": 0.6,
        "effect_other": 0.12,
        "engagement": {
            "enabled": True,
            "rate": 0.50,
            "reference_benefit": 0.44,
            "floor": 0.50,
            "ceiling": 1.60,
        },
    },
    "advance_on_decline": False,
    "catalog_path": None,
    "output_dir": None,
}


class ConfigError(ValueError):
    """Configuration rejected before any simulation runs."""


def _check_keys(user: dict, defaults: dict, path: str = "") -> None:
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be an object")
            _check_keys(value, defaults[key], here)


def _merge(defaults: dict, user: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(value, dict):
            out[key] = _merge(defaults[key], value)
        else:
            out[key] = value
    return out


def load_config(source: dict | str | Path) -> dict:
    """Validate a config mapping (or JSON file) against the documented
    schema: unknown keys are rejected, allocations must sum to one, and
    referenced files must exist."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    else:
        user = source
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(user, DEFAULT_CONFIG)
    cfg = _merge(DEFAULT_CONFIG, user)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version {cfg['schema_version']} != {SCHEMA_VERSION}"
        )
    if cfg["n_participants"] < 1:
        raise ConfigError("n_participants must be >= 1")
    if cfg["weeks_per_phase"] < 1:
        raise ConfigError("weeks_per_phase must be >= 1")
    for name in ("phase1_allocation", "phase2_allocation"):
        total = sum(cfg[name].values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"{name} fractions sum to {total}, expected 1")
        if any(f < 0 for f in cfg[name].values()):
            raise ConfigError(f"{name} fractions must be non-negative")
    if cfg["scheduler"]["mode"] not in ("uniform_random", "model"):
        raise ConfigError("scheduler.mode must be uniform_random or model")
    if cfg["catalog_path"] is not None and not Path(cfg["catalog_path"]).exists():
        raise ConfigError(f"catalog file not found: {cfg['catalog_path']}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def hash64(*parts) -> int:
    """Stable 64-bit stream id from arbitrary parts (documented: sha256 of
    the parts joined by unit separators, top 8 bytes, big-endian)."""
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def split_counts(n: int, fractions: dict[str, float]) -> dict[str, int]:
    """Largest-remainder rounding of n into the declared fractions; ties
    go to the earlier key."""
    raw = {k: n * f for k, f in fractions.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    leftover = n - sum(counts.values())
    order = sorted(
        fractions.keys(),
        key=lambda k: (-(raw[k] - counts[k]), list(fractions).index(k)),
    )
    for k in order[:leftover]:
        counts[k] += 1
    return counts


@dataclass
class InterventionRecord:
    """One initiated contact opportunity and everything that came of it."""

    seed: int
    pid: str
    group: str
    phase: int
    week: int
    day: int
    timestamp: str
    accepted: bool
    completed: bool
    attribute_values: tuple[str, ...] | None = None
    taus_before: tuple[int, ...] | None = None
    intervention_id: str | None = None
    pre_stress: int | None = None
    post_stress: int | None = None
    reward: int | None = None


def _record_columns(schema: AttributeSchema) -> list[str]:
    cols = ["seed", "pid", "group", "phase", "week", "day", "timestamp",
            "accepted", "completed", "intervention_id"]
    for name, _ in schema.attributes:
        cols.append(name)
    for name, _ in schema.attributes:
        cols.append(f"tau_{name}")
    cols += ["pre_stress", "post_stress", "reward"]
    return cols


def _record_row(r: InterventionRecord, schema: AttributeSchema) -> list[str]:
    def opt(v):
        return "" if v is None else str(v)

    row = [str(r.seed), r.pid, r.group, str(r.phase), str(r.week), str(r.day),
           r.timestamp, str(int(r.accepted)), str(int(r.completed)),
           opt(r.intervention_id)]
    n = schema.n_attributes
    values = r.attribute_values or (None,) * n
    taus = r.taus_before or (None,) * n
    row += [opt(v) for v in values]
    row += [opt(t) for t in taus]
    row += [opt(r.pre_stress), opt(r.post_stress), opt(r.reward)]
    return row


@dataclass
class StudyLog:
    """Append-only event log plus run metadata."""

    records: list[InterventionRecord]
    meta: dict
    schema: AttributeSchema

    def records_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_record_columns(self.schema))
        for r in self.records:
            writer.writerow(_record_row(r, self.schema))
        return buf.getvalue()

    def log_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.records_csv().encode())
        h.update(self.meta["config_hash"].encode())
        return h.hexdigest()

    def save(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records_path = out / "records.csv"
        records_path.write_text(self.records_csv(), encoding="utf-8")
        meta = dict(self.meta)
        meta["log_hash"] = self.log_hash()
        meta_path = out / "meta.json"
        meta_path.write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return {"records": records_path, "meta": meta_path}


def load_log(path: str | Path) -> StudyLog:
    """Read a saved log; ``path`` is the run directory or its records.csv."""
    path = Path(path)
    if path.is_dir():
        records_path, meta_path = path / "records.csv", path / "meta.json"
    else:
        records_path, meta_path = path, path.parent / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    schema = AttributeSchema(
        tuple((n, tuple(vs)) for n, vs in meta["attribute_schema"])
    )
    records = []
    with records_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            n = schema.n_attributes
            values = tuple(row[schema.name(i)] for i in range(n))
            taus = tuple(row[f"tau_{schema.name(i)}"] for i in range(n))
            has_action = all(values)
            records.append(
                InterventionRecord(
                    seed=int(row["seed"]),
                    pid=row["pid"],
                    group=row["group"],
                    phase=int(row["phase"]),
                    week=int(row["week"]),
                    day=int(row["day"]),
                    timestamp=row["timestamp"],
                    accepted=row["accepted"] == "1",
                    completed=row["completed"] == "1",
                    attribute_values=values if has_action else None,
                    taus_before=tuple(int(t) for t in taus) if has_action else None,
                    intervention_id=row["intervention_id"] or None,
                    pre_stress=int(row["pre_stress"]) if row["pre_stress"] else None,
                    post_stress=int(row["post_stress"]) if row["post_stress"] else None,
                    reward=int(row["reward"]) if row["reward"] else None,
                )
            )
    return StudyLog(records=records, meta=meta, schema=schema)


@dataclass
class _ParticipantState:
    model: ParticipantModel
    group: str
    rng: np.random.Generator
    clocks: list[LsdState]
    budget: BudgetState
    engagement: float = 1.0
    pending: tuple | None = None  # (Selection, reward) awaiting its successor


def _date_of_day(day_idx: int) -> date:
    week, dow = divmod(day_idx, 5)
    return STUDY_START + timedelta(days=week * 7 + dow)


def _parse_hhmm(text: str) -> int:
    h, m = text.split(":")
    return int(h) * 60 + int(m)


def run_study(cfg: dict | str | Path) -> StudyLog:
    """Simulate the full two-phase study described by the config."""
    cfg = load_config(cfg)  # idempotent for already-validated configs
    seed = cfg["seed"]
    n = cfg["n_participants"]
    weeks = cfg["weeks_per_phase"]
    days_total = weeks * 2 * 5
    phase2_first_day = weeks * 5

    catalog = (
        load_catalog(cfg["catalog_path"])
        if cfg["catalog_path"]
        else load_starter_catalog()
    )
    schema = catalog.schema
    ccfg = cfg["cohort"]
    engagement_params = EngagementParams(**ccfg["engagement"])

    pids = [f"p{i + 1:03d}" for i in range(n)]
    alloc_rng = np.random.default_rng(hash64(seed, "alloc"))
    shuffled = [pids[i] for i in alloc_rng.permutation(n)]
    counts = split_counts(n, cfg["phase1_allocation"])
    group_of: dict[str, str] = {}
    cut = 0
    for name in cfg["phase1_allocation"]:
        for pid in shuffled[cut:cut + counts[name]]:
            group_of[pid] = name
        cut += counts[name]

    prefs = draw_preference_map(
        np.random.default_rng(hash64(seed, "prefs")), schema
    )
    bcfg = cfg["budget"]
    participant_kwargs = dict(
        schema=schema,
        effect_best=ccfg["effect_best"],
        effect_second=ccfg["effect_second"],
        effect_other=ccfg["effect_other"],
        fatigue_decay=ccfg["fatigue_decay"],
        recovery_rounds=ccfg["recovery_rounds"],
        noise_sigma=ccfg["noise_sigma"],
        completion_rate=ccfg["completion_rate"],
        control_post_drift=ccfg["control_post_drift"],
        fatigue_enabled=ccfg["fatigue_enabled"],
        engagement=engagement_params,
    )
    states: dict[str, _ParticipantState] = {}
    for i, pid in enumerate(pids):
        target = (
            ccfg["mean_acceptance_control"]
            if group_of[pid] == "control"
            else ccfg["mean_acceptance_intervention"]
        )
        model = build_participant(
            pid=pid,
            index=i,
            rng=np.random.default_rng(hash64(seed, pid, "model")),
            prefs=prefs,
            mean_acceptance=target,
            seed=hash64(seed, pid),
            **participant_kwargs,
        )
        states[pid] = _ParticipantState(
            model=model,
            group=group_of[pid],
            rng=np.random.default_rng(hash64(seed, pid, "sim")),
            clocks=[
                initial_state(len(schema.values(a)), cfg["agent"]["tau_max"])
                for a in range(schema.n_attributes)
            ],
            budget=BudgetState(
                max_per_day=bcfg["max_per_day"],
                min_gap_minutes=bcfg["min_gap_minutes"],
                window_start_minute=_parse_hhmm(bcfg["window_start"]),
                window_end_minute=_parse_hhmm(bcfg["window_end"]),
                weekdays_only=bcfg["weekdays_only"],
            ),
        )

    bundle: AgentBundle | None = None
    # phase-1 feedback chains, replayed into the learner at the boundary:
    # pid -> day index -> [(selection, reward), ...]
    replay_buffer: dict[str, dict[int, list]] = {}

    scfg = cfg["scheduler"]
    model_mode = scfg["mode"] == "model"
    timing_model = TimingModel.budget_init(
        daily_budget=bcfg["max_per_day"],
        threshold=scfg["threshold"],
        budget_penalty=scfg["budget_penalty"],
    )
    if model_mode:
        # cold start: set the bar so the untrained scorer still delivers
        timing_model = calibrate_threshold(
            timing_model, daily_budget=bcfg["max_per_day"]
        )
    timing_history: list = []

    records: list[InterventionRecord] = []

    def reallocate_phase2() -> AgentBundle:
        random_pids = [pid for pid in pids if group_of[pid] == "random"]
        order = [random_pids[i] for i in alloc_rng.permutation(len(random_pids))]
        counts2 = split_counts(len(order), cfg["phase2_allocation"])
        cut2 = 0
        for name in cfg["phase2_allocation"]:
            for pid in order[cut2:cut2 + counts2[name]]:
                group_of[pid] = name
                states[pid].group = name
            cut2 += counts2[name]
        acfg = cfg["agent"]
        n_pcar = sum(1 for pid in pids if group_of[pid] == "pcar")
        replay_n = sum(
            len(chain)
            for chains in replay_buffer.values()
            for chain in chains.values()
        )
        if not acfg["pretrain_on_phase1"]:
            replay_n = 0
        decay = acfg["epsilon_decay_steps"]
        if decay is None:
            # size the schedule to replayed plus expected live feedback
            expected_live = (
                n_pcar * weeks * 5 * bcfg["max_per_day"]
                * ccfg["mean_acceptance_intervention"] * ccfg["completion_rate"]
            )
            decay = max(1, replay_n + int(expected_live))
        params = Hyperparams(
            alpha=acfg["alpha"],
            gamma=acfg["gamma"],
            lam=acfg["lambda"],
            epsilon_start=acfg["epsilon_start"],
            epsilon_end=acfg["epsilon_end"],
            epsilon_decay_steps=decay,
            q_tau_clip=acfg["q_tau_clip"],
            ghost_rollout_depth=acfg["ghost_rollout_depth"],
        )
        new_bundle = AgentBundle(
            schema,
            tau_max=acfg["tau_max"],
            params=params,
            n_trait_buckets=2,
            seed=hash64(seed, "bundle"),
        )
        if acfg["pretrain_on_phase1"]:
            for pid in pids:  # fixed order keeps the run reproducible
                for day in sorted(replay_buffer.get(pid, {})):
                    chain = replay_buffer[pid][day]
                    for j, (sel, r) in enumerate(chain):
                        nxt = chain[j + 1][0] if j + 1 < len(chain) else None
                        new_bundle.td_step(sel, r, nxt, stream=f"replay-{pid}")
                    new_bundle.end_episode(stream=f"replay-{pid}")
        return new_bundle

    for day_idx in range(days_total):
        if day_idx == phase2_first_day:
            bundle = reallocate_phase2()
        phase = 1 if day_idx < phase2_first_day else 2
        week = day_idx // 5 + 1
        day_date = _date_of_day(day_idx)

        for pid in pids:
            st = states[pid]
            st.budget.start_day()
            p = st.model
            for minute in DAY_TICKS:
                now = datetime.combine(day_date, time(minute // 60, minute % 60))
                if model_mode:
                    if not eligible(st.budget, now):
                        continue
                    x = features(now, st.budget)
                    fire = decide(timing_model, st.budget, now)
                    label = None
                else:
                    if not eligible(st.budget, now):
                        continue
                    fire = st.rng.random() < scfg["trigger_rate"]
                if not fire:
                    if model_mode:
                        timing_history.append((x, None, day_idx))
                    continue
                st.budget.record_delivery(now)
                hour = minute // 60
                engaged = accept(p, hour, st.rng, engagement=st.engagement)
                if model_mode:
                    timing_history.append((x, 1.0 if engaged else 0.0, day_idx))
                base = dict(
                    seed=seed, pid=pid, group=st.group, phase=phase, week=week,
                    day=day_idx + 1, timestamp=now.isoformat(),
                )
                if not engaged:
                    records.append(
                        InterventionRecord(accepted=False, completed=False, **base)
                    )
                    continue
                pre = pre_stress(p, hour, st.rng)
                post_time = now + timedelta(minutes=POST_EMA_DELAY_MINUTES)
                if st.group == "control":
                    completed = st.rng.random() < p.completion_rate
                    post = reward = None
                    if completed:
                        post = control_post_stress(p, post_time.hour, st.rng)
                        reward = pre - post
                    records.append(
                        InterventionRecord(
                            accepted=True, completed=completed,
                            pre_stress=pre, post_stress=post, reward=reward,
                            **base,
                        )
                    )
                    continue
                ctx = ContextBucket.from_hour(hour, p.trait_bucket)
                if st.group == "pcar":
                    action = bundle.select_action(ctx, clocks=st.clocks)
                else:
                    action = random_policy(schema, st.rng)
                idx = schema.validate_vector(action)
                taus = tuple(st.clocks[a].taus[i] for a, i in enumerate(idx))
                entry = _resolve_entry(catalog, action, st.rng)
                completed = st.rng.random() < p.completion_rate
                post = reward = None
                if completed:
                    post = post_stress(p, pre, idx, taus, ctx, st.rng)
                    reward = pre - post
                    felt = effect_strength(p, idx, taus, ctx)
                    st.engagement = update_engagement(p, st.engagement, felt)
                    if st.group == "pcar":
                        sel = bundle.snapshot_selection(ctx, action, st.clocks)
                        if st.pending is not None:
                            prev_sel, prev_reward = st.pending
                            bundle.td_step(prev_sel, prev_reward, sel, stream=pid)
                        st.pending = (sel, reward)
                    elif phase == 1:
                        sel = Selection(
                            bucket=ctx.index(2),
                            value_indices=idx,
                            taus=taus,
                        )
                        replay_buffer.setdefault(pid, {}).setdefault(
                            day_idx, []
                        ).append((sel, reward))
                    st.clocks = [
                        advance(st.clocks[a], i) for a, i in enumerate(idx)
                    ]
                elif cfg["advance_on_decline"]:
                    # opt-in: count delivered-but-unfinished content as a round
                    st.clocks = [
                        advance(st.clocks[a], i) for a, i in enumerate(idx)
                    ]
                records.append(
                    InterventionRecord(
                        accepted=True, completed=completed,
                        attribute_values=action, taus_before=taus,
                        intervention_id=entry.id,
                        pre_stress=pre, post_stress=post, reward=reward,
                        **base,
                    )
                )
            # participant-day boundary: flush the open transition, drop traces
            if st.pending is not None and bundle is not None:
                sel, reward = st.pending
                bundle.td_step(sel, reward, None, stream=pid)
                bundle.end_episode(stream=pid)
                st.pending = None

        if model_mode and timing_history:
            # nightly: refit from scratch on everything seen so far
            fresh = TimingModel.budget_init(
                daily_budget=bcfg["max_per_day"],
                threshold=scfg["threshold"],
                budget_penalty=scfg["budget_penalty"],
            )
            labeled = any(lbl is not None for _, lbl, _ in timing_history)
            if labeled:
                timing_model = train(
                    fresh,
                    timing_history,
                    daily_budget=bcfg["max_per_day"],
                    epochs=scfg["train_epochs"],
                    step=scfg["train_step"],
                )
                timing_model = calibrate_threshold(
                    timing_model, daily_budget=bcfg["max_per_day"]
                )

    records.sort(key=lambda r: (r.pid, r.day, r.timestamp))
    meta = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "n_participants": n,
        "weeks_per_phase": weeks,
        "start_date": STUDY_START.isoformat(),
        "attribute_schema": [[n_, list(vs)] for n_, vs in schema.attributes],
        "phase2_groups": {pid: group_of[pid] for pid in pids},
    }
    log = StudyLog(records=records, meta=meta, schema=schema)
    _assert_budget_safety(log)
    return log


def _resolve_entry(catalog: Catalog, action: tuple[str, ...], rng):
    from .catalog import resolve

    return resolve(catalog, action, rng)


def _assert_budget_safety(log: StudyLog) -> None:
    """Defense in depth: re-check every hard rule on the final log."""
    cfg = log.meta["config"]["budget"]
    per_day: dict[tuple[str, int], list[datetime]] = {}
    for r in log.records:
        per_day.setdefault((r.pid, r.day), []).append(
            datetime.fromisoformat(r.timestamp)
        )
    lo, hi = _parse_hhmm(cfg["window_start"]), _parse_hhmm(cfg["window_end"])
    for (pid, day), stamps in per_day.items():
        if len(stamps) > cfg["max_per_day"]:
            raise AssertionError(f"{pid} day {day}: {len(stamps)} contacts")
        stamps.sort()
        for a, b in zip(stamps, stamps[1:]):
            if (b - a).total_seconds() / 60.0 < cfg["min_gap_minutes"]:
                raise AssertionError(f"{pid} day {day}: gap rule violated")
        for t in stamps:
            minute = t.hour * 60 + t.minute
            if not lo <= minute < hi:
                raise AssertionError(f"{pid} day {day}: {t} outside window")
            if cfg["weekdays_only"] and t.weekday() >= 5:
                raise AssertionError(f"{pid} day {day}: weekend contact")


# -- reporting -----------------------------------------------------------------


def _metric_rows(log: StudyLog) -> list[dict]:
    rows = []
    for r in log.records:
        rows.append(
            {
                "group": r.group,
                "phase": r.phase,
                "week": r.week,
                "metric": "acceptance",
                "pid": r.pid,
                "value": 1.0 if r.accepted else 0.0,
            }
        )
        if r.completed and r.reward is not None:
            rows.append(
                {
                    "group": r.group,
                    "phase": r.phase,
                    "week": r.week,
                    "metric": "reward",
                    "pid": r.pid,
                    "value": float(r.reward),
                }
            )
    return rows


def weekly_summary(log: StudyLog) -> list[SummaryRow]:
    rows = mean_of_means(_metric_rows(log), group_by=("group", "phase", "week", "metric"))
    rows.sort(key=lambda s: (s.metric, s.group, s.phase, s.week))
    return rows


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def phase_deltas(summary: list[SummaryRow]) -> list[dict]:
    """Within-phase change: last week's mean minus the first week's, per
    (group, phase, metric) -- the retention panel of the weekly figures."""
    cells: dict[tuple, dict[int, float]] = {}
    for s in summary:
        cells.setdefault((s.group, s.phase, s.metric), {})[s.week] = s.mean
    out = []
    for (group, phase, metric), weeks in sorted(cells.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1])):
        first, last = min(weeks), max(weeks)
        out.append(
            {
                "group": group,
                "phase": phase,
                "metric": metric,
                "first_week": first,
                "last_week": last,
                "first_week_mean": weeks[first],
                "last_week_mean": weeks[last],
                "delta": weeks[last] - weeks[first],
            }
        )
    return out


def welch_table(log: StudyLog) -> list[dict]:
    """Pairwise group comparisons of per-participant phase means."""
    per: dict[tuple[str, int, str], dict[str, list[float]]] = {}
    for row in _metric_rows(log):
        key = (row["metric"], row["phase"], row["group"])
        per.setdefault(key, {}).setdefault(row["pid"], []).append(row["value"])
    out = []
    metrics = sorted({k[0] for k in per})
    phases = sorted({k[1] for k in per})
    for metric in metrics:
        for phase in phases:
            groups = sorted(g for (m, ph, g) in per if m == metric and ph == phase)
            for i, ga in enumerate(groups):
                for gb in groups[i + 1:]:
                    xa = [float(np.mean(v)) for v in per[(metric, phase, ga)].values()]
                    xb = [float(np.mean(v)) for v in per[(metric, phase, gb)].values()]
                    if len(xa) < 2 or len(xb) < 2:
                        continue
                    try:
                        res = welch_t(xa, xb)
                    except ValueError:
                        continue
                    out.append(
                        {
                            "metric": metric,
                            "phase": phase,
                            "group_a": ga,
                            "group_b": gb,
                            "n_a": len(xa),
                            "n_b": len(xb),
                            "t": res.t,
                            "df": res.df,
                            "p": res.p,
                        }
                    )
    return out


def report(log: StudyLog, out_dir: str | Path) -> dict[str, Path]:
    """Emit the full record CSV, weekly summaries, within-phase deltas,
    plot-ready JSON series, and the pairwise comparison table."""
    if not log.records:
        raise ValueError("empty log")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["records"] = out / "records.csv"
    paths["records"].write_text(log.records_csv(), encoding="utf-8")

    summary = weekly_summary(log)
    paths["weekly_summary"] = out / "weekly_summary.csv"
    with paths["weekly_summary"].open("w", encoding="utf-8", newline="") as fh:
        write_summary_csv(summary, fh)

    deltas = phase_deltas(summary)
    paths["phase_deltas"] = out / "phase_deltas.csv"
    with paths["phase_deltas"].open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["group", "phase", "metric", "first_week", "last_week",
             "first_week_mean", "last_week_mean", "delta"]
        )
        for d in deltas:
            writer.writerow(
                [d["group"], d["phase"], d["metric"], d["first_week"],
                 d["last_week"], _fmt(d["first_week_mean"]),
                 _fmt(d["last_week_mean"]), _fmt(d["delta"])]
            )

    tests = welch_table(log)
    paths["welch_tests"] = out / "welch_tests.csv"
    with paths["welch_tests"].open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["metric", "phase", "group_a", "group_b", "n_a", "n_b", "t", "df", "p"]
        )
        for t in tests:
            writer.writerow(
                [t["metric"], t["phase"], t["group_a"], t["group_b"],
                 t["n_a"], t["n_b"], _fmt(t["t"]), _fmt(t["df"]), _fmt(t["p"])]
            )

    series: dict[tuple, dict] = {}
    for s in summary:
        key = (s.group, s.phase, s.metric)
        entry = series.setdefault(
            key,
            {"group": s.group, "phase": s.phase, "metric": s.metric,
             "weeks": [], "mean": [], "ci_low": [], "ci_high": []},
        )
        entry["weeks"].append(s.week)
        entry["mean"].append(s.mean)
        entry["ci_low"].append(s.ci_low)
        entry["ci_high"].append(s.ci_high)
    plot_doc = {
        "schema_version": SCHEMA_VERSION,
        "series": [series[k] for k in sorted(series)],
    }
    paths["plot_data"] = out / "plot_data.json"
    paths["plot_data"].write_text(
        json.dumps(plot_doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return paths


# -- learner-vs-oracle check -----------------------------------------------------


@dataclass
class OracleCheckResult:
    k: int
    tau_max: int
    horizon: int
    optimal_sequence: tuple[int, ...]
    optimal_total: float
    fractions: list[float]
    threshold: float
    required: int
    passed: bool


def benchmark_reward_fn(rested: float = 1.0, fatigued: float = 0.2,
                        arm_bonus: float = 0.1):
    """Reward used by the standard benchmark instance: full value on a
    rested clock, a stub on a tired one, plus a small per-arm offset."""

    def fn(arm: int, tau: int) -> float:
        return (rested if tau > 0 else fatigued) + arm_bonus * arm

    return fn


def train_on_instance(
    k: int,
    tau_max: int,
    horizon: int,
    episodes: int,
    seed: int,
    reward_fn,
    params: Hyperparams | None = None,
) -> float:
    """Train a single-attribute learner episodically on the instance and
    return the greedy policy's total reward."""
    schema = AttributeSchema((("arm", tuple(str(i) for i in range(k))),))
    if params is None:
        params = Hyperparams(
            epsilon_start=0.2, epsilon_end=0.0,
            epsilon_decay_steps=episodes * horizon,
        )
    bundle = AgentBundle(
        schema, tau_max=tau_max, params=params, n_trait_buckets=1, seed=seed
    )
    ctx = ContextBucket(period="morning", trait_bucket=0)
    for _ in range(episodes):
        bundle.reset_clocks()
        action = bundle.select_action(ctx)
        for t in range(horizon):
            arm = int(action[0])
            r = reward_fn(arm, bundle.clocks[0].taus[arm])
            if t == horizon - 1:
                bundle.finish_episode(ctx, action, r)
            else:
                action = bundle.step(ctx, action, r, ctx)
    bundle.reset_clocks()
    total = 0.0
    for _ in range(horizon):
        action = bundle.greedy_action(ctx)
        arm = int(action[0])
        total += reward_fn(arm, bundle.clocks[0].taus[arm])
        bundle.apply_action(action)
    return total


def oracle_check(
    k: int,
    tau_max: int,
    horizon: int,
    seeds: int = 20,
    episodes: int = 5000,
    rested: float = 1.0,
    fatigued: float = 0.2,
    arm_bonus: float = 0.1,
    threshold: float = 0.95,
    required: int | None = None,
) -> OracleCheckResult:
    """Compare episodic training against the brute-force planner on one
    instance; passes when enough seeds reach the threshold fraction of the
    optimal total."""
    reward_fn = benchmark_reward_fn(rested, fatigued, arm_bonus)
    seq, best = plan_oracle(reward_fn, k, tau_max, horizon)
    if required is None:
        required = max(1, int(math.ceil(seeds * 0.9)))
    fractions = []
    for s in range(seeds):
        total = train_on_instance(
            k, tau_max, horizon, episodes, hash64("oracle", s), reward_fn
        )
        fractions.append(total / best if best else 1.0)
    passed = sum(f >= threshold for f in fractions) >= required
    return OracleCheckResult(
        k=k, tau_max=tau_max, horizon=horizon,
        optimal_sequence=seq, optimal_total=best,
        fractions=fractions, threshold=threshold, required=required,
        passed=passed,
    )


# -- trained-timing evaluation -----------------------------------------------------


@dataclass
class TimingComparison:
    trained_acceptance: list[float]
    uniform_acceptance: list[float]
    trained_daily: list[float]
    uniform_daily: list[float]
    t: float
    p: float


def _timing_day_dates(n_days: int, start_day: int = 0):
    return [_date_of_day(start_day + d) for d in range(n_days)]


def timing_comparison(
    seeds: int = 20,
    n_participants: int = 20,
    history_days: int = 30,
    eval_days: int = 10,
    mean_acceptance: float = 0.5,
    trigger_rate: float = 3 / 84,
    epochs: int = 500,
    step: float = 0.05,
    budget_penalty: float = 0.1,
    daily_budget: int = 3,
) -> TimingComparison:
    """Per seed: collect cohort-wide feedback under uniform-random
    triggering (the nightly trainer pools every participant's history),
    train the timing model, then compare its cohort acceptance against a
    uniform baseline matched to the trained policy's realized daily rate."""
    from .cohort import default_cohort

    trained_acc, uniform_acc, trained_daily, uniform_daily = [], [], [], []
    for s in range(seeds):
        rng = np.random.default_rng(hash64("timing", s))
        cohort = default_cohort(
            n_participants, rng, mean_acceptance=mean_acceptance
        )

        def run_uniform(days, q, collect, day0):
            rows, hits, n = [], 0, 0
            for pi, participant in enumerate(cohort):
                for d in range(days):
                    day_date = _date_of_day(day0 + d)
                    budget = BudgetState()
                    budget.start_day()
                    for minute in DAY_TICKS:
                        now = datetime.combine(
                            day_date, time(minute // 60, minute % 60)
                        )
                        if not eligible(budget, now):
                            continue
                        x = features(now, budget)
                        label = None
                        if rng.random() < q:
                            budget.record_delivery(now)
                            ok = accept(participant, minute // 60, rng)
                            label = 1.0 if ok else 0.0
                            hits += ok
                            n += 1
                        if collect:
                            # budget pressure groups by participant-day
                            rows.append((x, label, (pi, d)))
            per_day = n / (days * len(cohort)) if days else 0.0
            return rows, (hits / n if n else 0.0), per_day

        rows, _, _ = run_uniform(history_days, trigger_rate, True, 0)
        model = train(
            TimingModel.budget_init(daily_budget, budget_penalty=budget_penalty),
            rows, daily_budget=daily_budget, epochs=epochs, step=step,
        )
        model = calibrate_threshold(model, daily_budget=daily_budget)

        hits = n = 0
        for participant in cohort:
            for d in range(eval_days):
                day_date = _date_of_day(history_days + d)
                budget = BudgetState()
                budget.start_day()
                for minute in DAY_TICKS:
                    now = datetime.combine(day_date, time(minute // 60, minute % 60))
                    if decide(model, budget, now):
                        budget.record_delivery(now)
                        ok = accept(participant, minute // 60, rng)
                        hits += ok
                        n += 1
        t_acc = hits / n if n else 0.0
        t_rate = n / (eval_days * len(cohort))
        trained_acc.append(t_acc)
        trained_daily.append(t_rate)

        # uniform baseline matched to the trained policy's realized budget;
        # the 1.2 factor offsets truncation by the daily cap
        blocked = 120 / TICK_MINUTES
        q_matched = 1.2 * t_rate / max(len(DAY_TICKS) - blocked * t_rate, 1.0)
        _, u_acc, u_rate = run_uniform(
            eval_days, q_matched, False, history_days + eval_days
        )
        uniform_acc.append(u_acc)
        uniform_daily.append(u_rate)

    res = welch_t(trained_acc, uniform_acc)
    return TimingComparison(
        trained_acceptance=trained_acc,
        uniform_acceptance=uniform_acc,
        trained_daily=trained_daily,
        uniform_daily=uniform_daily,
        t=res.t,
        p=res.p,
    )


# -- parameter sweeps -----------------------------------------------------------


def _set_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config parameter: {dotted}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config parameter: {dotted}")
    node[parts[-1]] = value


def sweep(cfg: dict | str | Path, parameter: str, values: list) -> list[dict]:
    """Run the study once per parameter value (derived sub-seeds unless the
    swept parameter is the seed itself) and tabulate headline metrics."""
    base = load_config(cfg)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        variant = copy.deepcopy(base)
        _set_path(variant, parameter, value)
        if parameter != "seed":
            variant["seed"] = hash64(base["seed"], "sweep", parameter, repr(value))
        variant = load_config(variant)
        log = run_study(variant)
        final_week = max(r.week for r in log.records)
        groups = sorted({r.group for r in log.records})
        for group in groups:
            rewards: dict[str, list[float]] = {}
            accepts: dict[str, list[float]] = {}
            final_rewards: dict[str, list[float]] = {}
            for r in log.records:
                if r.group != group:
                    continue
                accepts.setdefault(r.pid, []).append(1.0 if r.accepted else 0.0)
                if r.reward is not None:
                    rewards.setdefault(r.pid, []).append(float(r.reward))
                    if r.week == final_week:
                        final_rewards.setdefault(r.pid, []).append(float(r.reward))

            def mom(per_pid):
                if not per_pid:
                    return float("nan")
                return float(np.mean([np.mean(v) for v in per_pid.values()]))

            rows.append(
                {
                    "parameter": parameter,
                    "value": value,
                    "seed": variant["seed"],
                    "group": group,
                    "mean_acceptance": mom(accepts),
                    "mean_reward": mom(rewards),
                    "final_week_reward": mom(final_rewards),
                }
            )
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["parameter", "value", "seed", "group",
             "mean_acceptance", "mean_reward", "final_week_reward"]
        )
        for r in rows:
            writer.writerow(
                [r["parameter"], r["value"], r["seed"], r["group"],
                 _fmt(r["mean_acceptance"]), _fmt(r["mean_reward"]),
                 _fmt(r["final_week_reward"])]
            )
