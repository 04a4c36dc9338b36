"""Intervention content pool.

A catalog is a validated set of short (<= 60 s) exercises, each tagged
with the three action attributes the recommender selects over. Content
ships as a tab-separated file with one row per conversation node; rows
sharing an id form one intervention's dialog.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .agent import AttributeSchema

DEFAULT_SCHEMA = AttributeSchema(
    (
        (
            "emotional_regulation",
            (
                "response_modulation",
                "attention_deployment",
                "cognitive_change",
                "situation_modification",
            ),
        ),
        (
            "therapy_group",
            (
                "positive_psychology",
                "cognitive_behavioral",
                "meta_cognitive",
                "somatic",
            ),
        ),
        ("location", ("indoor", "outdoor", "both")),
    )
)

COLUMNS = (
    "id",
    "node",
    "text",
    "intervention_type",
    "emotional_regulation",
    "therapy_group",
    "location",
    "duration_seconds",
)

MAX_DURATION_SECONDS = 60
_NODE_RE = re.compile(r"^node_id_([1-9])$")


class CatalogError(ValueError):
    """Raised on parse or schema violations; carries the offending row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class InterventionSpec:
    """One deliverable exercise: ordered dialog lines plus its tags."""

    id: str
    intervention_type: str
    emotional_regulation: str
    therapy_group: str
    location: str
    duration_seconds: int
    node_texts: tuple[tuple[str, str], ...]  # (node id, line), ordered

    @property
    def attribute_values(self) -> tuple[str, str, str]:
        return (self.emotional_regulation, self.therapy_group, self.location)


@dataclass(frozen=True)
class Catalog:
    schema: AttributeSchema
    entries: tuple[InterventionSpec, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise CatalogError("catalog is empty")

    def by_id(self, entry_id: str) -> InterventionSpec:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)


def _validate_entry(
    entry_id: str,
    rows: list[tuple[int, dict]],
    schema: AttributeSchema,
) -> InterventionSpec:
    first_line, first = rows[0]
    for line, row in rows[1:]:
        for col in ("intervention_type", "emotional_regulation", "therapy_group",
                    "location", "duration_seconds"):
            if row[col] != first[col]:
                raise CatalogError(
                    f"entry {entry_id!r} changes {col} across its rows", line
                )
    attrs = (
        first["emotional_regulation"],
        first["therapy_group"],
        first["location"],
    )
    for i, value in enumerate(attrs):
        if value not in schema.values(i):
            raise CatalogError(
                f"{value!r} is not a valid {schema.name(i)}", first_line
            )
    raw = first["duration_seconds"].strip()
    duration = MAX_DURATION_SECONDS if not raw else int(raw)
    if not 1 <= duration <= MAX_DURATION_SECONDS:
        raise CatalogError(
            f"duration {duration}s outside 1..{MAX_DURATION_SECONDS}", first_line
        )
    nodes = []
    seen = set()
    for line, row in rows:
        node = row["node"]
        if not _NODE_RE.match(node):
            raise CatalogError(f"bad node id {node!r}", line)
        if node in seen:
            raise CatalogError(
                f"entry {entry_id!r} repeats node {node!r}", line
            )
        if not row["text"].strip():
            raise CatalogError(f"empty dialog text for node {node!r}", line)
        seen.add(node)
        nodes.append((node, row["text"]))
    nodes.sort(key=lambda nt: nt[0])
    return InterventionSpec(
        id=entry_id,
        intervention_type=first["intervention_type"],
        emotional_regulation=attrs[0],
        therapy_group=attrs[1],
        location=attrs[2],
        duration_seconds=duration,
        node_texts=tuple(nodes),
    )


def load_catalog(path: str | Path, schema: AttributeSchema = DEFAULT_SCHEMA) -> Catalog:
    """Parse and validate a tab-separated catalog file.

    Raises CatalogError with the offending 1-based row number on parse
    errors, unknown attribute values, or inconsistent entries.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise CatalogError("file has no header row") from None
        if tuple(header) != COLUMNS:
            raise CatalogError(
                f"header must be {list(COLUMNS)}, got {header}", 1
            )
        grouped: dict[str, list[tuple[int, dict]]] = {}
        order: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                raise CatalogError(
                    f"expected {len(COLUMNS)} columns, got {len(row)}", line_no
                )
            record = dict(zip(COLUMNS, row))
            entry_id = record["id"].strip()
            if not entry_id:
                raise CatalogError("empty id", line_no)
            if entry_id not in grouped:
                grouped[entry_id] = []
                order.append(entry_id)
            grouped[entry_id].append((line_no, record))
    entries = tuple(_validate_entry(eid, grouped[eid], schema) for eid in order)
    return Catalog(schema=schema, entries=entries)


def starter_catalog_path() -> Path:
    return Path(resources.files("pcar").joinpath("data/starter_catalog.tsv"))


def load_starter_catalog() -> Catalog:
    """The 16-entry pool bundled with the package."""
    return load_catalog(starter_catalog_path())


def match_score(
    entry: InterventionSpec, vector: tuple[str, ...], schema: AttributeSchema
) -> tuple[int, int]:
    """(matched, exact) attribute counts for ranking. A location of
    "both" on either side counts as matched but not exact."""
    matched = exact = 0
    for i, (want, have) in enumerate(zip(vector, entry.attribute_values)):
        if want == have:
            matched += 1
            exact += 1
        elif schema.name(i) == "location" and "both" in (want, have):
            matched += 1
    return matched, exact


def resolve(
    catalog: Catalog, vector: tuple[str, ...], rng: np.random.Generator
) -> InterventionSpec:
    """Pick the entry matching the most attribute values (exact matches
    preferred over "both"-compatible location matches); draw uniformly
    among equally good entries."""
    catalog.schema.validate_vector(vector)
    scored = [
        (match_score(e, vector, catalog.schema), e) for e in catalog.entries
    ]
    best = max(score for score, _ in scored)
    pool = [e for score, e in scored if score == best]
    return pool[int(rng.integers(len(pool)))]


def catalog_to_json(catalog: Catalog) -> str:
    doc = {
        "schema": [[n, list(vs)] for n, vs in catalog.schema.attributes],
        "entries": [
            {
                "id": e.id,
                "intervention_type": e.intervention_type,
                "emotional_regulation": e.emotional_regulation,
                "therapy_group": e.therapy_group,
                "location": e.location,
                "duration_seconds": e.duration_seconds,
                "node_texts": [[n, t] for n, t in e.node_texts],
            }
            for e in catalog.entries
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def catalog_from_json(text: str) -> Catalog:
    doc = json.loads(text)
    schema = AttributeSchema(tuple((n, tuple(vs)) for n, vs in doc["schema"]))
    entries = tuple(
        InterventionSpec(
            id=e["id"],
            intervention_type=e["intervention_type"],
            emotional_regulation=e["emotional_regulation"],
            therapy_group=e["therapy_group"],
            location=e["location"],
            duration_seconds=e["duration_seconds"],
            node_texts=tuple((n, t) for n, t in e["node_texts"]),
        )
        for e in doc["entries"]
    )
    return Catalog(schema=schema, entries=entries)
