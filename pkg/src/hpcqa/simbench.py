"""Similarity comparison: query vs raw command string, query vs description.

For each query the scorer's best (top) score over the target list is taken,
and those maxima are averaged over queries. The two arms share the identical
query list and differ only in targets, which makes the comparison a direct
measurement of how much a natural-language description helps command
retrieval over the raw command string.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence


class BenchError(Exception):
    pass


class EmptyInput(BenchError):
    pass


@dataclass(frozen=True)
class BenchFixture:
    query: str
    command_raw: str
    description: str

    def __post_init__(self) -> None:
        if not (self.query and self.command_raw and self.description):
            raise ValueError("fixture fields must be non-empty")


Scorer = Callable[[str, Sequence[str]], list[float]]


def avg_top_score(queries: Sequence[str], targets: Sequence[str], scorer: Scorer) -> float:
    """Mean over queries of the maximum score against any target."""
    if not queries or not targets:
        raise EmptyInput("queries and targets must both be non-empty")
    return sum(max(scorer(query, list(targets))) for query in queries) / len(queries)


def compare_arms(fixtures: Sequence[BenchFixture], scorer: Scorer) -> tuple[float, float]:
    """Run both arms over the shared query list.

    Returns (average vs raw commands, average vs descriptions).
    """
    if not fixtures:
        raise EmptyInput("no fixtures")
    queries = [f.query for f in fixtures]
    commands = [f.command_raw for f in fixtures]
    descriptions = [f.description for f in fixtures]
    return (
        avg_top_score(queries, commands, scorer),
        avg_top_score(queries, descriptions, scorer),
    )


def render_report(avg_vs_command: float, avg_vs_description: float, scorer_name: str) -> str:
    header = f"{'Scorer':<28}  {'Avg Top Score vs Command':>26}  {'Avg Top Score vs Description':>29}"
    rule = f"{'-' * 28}  {'-' * 26}  {'-' * 29}"
    row = f"{scorer_name:<28}  {avg_vs_command:>26.4f}  {avg_vs_description:>29.4f}"
    return "\n".join([header, rule, row])


def load_fixtures(path: str | Path) -> list[BenchFixture]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise BenchError("fixtures file must be a JSON list")
    return [
        BenchFixture(
            query=row["query"],
            command_raw=row["command_raw"],
            description=row["description"],
        )
        for row in data
    ]


def load_default_fixtures() -> list[BenchFixture]:
    """The fixture set shipped with the package (our own query phrasing; not a
    published benchmark)."""
    raw = resources.files("hpcqa").joinpath("data/similarity_fixtures.json").read_text(
        encoding="utf-8"
    )
    data = json.loads(raw)
    return [
        BenchFixture(
            query=row["query"],
            command_raw=row["command_raw"],
            description=row["description"],
        )
        for row in data
    ]
