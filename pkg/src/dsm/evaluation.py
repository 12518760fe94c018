"""Retrieval metrics: mean average precision and mean precision at 10.

Ground truth per query lists easy positives, hard positives and junk; the
medium setup scores easy + hard as positive, the hard setup scores only hard
positives and demotes easy ones to junk.  Junk ids are removed from a ranking
before any precision is computed, and queries without positives are excluded
from the means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DataError

SETUPS = ("medium", "hard")


@dataclass
class QueryGroundTruth:
    easy: set = field(default_factory=set)
    hard: set = field(default_factory=set)
    junk: set = field(default_factory=set)

    def __post_init__(self):
        self.easy, self.hard, self.junk = set(self.easy), set(self.hard), set(self.junk)
        overlap = (self.easy & self.hard) | (self.easy & self.junk) | (self.hard & self.junk)
        if overlap:
            raise DataError(f"ground-truth sets overlap on {sorted(overlap)}")

    def positives(self, setup: str) -> set:
        if setup == "medium":
            return self.easy | self.hard
        if setup == "hard":
            return set(self.hard)
        raise DataError(f"unknown setup {setup!r}")

    def distractors(self, setup: str) -> set:
        """Ids removed from the ranking before scoring."""
        if setup == "medium":
            return set(self.junk)
        if setup == "hard":
            return self.junk | self.easy
        raise DataError(f"unknown setup {setup!r}")


def _id_list(sets: dict, key: str, qid: str) -> list:
    ids = sets.get(key, [])
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise DataError(f"{key!r} of query {qid!r} must be a list of image ids")
    return ids


@dataclass
class GroundTruth:
    """Per-query relevance sets, plus (optionally) the database id universe."""

    queries: dict[str, QueryGroundTruth] = field(default_factory=dict)
    database: set | None = None

    @staticmethod
    def from_dict(data: dict) -> "GroundTruth":
        if not isinstance(data, dict):
            raise DataError("ground truth must be a JSON object")
        database = set(data["database"]) if "database" in data else None
        queries = {}
        raw = data.get("queries", {q: v for q, v in data.items() if q != "database"})
        for qid, sets in raw.items():
            if not isinstance(sets, dict):
                raise DataError(f"ground truth for query {qid!r} must be an object")
            queries[qid] = QueryGroundTruth(
                easy=_id_list(sets, "easy", qid),
                hard=_id_list(sets, "hard", qid),
                junk=_id_list(sets, "junk", qid),
            )
        return GroundTruth(queries=queries, database=database)

    @staticmethod
    def from_json(text: str) -> "GroundTruth":
        try:
            return GroundTruth.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"bad ground-truth JSON: {exc}") from exc


def average_precision(ranked_ids: list[str], positives: set) -> float:
    """AP of one junk-free ranking: mean over positives of the precision at
    each positive's rank.  Positives absent from the ranking count as never
    retrieved (their precision contribution is zero)."""
    if not positives:
        raise DataError("average precision undefined without positives")
    hits = 0
    total = 0.0
    for rank, image_id in enumerate(ranked_ids, start=1):
        if image_id in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def precision_at(ranked_ids: list[str], positives: set, cutoff: int = 10) -> float:
    """Precision among the first min(cutoff, |positives|) junk-free ranks.

    The cutoff shrinks to the positive count so a perfect ranking of a query
    with fewer than ``cutoff`` positives still scores 1.0.
    """
    if not positives:
        raise DataError("precision undefined without positives")
    k = min(cutoff, len(positives))
    hits = sum(1 for image_id in ranked_ids[:k] if image_id in positives)
    return hits / k


def evaluate_rankings(
    runs: dict[str, list[str]], gt: GroundTruth
) -> dict[str, tuple[float, float]]:
    """Score rankings against ground truth under both setups.

    ``runs`` maps query id to its ranked database ids.  Returns
    ``{"medium": (mAP, mP@10), "hard": (mAP, mP@10)}``; queries whose
    positive set is empty under a setup are excluded from that setup's mean,
    and a setup with no scorable query yields (0.0, 0.0).
    """
    for qid in gt.queries:
        if qid not in runs:
            raise DataError(f"query {qid!r} missing from rankings")
    results: dict[str, tuple[float, float]] = {}
    for setup in SETUPS:
        aps: list[float] = []
        precs: list[float] = []
        for qid, qgt in sorted(gt.queries.items()):
            ranking = runs[qid]
            if gt.database is not None:
                unknown = [i for i in ranking if i not in gt.database]
                if unknown:
                    raise DataError(f"unknown image id {unknown[0]!r} in ranking of {qid!r}")
            positives = qgt.positives(setup)
            if not positives:
                continue
            missing = positives - set(ranking)
            if missing:
                raise DataError(
                    f"positive id {sorted(missing)[0]!r} missing from ranking of {qid!r}"
                )
            filtered = [i for i in ranking if i not in qgt.distractors(setup)]
            aps.append(average_precision(filtered, positives))
            precs.append(precision_at(filtered, positives, 10))
        if aps:
            results[setup] = (sum(aps) / len(aps), sum(precs) / len(precs))
        else:
            results[setup] = (0.0, 0.0)
    return results
