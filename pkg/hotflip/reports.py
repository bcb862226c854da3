"""CSV writers for attack, training and analysis results."""

import csv
from pathlib import Path
from typing import Any, Iterable, Sequence

from hotflip.models import (
    AttackOutcome,
    ConfidenceCurve,
    EpochMetrics,
    NeighborReport,
    RobustnessRow,
    WordAttackOutcome,
)

ATTACK_COLUMNS = [
    "id",
    "eligible",
    "success",
    "true_label",
    "final_label",
    "final_confidence",
    "num_edits",
    "char_change_fraction",
    "flips",
    "inserts",
    "deletes",
    "forward_queries",
    "backward_queries",
]
METRICS_COLUMNS = ["epoch", "train_loss", "dev_acc"]
ROBUSTNESS_COLUMNS = ["model", "clean_error", "attack_success_rate", "mean_char_change", "attack_config_hash"]
CURVE_COLUMNS = ["tau", "success_rate", "eligible"]
NEIGHBOR_COLUMNS = ["query", "rank", "neighbor", "cosine"]
WORD_COLUMNS = ["id", "position", "from", "to", "constraints", "success"]


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    """Header row first, then one line per row; missing cells are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _cell(row.get(column)) for column in columns})
    return path


def write_attack_report(path: str | Path, outcomes: Sequence[AttackOutcome]) -> Path:
    rows = []
    for outcome in sorted(outcomes, key=lambda o: o.uid):
        kinds = outcome.kind_counts()
        rows.append(
            {
                "id": outcome.uid,
                "eligible": outcome.eligible,
                "success": outcome.success,
                "true_label": outcome.true_label,
                "final_label": outcome.final_label,
                "final_confidence": outcome.final_confidence,
                "num_edits": len(outcome.edits),
                "char_change_fraction": outcome.char_change_fraction,
                "flips": kinds["flip"],
                "inserts": kinds["insert"],
                "deletes": kinds["delete"],
                "forward_queries": outcome.forward_queries,
                "backward_queries": outcome.backward_queries,
            }
        )
    return write_csv(path, ATTACK_COLUMNS, rows)


def write_metrics(path: str | Path, history: Sequence[EpochMetrics]) -> Path:
    return write_csv(path, METRICS_COLUMNS, [m.model_dump() for m in history])


def write_robustness_report(path: str | Path, rows: Sequence[RobustnessRow]) -> Path:
    return write_csv(path, ROBUSTNESS_COLUMNS, [row.model_dump() for row in rows])


def write_curve(path: str | Path, curve: ConfidenceCurve) -> Path:
    return write_csv(path, CURVE_COLUMNS, [point.model_dump() for point in curve.points])


def write_neighbors(path: str | Path, reports: Sequence[NeighborReport]) -> Path:
    rows = [
        {"query": report.query, "rank": rank, "neighbor": n.word, "cosine": n.cosine}
        for report in reports
        for rank, n in enumerate(report.neighbors, 1)
    ]
    return write_csv(path, NEIGHBOR_COLUMNS, rows)


def write_word_report(path: str | Path, outcomes: Sequence[WordAttackOutcome]) -> Path:
    """One row per substitution; sentences without one get a single empty row."""
    rows = []
    for outcome in sorted(outcomes, key=lambda o: o.uid):
        if not outcome.substitutions:
            rows.append({"id": outcome.uid, "success": outcome.success})
        for sub in outcome.substitutions:
            passed = ";".join(name for name, ok in sub.checks.items() if ok)
            rows.append(
                {
                    "id": outcome.uid,
                    "position": sub.position,
                    "from": sub.source,
                    "to": sub.target,
                    "constraints": passed,
                    "success": outcome.success,
                }
            )
    return write_csv(path, WORD_COLUMNS, rows)


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))
