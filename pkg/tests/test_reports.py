from hotflip.models import (
    AttackOutcome,
    ConfidenceCurve,
    ConfidencePoint,
    EditSummary,
    EpochMetrics,
    Neighbor,
    NeighborReport,
    WordAttackOutcome,
    WordSubstitution,
)
from hotflip.reports import (
    ATTACK_COLUMNS,
    read_csv,
    write_attack_report,
    write_curve,
    write_metrics,
    write_neighbors,
    write_word_report,
)


def test_attack_report_rows_sorted_by_id(tmp_path):
    outcomes = [
        AttackOutcome(
            uid=2,
            success=True,
            true_label=0,
            final_label=1,
            final_confidence=0.75,
            edits=[EditSummary(kind="insert", word=0, position=1, char="x", flips=3)],
            characters=10,
            char_change_fraction=0.1,
            forward_queries=4,
            backward_queries=2,
        ),
        AttackOutcome(uid=1, eligible=False, success=False, true_label=1, final_label=0, final_confidence=0.6),
    ]
    path = write_attack_report(tmp_path / "attack.csv", outcomes)
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(ATTACK_COLUMNS)
    rows = read_csv(path)
    assert [row["id"] for row in rows] == ["1", "2"]
    assert rows[0]["eligible"] == "0"
    assert rows[1]["inserts"] == "1" and rows[1]["flips"] == "0"
    assert float(rows[1]["final_confidence"]) == 0.75


def test_metrics_and_curve(tmp_path):
    metrics = read_csv(write_metrics(tmp_path / "m.csv", [EpochMetrics(epoch=1, train_loss=0.5, dev_acc=0.25)]))
    assert metrics == [{"epoch": "1", "train_loss": "0.5", "dev_acc": "0.25"}]
    curve = ConfidenceCurve(
        method="beam",
        mode="reattack",
        points=[ConfidencePoint(tau=0.5, success_rate=None, eligible=0)],
    )
    assert read_csv(write_curve(tmp_path / "c.csv", curve)) == [{"tau": "0.5", "success_rate": "", "eligible": "0"}]


def test_neighbor_ranks_start_at_one(tmp_path):
    report = NeighborReport(
        query="pas!t", in_vocab=False, neighbors=[Neighbor(word="past", cosine=0.9), Neighbor(word="pasta", cosine=0.8)]
    )
    rows = read_csv(write_neighbors(tmp_path / "n.csv", [report]))
    assert [(row["rank"], row["neighbor"]) for row in rows] == [("1", "past"), ("2", "pasta")]


def test_word_report(tmp_path):
    checks = {"same-lexeme": True, "stop-word": True, "no-embedding": True, "cosine": True, "pos": True}
    outcomes = [
        WordAttackOutcome(
            uid=0,
            success=True,
            true_label=1,
            final_label=0,
            final_confidence=0.6,
            substitutions=[WordSubstitution(position=2, source="great", target="good", score=0.3, checks=checks)],
        ),
        WordAttackOutcome(uid=1, success=False, true_label=0, final_label=0, final_confidence=0.8),
    ]
    rows = read_csv(write_word_report(tmp_path / "w.csv", outcomes))
    assert rows[0]["from"] == "great" and rows[0]["to"] == "good"
    assert rows[0]["constraints"] == "same-lexeme;stop-word;no-embedding;cosine;pos"
    assert rows[1] == {"id": "1", "position": "", "from": "", "to": "", "constraints": "", "success": "0"}
