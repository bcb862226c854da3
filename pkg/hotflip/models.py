"""Pydantic records produced by the attack, training and analysis pipelines."""

from typing import Literal, Optional

from pydantic import BaseModel, Field

EditKind = Literal["flip", "insert", "delete"]


class EditSummary(BaseModel):
    """An applied character edit, in a serializable form."""

    kind: EditKind
    word: int
    position: int
    char: Optional[str] = None  # target character for flip/insert
    flips: int = Field(description="Atomic flips the edit decomposes into")
    score: float = 0.0


class AttackOutcome(BaseModel):
    """Result of attacking one example."""

    uid: int = 0
    method: str = "beam"
    eligible: bool = True
    success: bool
    true_label: int
    final_label: int
    final_confidence: float
    edits: list[EditSummary] = Field(default_factory=list)
    forward_queries: int = 0
    backward_queries: int = 0
    characters: int = Field(0, description="Non-padding, non-space characters of the source")
    char_change_fraction: float = Field(
        0.0,
        description="Edits applied over characters; one flip, insert or delete counts as one changed character",
    )
    cumulative_score: float = 0.0
    final_text: str = ""
    loss_trace: list[float] = Field(default_factory=list)
    wrong_confidence_trace: list[Optional[float]] = Field(
        default_factory=list,
        description="Per step, the highest wrong-class confidence among checked states",
    )
    reason: Optional[str] = None

    def kind_counts(self) -> dict[str, int]:
        counts = {"flip": 0, "insert": 0, "delete": 0}
        for edit in self.edits:
            counts[edit.kind] += 1
        return counts

    def succeeds_at(self, tau: float) -> bool:
        """Whether any checked state misclassified with confidence >= tau."""
        return any(conf is not None and conf >= tau for conf in self.wrong_confidence_trace)


class AttackSummary(BaseModel):
    """Aggregate over a dataset attack."""

    total: int
    eligible: int
    successes: int
    success_rate: Optional[float] = None
    no_eligible: bool = False
    mean_char_change: Optional[float] = None
    edit_kind_distribution: dict[str, float] = Field(default_factory=dict)
    mean_forward_queries: float = 0.0
    mean_backward_queries: float = 0.0


class EditStatistics(BaseModel):
    """Edit-kind proportions over successful attacks."""

    flip: float = 0.0
    insert: float = 0.0
    delete: float = 0.0
    mean_char_change: Optional[float] = None
    successes: int = 0
    total_edits: int = 0
    empty: bool = False

    def modal_kind(self) -> Optional[str]:
        if self.empty:
            return None
        shares = {"flip": self.flip, "insert": self.insert, "delete": self.delete}
        return max(shares, key=shares.get)


class ConfidencePoint(BaseModel):
    tau: float
    success_rate: Optional[float]
    eligible: int


class ConfidenceCurve(BaseModel):
    """Success rate as a function of the confidence threshold."""

    method: str
    mode: str
    points: list[ConfidencePoint] = Field(default_factory=list)
    violations: list[float] = Field(
        default_factory=list,
        description="Thresholds whose success rate exceeds the previous point's",
    )


class Neighbor(BaseModel):
    word: str
    cosine: float


class NeighborReport(BaseModel):
    """Nearest vocabulary words of a (possibly corrupted) query."""

    query: str
    in_vocab: bool
    neighbors: list[Neighbor] = Field(default_factory=list)


class EpochMetrics(BaseModel):
    epoch: int
    train_loss: float
    dev_acc: float


class EvaluationResult(BaseModel):
    accuracy: float
    confusion: list[list[int]]
    count: int


class RobustnessRow(BaseModel):
    """One row of the clean-error / attack-success comparison."""

    model: str
    clean_error: float
    attack_success_rate: Optional[float]
    mean_char_change: Optional[float]
    attack_config_hash: str


class WordSubstitution(BaseModel):
    """A word swap that passed every enabled constraint."""

    position: int
    source: str
    target: str
    score: float
    checks: dict[str, bool] = Field(default_factory=dict)


class WordAttackOutcome(BaseModel):
    uid: int = 0
    eligible: bool = True
    success: bool
    true_label: int
    final_label: int
    final_confidence: float
    substitutions: list[WordSubstitution] = Field(default_factory=list)
    forward_queries: int = 0
    backward_queries: int = 0
    final_text: str = ""
    reason: Optional[str] = None


class TensorEntry(BaseModel):
    name: str
    shape: list[int]
    offset: int
    count: int


class CheckpointHeader(BaseModel):
    """JSON header of a HOTFLIP1 checkpoint."""

    arch: Literal["char", "word"]
    hyperparameters: dict
    encoding: Optional[dict] = None
    alphabet: Optional[list[str]] = None
    vocabulary: Optional[list[str]] = None
    tensors: list[TensorEntry]


class RunConfig(BaseModel):
    """Everything needed to re-run one subcommand."""

    subcommand: str
    seed: int
    output: str
    args: dict = Field(default_factory=dict)
    environment: dict = Field(default_factory=dict)
