"""Exception hierarchy for the HotFlip toolkit."""


class HotflipError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(HotflipError):
    """Tensor shapes do not agree."""


class DegenerateInputError(HotflipError):
    """Input is empty or too short for the requested operation."""


class NonFiniteError(HotflipError):
    """A tensor holds NaN or Inf."""


class ContractError(HotflipError):
    """An operation was called outside its contract."""


class LabelIndexError(HotflipError, IndexError):
    """A class label is outside the range of the logits."""


class ExhaustionError(HotflipError):
    """No legal edit is left to choose from."""


class ParseError(HotflipError):
    """A data file could not be parsed."""

    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class EncodeError(HotflipError):
    """A character is not part of the alphabet."""

    def __init__(self, char: str):
        self.char = char
        super().__init__(f"character {char!r} is not in the alphabet")


class TrainingDivergedError(HotflipError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        message = f"training diverged at epoch {epoch}, batch {batch}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class CheckpointError(HotflipError):
    """A checkpoint file is malformed."""


class ConfigError(HotflipError):
    """A configuration failed validation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
