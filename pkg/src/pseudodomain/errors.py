"""Exception types shared across the package."""

from __future__ import annotations


class PseudoDomainError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PseudoDomainError, ValueError):
    """One or more invariants were violated.

    ``problems`` lists every violation found, not only the first.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DatasetFormatError(ValidationError):
    """A dataset file could not be parsed. The message names the field."""


class ConfigError(ValidationError):
    pass


class ContractViolation(PseudoDomainError):
    """A pluggable component returned something the pipeline must reject."""


class GenerationError(PseudoDomainError):
    def __init__(self, generator_id: str, image_id: str, cause: BaseException | str):
        self.generator_id = generator_id
        self.image_id = image_id
        super().__init__(f"generator {generator_id!r} failed on image {image_id!r}: {cause}")
