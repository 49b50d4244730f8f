"""
kg/errors.py — Exception hierarchy shared by every pathrec module.

Input-validation errors also derive from ValueError so callers may catch
either the library base class or the builtin.
"""

from __future__ import annotations

from pathlib import Path


class PathRecError(Exception):
    """Base class for all pathrec failures."""


class ConfigError(PathRecError, ValueError):
    pass


class DatasetError(PathRecError, ValueError):
    """Dataset is structurally unusable (e.g. empty after filtering)."""


class DatasetParseError(DatasetError):
    def __init__(self, path: str | Path, line_no: int, reason: str) -> None:
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class UnknownEntityError(PathRecError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown entity"


class PathStructureError(PathRecError, ValueError):
    """A reasoning path violates the shape an operation requires."""


class MetricInputError(PathRecError, ValueError):
    pass


class MissingSurfaceFormError(PathRecError, KeyError):
    def __init__(self, kind: str, ident: int) -> None:
        self.kind = kind
        self.ident = ident
        super().__init__(f"no surface form for {kind} id {ident}")

    def __str__(self) -> str:
        return str(self.args[0])


class ArtifactMissingError(PathRecError, FileNotFoundError):
    def __init__(self, stage: str, path: str | Path) -> None:
        self.stage = stage
        self.path = str(path)
        super().__init__(
            f"missing artifact {self.path}; run the `{stage}` stage first"
        )

    def __str__(self) -> str:
        return str(self.args[0])


class UndefinedMetricError(MetricInputError):
    """The metric has no value for a list this short."""
