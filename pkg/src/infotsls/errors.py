"""Exception hierarchy.

Every error carries a stable ``code`` used as the CLI exit status and a
``module`` tag naming the subsystem that raised it.
"""

from __future__ import annotations


class InfoTSLSError(Exception):
    code = 1
    name = "internal_error"
    module = "infotsls"


class PreconditionError(InfoTSLSError, ValueError):
    code = 10
    name = "precondition"


class DimensionError(InfoTSLSError, ValueError):
    code = 11
    name = "dimension"


class DegenerateEvidenceError(InfoTSLSError):
    """The observed signal has zero likelihood under every state with positive mass."""

    code = 12
    name = "degenerate_evidence"
    module = "beliefs"

    def __init__(self, message: str, agent_id: int | None = None):
        self.agent_id = agent_id
        if agent_id is not None:
            message = f"agent {agent_id}: {message}"
        super().__init__(message)


class DomainError(InfoTSLSError, ValueError):
    code = 13
    name = "domain"

    def __init__(self, message: str, rows=None):
        self.rows = [] if rows is None else list(rows)
        super().__init__(message)


class RankDeficiencyError(InfoTSLSError):
    code = 20
    name = "rank_deficiency"
    module = "linalg"

    def __init__(self, message: str, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class ZeroFirstStageError(InfoTSLSError):
    code = 21
    name = "zero_first_stage"
    module = "linalg"


class DegenerateWeightsError(InfoTSLSError):
    code = 30
    name = "degenerate_weights"
    module = "diagnostics"


class ConfigError(InfoTSLSError, ValueError):
    """Config failed schema or semantic validation; ``path`` is a dotted field path."""

    code = 40
    name = "config_schema"
    module = "cli"

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataSchemaError(InfoTSLSError, ValueError):
    code = 41
    name = "data_schema"
    module = "io"

    def __init__(self, message: str, rows=None):
        self.rows = [] if rows is None else list(rows)
        super().__init__(message)
