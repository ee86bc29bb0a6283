"""
Exception hierarchy shared by every pipeline module.

The CLI maps PenetrationError to exit code 2 and every other SwarmError to
exit code 1.
"""
from __future__ import annotations


class SwarmError(Exception):
    """Base class for all pipeline errors."""


# ── Validation ─────────────────────────────────────────────────────────────────

class ValidationError(SwarmError):
    """One or more invariants violated; `issues` holds (field, message) pairs."""

    def __init__(self, issues: list[tuple[str, str]], source: str | None = None):
        self.issues = list(issues)
        self.source = source
        where = f"{source}: " if source else ""
        detail = "; ".join(f"{field}: {msg}" for field, msg in self.issues)
        super().__init__(f"{where}{detail}")


class ScenarioError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DatabaseError(ValidationError):
    pass


# ── Scene description ──────────────────────────────────────────────────────────

class DescriptionParseError(SwarmError):
    def __init__(self, message: str, position: int, token: str | None = None):
        self.position = position
        self.token = token
        suffix = f" (token {token!r})" if token is not None else ""
        super().__init__(f"at position {position}: {message}{suffix}")


class SpacingNotApplicable(SwarmError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(f"spacing needs at least 2 positions, got {count}")


# ── Retrieval ──────────────────────────────────────────────────────────────────

class EmptyTextError(SwarmError):
    pass


class EmptyDatabaseError(SwarmError):
    pass


class DimensionMismatch(SwarmError):
    def __init__(self, left: tuple[int, ...], right: tuple[int, ...]):
        self.left = left
        self.right = right
        super().__init__(f"dimension mismatch: {left} vs {right}")


# ── Dynamics ───────────────────────────────────────────────────────────────────

class LinkError(SwarmError, ValueError):
    pass


class PenetrationError(SwarmError):
    """A drone body entered an obstacle body. This is a safety violation."""

    def __init__(self, obstacle_id: int, position=None, t: float | None = None):
        self.obstacle_id = obstacle_id
        self.position = position
        self.t = t
        at = f" at t={t:.2f}s" if t is not None else ""
        super().__init__(f"penetration of obstacle {obstacle_id}{at}")


class SimulationError(SwarmError):
    def __init__(self, message: str, dump: dict | None = None):
        self.dump = dump or {}
        super().__init__(f"{message}; state dump: {self.dump}")


# ── Remote analyzer ────────────────────────────────────────────────────────────

class AnalyzerError(SwarmError):
    def __init__(self, message: str, endpoint: str | None = None):
        self.endpoint = endpoint
        super().__init__(f"{endpoint}: {message}" if endpoint else message)


class AnalyzerTimeout(AnalyzerError):
    pass


class AnalyzerTransportError(AnalyzerError):
    pass


class AnalyzerResponseError(AnalyzerError):
    def __init__(self, message: str, raw: str, endpoint: str | None = None):
        self.raw = raw
        super().__init__(f"{message}; raw payload: {raw[:200]!r}", endpoint)


# ── Database generation ────────────────────────────────────────────────────────

class GenerationError(SwarmError):
    def __init__(self, scenario: str, message: str):
        self.scenario = scenario
        super().__init__(f"{scenario}: {message}")
