"""Exception hierarchy shared across the pipeline.

Everything raised on purpose derives from :class:`CurationError`, so callers
(the CLI in particular) can map whole families of failures to exit codes.
"""

from __future__ import annotations


class CurationError(Exception):
    """Base class for all errors raised by webcurate."""


# -- task configuration -------------------------------------------------------


class ConfigError(CurationError):
    """A task descriptor or entity table failed validation."""


class MalformedYaml(ConfigError):
    pass


class MissingField(ConfigError):
    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"missing or empty field: {field}" + (f" ({detail})" if detail else ""))


class UnknownField(ConfigError):
    def __init__(self, field: str, where: str):
        self.field = field
        super().__init__(f"unknown key {field!r} in {where}")


class InvalidField(ConfigError):
    def __init__(self, field: str, detail: str):
        self.field = field
        super().__init__(f"invalid value for {field}: {detail}")


class DuplicateAttribute(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate attribute name: {name}")


class UnknownValueKind(ConfigError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"unknown value kind: {kind!r}")


class InvalidPlaceholder(ConfigError):
    def __init__(self, template: str, name: str):
        self.template = template
        self.name = name
        super().__init__(f"invalid placeholder {{{name}}} in template {template!r}")


class MissingColumn(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"entity table is missing required column: {name}")


class DuplicateEntityId(ConfigError):
    def __init__(self, entity_id: str):
        self.entity_id = entity_id
        super().__init__(f"duplicate entity id: {entity_id}")


class EmptyEntitySet(ConfigError):
    def __init__(self) -> None:
        super().__init__("entity table has no data rows")


# -- provider -----------------------------------------------------------------


class ProviderError(CurationError):
    """A model call failed before producing a usable reply."""


class RateLimited(ProviderError):
    def __init__(self, retry_after: float | None = None, detail: str = ""):
        self.retry_after = retry_after
        super().__init__(f"rate limited (retry_after={retry_after}) {detail}".strip())


class TransientServer(ProviderError):
    pass


class AuthFailure(ProviderError):
    pass


class NetworkTimeout(ProviderError):
    pass


class MalformedProviderReply(ProviderError):
    """The HTTP exchange succeeded but the reply envelope could not be read."""


class FixtureMiss(ProviderError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no recorded fixture for request key {key}")


# -- model output ---------------------------------------------------------------


class OutputError(CurationError):
    """The model replied, but its structured output is unusable."""


class InvalidJson(OutputError):
    pass


class SchemaViolation(OutputError):
    def __init__(self, attribute: str, detail: str):
        self.attribute = attribute
        self.detail = detail
        super().__init__(f"{attribute}: {detail}")


class InconsistentStatus(SchemaViolation):
    def __init__(self, attribute: str):
        super().__init__(attribute, "status is not_found but a value is present")


# -- engine / run directory -------------------------------------------------------


class ExhaustedAttempts(CurationError):
    def __init__(self, entity_id: str, last_error: Exception, attempts: int, usage=None):
        self.entity_id = entity_id
        self.last_error = last_error
        self.attempts = attempts
        self.usage = usage
        super().__init__(f"entity {entity_id!r} failed after {attempts} attempt(s): {last_error}")


class ConfigHashMismatch(CurationError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            f"run directory belongs to a different configuration (manifest {found[:12]}, "
            f"current {expected[:12]})"
        )


class IncompleteRun(CurationError):
    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        shown = ", ".join(self.missing[:5]) + (" ..." if len(self.missing) > 5 else "")
        super().__init__(f"{len(self.missing)} entities have no result: {shown}")


# -- compiler / overrides ---------------------------------------------------------


class OverrideError(CurationError):
    pass


class UnknownEntity(OverrideError):
    def __init__(self, entity_id: str):
        self.entity_id = entity_id
        super().__init__(f"unknown entity: {entity_id}")


class UnknownAttribute(OverrideError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown attribute: {name}")


class DuplicateOverride(OverrideError):
    def __init__(self, pair: tuple[str, str]):
        self.pair = pair
        super().__init__(f"duplicate override for {pair[0]!r}/{pair[1]!r}")


# -- evaluation -------------------------------------------------------------------


class EvaluationError(CurationError):
    pass


class MissingTruth(EvaluationError):
    def __init__(self, entity_id: str, attribute: str | None = None):
        self.entity_id = entity_id
        self.attribute = attribute
        where = entity_id if attribute is None else f"{entity_id}/{attribute}"
        super().__init__(f"ground truth missing for {where}")


class EmptyDenominator(EvaluationError):
    def __init__(self, regime: str):
        self.regime = regime
        super().__init__(f"accuracy undefined: empty denominator under regime {regime}")


class InvalidArgs(EvaluationError, ValueError):
    pass


# -- money ------------------------------------------------------------------------


class DivisionByZeroRecords(CurationError, ZeroDivisionError):
    def __init__(self) -> None:
        super().__init__("records_per_hour must be positive")


# -- bootstrap --------------------------------------------------------------------


class BootstrapExhausted(CurationError):
    def __init__(self, validation_log: list[dict]):
        self.validation_log = list(validation_log)
        super().__init__(f"no valid draft after {len(self.validation_log)} attempt(s)")


class EmptyEntityDiscovery(CurationError):
    def __init__(self) -> None:
        super().__init__("entity discovery returned no rows")
