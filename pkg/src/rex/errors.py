"""Exception hierarchy shared across the package.

Every error raised by rex code derives from RexError so campaign-level
code can catch one base class and convert failures into case statuses
instead of crashing the run.
"""

from __future__ import annotations


class RexError(Exception):
    """Base class for all package errors."""


# -- corpus / manifest -------------------------------------------------------

class ManifestError(RexError):
    """Base for manifest loading failures."""


class MissingFile(ManifestError):
    pass


class SchemaViolation(ManifestError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"manifest field {field!r}: {reason}")
        self.field = field
        self.reason = reason


class DuplicateCaseId(ManifestError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case_id {case_id!r}")
        self.case_id = case_id


class UnknownVulnClass(ManifestError):
    def __init__(self, label: str):
        super().__init__(f"unknown vulnerability class {label!r}")
        self.label = label


class StoreError(RexError):
    """Result-store read/write failure."""


class IoError(StoreError):
    pass


class SerializationError(StoreError):
    pass


class CorruptStore(StoreError):
    pass


# -- soltx -------------------------------------------------------------------

class LexError(RexError):
    """Base for lexer failures; carries the offending byte span."""

    def __init__(self, message: str, span: tuple[int, int]):
        super().__init__(f"{message} at bytes {span[0]}..{span[1]}")
        self.span = span


class UnterminatedComment(LexError):
    def __init__(self, span: tuple[int, int]):
        super().__init__("unterminated block comment", span)


class UnterminatedString(LexError):
    def __init__(self, span: tuple[int, int]):
        super().__init__("unterminated string literal", span)


class TransformError(RexError):
    """Base for source-transform failures."""


class NotAnAddress(TransformError):
    def __init__(self, value: str):
        super().__init__(f"not a 40-hex-digit address: {value!r}")
        self.value = value


class FunctionNotFound(TransformError):
    def __init__(self, name: str):
        super().__init__(f"function {name!r} not found")
        self.name = name


class AmbiguousFunction(TransformError):
    def __init__(self, name: str):
        super().__init__(f"function {name!r} defined more than once")
        self.name = name


class NoTransferSite(TransformError):
    def __init__(self, function: str):
        super().__init__(f"function {function!r} has no transfer/send statement")
        self.function = function


class UnknownTemplate(TransformError):
    def __init__(self, template_id: str):
        super().__init__(f"unknown template {template_id!r}")
        self.template_id = template_id


class ContractNotFound(TransformError):
    def __init__(self, name: str):
        super().__init__(f"contract {name!r} not found")
        self.name = name


class CollisionDetected(TransformError):
    def __init__(self, name: str):
        super().__init__(f"rename target {name!r} collides with an existing identifier")
        self.name = name


class KeywordRename(TransformError):
    def __init__(self, name: str):
        super().__init__(f"{name!r} is a reserved keyword and cannot take part in a rename")
        self.name = name


class IdentifierNotFound(TransformError):
    def __init__(self, name: str):
        super().__init__(f"identifier {name!r} does not occur in the source")
        self.name = name


# -- assets ------------------------------------------------------------------

class AssetError(RexError):
    pass


class MissingAsset(AssetError):
    def __init__(self, asset_id: str):
        super().__init__(f"asset {asset_id!r} missing from pack")
        self.asset_id = asset_id


class UnlexableAsset(AssetError):
    def __init__(self, asset_id: str, cause: Exception):
        super().__init__(f"asset {asset_id!r} does not lex: {cause}")
        self.asset_id = asset_id


# -- genbackend --------------------------------------------------------------

class BackendError(RexError):
    """Base for generation-backend failures."""


class TransportError(BackendError):
    pass


class RateLimited(BackendError):
    def __init__(self, retry_after: float):
        super().__init__(f"rate limited; retry after {retry_after}s")
        self.retry_after = retry_after


class FixtureMissing(BackendError):
    def __init__(self, case_id: str, attempt_no: int):
        super().__init__(f"no fixture response for case {case_id!r} attempt {attempt_no}")
        self.case_id = case_id
        self.attempt_no = attempt_no


class BackendRefused(BackendError):
    pass


class ExtractionError(RexError):
    """Base for script-extraction failures."""


class NoCodeBlocks(ExtractionError):
    pass


class OnlyOneScript(ExtractionError):
    pass


class UnlexableScript(ExtractionError):
    def __init__(self, which: str, cause: Exception):
        super().__init__(f"{which} script does not lex: {cause}")
        self.which = which


# -- harness -----------------------------------------------------------------

class HarnessError(RexError):
    """Base for build/test harness failures."""


class ForgeNotInstalled(HarnessError):
    pass


class HarnessTimeout(HarnessError):
    def __init__(self, duration_s: float):
        super().__init__(f"subprocess killed after {duration_s:.1f}s")
        self.duration_s = duration_s


class SpawnFailure(HarnessError):
    pass


class TemplateMissing(HarnessError):
    def __init__(self, path: str):
        super().__init__(f"project template missing: {path}")
        self.path = path


class WorkdirConflict(HarnessError):
    def __init__(self, path: str):
        super().__init__(f"attempt directory already scaffolded: {path}")
        self.path = path


# -- analytics ---------------------------------------------------------------

class AnalyticsError(RexError):
    pass


class ZeroMarginal(AnalyticsError):
    def __init__(self, axis: str, index: int):
        super().__init__(f"contingency table has an all-zero {axis} at index {index}")
        self.axis = axis
        self.index = index


class DegenerateInput(AnalyticsError):
    pass
