"""Shared data vocabulary for the campaign runner.

Plain records passed between the corpus, backend, harness, and pipeline
layers. Everything here is JSON-serializable and immutable after
construction; workers share these freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

from .errors import SchemaViolation, SerializationError, UnknownVulnClass


class VulnClass(Enum):
    REENTRANCY = "Reentrancy"
    ACCESS_CONTROL = "AccessControl"
    ARITHMETIC = "Arithmetic"
    BAD_RANDOMNESS = "BadRandomness"
    FRONT_RUNNING = "FrontRunning"
    DOS = "DoS"
    TIME_MANIPULATION = "TimeManipulation"
    UNCHECKED_LOW_LEVEL_CALLS = "UncheckedLowLevelCalls"

    @classmethod
    def parse(cls, label: str) -> "VulnClass":
        for variant in cls:
            if variant.value == label:
                return variant
        raise UnknownVulnClass(label)

    def display_name(self) -> str:
        names = {
            VulnClass.ACCESS_CONTROL: "Access Control",
            VulnClass.BAD_RANDOMNESS: "Bad Randomness",
            VulnClass.FRONT_RUNNING: "Front Running",
            VulnClass.TIME_MANIPULATION: "Time Manipulation",
            VulnClass.UNCHECKED_LOW_LEVEL_CALLS: "Unchecked Low Level Calls",
        }
        return names.get(self, self.value)


class OutcomeClass(Enum):
    """Classification of a single build-and-test attempt."""

    SUCCESS = "Success"
    SUCCESS_BY_REVERT_HEURISTIC = "SuccessByRevertHeuristic"
    FAILED_COMPILE = "FailedCompile"
    FAILED_TEST = "FailedTest"


class CaseStatus(Enum):
    """Terminal classification of a whole case."""

    SUCCESS = "Success"
    SUCCESS_BY_REVERT_HEURISTIC = "SuccessByRevertHeuristic"
    FAILED_COMPILE = "FailedCompile"
    FAILED_TEST = "FailedTest"
    RETRY_EXHAUSTED = "RetryExhausted"
    BACKEND_ERROR = "BackendError"
    HARNESS_ERROR = "HarnessError"

    def is_success(self) -> bool:
        return self in (CaseStatus.SUCCESS, CaseStatus.SUCCESS_BY_REVERT_HEURISTIC)

    def is_error(self) -> bool:
        return self in (CaseStatus.BACKEND_ERROR, CaseStatus.HARNESS_ERROR)


@dataclass(frozen=True)
class Directive:
    """One preprocessing step requested by the manifest for a case."""

    name: str
    args: tuple[str, ...] = ()

    KNOWN = ("strip_comments", "migrate_pragma", "wrap_unchecked")

    @classmethod
    def parse(cls, tag: str, where: str = "preprocess") -> "Directive":
        name, _, arg_text = tag.partition(":")
        if name not in cls.KNOWN:
            raise SchemaViolation(where, f"unknown directive {name!r}")
        args = tuple(a for a in arg_text.split(",") if a) if arg_text else ()
        if name == "wrap_unchecked" and not args:
            raise SchemaViolation(where, "wrap_unchecked needs function names")
        if name != "wrap_unchecked" and args:
            raise SchemaViolation(where, f"directive {name!r} takes no arguments")
        return cls(name, args)

    def tag(self) -> str:
        return self.name + (":" + ",".join(self.args) if self.args else "")


@dataclass(frozen=True)
class ContractCase:
    """One vulnerable contract under test, immutable after manifest load."""

    case_id: str
    source_path: str  # absolute after loading
    source_text: str
    vuln_class: VulnClass
    preprocess: tuple[Directive, ...] = ()
    provenance: str = ""


@dataclass
class CampaignConfig:
    backend_id: str = "scripted"
    model_name: str = ""
    max_retries: int = 4
    parallelism: int = 1
    build_timeout_s: float = 300.0
    test_timeout_s: float = 300.0
    workdir_root: str = "campaign-work"
    apply_optimizations: bool = True
    # extras carried by the manifest config object
    solc_version: str = "0.8.26"
    harness: str = "forge"  # forge | sim
    fixtures_dir: Optional[str] = None
    base_url: Optional[str] = None
    templates_dir: Optional[str] = None
    rpm_limit: Optional[float] = None
    temperature: float = 0.2
    max_output_tokens: int = 8192

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise SchemaViolation("config.max_retries", "must be >= 0")
        if self.parallelism < 1:
            raise SchemaViolation("config.parallelism", "must be >= 1")
        if self.build_timeout_s <= 0 or self.test_timeout_s <= 0:
            raise SchemaViolation("config.timeouts", "must be positive")
        if self.harness not in ("forge", "sim"):
            raise SchemaViolation("config.harness", "must be 'forge' or 'sim'")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CampaignConfig":
        known = {f for f in cls.__dataclass_fields__}
        for key in raw:
            if key not in known:
                raise SchemaViolation(f"config.{key}", "unknown config key")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise SchemaViolation("config", str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            name: getattr(self, name)
            for name in self.__dataclass_fields__
            if getattr(self, name) != self.__dataclass_fields__[name].default
        }


@dataclass(frozen=True)
class ScriptPair:
    """The two generated Foundry sources: attacker contract and its test."""

    exploit_source: str
    test_source: str


@dataclass(frozen=True)
class OptimizationCounts:
    addresses_fixed: int = 0
    payable_casts: int = 0


@dataclass(frozen=True)
class BuildSummary:
    success: bool
    error_count: int = 0
    duration_s: float = 0.0


@dataclass(frozen=True)
class TestSummary:
    __test__ = False  # keep pytest collection away

    ran: bool
    passed: int = 0
    failed: int = 0
    duration_s: float = 0.0


@dataclass(frozen=True)
class Attempt:
    """One generate, fix, build, test cycle."""

    attempt_no: int
    scripts: ScriptPair
    optimizations_applied: OptimizationCounts
    build: BuildSummary
    test: Optional[TestSummary]
    outcome: OutcomeClass


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    vuln_class: VulnClass
    status: CaseStatus
    attempts: tuple[Attempt, ...]
    wall_clock_s: float
    finished_at: str = ""  # ISO-8601, set on append

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "vuln_class": self.vuln_class.value,
            "status": self.status.value,
            "wall_clock_s": self.wall_clock_s,
            "finished_at": self.finished_at,
            "attempts": [
                {
                    "attempt_no": a.attempt_no,
                    "scripts": {
                        "exploit_source": a.scripts.exploit_source,
                        "test_source": a.scripts.test_source,
                    },
                    "optimizations_applied": {
                        "addresses_fixed": a.optimizations_applied.addresses_fixed,
                        "payable_casts": a.optimizations_applied.payable_casts,
                    },
                    "build": {
                        "success": a.build.success,
                        "error_count": a.build.error_count,
                        "duration_s": a.build.duration_s,
                    },
                    "test": None if a.test is None else {
                        "ran": a.test.ran,
                        "passed": a.test.passed,
                        "failed": a.test.failed,
                        "duration_s": a.test.duration_s,
                    },
                    "outcome": a.outcome.value,
                }
                for a in self.attempts
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CaseResult":
        try:
            attempts = tuple(
                Attempt(
                    attempt_no=a["attempt_no"],
                    scripts=ScriptPair(
                        a["scripts"]["exploit_source"], a["scripts"]["test_source"]
                    ),
                    optimizations_applied=OptimizationCounts(
                        a["optimizations_applied"]["addresses_fixed"],
                        a["optimizations_applied"]["payable_casts"],
                    ),
                    build=BuildSummary(
                        a["build"]["success"],
                        a["build"]["error_count"],
                        a["build"]["duration_s"],
                    ),
                    test=None if a["test"] is None else TestSummary(
                        a["test"]["ran"],
                        a["test"]["passed"],
                        a["test"]["failed"],
                        a["test"]["duration_s"],
                    ),
                    outcome=OutcomeClass(a["outcome"]),
                )
                for a in raw["attempts"]
            )
            return cls(
                case_id=raw["case_id"],
                vuln_class=VulnClass.parse(raw["vuln_class"]),
                status=CaseStatus(raw["status"]),
                attempts=attempts,
                wall_clock_s=raw["wall_clock_s"],
                finished_at=raw.get("finished_at", ""),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SerializationError(f"malformed case result: {exc}") from exc
