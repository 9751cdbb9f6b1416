"""Foundry project scaffolding, build/test subprocess control, and
outcome classification.

Two runners share one interface: ForgeRunner shells out to a real
`forge` binary, SimRunner synthesizes forge-shaped output from sentinel
comments in the generated scripts so the whole pipeline can be driven
offline. Both feed the same total parsers, so the parsing logic is
exercised either way.

A failing test does not always mean a failed exploit: overflow panics
and reverts inside the victim are exactly what some attacks look like,
so classification accepts a configurable set of revert patterns as
success for the DoS, Reentrancy, and Arithmetic classes.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import (
    ForgeNotInstalled,
    HarnessTimeout,
    IoError,
    SpawnFailure,
    TemplateMissing,
    WorkdirConflict,
)
from .records import ContractCase, OutcomeClass, ScriptPair, VulnClass

OUTPUT_CAP_BYTES = 16 * 1024 * 1024

DEFAULT_FOUNDRY_TOML = """[profile.default]
src = "src"
test = "test"
out = "out"
libs = ["lib"]
solc = "{{solc_version}}"
via_ir = false
remappings = ["forge-std/=lib/forge-std/src/"]
"""


# -- report types ------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: Optional[int]
    message: str
    file: Optional[str] = None
    line: Optional[int] = None


@dataclass
class BuildReport:
    success: bool
    diagnostics: list[Diagnostic] = field(default_factory=list)
    raw_output: str = ""
    duration_s: float = 0.0
    parse_degraded: bool = False

    @property
    def error_diagnostics(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]


@dataclass(frozen=True)
class TestRecord:
    __test__ = False  # not a pytest class

    name: str
    status: str  # "pass" | "fail"
    revert_reason: Optional[str] = None


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    ran: bool
    tests: list[TestRecord] = field(default_factory=list)
    raw_output: str = ""
    duration_s: float = 0.0
    degraded: bool = False
    no_tests_marker: bool = False
    timed_out: bool = False

    @property
    def all_passed(self) -> bool:
        return bool(self.tests) and all(t.status == "pass" for t in self.tests)

    @property
    def failures(self) -> list[TestRecord]:
        return [t for t in self.tests if t.status == "fail"]


# -- output parsing (total functions) ----------------------------------------

_DIAG_RE = re.compile(r"^(Error|Warning)\s*\((\d+)\):[ \t]*(.*)$")
_LOCATION_RE = re.compile(r"-->\s*([^\s:]+):(\d+)(?::(\d+))?")
_PASS_RE = re.compile(r"^\[PASS\]\s+(\S+)")
_FAIL_RE = re.compile(r"^\[FAIL[.:]?\s*(?:[Rr]eason:\s*)?([^\]]*)\]\s+(\S+)")
_PANIC_RE = re.compile(r"panic.*?\(?(0x[0-9a-fA-F]{2})\)?", re.IGNORECASE)

_PANIC_NAMES = {
    0x01: "assertion failed",
    0x11: "arithmetic overflow",
    0x12: "division by zero",
    0x21: "invalid enum conversion",
    0x32: "array out-of-bounds",
}


def parse_build_output(raw: str, exit_code: Optional[int] = None) -> BuildReport:
    """Interpret compiler output; never raises.

    Recognizes solc diagnostic blocks and forge's success/failure
    trailers. Output in no known shape degrades to trusting the exit
    code, flagged so callers can tell.
    """
    diagnostics: list[Diagnostic] = []
    lines = raw.split("\n")
    for i, line in enumerate(lines):
        m = _DIAG_RE.match(line.strip())
        if not m:
            continue
        severity, code, message = m.group(1).lower(), int(m.group(2)), m.group(3).strip()
        file_name = None
        line_no = None
        for follow in lines[i + 1:i + 6]:
            loc = _LOCATION_RE.search(follow)
            if loc:
                file_name = loc.group(1)
                line_no = int(loc.group(2))
                break
        diagnostics.append(Diagnostic(severity, code, message, file_name, line_no))

    has_errors = any(d.severity == "error" for d in diagnostics)
    failed_trailer = "Compiler run failed" in raw
    success_trailer = (
        "Compiler run successful" in raw
        or "No files changed, compilation skipped" in raw
        or "Nothing to compile" in raw
    )

    if has_errors or failed_trailer:
        return BuildReport(success=False, diagnostics=diagnostics, raw_output=raw)
    if success_trailer:
        return BuildReport(success=True, diagnostics=diagnostics, raw_output=raw)
    return BuildReport(
        success=(exit_code == 0) if exit_code is not None else False,
        diagnostics=diagnostics,
        raw_output=raw,
        parse_degraded=True,
    )


def parse_test_output(raw: str) -> TestReport:
    """Interpret `forge test` output; never raises."""
    tests: list[TestRecord] = []
    for line in raw.split("\n"):
        stripped = line.strip()
        m = _PASS_RE.match(stripped)
        if m:
            tests.append(TestRecord(_test_name(m.group(1)), "pass"))
            continue
        m = _FAIL_RE.match(stripped)
        if m:
            reason = _normalize_revert_reason(m.group(1).strip())
            tests.append(TestRecord(_test_name(m.group(2)), "fail", reason))

    no_tests = bool(
        re.search(r"[Nn]o tests (found|match)", raw)
    )
    degraded = not tests and not no_tests
    return TestReport(
        ran=True,
        tests=tests,
        raw_output=raw,
        degraded=degraded,
        no_tests_marker=no_tests,
    )


def _test_name(token: str) -> str:
    return token.split("(")[0]


def _normalize_revert_reason(reason: str) -> Optional[str]:
    if not reason:
        return None
    panic = _PANIC_RE.search(reason)
    if panic:
        code = int(panic.group(1), 16)
        name = _PANIC_NAMES.get(code, "panic")
        return f"panic: {name} (0x{code:02x})"
    return reason


# -- classification ----------------------------------------------------------

HEURISTIC_CLASSES = frozenset(
    {VulnClass.DOS, VulnClass.REENTRANCY, VulnClass.ARITHMETIC}
)

# the principle is fixed (failed tests can still demonstrate the attack);
# the concrete pattern set is ours and overridable per deployment
DEFAULT_REVERT_HEURISTICS: dict[VulnClass, tuple[str, ...]] = {
    VulnClass.ARITHMETIC: (r"0x11", r"arithmetic (overflow|underflow)"),
    VulnClass.DOS: (r"(?i)out ?of ?gas", r"(?i)withdraw"),
    VulnClass.REENTRANCY: (r"(?i)out ?of ?gas", r"(?i)withdraw", r"(?i)reentran"),
}


def classify_outcome(
    vuln_class: VulnClass,
    build: BuildReport,
    test: Optional[TestReport],
    heuristics: Optional[Mapping[VulnClass, Sequence[str]]] = None,
) -> OutcomeClass:
    """Pure precedence rule: FailedCompile > Success > heuristic > FailedTest."""
    if not build.success:
        return OutcomeClass.FAILED_COMPILE
    if test is None or not test.ran:
        return OutcomeClass.FAILED_TEST
    if test.all_passed:
        return OutcomeClass.SUCCESS
    if vuln_class in HEURISTIC_CLASSES:
        patterns = (heuristics or DEFAULT_REVERT_HEURISTICS).get(vuln_class, ())
        for record in test.failures:
            if record.revert_reason is None:
                continue
            for pattern in patterns:
                if re.search(pattern, record.revert_reason):
                    return OutcomeClass.SUCCESS_BY_REVERT_HEURISTIC
    return OutcomeClass.FAILED_TEST


# -- project scaffolding -----------------------------------------------------

def scaffold_project(
    workdir: str | Path,
    case: ContractCase,
    scripts: ScriptPair,
    solc_version: str = "0.8.26",
    foundry_template: Optional[str] = None,
    vendor_forge_std: bool = True,
    assets_root: Optional[Path] = None,
) -> Path:
    """Lay out one attempt's Foundry project.

    Produces exactly src/Target.sol, src/Exploit.sol, test/Exploit.t.sol
    and foundry.toml plus a lib/ directory. Attempt directories are
    write-once; a second scaffold into the same directory fails.
    """
    root = Path(workdir)
    if (root / "foundry.toml").exists() or (root / "src").exists():
        raise WorkdirConflict(str(root))

    if foundry_template is None:
        foundry_template = _foundry_template(assets_root)

    try:
        (root / "src").mkdir(parents=True)
        (root / "test").mkdir()
        (root / "lib").mkdir()
        (root / "src" / "Target.sol").write_text(case.source_text, encoding="utf-8")
        (root / "src" / "Exploit.sol").write_text(scripts.exploit_source, encoding="utf-8")
        (root / "test" / "Exploit.t.sol").write_text(scripts.test_source, encoding="utf-8")
        (root / "foundry.toml").write_text(
            foundry_template.replace("{{solc_version}}", solc_version),
            encoding="utf-8",
        )
        if vendor_forge_std:
            _vendor_forge_std(root, assets_root)
    except OSError as exc:
        raise IoError(f"scaffold failed in {root}: {exc}") from exc
    return root


def _foundry_template(assets_root: Optional[Path]) -> str:
    try:
        from .assets import default_catalog

        catalog = default_catalog(assets_root)
        path = catalog.templates.get("foundry_toml")
        if path is not None and path.is_file():
            return path.read_text(encoding="utf-8")
    except Exception:
        pass
    return DEFAULT_FOUNDRY_TOML


def _vendor_forge_std(root: Path, assets_root: Optional[Path]) -> None:
    from .assets import default_catalog

    try:
        catalog = default_catalog(assets_root)
    except Exception as exc:
        raise TemplateMissing(f"asset pack unavailable: {exc}") from exc
    if catalog.forge_std is None or not catalog.forge_std.is_dir():
        raise TemplateMissing("lib/forge-std not vendored in asset pack")
    shutil.copytree(catalog.forge_std, root / "lib" / "forge-std")


# -- runners -----------------------------------------------------------------

def forge_binary() -> str:
    return os.environ.get("REX_FORGE_BIN", "forge")


def forge_available() -> bool:
    return shutil.which(forge_binary()) is not None


class ForgeRunner:
    """Drives a real forge binary in an attempt directory."""

    def __init__(self, forge_bin: Optional[str] = None):
        self.forge_bin = forge_bin or forge_binary()

    def run_build(self, workdir: str | Path, timeout_s: float) -> BuildReport:
        started = time.monotonic()
        raw, exit_code = self._run(["build"], workdir, timeout_s)
        report = parse_build_output(raw, exit_code=exit_code)
        report.duration_s = time.monotonic() - started
        _write_log(workdir, "build.log", raw)
        return report

    def run_tests(self, workdir: str | Path, timeout_s: float) -> TestReport:
        started = time.monotonic()
        try:
            raw, _ = self._run(["test", "-vvvv"], workdir, timeout_s)
        except HarnessTimeout as exc:
            report = TestReport(
                ran=False,
                raw_output="",
                duration_s=exc.duration_s,
                timed_out=True,
            )
            _write_log(workdir, "test.log", f"(killed after {exc.duration_s:.1f}s)\n")
            return report
        report = parse_test_output(raw)
        report.duration_s = time.monotonic() - started
        _write_log(workdir, "test.log", raw)
        return report

    def _run(
        self, args: list[str], workdir: str | Path, timeout_s: float
    ) -> tuple[str, int]:
        started = time.monotonic()
        try:
            proc = subprocess.run(
                [self.forge_bin, *args],
                cwd=str(workdir),
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                timeout=timeout_s,
            )
        except FileNotFoundError as exc:
            raise ForgeNotInstalled(
                f"{self.forge_bin!r} not found; set REX_FORGE_BIN or install foundry"
            ) from exc
        except subprocess.TimeoutExpired as exc:
            raise HarnessTimeout(time.monotonic() - started) from exc
        except OSError as exc:
            raise SpawnFailure(str(exc)) from exc
        raw = proc.stdout.decode("utf-8", errors="replace")
        if len(raw) > OUTPUT_CAP_BYTES:
            raw = raw[-OUTPUT_CAP_BYTES:]
        return raw, proc.returncode


_SIM_COMPILE_RE = re.compile(r"//\s*forge-sim:\s*compile-error\s+(\d+)\s+(.*)")
_SIM_TESTFAIL_RE = re.compile(r"//\s*forge-sim:\s*test-fail\s+(\S+)\s+(.*)")
_SIM_SLEEP_RE = re.compile(r"//\s*forge-sim:\s*sleep\s+([0-9.]+)")
_TEST_FN_RE = re.compile(r"\bfunction\s+(test\w*)\s*\(")


class SimRunner:
    """Offline harness simulator.

    Reads sentinel comments out of the scaffolded scripts and fabricates
    forge-shaped output, which then flows through the same parsers as
    real runs. Lets campaign plumbing, retries and resume be validated
    on machines without foundry or network.
    """

    def run_build(self, workdir: str | Path, timeout_s: float) -> BuildReport:
        root = Path(workdir)
        sources = {
            "src/Exploit.sol": _read(root / "src" / "Exploit.sol"),
            "test/Exploit.t.sol": _read(root / "test" / "Exploit.t.sol"),
        }
        for text in sources.values():
            sleep = _SIM_SLEEP_RE.search(text)
            if sleep:
                time.sleep(min(float(sleep.group(1)), timeout_s))

        blocks: list[str] = []
        for rel_path, text in sources.items():
            for m in _SIM_COMPILE_RE.finditer(text):
                blocks.append(
                    f"Error ({m.group(1)}): {m.group(2).strip()}\n"
                    f"  --> {rel_path}:1:1:\n"
                )
        started = time.monotonic()
        if blocks:
            raw = "\n".join(blocks) + "\nError: Compiler run failed:\n"
        else:
            raw = "Compiling 3 files with Solc (simulated)\nCompiler run successful!\n"
        report = parse_build_output(raw, exit_code=1 if blocks else 0)
        report.duration_s = time.monotonic() - started
        _write_log(workdir, "build.log", raw)
        return report

    def run_tests(self, workdir: str | Path, timeout_s: float) -> TestReport:
        root = Path(workdir)
        test_source = _read(root / "test" / "Exploit.t.sol")
        failures = {
            m.group(1): m.group(2).strip()
            for m in _SIM_TESTFAIL_RE.finditer(test_source)
        }
        names = _TEST_FN_RE.findall(test_source) or ["testExploit"]
        lines = [f"Ran {len(names)} test(s) for test/Exploit.t.sol:ExploitTest (simulated)"]
        for name in names:
            if name in failures:
                lines.append(f"[FAIL: {failures[name]}] {name}() (gas: 0)")
            else:
                lines.append(f"[PASS] {name}() (gas: 0)")
        ok = not failures
        lines.append(
            "Suite result: ok." if ok else "Suite result: FAILED."
        )
        raw = "\n".join(lines) + "\n"
        report = parse_test_output(raw)
        _write_log(workdir, "test.log", raw)
        return report


def make_runner(kind: str, forge_bin: Optional[str] = None):
    if kind == "sim":
        return SimRunner()
    if kind == "forge":
        return ForgeRunner(forge_bin)
    raise ValueError(f"unknown harness kind {kind!r}")


def run_build(workdir: str | Path, timeout_s: float, runner=None) -> BuildReport:
    """Build the scaffolded project in `workdir` (real forge by default)."""
    return (runner or ForgeRunner()).run_build(workdir, timeout_s)


def run_tests(workdir: str | Path, timeout_s: float, runner=None) -> TestReport:
    """Run the project's tests; a timeout yields ran=False, not an error."""
    return (runner or ForgeRunner()).run_tests(workdir, timeout_s)


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError:
        return ""


def _write_log(workdir: str | Path, name: str, raw: str) -> None:
    try:
        (Path(workdir) / name).write_text(raw, encoding="utf-8")
    except OSError:
        pass  # logging must never sink an attempt
