"""Per-case generate/fix/build/test state machine and campaign scheduling.

Each case walks preprocess -> prompt -> generate -> extract -> optimize
-> scaffold -> build -> test -> classify, looping through repair
prompts until it succeeds or the retry budget runs out. Every attempt
leaves an immutable directory of artifacts (prompt, raw response,
scripts before and after optimization, logs) before the next
generation call, so a killed campaign can always be resumed from disk
without repeating paid backend calls.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from time import monotonic
from typing import Any, Optional

from .analytics import aggregate_success, render_success_markdown
from .corpus import ResultStore, load_manifest, write_manifest
from .errors import (
    BackendError,
    ExtractionError,
    HarnessError,
    MissingFile,
    RexError,
)
from .genbackend import (
    GenBackend,
    PromptTemplates,
    build_exploit_prompt,
    build_repair_prompt,
    extract_scripts,
    generate,
    make_backend,
)
from .harness import classify_outcome, make_runner, scaffold_project
from .records import (
    Attempt,
    BuildSummary,
    CampaignConfig,
    CaseResult,
    CaseStatus,
    ContractCase,
    OptimizationCounts,
    OutcomeClass,
    ScriptPair,
    TestSummary,
)
from .soltx import (
    insert_payable_casts,
    migrate_pragma,
    normalize_addresses,
    strip_comments,
    wrap_unchecked,
)

log = logging.getLogger("rex.pipeline")

_ALLOWED = {
    "Init": {"Preprocessed"},
    "Preprocessed": {"Generated"},
    "Generated": {"Optimized", "Built"},
    "Optimized": {"Built"},
    "Built": {"Tested", "Generated", "Done"},
    "Tested": {"Generated", "Done"},
    "Done": set(),
}


@dataclass
class CaseState:
    """Tracks where a case is in the documented state graph."""

    phase: str = "Init"
    current_attempt: int = 0

    def advance(self, phase: str) -> None:
        if phase not in _ALLOWED[self.phase]:
            raise RuntimeError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase
        if phase == "Generated":
            self.current_attempt += 1


def preprocess_case(case: ContractCase, config: CampaignConfig) -> ContractCase:
    """Apply the case's directives, in order, to the target source."""
    text = case.source_text
    for directive in case.preprocess:
        if directive.name == "strip_comments":
            text = strip_comments(text)
        elif directive.name == "migrate_pragma":
            text = migrate_pragma(text, config.solc_version)
        elif directive.name == "wrap_unchecked":
            text = wrap_unchecked(text, list(directive.args))
    return dataclasses.replace(case, source_text=text)


def run_case(
    case: ContractCase,
    config: CampaignConfig,
    backend: GenBackend,
    runner=None,
    templates: Optional[PromptTemplates] = None,
) -> CaseResult:
    """Run one case to a terminal status; never raises into the campaign."""
    runner = runner or make_runner(config.harness)
    templates = templates or PromptTemplates.load(config.templates_dir)
    case_dir = Path(config.workdir_root) / case.case_id
    started = monotonic()
    state = CaseState()
    attempts: list[Attempt] = []

    def finish(status: CaseStatus) -> CaseResult:
        return CaseResult(
            case_id=case.case_id,
            vuln_class=case.vuln_class,
            status=status,
            attempts=tuple(attempts),
            wall_clock_s=monotonic() - started,
        )

    try:
        prepared = preprocess_case(case, config)
        state.advance("Preprocessed")
        prompt = build_exploit_prompt(prepared, templates)

        max_attempts = config.max_retries + 1
        while True:
            state.advance("Generated")
            attempt_no = state.current_attempt
            attempt_dir = case_dir / f"attempt-{attempt_no}"
            attempt_dir.mkdir(parents=True, exist_ok=True)
            _persist_json(attempt_dir / "prompt.json", {
                "case_id": prompt.case_id,
                "attempt_no": prompt.attempt_no,
                "system_text": prompt.system_text,
                "user_text": prompt.user_text,
            })

            response_path = attempt_dir / "response.md"
            if response_path.is_file():
                # left behind by a killed run: do not repeat the call
                raw = response_path.read_text(encoding="utf-8")
            else:
                raw = generate(prompt, backend)
                response_path.write_text(raw, encoding="utf-8")

            pair = extract_scripts(raw)
            (attempt_dir / "Exploit.extracted.sol").write_text(
                pair.exploit_source, encoding="utf-8"
            )
            (attempt_dir / "Exploit.t.extracted.sol").write_text(
                pair.test_source, encoding="utf-8"
            )

            counts = OptimizationCounts()
            if config.apply_optimizations:
                # fixes run on the generated scripts only, never the target
                exploit, addr_a = normalize_addresses(pair.exploit_source)
                exploit, pay_a = insert_payable_casts(exploit)
                test, addr_b = normalize_addresses(pair.test_source)
                test, pay_b = insert_payable_casts(test)
                counts = OptimizationCounts(addr_a + addr_b, pay_a + pay_b)
                pair = ScriptPair(exploit, test)
                state.advance("Optimized")

            project_dir = attempt_dir / "project"
            if project_dir.exists():
                # partial scaffold from a killed run; rebuilding is free
                shutil.rmtree(project_dir)
            scaffold_project(
                project_dir,
                prepared,
                pair,
                solc_version=config.solc_version,
                vendor_forge_std=(config.harness == "forge"),
            )

            build = runner.run_build(project_dir, config.build_timeout_s)
            state.advance("Built")
            test_report = None
            if build.success:
                test_report = runner.run_tests(project_dir, config.test_timeout_s)
                state.advance("Tested")

            outcome = classify_outcome(case.vuln_class, build, test_report)
            attempts.append(Attempt(
                attempt_no=attempt_no,
                scripts=pair,
                optimizations_applied=counts,
                build=BuildSummary(
                    success=build.success,
                    error_count=len(build.error_diagnostics),
                    duration_s=build.duration_s,
                ),
                test=None if test_report is None else TestSummary(
                    ran=test_report.ran,
                    passed=sum(1 for t in test_report.tests if t.status == "pass"),
                    failed=len(test_report.failures),
                    duration_s=test_report.duration_s,
                ),
                outcome=outcome,
            ))

            if outcome in (OutcomeClass.SUCCESS, OutcomeClass.SUCCESS_BY_REVERT_HEURISTIC):
                state.advance("Done")
                return finish(CaseStatus(outcome.value))

            if attempt_no >= max_attempts:
                state.advance("Done")
                if config.max_retries == 0:
                    # no retry loop was configured, so report the bare
                    # attempt outcome instead of a budget exhaustion
                    return finish(CaseStatus(outcome.value))
                return finish(CaseStatus.RETRY_EXHAUSTED)

            error_log = build.raw_output if not build.success else (
                test_report.raw_output if test_report is not None else ""
            )
            prompt = build_repair_prompt(
                prepared, pair, error_log, attempt_no, templates
            )
    except (BackendError, ExtractionError) as exc:
        log.warning("case %s: backend failure: %s", case.case_id, exc)
        return finish(CaseStatus.BACKEND_ERROR)
    except HarnessError as exc:
        log.warning("case %s: harness failure: %s", case.case_id, exc)
        return finish(CaseStatus.HARNESS_ERROR)
    except RexError as exc:
        log.warning("case %s: unexpected failure: %s", case.case_id, exc)
        return finish(CaseStatus.HARNESS_ERROR)
    except Exception as exc:  # the campaign must survive any single case
        log.exception("case %s: crashed: %s", case.case_id, exc)
        return finish(CaseStatus.HARNESS_ERROR)


@dataclass
class CampaignResult:
    results: list[CaseResult]  # everything in the store after the run
    ran_count: int  # cases executed by this invocation
    pending_before: int
    store_path: Path
    summary_path: Path

    @property
    def errors_present(self) -> bool:
        return any(r.status.is_error() for r in self.results)


def run_campaign(
    manifest_path: str | Path,
    overrides: Optional[dict[str, Any]] = None,
    backend: Optional[GenBackend] = None,
    runner=None,
) -> CampaignResult:
    """Run every unfinished case in the manifest with bounded parallelism."""
    cases, config = load_manifest(manifest_path)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(config, key, value)

    workdir = Path(config.workdir_root)
    workdir.mkdir(parents=True, exist_ok=True)
    write_manifest(workdir / "manifest.json", cases, config)
    return _execute(workdir, cases, config, backend, runner)


def resume_campaign(
    workdir_root: str | Path,
    backend: Optional[GenBackend] = None,
    runner=None,
) -> CampaignResult:
    """Continue a campaign from its stashed manifest and results log."""
    workdir = Path(workdir_root)
    manifest = workdir / "manifest.json"
    if not manifest.is_file():
        raise MissingFile(f"no stashed manifest in {workdir}")
    cases, config = load_manifest(manifest)
    config.workdir_root = str(workdir)
    return _execute(workdir, cases, config, backend, runner)


def _execute(
    workdir: Path,
    cases: list[ContractCase],
    config: CampaignConfig,
    backend: Optional[GenBackend],
    runner,
) -> CampaignResult:
    store = ResultStore(workdir / "results.jsonl")
    replayed = store.replay()
    store.drop_torn_tail(replayed)  # keeps future appends line-aligned
    done_ids = {r.case_id for r in replayed.results}
    pending = [c for c in cases if c.case_id not in done_ids]
    log.info("campaign: %d case(s), %d pending", len(cases), len(pending))

    if backend is None:
        backend = _backend_from_config(config)
    runner = runner or make_runner(config.harness)
    templates = PromptTemplates.load(config.templates_dir)

    new_results: list[CaseResult] = []
    if pending:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = [
                pool.submit(run_case, case, config, backend, runner, templates)
                for case in pending
            ]
            for future in as_completed(futures):
                result = future.result()
                result = dataclasses.replace(
                    result,
                    finished_at=datetime.now(timezone.utc).isoformat(),
                )
                store.append(result)
                new_results.append(result)
                log.info("case %s: %s (%d attempt(s))",
                         result.case_id, result.status.value, len(result.attempts))

    all_results = replayed.results + new_results
    table = aggregate_success(all_results)
    summary_path = workdir / "campaign.summary.json"
    _persist_json(summary_path, {
        "cases_total": len(cases),
        "cases_run": len(new_results),
        "statuses": _status_histogram(all_results),
        "per_class": {
            row.vuln_class.value: {"successes": row.successes, "total": row.total}
            for row in table.rows
        },
        "average_success_pct": table.average_percentage,
    })
    print(render_success_markdown(table, title="Per-class tally"))
    return CampaignResult(
        results=all_results,
        ran_count=len(new_results),
        pending_before=len(pending),
        store_path=store.path,
        summary_path=summary_path,
    )


def _backend_from_config(config: CampaignConfig) -> GenBackend:
    kind = config.backend_id if config.backend_id in ("scripted", "null") else "http_chat"
    return make_backend(
        config.backend_id,
        kind,
        fixture_dir=config.fixtures_dir,
        base_url=config.base_url,
        model_name=config.model_name,
        rpm_limit=config.rpm_limit,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
    )


def _status_histogram(results: list[CaseResult]) -> dict[str, int]:
    histogram: dict[str, int] = {}
    for result in results:
        histogram[result.status.value] = histogram.get(result.status.value, 0) + 1
    return histogram


def _persist_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
