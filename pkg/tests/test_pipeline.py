from __future__ import annotations

import json
import signal
import subprocess
import sys
import time

import pytest

from conftest import BANK_SOURCE, SCRIPTED, scenario_config, write_manifest
from rex import errors
from rex.corpus import ResultStore, load_manifest
from rex.genbackend import NullBackend, ScriptedBackend
from rex.pipeline import preprocess_case, resume_campaign, run_campaign, run_case
from rex.records import CaseStatus, OutcomeClass


def _scenario_case(case_id: str, vuln_class: str = "Reentrancy") -> dict:
    return {"case_id": case_id, "source_text": BANK_SOURCE, "vuln_class": vuln_class}


def _load_single(tmp_path, case_id: str, *, vuln_class: str = "Reentrancy", **config):
    manifest = write_manifest(
        tmp_path,
        [_scenario_case(case_id, vuln_class)],
        scenario_config(tmp_path / "work", **config),
    )
    cases, cfg = load_manifest(manifest)
    return cases[0], cfg


# -- preprocessing -----------------------------------------------------------

def test_preprocess_applies_directives_in_order(tmp_path) -> None:
    source = "pragma solidity ^0.4.24; // legacy\ncontract C { function f() public { x = x + 1; } }"
    manifest = write_manifest(
        tmp_path,
        [{
            "case_id": "c1",
            "source_text": source,
            "vuln_class": "Arithmetic",
            "preprocess": ["strip_comments", "migrate_pragma", "wrap_unchecked:f"],
        }],
        scenario_config(tmp_path / "work"),
    )
    cases, config = load_manifest(manifest)
    prepared = preprocess_case(cases[0], config)
    assert "// legacy" not in prepared.source_text
    assert "pragma solidity 0.8.26;" in prepared.source_text
    assert "unchecked" in prepared.source_text


# -- single-case scenarios ---------------------------------------------------

def test_good_on_first_succeeds_in_one_attempt(tmp_path) -> None:
    case, config = _load_single(tmp_path, "good-on-first")
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.SUCCESS
    assert len(result.attempts) == 1
    assert result.attempts[0].outcome == OutcomeClass.SUCCESS
    assert result.attempts[0].build.success


def test_compile_fail_then_repair_succeeds(tmp_path) -> None:
    case, config = _load_single(tmp_path, "compile-fail-then-good")
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.SUCCESS
    assert [a.outcome for a in result.attempts] == [
        OutcomeClass.FAILED_COMPILE,
        OutcomeClass.SUCCESS,
    ]
    # the repair prompt carried attempt 1's diagnostics
    prompt2 = json.loads(
        (tmp_path / "work" / "compile-fail-then-good" / "attempt-2" / "prompt.json")
        .read_text(encoding="utf-8")
    )
    assert prompt2["attempt_no"] == 2
    assert "2314" in prompt2["user_text"]
    assert "Compiler run failed" in prompt2["user_text"]


def test_always_bad_exhausts_retries(tmp_path) -> None:
    case, config = _load_single(tmp_path, "always-bad", max_retries=3)
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.RETRY_EXHAUSTED
    assert len(result.attempts) == 4
    assert all(a.outcome == OutcomeClass.FAILED_COMPILE for a in result.attempts)
    assert [a.attempt_no for a in result.attempts] == [1, 2, 3, 4]


def test_attempt_bound_never_exceeded(tmp_path) -> None:
    for retries in (0, 1, 2, 3):
        case, config = _load_single(
            tmp_path / f"r{retries}", "always-bad", max_retries=retries
        )
        result = run_case(case, config, ScriptedBackend(SCRIPTED))
        assert len(result.attempts) <= retries + 1


def test_zero_retries_reports_bare_outcome(tmp_path) -> None:
    case, config = _load_single(tmp_path / "a", "always-bad", max_retries=0)
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.FAILED_COMPILE

    case, config = _load_single(tmp_path / "b", "plain-fail", max_retries=0)
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.FAILED_TEST


def test_heuristic_success_for_arithmetic_panic(tmp_path) -> None:
    case, config = _load_single(
        tmp_path, "heuristic-arith", vuln_class="Arithmetic", max_retries=0
    )
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.SUCCESS_BY_REVERT_HEURISTIC
    assert result.attempts[0].test is not None
    assert result.attempts[0].test.failed == 1


def test_same_panic_is_plain_failure_for_other_classes(tmp_path) -> None:
    case, config = _load_single(
        tmp_path, "heuristic-arith", vuln_class="AccessControl", max_retries=0
    )
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.FAILED_TEST


def test_backend_error_becomes_status(tmp_path) -> None:
    case, config = _load_single(tmp_path, "good-on-first")
    result = run_case(case, config, NullBackend())
    assert result.status == CaseStatus.BACKEND_ERROR
    assert result.attempts == ()


def test_missing_fixture_is_backend_error(tmp_path) -> None:
    case, config = _load_single(tmp_path, "no-such-scenario")
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.BACKEND_ERROR


def test_artifacts_persisted_per_attempt(tmp_path) -> None:
    case, config = _load_single(tmp_path, "compile-fail-then-good")
    run_case(case, config, ScriptedBackend(SCRIPTED))
    for attempt in ("attempt-1", "attempt-2"):
        base = tmp_path / "work" / "compile-fail-then-good" / attempt
        assert (base / "prompt.json").is_file()
        assert (base / "response.md").is_file()
        assert (base / "Exploit.extracted.sol").is_file()
        assert (base / "project" / "src" / "Exploit.sol").is_file()
        assert (base / "project" / "build.log").is_file()


def test_optimization_counts_recorded(tmp_path) -> None:
    case, config = _load_single(tmp_path, "good-on-first")
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    counts = result.attempts[0].optimizations_applied
    assert counts.addresses_fixed >= 0 and counts.payable_casts >= 0


def test_optimizations_can_be_disabled(tmp_path) -> None:
    case, config = _load_single(tmp_path, "good-on-first", apply_optimizations=False)
    result = run_case(case, config, ScriptedBackend(SCRIPTED))
    assert result.status == CaseStatus.SUCCESS
    counts = result.attempts[0].optimizations_applied
    assert counts.addresses_fixed == 0 and counts.payable_casts == 0
    # the scaffolded exploit equals the extracted one byte-for-byte
    attempt = tmp_path / "work" / "good-on-first" / "attempt-1"
    extracted = (attempt / "Exploit.extracted.sol").read_text(encoding="utf-8")
    scaffolded = (attempt / "project" / "src" / "Exploit.sol").read_text(encoding="utf-8")
    assert scaffolded == extracted


# -- campaign-level behavior -------------------------------------------------

def _three_case_manifest(tmp_path, **config):
    return write_manifest(
        tmp_path,
        [
            _scenario_case("good-on-first"),
            _scenario_case("compile-fail-then-good"),
            {"case_id": "heuristic-arith", "source_text": BANK_SOURCE,
             "vuln_class": "Arithmetic"},
        ],
        scenario_config(tmp_path / "work", max_retries=3, **config),
    )


def test_campaign_conserves_cases(tmp_path) -> None:
    manifest = _three_case_manifest(tmp_path, parallelism=2)
    outcome = run_campaign(manifest)
    assert outcome.ran_count == 3
    store = ResultStore(tmp_path / "work" / "results.jsonl")
    results = store.replay().results
    assert len(results) == 3
    summary = json.loads((tmp_path / "work" / "campaign.summary.json").read_text())
    assert sum(v["total"] for v in summary["per_class"].values()) == 3


def test_empty_manifest_yields_empty_results(tmp_path) -> None:
    manifest = write_manifest(tmp_path, [], scenario_config(tmp_path / "work"))
    outcome = run_campaign(manifest)
    assert outcome.ran_count == 0
    assert not outcome.errors_present


def test_rerun_after_completion_is_noop(tmp_path) -> None:
    manifest = _three_case_manifest(tmp_path)
    first = run_campaign(manifest)
    before = (tmp_path / "work" / "results.jsonl").read_bytes()
    second = run_campaign(manifest)
    assert second.ran_count == 0
    assert second.pending_before == 0
    assert (tmp_path / "work" / "results.jsonl").read_bytes() == before


def test_scripted_pipeline_is_deterministic(tmp_path) -> None:
    stripped_runs = []
    for tag in ("one", "two"):
        base = tmp_path / tag
        base.mkdir()
        manifest = _three_case_manifest(base)
        run_campaign(manifest)
        lines = (base / "work" / "results.jsonl").read_text().strip().split("\n")
        cleaned = []
        for line in lines:
            record = json.loads(line)
            record.pop("finished_at")
            record.pop("wall_clock_s")
            for attempt in record["attempts"]:
                attempt["build"].pop("duration_s")
                if attempt["test"]:
                    attempt["test"].pop("duration_s")
            cleaned.append(record)
        stripped_runs.append(cleaned)
    assert stripped_runs[0] == stripped_runs[1]


def test_resume_runs_only_pending_cases(tmp_path) -> None:
    manifest = _three_case_manifest(tmp_path)
    cases, config = load_manifest(manifest)

    # simulate a campaign killed right after the first case completed:
    # its result line is on disk, the stashed manifest exists
    workdir = tmp_path / "work"
    workdir.mkdir()
    from rex.corpus import write_manifest as stash
    stash(workdir / "manifest.json", cases, config)
    first = run_case(cases[0], config, ScriptedBackend(SCRIPTED))
    store = ResultStore(workdir / "results.jsonl")
    store.append(first)
    first_line = (workdir / "results.jsonl").read_bytes()

    outcome = resume_campaign(workdir)
    assert outcome.ran_count == 2
    content = (workdir / "results.jsonl").read_bytes()
    assert content.startswith(first_line)  # case 1 untouched
    ids = {r.case_id for r in ResultStore(workdir / "results.jsonl").replay().results}
    assert ids == {"good-on-first", "compile-fail-then-good", "heuristic-arith"}


def test_resume_drops_torn_line_and_reruns_that_case(tmp_path) -> None:
    manifest = _three_case_manifest(tmp_path)
    run_campaign(manifest)
    store_path = tmp_path / "work" / "results.jsonl"
    lines = store_path.read_text().strip().split("\n")
    torn = lines[-1][: len(lines[-1]) // 2]
    store_path.write_text("\n".join(lines[:-1]) + "\n" + torn)

    with pytest.warns(UserWarning):
        outcome = resume_campaign(tmp_path / "work")
    assert outcome.ran_count == 1
    assert len(ResultStore(store_path).replay().results) == 3


def test_resume_without_stash_is_missing_file(tmp_path) -> None:
    with pytest.raises(errors.MissingFile):
        resume_campaign(tmp_path)


def test_kill_and_resume_integration(tmp_path) -> None:
    """Kill a live campaign between cases; resume must skip completed work."""
    manifest = write_manifest(
        tmp_path,
        [
            _scenario_case("good-on-first"),
            _scenario_case("slow-case"),  # sleeps ~3 s in its simulated build
            _scenario_case("compile-fail-then-good"),
        ],
        scenario_config(tmp_path / "work"),
    )
    proc = subprocess.Popen(
        [sys.executable, "-m", "rex.cli", "run", "--manifest", str(manifest)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        cwd=str(tmp_path),
    )
    store_path = tmp_path / "work" / "results.jsonl"
    deadline = time.monotonic() + 30
    try:
        while time.monotonic() < deadline:
            if store_path.exists() and store_path.read_text().count("\n") >= 1:
                break
            time.sleep(0.05)
        else:
            pytest.fail("first result never appeared")
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()

    survivors = store_path.read_text().strip().split("\n")
    done_before = {json.loads(line)["case_id"] for line in survivors if line}
    assert "good-on-first" in done_before
    before_bytes = store_path.read_bytes()

    outcome = resume_campaign(tmp_path / "work")
    assert outcome.ran_count == 3 - len(done_before)
    assert store_path.read_bytes().startswith(before_bytes)
    replay = ResultStore(store_path).replay()
    assert {r.case_id for r in replay.results} == {
        "good-on-first", "slow-case", "compile-fail-then-good"
    }
    assert all(r.status == CaseStatus.SUCCESS for r in replay.results)


def test_case_state_graph_enforced() -> None:
    from rex.pipeline import CaseState

    state = CaseState()
    state.advance("Preprocessed")
    state.advance("Generated")
    assert state.current_attempt == 1
    state.advance("Built")
    state.advance("Generated")  # retry after compile failure
    assert state.current_attempt == 2
    with pytest.raises(RuntimeError):
        state.advance("Done")  # Generated cannot jump straight to Done


def test_persisted_response_never_regenerated(tmp_path) -> None:
    # disk state left by a killed run must satisfy the next run without a
    # second backend call: the backend here refuses every call, yet the
    # case completes from the stashed response
    case, config = _load_single(tmp_path, "good-on-first")
    attempt_dir = tmp_path / "work" / "good-on-first" / "attempt-1"
    attempt_dir.mkdir(parents=True)
    stashed = (SCRIPTED / "good-on-first" / "attempt1.md").read_text(encoding="utf-8")
    (attempt_dir / "response.md").write_text(stashed, encoding="utf-8")

    result = run_case(case, config, NullBackend())
    assert result.status == CaseStatus.SUCCESS
    assert len(result.attempts) == 1


def test_every_case_status_reachable_via_scripted_backend(tmp_path) -> None:
    from rex.harness import ForgeRunner

    reached: dict[CaseStatus, str] = {}

    def record(scenario: str, status: CaseStatus) -> None:
        reached.setdefault(status, scenario)

    runs = [
        ("good-on-first", "Reentrancy", 3, None),
        ("heuristic-arith", "Arithmetic", 0, None),
        ("always-bad", "Reentrancy", 0, None),       # FailedCompile
        ("plain-fail", "AccessControl", 0, None),     # FailedTest
        ("always-bad", "Reentrancy", 3, None),        # RetryExhausted
        ("no-such-scenario", "DoS", 0, None),         # BackendError
        ("good-on-first", "DoS", 0, ForgeRunner("/no/such/forge")),  # HarnessError
    ]
    for i, (scenario, vuln, retries, runner) in enumerate(runs):
        case, config = _load_single(
            tmp_path / str(i), scenario, vuln_class=vuln, max_retries=retries
        )
        result = run_case(case, config, ScriptedBackend(SCRIPTED), runner=runner)
        record(scenario, result.status)

    assert set(reached) == set(CaseStatus)


def test_worker_count_respects_parallelism(tmp_path) -> None:
    # with parallelism=2 and four slow-ish cases, at most two attempt
    # directories may ever be in flight at once; probe via thread count
    from unittest.mock import patch

    import rex.pipeline as pl

    real_run_case = pl.run_case
    active = {"count": 0, "max": 0}
    import threading
    lock = threading.Lock()

    def tracking_run_case(*args, **kwargs):
        with lock:
            active["count"] += 1
            active["max"] = max(active["max"], active["count"])
        try:
            return real_run_case(*args, **kwargs)
        finally:
            with lock:
                active["count"] -= 1

    manifest = write_manifest(
        tmp_path,
        [_scenario_case(f"case-{i}") for i in range(4)],
        scenario_config(tmp_path / "work", parallelism=2),
    )
    # all four cases replay the same fixture scenario
    cases, config = load_manifest(manifest)
    backend = ScriptedBackend(SCRIPTED)

    class RenamingBackend:
        def generate(self, prompt):
            from rex.genbackend import Prompt
            return backend.generate(Prompt(
                prompt.system_text, prompt.user_text,
                prompt.attempt_no, "good-on-first",
            ))

    with patch.object(pl, "run_case", side_effect=tracking_run_case):
        pl.run_campaign(manifest, backend=RenamingBackend())
    assert active["max"] <= 2
