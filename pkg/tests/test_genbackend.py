from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from conftest import BANK_SOURCE, SCRIPTED
from rex import errors
from rex.genbackend import (
    EMPTY_LOG_NOTE,
    ERROR_EXCERPT_BYTES,
    NullBackend,
    Prompt,
    PromptTemplates,
    RateLimiter,
    ScriptedBackend,
    build_exploit_prompt,
    build_repair_prompt,
    extract_scripts,
    generate,
    make_backend,
    render_script_pair,
    tail_bytes,
)
from rex.records import ContractCase, ScriptPair, VulnClass


def _case(source: str = BANK_SOURCE, vuln: VulnClass = VulnClass.REENTRANCY) -> ContractCase:
    return ContractCase(
        case_id="r1",
        source_path="/tmp/bank.sol",
        source_text=source,
        vuln_class=vuln,
    )


# -- prompt builders ---------------------------------------------------------

def test_exploit_prompt_contains_class_and_source_once() -> None:
    prompt = build_exploit_prompt(_case())
    assert prompt.attempt_no == 1
    assert prompt.case_id == "r1"
    assert "Reentrancy" in prompt.user_text
    assert prompt.user_text.count(BANK_SOURCE) == 1


def test_exploit_prompt_deterministic() -> None:
    one = build_exploit_prompt(_case())
    two = build_exploit_prompt(_case())
    assert one == two


def test_exploit_prompt_names_required_files_and_imports() -> None:
    prompt = build_exploit_prompt(_case())
    for needle in (
        "// FILE: Exploit.sol",
        "// FILE: Exploit.t.sol",
        'import "forge-std/Test.sol";',
        'import "../src/Target.sol";',
        "step by step",
    ):
        assert needle in prompt.user_text


def test_template_overhead_under_4kb() -> None:
    big_source = "contract Big {}" + ("\n// pad" * 700)  # ~10 kB
    case = _case(source=big_source)
    prompt = build_exploit_prompt(case)
    overhead = len(prompt.user_text.encode()) - len(big_source.encode())
    assert overhead < 4096


def test_repair_prompt_truncates_error_log_to_tail() -> None:
    pair = ScriptPair("contract E {}", "contract T {}")
    log = "HEAD MARKER " + ("x" * 10_000) + " TAIL MARKER"
    prompt = build_repair_prompt(_case(), pair, log, prior_attempt_no=1)
    assert "TAIL MARKER" in prompt.user_text
    assert "HEAD MARKER" not in prompt.user_text
    embedded = prompt.user_text.split("Tool output (tail):")[1]
    assert len(tail_bytes(log, ERROR_EXCERPT_BYTES).encode()) <= ERROR_EXCERPT_BYTES


def test_repair_prompt_increments_attempt_no() -> None:
    pair = ScriptPair("contract E {}", "contract T {}")
    prompt = build_repair_prompt(_case(), pair, "boom", prior_attempt_no=2)
    assert prompt.attempt_no == 3


def test_repair_prompt_empty_log_notes_timeout() -> None:
    pair = ScriptPair("contract E {}", "contract T {}")
    prompt = build_repair_prompt(_case(), pair, "   \n", prior_attempt_no=1)
    assert EMPTY_LOG_NOTE in prompt.user_text


def test_repair_prompt_embeds_prior_scripts() -> None:
    pair = ScriptPair("contract Evil { uint x; }", "contract Check { uint y; }")
    prompt = build_repair_prompt(_case(), pair, "err", prior_attempt_no=1)
    assert pair.exploit_source in prompt.user_text
    assert pair.test_source in prompt.user_text


def test_templates_loadable_from_directory(tmp_path) -> None:
    for name in ("system.txt", "exploit.txt", "repair.txt"):
        (tmp_path / name).write_text(f"custom {name} {{{{source}}}}", encoding="utf-8")
    templates = PromptTemplates.load(tmp_path)
    prompt = build_exploit_prompt(_case(), templates)
    assert prompt.user_text.startswith("custom exploit.txt")


# -- backends ----------------------------------------------------------------

def _prompt(case_id: str = "good-on-first", attempt_no: int = 1) -> Prompt:
    return Prompt("sys", "user", attempt_no=attempt_no, case_id=case_id)


def test_scripted_backend_returns_exact_fixture_bytes() -> None:
    backend = ScriptedBackend(SCRIPTED)
    raw = generate(_prompt(), backend)
    expected = (SCRIPTED / "good-on-first" / "attempt1.md").read_text(encoding="utf-8")
    assert raw == expected


def test_scripted_backend_missing_attempt() -> None:
    backend = ScriptedBackend(SCRIPTED)
    with pytest.raises(errors.FixtureMissing):
        generate(_prompt(attempt_no=3), backend)


def test_null_backend_refuses() -> None:
    with pytest.raises(errors.BackendRefused):
        generate(_prompt(), NullBackend())


def test_make_backend_validation() -> None:
    with pytest.raises(errors.BackendRefused):
        make_backend("scripted", "scripted", fixture_dir=None)
    with pytest.raises(errors.BackendRefused):
        make_backend("api", "http_chat", base_url=None, model_name="m")
    with pytest.raises(errors.BackendRefused):
        make_backend("x", "mystery")


def test_http_backend_requires_env_key(monkeypatch) -> None:
    monkeypatch.delenv("REX_API_KEY_API", raising=False)
    backend = make_backend(
        "api", "http_chat", base_url="http://localhost:1", model_name="m"
    )
    with pytest.raises(errors.BackendRefused):
        backend.generate(_prompt())


def test_rate_limiter_spaces_calls() -> None:
    limiter = RateLimiter(per_minute=1200)  # 50 ms interval
    started = time.monotonic()
    for _ in range(4):
        limiter.acquire()
    elapsed = time.monotonic() - started
    assert elapsed >= 0.140  # three inter-call gaps


class _ChatHandler(BaseHTTPRequestHandler):
    script: list[tuple[int, dict]] = []  # (status, payload) consumed per request
    seen: list[dict] = []

    def do_POST(self):  # noqa: N802 (stdlib naming)
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).seen.append(body)
        status, payload = type(self).script.pop(0)
        raw = json.dumps(payload).encode()
        self.send_response(status)
        if status == 429:
            self.send_header("Retry-After", "7")
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):  # keep test output quiet
        pass


@pytest.fixture
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ChatHandler.script = []
    _ChatHandler.seen = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def _http_backend(base_url: str) -> object:
    return make_backend(
        "testapi", "http_chat", base_url=base_url, model_name="test-model"
    )


def test_http_backend_round_trip(chat_server, monkeypatch) -> None:
    monkeypatch.setenv("REX_API_KEY_TESTAPI", "sekrit")
    _ChatHandler.script = [
        (200, {"choices": [{"message": {"content": "generated!"}}]}),
    ]
    backend = _http_backend(chat_server)
    assert backend.generate(_prompt()) == "generated!"
    request = _ChatHandler.seen[0]
    assert request["model"] == "test-model"
    assert request["messages"][0]["role"] == "system"
    assert request["messages"][1]["content"] == "user"
    assert request["temperature"] == 0.2
    assert request["max_tokens"] == 8192


def test_http_backend_retries_server_errors(chat_server, monkeypatch) -> None:
    monkeypatch.setenv("REX_API_KEY_TESTAPI", "sekrit")
    _ChatHandler.script = [
        (500, {}),
        (200, {"choices": [{"message": {"content": "second try"}}]}),
    ]
    assert _http_backend(chat_server).generate(_prompt()) == "second try"


def test_http_backend_surfaces_rate_limit(chat_server, monkeypatch) -> None:
    monkeypatch.setenv("REX_API_KEY_TESTAPI", "sekrit")
    _ChatHandler.script = [(429, {})]
    with pytest.raises(errors.RateLimited) as exc:
        _http_backend(chat_server).generate(_prompt())
    assert exc.value.retry_after == 7.0


def test_http_backend_rejects_malformed_payload(chat_server, monkeypatch) -> None:
    monkeypatch.setenv("REX_API_KEY_TESTAPI", "sekrit")
    _ChatHandler.script = [(200, {"unexpected": True})]
    with pytest.raises(errors.TransportError):
        _http_backend(chat_server).generate(_prompt())


# -- script extraction -------------------------------------------------------

EXPLOIT = "// FILE: Exploit.sol\npragma solidity 0.8.26;\ncontract E { uint a; }"
TEST = "// FILE: Exploit.t.sol\npragma solidity 0.8.26;\ncontract T { uint b; }"


def _fenced(*bodies: str) -> str:
    return "\n\n".join(f"```solidity\n{body}\n```" for body in bodies)


def test_labeled_blocks_route_correctly_in_either_order() -> None:
    forward = extract_scripts("intro\n" + _fenced(EXPLOIT, TEST))
    backward = extract_scripts("intro\n" + _fenced(TEST, EXPLOIT))
    assert forward == backward
    assert "contract E" in forward.exploit_source
    assert "contract T" in forward.test_source


def test_unlabeled_blocks_fall_back_to_position() -> None:
    first = "contract First { uint a; }"
    second = "contract Second { uint b; }"
    pair = extract_scripts(_fenced(first, second))
    assert pair.exploit_source == first
    assert pair.test_source == second


def test_marker_above_fence_recognized() -> None:
    raw = (
        "// FILE: Exploit.t.sol\n```solidity\ncontract T { uint b; }\n```\n\n"
        "// FILE: Exploit.sol\n```solidity\ncontract E { uint a; }\n```\n"
    )
    pair = extract_scripts(raw)
    assert "contract E" in pair.exploit_source
    assert "contract T" in pair.test_source


def test_prose_only_response_rejected() -> None:
    with pytest.raises(errors.NoCodeBlocks):
        extract_scripts("I could not produce code, sorry.")


def test_single_block_rejected() -> None:
    with pytest.raises(errors.OnlyOneScript):
        extract_scripts(_fenced(EXPLOIT))


def test_unlexable_script_rejected() -> None:
    broken = '// FILE: Exploit.sol\ncontract E { string s = "unterminated; }'
    with pytest.raises(errors.UnlexableScript):
        extract_scripts(_fenced(broken, TEST))


def test_round_trip_on_synthetic_pairs() -> None:
    for i in range(20):
        pair = ScriptPair(
            exploit_source=f"// FILE: Exploit.sol\ncontract E{i} {{ uint a{i}; }}",
            test_source=f"// FILE: Exploit.t.sol\ncontract T{i} {{ uint b{i}; }}",
        )
        assert extract_scripts(render_script_pair(pair)) == pair


def test_extract_from_shipped_scenario_fixtures() -> None:
    for scenario in ("good-on-first", "heuristic-arith", "plain-fail"):
        raw = (SCRIPTED / scenario / "attempt1.md").read_text(encoding="utf-8")
        pair = extract_scripts(raw)
        assert "contract Exploit" in pair.exploit_source
        assert "contract ExploitTest" in pair.test_source
