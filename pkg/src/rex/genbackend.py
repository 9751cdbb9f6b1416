"""Prompt construction, generation backends, and script extraction.

Prompt templates are plain-text files with {{placeholder}} slots; the
packaged defaults can be overridden by pointing the campaign config at
a directory with the same file names. Backends share one interface so
the pipeline cannot tell a paid chat API from the deterministic
fixture-replay backend used for offline testing.
"""

from __future__ import annotations

import os
import re
import time
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import (
    BackendRefused,
    FixtureMissing,
    NoCodeBlocks,
    OnlyOneScript,
    RateLimited,
    TransportError,
    UnlexableScript,
)
from .records import ContractCase, ScriptPair
from .soltx import lex

ERROR_EXCERPT_BYTES = 4000
EMPTY_LOG_NOTE = "no compiler output; process timed out"


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    attempt_no: int
    case_id: str


class PromptTemplates:
    """The three template files: system.txt, exploit.txt, repair.txt."""

    def __init__(self, system: str, exploit: str, repair: str):
        self.system = system
        self.exploit = exploit
        self.repair = repair

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptTemplates":
        if directory is None:
            base = resources.files("rex") / "templates"
            read = lambda name: (base / name).read_text(encoding="utf-8")
        else:
            root = Path(directory)
            read = lambda name: (root / name).read_text(encoding="utf-8")
        return cls(read("system.txt"), read("exploit.txt"), read("repair.txt"))


def build_exploit_prompt(
    case: ContractCase, templates: PromptTemplates | None = None
) -> Prompt:
    """First-attempt prompt; embeds the preprocessed source exactly once."""
    templates = templates or PromptTemplates.load()
    user = templates.exploit.replace(
        "{{vuln_class}}", case.vuln_class.display_name()
    ).replace("{{source}}", case.source_text)
    return Prompt(
        system_text=templates.system,
        user_text=user,
        attempt_no=1,
        case_id=case.case_id,
    )


def build_repair_prompt(
    case: ContractCase,
    prior: ScriptPair,
    error_log: str,
    prior_attempt_no: int,
    templates: PromptTemplates | None = None,
) -> Prompt:
    """Feedback prompt carrying the failed scripts and the log tail."""
    templates = templates or PromptTemplates.load()
    excerpt = tail_bytes(error_log, ERROR_EXCERPT_BYTES)
    if not excerpt.strip():
        excerpt = EMPTY_LOG_NOTE
    user = (
        templates.repair
        .replace("{{vuln_class}}", case.vuln_class.display_name())
        .replace("{{prior_exploit}}", prior.exploit_source)
        .replace("{{prior_test}}", prior.test_source)
        .replace("{{error_excerpt}}", excerpt)
        .replace("{{source}}", case.source_text)
    )
    return Prompt(
        system_text=templates.system,
        user_text=user,
        attempt_no=prior_attempt_no + 1,
        case_id=case.case_id,
    )


def tail_bytes(text: str, limit: int) -> str:
    """Trailing `limit` bytes of `text`, valid UTF-8 preserved."""
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[-limit:].decode("utf-8", errors="replace")


# -- backends ----------------------------------------------------------------

class GenBackend:
    """Interface every generation backend implements."""

    id: str = ""
    kind: str = ""

    def generate(self, prompt: Prompt) -> str:
        raise NotImplementedError


class NullBackend(GenBackend):
    """Always refuses; exists so failure paths are testable."""

    kind = "null"

    def __init__(self, backend_id: str = "null"):
        self.id = backend_id

    def generate(self, prompt: Prompt) -> str:
        raise BackendRefused(f"null backend refuses case {prompt.case_id}")


class ScriptedBackend(GenBackend):
    """Replays fixture responses: <dir>/<case_id>/attempt<k>.md."""

    kind = "scripted"

    def __init__(self, fixture_dir: str | Path, backend_id: str = "scripted"):
        self.id = backend_id
        self.fixture_dir = Path(fixture_dir)

    def generate(self, prompt: Prompt) -> str:
        path = self.fixture_dir / prompt.case_id / f"attempt{prompt.attempt_no}.md"
        if not path.is_file():
            raise FixtureMissing(prompt.case_id, prompt.attempt_no)
        return path.read_text(encoding="utf-8")


class RateLimiter:
    """Global requests-per-minute limiter, shared across worker threads."""

    def __init__(self, per_minute: float):
        if per_minute <= 0:
            raise ValueError("per_minute must be positive")
        self._interval = 60.0 / per_minute
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._interval
        if wait > 0:
            time.sleep(wait)


class HttpChatBackend(GenBackend):
    """JSON chat-completion transport.

    The bearer token comes exclusively from REX_API_KEY_<BACKEND_ID>;
    credentials never live in manifests.
    """

    kind = "http_chat"

    def __init__(
        self,
        backend_id: str,
        base_url: str,
        model_name: str,
        timeout_s: float = 120.0,
        transport_retries: int = 2,
        temperature: float = 0.2,
        max_output_tokens: int = 8192,
        limiter: Optional[RateLimiter] = None,
    ):
        self.id = backend_id
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.timeout_s = timeout_s
        self.transport_retries = transport_retries
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.limiter = limiter

    def _api_key(self) -> str:
        env_name = f"REX_API_KEY_{self.id.upper().replace('-', '_')}"
        key = os.environ.get(env_name, "")
        if not key:
            raise BackendRefused(f"no API key in ${env_name}")
        return key

    def generate(self, prompt: Prompt) -> str:
        import requests

        key = self._api_key()
        payload = {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        last_error: Exception | None = None
        for _ in range(self.transport_retries + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers={"Authorization": f"Bearer {key}"},
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 429:
                retry_after = float(response.headers.get("Retry-After", "1"))
                raise RateLimited(retry_after)
            if response.status_code >= 500:
                last_error = TransportError(f"server error {response.status_code}")
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"chat endpoint returned {response.status_code}: "
                    f"{response.text[:200]}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
        raise TransportError(f"transport failed after retries: {last_error}")


def make_backend(
    backend_id: str,
    kind: str,
    fixture_dir: str | Path | None = None,
    base_url: str | None = None,
    model_name: str = "",
    rpm_limit: float | None = None,
    temperature: float = 0.2,
    max_output_tokens: int = 8192,
) -> GenBackend:
    if kind == "scripted":
        if fixture_dir is None:
            raise BackendRefused("scripted backend needs a fixture directory")
        return ScriptedBackend(fixture_dir, backend_id=backend_id)
    if kind == "null":
        return NullBackend(backend_id)
    if kind == "http_chat":
        if not base_url or not model_name:
            raise BackendRefused("http_chat backend needs base_url and model_name")
        limiter = RateLimiter(rpm_limit) if rpm_limit else None
        return HttpChatBackend(
            backend_id, base_url, model_name,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            limiter=limiter,
        )
    raise BackendRefused(f"unknown backend kind {kind!r}")


def generate(prompt: Prompt, backend: GenBackend) -> str:
    """Raw response text for `prompt` from `backend`."""
    return backend.generate(prompt)


# -- script extraction -------------------------------------------------------

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_FILE_MARKER_RE = re.compile(r"//\s*FILE:\s*(\S+)")


def extract_scripts(raw: str) -> ScriptPair:
    """Pull the exploit and test sources out of a model response.

    Fenced blocks are classified by their `// FILE:` marker (first lines
    of the block, or the prose line right above the fence). Unlabeled
    responses fall back to position: first block exploit, second test.
    """
    blocks: list[tuple[str, Optional[str]]] = []
    for match in _FENCE_RE.finditer(raw):
        content = match.group(1)
        if content.endswith("\n"):
            content = content[:-1]
        label = _block_label(raw, match.start(), content)
        blocks.append((content, label))

    if not blocks:
        raise NoCodeBlocks("response contains no fenced code blocks")
    if len(blocks) == 1:
        raise OnlyOneScript("response contains a single code block; need two")

    exploit = next((c for c, l in blocks if l == "exploit"), None)
    test = next((c for c, l in blocks if l == "test"), None)
    if exploit is None or test is None:
        unlabeled = [c for c, l in blocks if l is None]
        if exploit is None and unlabeled:
            exploit = unlabeled.pop(0)
        if test is None and unlabeled:
            test = unlabeled.pop(0)
    if exploit is None or test is None:
        raise OnlyOneScript("could not identify both an exploit and a test block")

    for which, text in (("exploit", exploit), ("test", test)):
        if not text.strip():
            raise UnlexableScript(which, ValueError("empty script"))
        try:
            lex(text)
        except Exception as exc:
            raise UnlexableScript(which, exc) from exc
    return ScriptPair(exploit_source=exploit, test_source=test)


def _block_label(raw: str, fence_start: int, content: str) -> Optional[str]:
    head = "\n".join(content.split("\n")[:3])
    marker = _FILE_MARKER_RE.search(head)
    if marker is None:
        preceding = raw[:fence_start].rstrip().split("\n")
        if preceding:
            marker = _FILE_MARKER_RE.search(preceding[-1])
    if marker is None:
        return None
    name = marker.group(1)
    return "test" if name.endswith(".t.sol") else "exploit"


def render_script_pair(pair: ScriptPair) -> str:
    """Canonical two-block rendering; extract_scripts inverts it."""
    return (
        "```solidity\n" + pair.exploit_source + "\n```\n\n"
        "```solidity\n" + pair.test_source + "\n```\n"
    )
