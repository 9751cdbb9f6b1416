"""Dataset manifest loading and the append-only campaign result store.

The manifest is a single JSON document; results are JSON Lines so a
crashed campaign can be resumed by replaying whole lines and dropping a
torn tail. Appends go through one lock so records from parallel workers
never interleave mid-line.
"""

from __future__ import annotations

import json
import os
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    CorruptStore,
    DuplicateCaseId,
    IoError,
    MissingFile,
    SchemaViolation,
    SerializationError,
)
from .records import CampaignConfig, CaseResult, ContractCase, Directive, VulnClass
from .soltx import lex

MANIFEST_VERSION = 1


def load_manifest(path: str | Path) -> tuple[list[ContractCase], CampaignConfig]:
    """Load and validate a campaign manifest.

    Source paths resolve relative to the manifest's directory; every
    source must exist, be non-empty, and lex cleanly. Case order is the
    manifest's order.
    """
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation("<document>", f"unreadable manifest: {exc}") from exc

    if not isinstance(raw, dict):
        raise SchemaViolation("<document>", "manifest must be a JSON object")
    if raw.get("version") != MANIFEST_VERSION:
        raise SchemaViolation("version", f"expected {MANIFEST_VERSION}, got {raw.get('version')!r}")
    if not isinstance(raw.get("cases"), list):
        raise SchemaViolation("cases", "must be a list")

    config = CampaignConfig.from_dict(raw.get("config", {}))

    base_dir = manifest_path.parent.resolve()
    # backend fixtures and prompt templates travel with the manifest
    if config.fixtures_dir and not os.path.isabs(config.fixtures_dir):
        config.fixtures_dir = str((base_dir / config.fixtures_dir).resolve())
    if config.templates_dir and not os.path.isabs(config.templates_dir):
        config.templates_dir = str((base_dir / config.templates_dir).resolve())
    cases: list[ContractCase] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(raw["cases"]):
        where = f"cases[{i}]"
        if not isinstance(entry, dict):
            raise SchemaViolation(where, "case must be an object")
        case_id = entry.get("case_id")
        if not isinstance(case_id, str) or not case_id:
            raise SchemaViolation(f"{where}.case_id", "must be a non-empty string")
        if case_id in seen_ids:
            raise DuplicateCaseId(case_id)
        seen_ids.add(case_id)

        vuln_class = VulnClass.parse(_require_str(entry, "vuln_class", where))
        rel_source = _require_str(entry, "source", where)
        source_path = (base_dir / rel_source).resolve()
        if not source_path.is_file():
            raise MissingFile(f"{where}.source: {source_path} does not exist")
        source_text = source_path.read_text(encoding="utf-8")
        if not source_text:
            raise SchemaViolation(f"{where}.source", "source file is empty")
        try:
            lex(source_text)
        except Exception as exc:
            raise SchemaViolation(f"{where}.source", f"source does not lex: {exc}") from exc

        directives = tuple(
            Directive.parse(tag, where=f"{where}.preprocess")
            for tag in entry.get("preprocess", [])
        )
        cases.append(
            ContractCase(
                case_id=case_id,
                source_path=str(source_path),
                source_text=source_text,
                vuln_class=vuln_class,
                preprocess=directives,
                provenance=str(entry.get("provenance", "")),
            )
        )
    return cases, config


def _require_str(entry: dict, key: str, where: str) -> str:
    value = entry.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaViolation(f"{where}.{key}", "must be a non-empty string")
    return value


def write_manifest(path: str | Path, cases: list[ContractCase], config: CampaignConfig) -> None:
    """Write a fully-resolved manifest copy (absolute source paths).

    Campaigns stash one of these in the workdir so a resume never
    depends on the original manifest's location.
    """
    doc = {
        "version": MANIFEST_VERSION,
        "config": config.to_dict(),
        "cases": [
            {
                "case_id": c.case_id,
                "source": c.source_path,
                "vuln_class": c.vuln_class.value,
                "preprocess": [d.tag() for d in c.preprocess],
                "provenance": c.provenance,
            }
            for c in cases
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


@dataclass
class ReplayedStore:
    """Everything a results-log replay recovers."""

    results: list[CaseResult]
    dropped_torn_line: bool = False
    skipped_interior: int = 0
    torn_offset: int | None = None  # byte offset where the torn tail starts


class ResultStore:
    """Append-only JSON Lines store of case results.

    One lock serializes appends; each record is a single write followed
    by flush+fsync, so a crash can tear at most the final line.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, result: CaseResult) -> None:
        try:
            line = json.dumps(result.to_dict(), sort_keys=True)
        except (TypeError, ValueError) as exc:
            raise SerializationError(str(exc)) from exc
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise IoError(f"cannot append to {self.path}: {exc}") from exc

    def replay(self) -> ReplayedStore:
        """Reconstruct campaign state from the log.

        A torn final line (crash mid-write, possibly mid-UTF-8) is
        dropped with a warning; more than one unparsable interior line
        means the store is corrupt rather than merely torn.
        """
        if not self.path.exists():
            return ReplayedStore(results=[])
        blob = self.path.read_bytes()
        raw_lines = blob.split(b"\n")
        if raw_lines and raw_lines[-1] == b"":
            raw_lines.pop()

        results: list[CaseResult] = []
        bad_interior = 0
        dropped_torn = False
        torn_offset: int | None = None
        offset = 0
        for i, raw in enumerate(raw_lines):
            try:
                results.append(
                    CaseResult.from_dict(json.loads(raw.decode("utf-8")))
                )
            except (UnicodeDecodeError, json.JSONDecodeError, SerializationError):
                if i == len(raw_lines) - 1:
                    dropped_torn = True
                    torn_offset = offset
                    warnings.warn(
                        f"dropping torn final line in {self.path}", stacklevel=2
                    )
                else:
                    bad_interior += 1
            offset += len(raw) + 1
        if bad_interior > 1:
            raise CorruptStore(
                f"{self.path}: {bad_interior} unparsable interior lines"
            )
        if bad_interior == 1:
            warnings.warn(
                f"skipped one unparsable interior line in {self.path}", stacklevel=2
            )
        return ReplayedStore(
            results=results,
            dropped_torn_line=dropped_torn,
            skipped_interior=bad_interior,
            torn_offset=torn_offset,
        )

    def drop_torn_tail(self, replayed: ReplayedStore) -> None:
        """Physically remove a torn final line so appends stay line-aligned."""
        if replayed.torn_offset is None:
            return
        with self._lock:
            with open(self.path, "r+b") as fh:
                fh.truncate(replayed.torn_offset)


def append_result(store: ResultStore, result: CaseResult) -> None:
    """Append one validated result; see ResultStore.append."""
    store.append(result)
