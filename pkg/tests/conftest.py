from __future__ import annotations

import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
MINI_CORPUS = FIXTURES / "mini_corpus"
FORGE_OUTPUTS = FIXTURES / "forge_outputs"
SCRIPTED = FIXTURES / "scripted"
ASSETS = Path(__file__).parent.parent / "assets"

# embedded target used by the pipeline scenario cases
BANK_SOURCE = """\
// SPDX-License-Identifier: MIT
pragma solidity 0.8.26;

contract Bank {
    mapping(address => uint256) public balances;

    function deposit() public payable {
        balances[msg.sender] += msg.value;
    }

    function withdraw() public {
        uint256 amount = balances[msg.sender];
        require(amount > 0, "nothing to withdraw");
        (bool ok, ) = msg.sender.call{value: amount}("");
        require(ok, "send failed");
        balances[msg.sender] = 0;
    }
}
"""


@pytest.fixture
def corpus_sources() -> dict[str, str]:
    return {
        p.name: p.read_text(encoding="utf-8")
        for p in sorted(MINI_CORPUS.glob("*.sol"))
    }


@pytest.fixture
def forge_output_labels() -> dict[str, dict]:
    return json.loads((FORGE_OUTPUTS / "labels.json").read_text(encoding="utf-8"))


def write_manifest(
    directory: Path,
    cases: list[dict],
    config: dict | None = None,
) -> Path:
    """Write sources + manifest.json under `directory`; returns manifest path.

    Each case dict: {case_id, source_text, vuln_class, preprocess?}.
    """
    src_dir = directory / "sources"
    src_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        rel = f"sources/{case['case_id']}.sol"
        (directory / rel).write_text(case["source_text"], encoding="utf-8")
        entries.append({
            "case_id": case["case_id"],
            "source": rel,
            "vuln_class": case["vuln_class"],
            "preprocess": case.get("preprocess", []),
            "provenance": case.get("provenance", "test"),
        })
    doc = {"version": 1, "config": config or {}, "cases": entries}
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return manifest


def scenario_config(workdir: Path, **extra) -> dict:
    base = {
        "backend_id": "scripted",
        "fixtures_dir": str(SCRIPTED),
        "harness": "sim",
        "workdir_root": str(workdir),
        "parallelism": 1,
    }
    base.update(extra)
    return base
