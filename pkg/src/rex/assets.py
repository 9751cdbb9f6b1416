"""Programmatic surface over the Solidity asset pack.

The pack is a plain directory tree (fixtures, decoys, templates,
vendored forge-std, recorded project fixtures) indexed by pack.json.
Resolution order for the pack root: explicit argument, REX_ASSETS_DIR,
then an `assets/` directory next to the repository checkout or the
current working directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import MissingAsset, UnlexableAsset
from .records import VulnClass
from .soltx import lex

REQUIRED_TEMPLATES = ("asm_transfer", "foundry_toml")
REQUIRED_DECOYS = ("fake_reentrancy_withdraw",)


@dataclass
class AssetCatalog:
    root: Path
    fixtures: dict[str, Path] = field(default_factory=dict)
    fixture_classes: dict[str, VulnClass] = field(default_factory=dict)
    decoys: dict[str, Path] = field(default_factory=dict)
    templates: dict[str, Path] = field(default_factory=dict)
    projects: dict[str, Path] = field(default_factory=dict)
    forge_std: Optional[Path] = None

    def fixture_for_class(self, vuln_class: VulnClass) -> Path:
        for fid, cls in self.fixture_classes.items():
            if cls == vuln_class:
                return self.fixtures[fid]
        raise MissingAsset(f"fixture:{vuln_class.value}")


def find_assets_root(explicit: Optional[Path] = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get("REX_ASSETS_DIR")
    if env:
        return Path(env)
    here = Path(__file__).resolve()
    for candidate in (
        here.parents[2] / "assets",  # <repo>/src/rex/assets.py -> <repo>/assets
        Path.cwd() / "assets",
    ):
        if (candidate / "pack.json").is_file():
            return candidate
    raise MissingAsset("pack.json (no asset pack found; set REX_ASSETS_DIR)")


def catalog(root: Optional[Path] = None) -> AssetCatalog:
    """Enumerate and validate the asset pack.

    Every indexed file must exist; fixtures and decoys must lex; the
    fixture set must cover all eight vulnerability classes.
    """
    pack_root = find_assets_root(root)
    index_path = pack_root / "pack.json"
    if not index_path.is_file():
        raise MissingAsset("pack.json")
    index = json.loads(index_path.read_text(encoding="utf-8"))

    cat = AssetCatalog(root=pack_root)
    for fixture_id, entry in index.get("fixtures", {}).items():
        path = pack_root / entry["file"]
        _check_solidity(fixture_id, path)
        cat.fixtures[fixture_id] = path
        cat.fixture_classes[fixture_id] = VulnClass.parse(entry["vuln_class"])

    for decoy_id, rel in index.get("decoys", {}).items():
        path = pack_root / rel
        _check_solidity(decoy_id, path)
        cat.decoys[decoy_id] = path

    for template_id, rel in index.get("templates", {}).items():
        path = pack_root / rel
        if not path.is_file():
            raise MissingAsset(template_id)
        cat.templates[template_id] = path

    for project_id, rel in index.get("projects", {}).items():
        path = pack_root / rel
        if not path.is_dir():
            raise MissingAsset(project_id)
        cat.projects[project_id] = path

    forge_std_rel = index.get("forge_std")
    if forge_std_rel:
        path = pack_root / forge_std_rel
        if not path.is_dir():
            raise MissingAsset("forge_std")
        cat.forge_std = path

    for template_id in REQUIRED_TEMPLATES:
        if template_id not in cat.templates:
            raise MissingAsset(template_id)
    for decoy_id in REQUIRED_DECOYS:
        if decoy_id not in cat.decoys:
            raise MissingAsset(decoy_id)
    covered = set(cat.fixture_classes.values())
    for vuln_class in VulnClass:
        if vuln_class not in covered:
            raise MissingAsset(f"fixture:{vuln_class.value}")
    return cat


def _check_solidity(asset_id: str, path: Path) -> None:
    if not path.is_file():
        raise MissingAsset(asset_id)
    try:
        lex(path.read_text(encoding="utf-8"))
    except Exception as exc:
        raise UnlexableAsset(asset_id, exc) from exc


_cache: dict[str, AssetCatalog] = {}


def default_catalog(root: Optional[Path] = None) -> AssetCatalog:
    """Cached catalog; cache key is the resolved pack root."""
    resolved = find_assets_root(root)
    key = str(resolved)
    if key not in _cache:
        _cache[key] = catalog(resolved)
    return _cache[key]
