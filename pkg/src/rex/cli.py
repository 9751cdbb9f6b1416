"""Operator command line.

Machine-readable output (metrics JSON, analyze CSV) goes to stdout;
progress and diagnostics go to stderr. Exit codes: 0 ok, 1 campaign
errors present, 2 usage, 3 environment, 4 data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analytics, pipeline, soltx
from .corpus import ResultStore, load_manifest
from .errors import (
    ForgeNotInstalled,
    ManifestError,
    RexError,
    StoreError,
    TransformError,
)
from .harness import forge_available

EXIT_OK = 0
EXIT_CAMPAIGN_ERRORS = 1
EXIT_USAGE = 2
EXIT_ENVIRONMENT = 3
EXIT_DATA = 4

log = logging.getLogger("rex.cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rex",
        description="Exploit-generation campaign runner for Solidity targets",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a campaign from a manifest")
    run.add_argument("--manifest", required=True)
    run.add_argument("--backend", help="override backend id (scripted, null, or an http backend id)")
    run.add_argument("--fixtures", help="fixture directory for the scripted backend")
    run.add_argument("--workdir", help="override workdir root")
    run.add_argument("--parallelism", type=int)
    run.add_argument("--max-retries", type=int, dest="max_retries")
    run.add_argument("--harness", choices=["forge", "sim"])
    run.add_argument("--model", dest="model_name")
    run.add_argument("--base-url", dest="base_url")
    run.add_argument("--templates-dir", dest="templates_dir")

    resume = sub.add_parser("resume", help="continue a campaign from its workdir")
    resume.add_argument("--workdir", required=True)

    transform = sub.add_parser("transform", help="apply one source transform to a file")
    transform.add_argument(
        "--op",
        required=True,
        choices=[
            "strip_comments", "migrate_pragma", "wrap_unchecked",
            "eip55", "payable", "decoy", "rare", "rename",
        ],
    )
    transform.add_argument("--in", dest="input", required=True)
    transform.add_argument("--out", dest="output", required=True)
    transform.add_argument("--target-version", default="0.8.26")
    transform.add_argument("--functions", help="comma-separated function names")
    transform.add_argument("--decoy-id")
    transform.add_argument("--anchor")
    transform.add_argument("--rename", action="append", default=[],
                           metavar="OLD=NEW")

    metrics = sub.add_parser("metrics", help="structural metrics of a file as JSON")
    metrics.add_argument("--in", dest="input", required=True)

    analyze = sub.add_parser("analyze", help="feature association over campaign results")
    analyze.add_argument("--results", required=True)
    analyze.add_argument("--manifest", required=True)
    analyze.add_argument("--q", type=int, default=3)
    analyze.add_argument("--out-dir", dest="out_dir")

    report = sub.add_parser("report", help="per-class success table from results")
    report.add_argument("--results", required=True)

    sub.add_parser("selftest", help="verify crypto and statistics kernels")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ManifestError, StoreError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ForgeNotInstalled as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except TransformError as exc:
        print(f"transform error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN_ERRORS


def _dispatch(args: argparse.Namespace) -> int:
    if args.verb == "run":
        return _cmd_run(args)
    if args.verb == "resume":
        return _cmd_resume(args)
    if args.verb == "transform":
        return _cmd_transform(args)
    if args.verb == "metrics":
        return _cmd_metrics(args)
    if args.verb == "analyze":
        return _cmd_analyze(args)
    if args.verb == "report":
        return _cmd_report(args)
    if args.verb == "selftest":
        return _cmd_selftest()
    raise AssertionError(f"unhandled verb {args.verb}")


def _cmd_run(args: argparse.Namespace) -> int:
    overrides = {
        "backend_id": args.backend,
        "fixtures_dir": args.fixtures,
        "workdir_root": args.workdir,
        "parallelism": args.parallelism,
        "max_retries": args.max_retries,
        "harness": args.harness,
        "model_name": args.model_name,
        "base_url": args.base_url,
        "templates_dir": args.templates_dir,
    }
    _, config = load_manifest(args.manifest)
    effective_harness = args.harness or config.harness
    if effective_harness == "forge" and not forge_available():
        raise ForgeNotInstalled(
            "forge not on PATH (set REX_FORGE_BIN, install foundry, or use --harness sim)"
        )
    result = pipeline.run_campaign(args.manifest, overrides)
    return EXIT_CAMPAIGN_ERRORS if result.errors_present else EXIT_OK


def _cmd_resume(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    manifest = workdir / "manifest.json"
    if manifest.is_file():
        _, config = load_manifest(manifest)
        if config.harness == "forge" and not forge_available():
            raise ForgeNotInstalled(
                "forge not on PATH (set REX_FORGE_BIN or install foundry)"
            )
    result = pipeline.resume_campaign(workdir)
    return EXIT_CAMPAIGN_ERRORS if result.errors_present else EXIT_OK


def _cmd_transform(args: argparse.Namespace) -> int:
    source = Path(args.input).read_text(encoding="utf-8")
    op = args.op
    if op == "strip_comments":
        out = soltx.strip_comments(source)
    elif op == "migrate_pragma":
        out = soltx.migrate_pragma(source, args.target_version)
    elif op == "wrap_unchecked":
        names = [n for n in (args.functions or "").split(",") if n]
        if not names:
            print("wrap_unchecked needs --functions", file=sys.stderr)
            return EXIT_USAGE
        out = soltx.wrap_unchecked(source, names)
    elif op == "eip55":
        out, count = soltx.normalize_addresses(source)
        log.info("normalized %d address literal(s)", count)
    elif op == "payable":
        out, count = soltx.insert_payable_casts(source)
        log.info("inserted %d payable cast(s)", count)
    elif op == "decoy":
        if not args.decoy_id or not args.anchor:
            print("decoy needs --decoy-id and --anchor", file=sys.stderr)
            return EXIT_USAGE
        out = soltx.inject_decoy(source, args.decoy_id, args.anchor)
    elif op == "rare":
        names = [n for n in (args.functions or "").split(",") if n]
        if len(names) != 1:
            print("rare needs --functions with exactly one name", file=sys.stderr)
            return EXIT_USAGE
        out = soltx.apply_rare_construct(source, names[0])
    elif op == "rename":
        mapping = {}
        for item in args.rename:
            old, sep, new = item.partition("=")
            if not sep:
                print(f"bad --rename {item!r}; expected OLD=NEW", file=sys.stderr)
                return EXIT_USAGE
            mapping[old] = new
        if not mapping:
            print("rename needs at least one --rename OLD=NEW", file=sys.stderr)
            return EXIT_USAGE
        out = soltx.obfuscate_pattern(source, mapping)
    else:
        raise AssertionError(op)
    Path(args.output).write_text(out, encoding="utf-8")
    return EXIT_OK


def _cmd_metrics(args: argparse.Namespace) -> int:
    source = Path(args.input).read_text(encoding="utf-8")
    m = analytics.compute_metrics(source)
    print(json.dumps({
        "nsloc": m.nsloc,
        "complexity_score": m.complexity_score,
        "external_calls": m.external_calls,
        "inheritance_depth": m.inheritance_depth,
        "has_inline_assembly": m.has_inline_assembly,
        "has_payable_func": m.has_payable_func,
    }, indent=2))
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    cases, _ = load_manifest(args.manifest)
    replay = ResultStore(args.results).replay()
    by_id = {c.case_id: c for c in cases}
    metrics = []
    outcomes = []
    for result in replay.results:
        case = by_id.get(result.case_id)
        if case is None:
            continue
        metrics.append(analytics.compute_metrics(case.source_text))
        outcomes.append(result.status.is_success())
    if len(metrics) < 2:
        print("analyze needs at least two analyzed cases", file=sys.stderr)
        return EXIT_DATA

    report = analytics.association_report(metrics, outcomes, q=args.q)
    csv_text = analytics.render_association_csv(report)
    print(csv_text, end="")
    print(f"note: numeric features discretized by rank quantiles (q={args.q})",
          file=sys.stderr)

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "association.csv").write_text(csv_text, encoding="utf-8")
        table = analytics.aggregate_success(replay.results)
        md = analytics.render_success_markdown(table)
        md += (
            "\n## Feature association\n\n| Feature | Cramer's V | Binning |\n|---|---|---|\n"
            + "\n".join(
                f"| {row.feature} | {row.render_v()} | {row.binning} |"
                for row in report
            )
            + f"\n\nNumeric features are rank-quantile binned (q={args.q}).\n"
        )
        (out_dir / "report.md").write_text(md, encoding="utf-8")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    replay = ResultStore(args.results).replay()
    table = analytics.aggregate_success(replay.results)
    print(analytics.render_success_markdown(table))
    return EXIT_OK


_KECCAK_VECTORS = (
    (b"", "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"),
    (b"abc", "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"),
)
_EIP55_VECTORS = (
    "0x5aAeb6053F3E94C9b9A09f33669435E7Ef1BeAed",
    "0xfB6916095ca1df60bB79Ce92cE3Ea74c37c5d359",
    "0xdbF03B407c01E7cD3CBea99509d93f8DDDC8C6FB",
    "0xD1220A0cf47c7B9Be7A2E6BA89F429762e7b9aDb",
)


def _cmd_selftest() -> int:
    import hashlib

    checks: list[tuple[str, bool]] = []

    for data, want in _KECCAK_VECTORS:
        checks.append((f"keccak256({data!r})", soltx.keccak256_hex(data) == want))
    checks.append((
        "keccak256 != sha3-256",
        soltx.keccak256_hex(b"") != hashlib.sha3_256(b"").hexdigest(),
    ))
    for addr in _EIP55_VECTORS:
        checks.append((f"eip55 {addr[:10]}...", soltx.to_eip55(addr.lower()) == addr))

    t_indep = analytics.ContingencyTable(rows=((5, 5), (5, 5)))
    t_perfect = analytics.ContingencyTable(rows=((10, 0), (0, 10)))
    t_mid = analytics.ContingencyTable(rows=((4, 1), (1, 4)))
    checks.append(("cramers_v independence", analytics.cramers_v(t_indep).v == 0.0))
    checks.append(("cramers_v perfect", abs(analytics.cramers_v(t_perfect).v - 1.0) < 1e-9))
    checks.append(("cramers_v 0.6", abs(analytics.cramers_v(t_mid).v - 0.6) < 1e-9))

    sample = 'contract T { string s = "// not a comment"; } // tail\n'
    checks.append(("lexer lossless", soltx.lex(sample).text() == sample))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"{'ok' if ok else 'FAIL'}  {name}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_CAMPAIGN_ERRORS


if __name__ == "__main__":
    sys.exit(main())
