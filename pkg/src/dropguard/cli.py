"""Command-line front end.

    dropguard check FILES...   analyze and report diagnostics
    dropguard exec FILE        run the concrete interpreter on one function
    dropguard corpus DIR       compare analyzer output against fixture
                               annotations, confirming true positives with
                               the interpreter

Exit codes: 0 clean, 1 diagnostics present (or corpus failures), 2 load or
internal error.  `DROPGUARD_THREADS` caps parallel file reading.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath

from . import __version__
from .detect import Diagnostic, DiagnosticKind
from .engine import (
    analyze_program,
    AnalysisSettings,
    Analyzer,
    DEFAULT_PATH_THRESHOLD,
    FunctionResult,
    max_workers,
)
from .interp import confirm, ConfirmBudget, execute, ExecutionScript, exhaustive_events
from .parser import parse_program, ParseError
from .ir import Program

KINDS = [k.value for k in DiagnosticKind]

_EXPECT_RE = re.compile(r"//\s*EXPECT\s+(UAF|DF|IMA|DP)\s+@\s+bb(\d+)(\s+tp)?\s*$")
_EXPECT_NONE_RE = re.compile(r"//\s*EXPECT-NONE\s*$")
_PANIC_AT_RE = re.compile(r"^bb(\d+):(\d+)$")


@dataclass
class RunConfig:
    inputs: list[str]
    format: str = "text"  # text | structured
    path_threshold: int = DEFAULT_PATH_THRESHOLD
    opaque_callee: str = "alias-all"  # alias-all | alias-none
    deny: set[str] = field(default_factory=set)
    dump_paths: bool = False
    dump_aliases: str | None = None

    def settings(self) -> AnalysisSettings:
        return AnalysisSettings(
            path_threshold=self.path_threshold,
            opaque_alias_all=self.opaque_callee == "alias-all",
            collect_details=self.dump_paths or self.dump_aliases is not None,
        )


def _read_sources(paths: list[str]) -> list[tuple[str, str]]:
    def read(p: str) -> tuple[str, str]:
        with open(p, "r", encoding="utf-8") as fh:
            return p, fh.read()

    if len(paths) > 1 and max_workers() > 1:
        with ThreadPoolExecutor(max_workers=min(len(paths), max_workers())) as pool:
            return list(pool.map(read, paths))
    return [read(p) for p in paths]


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _diag_payload(d: Diagnostic) -> dict:
    return {
        "kind": d.kind.value,
        "block": d.block,
        "statement": d.statement,
        "place": str(d.place),
        "witness_path": list(d.witness_path),
        "span": {
            "file": d.span.file,
            "line": d.span.line,
            "column": d.span.column,
            "length": d.span.length,
        },
        "on_unwind_path": d.on_unwind_path,
    }


def build_report(
    config: RunConfig,
    results: dict[str, FunctionResult],
    analyzer: Analyzer,
    timing: dict[str, float],
) -> dict:
    functions = []
    totals = {k: 0 for k in KINDS}
    denied_present = False
    for name in sorted(results):
        r = results[name]
        for d in r.diagnostics:
            totals[d.kind.value] += 1
            if d.kind.value in config.deny:
                denied_present = True
        functions.append(
            {
                "name": name,
                "flags": {
                    "uaf": r.summary.flags.uaf,
                    "df": r.summary.flags.df,
                    "ima": r.summary.flags.ima,
                    "dp": r.summary.flags.dp,
                },
                "path_count": r.path_count,
                "fallback": r.fallback,
                "summary_stable": r.summary.stable,
                "diagnostics": [_diag_payload(d) for d in r.diagnostics],
            }
        )
    return {
        "tool": "dropguard",
        "version": __version__,
        "inputs": list(config.inputs),
        "functions": functions,
        "totals": totals,
        "cache": {"hits": analyzer.cache.hits, "misses": analyzer.cache.misses},
        "denied_present": denied_present,
        "timing": timing,
    }


def render_text(report: dict, results: dict[str, FunctionResult], config: RunConfig) -> str:
    lines: list[str] = []
    for fn in report["functions"]:
        for d in fn["diagnostics"]:
            span = d["span"]
            unwind = " [unwind]" if d["on_unwind_path"] else ""
            deny = " [denied]" if d["kind"] in config.deny else ""
            lines.append(
                f"warning[{d['kind']}]{deny}{unwind} {fn['name']} bb{d['block']}[{d['statement']}] "
                f"on {d['place']} ({span['file']}:{span['line']}:{span['column']})"
            )
            lines.append(
                "  witness: " + " -> ".join(f"bb{b}" for b in d["witness_path"])
            )
    t = report["totals"]
    lines.append(
        f"totals: UAF={t['UAF']} DF={t['DF']} IMA={t['IMA']} DP={t['DP']} "
        f"functions={len(report['functions'])}"
    )
    lines.append(f"cache: hits={report['cache']['hits']} misses={report['cache']['misses']}")
    if config.dump_paths:
        for name in sorted(results):
            r = results[name]
            lines.append(f"paths[{name}]: fallback={r.fallback}")
            for p in r.paths:
                lines.append("  " + " -> ".join(f"bb{b}" for b in p))
    if config.dump_aliases is not None:
        r = results.get(config.dump_aliases)
        if r is None:
            lines.append(f"aliases[{config.dump_aliases}]: no such function")
        else:
            lines.append(f"aliases[{config.dump_aliases}]:")
            for p, part in zip(r.paths, r.partitions):
                lines.append("  path " + " -> ".join(f"bb{b}" for b in p))
                for group in part:
                    if len(group) > 1:
                        lines.append("    {" + ", ".join(str(q) for q in group) + "}")
    return "\n".join(lines) + "\n"


def run(config: RunConfig) -> int:
    t0 = time.monotonic()
    try:
        sources = _read_sources(config.inputs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        program = parse_program(sources)
    except ParseError as exc:
        for d in exc.diagnostics:
            print(str(d), file=sys.stderr)
        return 2
    t1 = time.monotonic()
    try:
        results, analyzer = analyze_program(program, config.settings())
    except Exception as exc:  # internal error contract
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    t2 = time.monotonic()
    timing = {
        "parse_s": round(t1 - t0, 6),
        "analyze_s": round(t2 - t1, 6),
        "report_s": 0.0,
    }
    report = build_report(config, results, analyzer, timing)
    if config.format == "structured":
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(render_text(report, results, config))
    any_diags = any(report["totals"][k] > 0 for k in KINDS)
    return 1 if any_diags or report["denied_present"] else 0


# ---------------------------------------------------------------------------
# exec
# ---------------------------------------------------------------------------


def run_exec(path: str, entry: str, branches: list[str], panic_at: str | None, step_limit: int) -> int:
    try:
        sources = _read_sources([path])
        program = parse_program(sources)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        for d in exc.diagnostics:
            print(str(d), file=sys.stderr)
        return 2
    if entry not in program.functions:
        print(f"error: no function named {entry!r}", file=sys.stderr)
        return 2
    site = None
    if panic_at is not None:
        m = _PANIC_AT_RE.match(panic_at)
        if not m:
            print("error: --panic-at expects bbN:S", file=sys.stderr)
            return 2
        site = (int(m.group(1)), int(m.group(2)))
    script = ExecutionScript(tuple(branches), site, step_limit)
    report = execute(program, entry, script)
    print(f"status: {report.status}")
    print(f"steps: {report.steps}")
    for ev in report.events:
        print(f"event: {ev}")
    return 0 if report.ok and not report.events else 1


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


@dataclass
class Expectation:
    kind: str
    block: int
    line: int
    true_positive: bool
    function: str | None = None


@dataclass
class FixtureOutcome:
    path: str
    status: str  # pass | fail | error
    details: list[str] = field(default_factory=list)


def parse_annotations(text: str) -> tuple[list[Expectation], bool, list[str]]:
    """Extract EXPECT annotations; returns (expectations, expect_none, problems)."""
    expectations: list[Expectation] = []
    expect_none = False
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if "EXPECT" not in line:
            continue
        comment = line[line.index("//") :] if "//" in line else line
        m = _EXPECT_RE.search(comment)
        if m:
            expectations.append(
                Expectation(m.group(1), int(m.group(2)), lineno, bool(m.group(3)))
            )
            continue
        if _EXPECT_NONE_RE.search(comment):
            expect_none = True
            continue
        problems.append(f"line {lineno}: malformed EXPECT annotation")
    if expect_none and expectations:
        problems.append("EXPECT-NONE conflicts with EXPECT annotations")
    for e in expectations:
        if e.kind == "DP" and e.true_positive:
            problems.append(
                f"line {e.line}: DP cannot be marked tp (no runtime event to confirm)"
            )
    return expectations, expect_none, problems


def _attach_functions(program: Program, expectations: list[Expectation]) -> list[str]:
    problems = []
    spans = [(f.body_lines[0], f.body_lines[1], name) for name, f in program.functions.items()]
    for e in expectations:
        owner = next((name for lo, hi, name in spans if lo <= e.line <= hi), None)
        if owner is None:
            problems.append(f"line {e.line}: EXPECT is outside any function body")
        e.function = owner
    return problems


def check_fixture(path: str, oracle: bool, settings: AnalysisSettings) -> FixtureOutcome:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        return FixtureOutcome(path, "error", [str(exc)])
    expectations, expect_none, problems = parse_annotations(text)
    try:
        program = parse_program([(path, text)])
    except ParseError as exc:
        return FixtureOutcome(path, "error", [str(d) for d in exc.diagnostics[:5]])
    problems += _attach_functions(program, expectations)
    if problems:
        return FixtureOutcome(path, "error", problems)

    results, _ = analyze_program(program, settings)
    actual: set[tuple[str, str, int]] = set()
    diag_index: dict[tuple[str, str, int], Diagnostic] = {}
    for name, r in results.items():
        for d in r.diagnostics:
            key = (name, d.kind.value, d.block)
            actual.add(key)
            diag_index.setdefault(key, d)
    expected = {(e.function, e.kind, e.block) for e in expectations}

    details: list[str] = []
    for key in sorted(expected - actual):
        details.append(f"missing: {key[1]} in {key[0]} at bb{key[2]}")
    for key in sorted(actual - expected):
        details.append(f"unexpected: {key[1]} in {key[0]} at bb{key[2]}")

    if oracle and not details:
        for e in expectations:
            if not e.true_positive:
                continue
            d = diag_index[(e.function, e.kind, e.block)]
            if not confirm(d, program):
                details.append(
                    f"unconfirmed: {e.kind} in {e.function} at bb{e.block} (marked tp)"
                )
        if expect_none:
            for name in sorted(program.functions):
                events = exhaustive_events(program, name)
                if events:
                    details.append(f"oracle event in {name}: {events[0]}")
                    break
    return FixtureOutcome(path, "pass" if not details else "fail", details)


def run_corpus(corpus_dir: str, oracle: bool = True, settings: AnalysisSettings | None = None) -> int:
    settings = settings or AnalysisSettings()
    root = FsPath(corpus_dir)
    if not root.is_dir():
        print(f"error: {corpus_dir} is not a directory", file=sys.stderr)
        return 2
    fixtures = sorted(str(p) for p in root.glob("*.smir"))
    if not fixtures:
        print(f"warning: no .smir fixtures in {corpus_dir}")
        print("corpus: 0 fixtures, all passed")
        return 0
    outcomes = [check_fixture(p, oracle, settings) for p in fixtures]
    failed = 0
    for o in outcomes:
        print(f"{o.status.upper():5s} {o.path}")
        for d in o.details:
            print(f"      {d}")
        if o.status != "pass":
            failed += 1
    print(f"corpus: {len(outcomes)} fixtures, {len(outcomes) - failed} passed, {failed} failed")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dropguard", description=__doc__)
    ap.add_argument("--version", action="version", version=f"dropguard {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="analyze .smir files")
    check.add_argument("files", nargs="+")
    check.add_argument("--format", choices=["text", "structured"], default="text")
    check.add_argument("--path-threshold", type=int, default=DEFAULT_PATH_THRESHOLD)
    check.add_argument(
        "--opaque-callee", choices=["alias-all", "alias-none"], default="alias-all"
    )
    check.add_argument("--deny", default="", help="comma-separated kinds (UAF,DF,IMA,DP)")
    check.add_argument("--dump-paths", action="store_true")
    check.add_argument("--dump-aliases", metavar="FUNC")

    ex = sub.add_parser("exec", help="run the interpreter on one function")
    ex.add_argument("file")
    ex.add_argument("--entry", required=True)
    ex.add_argument("--branches", default="", help="comma-separated switch labels")
    ex.add_argument("--panic-at", metavar="bbN:S")
    ex.add_argument("--step-limit", type=int, default=100_000)

    co = sub.add_parser("corpus", help="run the annotated fixture corpus")
    co.add_argument("dir")
    co.add_argument("--no-oracle", action="store_true")
    co.add_argument("--path-threshold", type=int, default=DEFAULT_PATH_THRESHOLD)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    if args.command == "check":
        deny = {k.strip().upper() for k in args.deny.split(",") if k.strip()}
        bad = deny - set(KINDS)
        if bad:
            print(f"error: unknown deny kinds {sorted(bad)}", file=sys.stderr)
            return 2
        if args.path_threshold < 1:
            print("error: --path-threshold must be >= 1", file=sys.stderr)
            return 2
        config = RunConfig(
            inputs=args.files,
            format=args.format,
            path_threshold=args.path_threshold,
            opaque_callee=args.opaque_callee,
            deny=deny,
            dump_paths=args.dump_paths,
            dump_aliases=args.dump_aliases,
        )
        return run(config)
    if args.command == "exec":
        branches = [b.strip() for b in args.branches.split(",") if b.strip()]
        return run_exec(args.file, args.entry, branches, args.panic_at, args.step_limit)
    assert args.command == "corpus"
    return run_corpus(
        args.dir,
        oracle=not args.no_oracle,
        settings=AnalysisSettings(path_threshold=args.path_threshold),
    )


def cli_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
