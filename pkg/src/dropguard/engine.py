"""Per-function analysis pipeline and whole-program orchestration.

Each function is summarized once: extract paths, walk each path with the
alias/taint scanner, union the results into a (return x argument) alias
matrix plus bug flags, and cache it.  Call sites resolve callee summaries
through the shared cache, computing them on first encounter; recursive
call chains get a default all-false summary and are then re-analyzed to a
fixed point.

Functions whose raw path count exceeds the threshold are analyzed with a
single merged-state pass instead (one reverse-postorder sweep, alias sets
unioned at joins); coarser, but it still yields a summary and diagnostics.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

from .alias import (
    AliasState,
    BugFlags,
    empty_summary,
    FunctionSummary,
    SummaryCache,
    summary_layout,
)
from .detect import (
    DefinitionRecord,
    Diagnostic,
    DiagnosticKind,
    merge_path_results,
    Path,
    PathScanResult,
    scan_block,
    scan_path,
    ScanContext,
    TaintSet,
)
from .ir import (
    Call,
    FunctionBody,
    IntrinsicKind,
    Place,
    Program,
    Return,
    reachable_blocks,
    successors,
)
from .paths import extract_paths, Scc, tarjan_sccs

logger = logging.getLogger("dropguard")

DEFAULT_PATH_THRESHOLD = 10_000
RECURSION_ITERATION_CAP = 10


@dataclass
class AnalysisSettings:
    path_threshold: int = DEFAULT_PATH_THRESHOLD
    opaque_alias_all: bool = True
    recursion_cap: int = RECURSION_ITERATION_CAP
    collect_details: bool = False  # retain per-path partitions for dumps


@dataclass
class FunctionResult:
    name: str
    summary: FunctionSummary
    diagnostics: list[Diagnostic]
    path_count: int
    fallback: bool
    paths: list[tuple[int, ...]] = field(default_factory=list)
    partitions: list[list[list[Place]]] = field(default_factory=list)


class Analyzer:
    """Shared-cache analysis over one program."""

    def __init__(self, program: Program, settings: AnalysisSettings | None = None):
        self.program = program
        self.settings = settings or AnalysisSettings()
        self.cache = SummaryCache()
        self.results: dict[str, FunctionResult] = {}
        self._cycle_head: str | None = None
        self._cycle_members: set[str] = set()

    # -- summary resolution -------------------------------------------------

    def resolve_callee(self, name: str) -> tuple[FunctionSummary | None, IntrinsicKind | None]:
        """Call-site resolver: summaries for functions, kinds for intrinsics."""
        decl = self.program.intrinsics.get(name)
        if decl is not None:
            return None, decl.kind
        cached = self.cache.get(name)
        self.cache.record_lookup(name, hit=cached is not None)
        if cached is not None:
            return cached, None
        if name in self.cache.in_progress:
            return self.resolve_recursion(name), None
        return self.summarize(name), None

    def resolve_recursion(self, name: str) -> FunctionSummary:
        """Re-entered function: register the cycle, answer all-false for now."""
        stack = self.cache.in_progress
        pos = stack.index(name)
        head = stack[pos]
        if self._cycle_head is None or stack.index(self._cycle_head) > pos:
            self._cycle_head = head
        self._cycle_members.update(stack[pos:])
        cached = self.cache.get(name)
        if cached is not None:
            return cached
        return empty_summary(name, self.program.functions.get(name))

    def summarize(self, name: str) -> FunctionSummary:
        """Summary for `name`, computing and caching it on first encounter."""
        cached = self.cache.get(name)
        if cached is not None:
            return cached
        self.cache.in_progress.append(name)
        try:
            result = self._analyze(name)
        finally:
            self.cache.in_progress.pop()
        self.cache.put(name, result.summary)
        self.results[name] = result
        if self._cycle_head == name:
            self._fixed_point()
        return self.cache.get(name)  # type: ignore[return-value]

    def _fixed_point(self) -> None:
        members = sorted(self._cycle_members)
        self._cycle_head = None
        self._cycle_members = set()
        iterations = 1
        stable = False
        for _ in range(self.settings.recursion_cap):
            changed = False
            for m in members:
                old = self.cache.get(m)
                result = self._analyze(m)
                merged = result.summary if old is None else old.merged_with(result.summary)
                if merged != old:
                    changed = True
                self.cache.put(m, merged)
                result.summary = merged
                self.results[m] = result
            iterations += 1
            if not changed:
                stable = True
                break
        if not stable:
            logger.warning(
                "recursion fixed point not reached for %s within %d iterations",
                ", ".join(members),
                self.settings.recursion_cap,
            )
        for m in members:
            s = self.cache.get(m)
            assert s is not None
            from dataclasses import replace

            final = replace(s, stable=stable, iterations=iterations)
            self.cache.put(m, final)
            self.results[m].summary = final

    # -- per-function pipeline ------------------------------------------------

    def _analyze(self, name: str) -> FunctionResult:
        func = self.program.functions[name]
        defs = DefinitionRecord.build(func, self.program)
        paths, fallback, sccs = extract_paths(func, self.settings.path_threshold, self.program)
        ctx = ScanContext(self.program, self.resolve_callee, defs, sccs, self.settings.opaque_alias_all)
        rets, args = summary_layout(func)
        if fallback or not paths:
            diags, flags, pairs = _scan_merged(func, ctx)
            summary = FunctionSummary(name, rets, args, frozenset(pairs), flags)
            return FunctionResult(name, summary, diags, 0, True)
        scans = [scan_path(p, func, ctx) for p in paths]
        diags, flags, pairs = merge_path_results(scans)
        summary = FunctionSummary(name, rets, args, frozenset(pairs), flags)
        result = FunctionResult(name, summary, diags, len(paths), False)
        if self.settings.collect_details:
            result.paths = [p.blocks for p in paths]
            result.partitions = [s.final_partition for s in scans]
        return result


def _rpo(func: FunctionBody) -> list[int]:
    reachable = set(reachable_blocks(func))
    post: list[int] = []
    seen: set[int] = set()
    stack: list[tuple[int, int]] = [(0, 0)]
    seen.add(0)
    while stack:
        v, i = stack[-1]
        succ = [s for s in successors(func.blocks[v].terminator) if s in reachable]
        advanced = False
        for j in range(i, len(succ)):
            w = succ[j]
            if w not in seen:
                stack[-1] = (v, j + 1)
                seen.add(w)
                stack.append((w, 0))
                advanced = True
                break
        if not advanced:
            stack.pop()
            post.append(v)
    return list(reversed(post))


def _merge_states(
    func: FunctionBody, inputs: list[tuple[AliasState, TaintSet]]
) -> tuple[AliasState, TaintSet]:
    """Join for the merged-state pass: union all aliasing and taint facts."""
    merged = AliasState(func)
    taint = TaintSet()
    moved_sets = []
    for st, tn in inputs:
        for group in st.partition():
            anchor = group[0]
            for other in group[1:]:
                merged.link(anchor, other)
        for p, s in sorted(st._slot_of.items(), key=lambda kv: kv[0].sort_key()):
            for tag in tn.hits(st, [s]):
                taint.add(merged.slot(p), tag)
        moved_sets.append(set(st._moved))
    if moved_sets:
        merged._moved = set.intersection(*moved_sets)
    return merged, taint


def _scan_merged(
    func: FunctionBody, ctx: ScanContext
) -> tuple[list[Diagnostic], BugFlags, set[tuple[int, int]]]:
    """One reverse-postorder sweep with alias states unioned at joins."""
    from .detect import _Reporter

    order = _rpo(func)
    preds: dict[int, list[int]] = {b: [] for b in order}
    for b in order:
        for s in successors(func.blocks[b].terminator):
            if s in preds:
                preds[s].append(b)

    rets, args = summary_layout(func)
    init = AliasState(func)
    for param, suffix in args:
        init.slot(Place(param).with_suffix(suffix))

    out_states: dict[int, tuple[AliasState, TaintSet]] = {}
    reporter = _Reporter(func, tuple(order), on_unwind=False)
    pairs: set[tuple[int, int]] = set()
    for b in order:
        ready = [out_states[p] for p in preds[b] if p in out_states]
        if b == 0:
            state, taint = (init.clone(), TaintSet()) if not ready else _merge_states(func, ready + [(init, TaintSet())])
        elif ready:
            state, taint = _merge_states(func, ready)
        else:
            state, taint = AliasState(func), TaintSet()
        scan_block(state, taint, func, ctx, b, None, reporter, None)
        term = func.blocks[b].terminator
        if isinstance(term, Return):
            for r, suffix in enumerate(rets):
                rp = Place(0).with_suffix(suffix)
                for c, (param, psuffix) in enumerate(args):
                    pp = Place(param).with_suffix(psuffix)
                    if state.same_set(rp, pp):
                        pairs.add((r, c))
        out_states[b] = (state, taint)

    flags = BugFlags(
        uaf=any(d.kind is DiagnosticKind.UAF for d in reporter.diags),
        df=any(d.kind is DiagnosticKind.DF for d in reporter.diags),
        ima=any(d.kind is DiagnosticKind.IMA for d in reporter.diags),
        dp=any(d.kind is DiagnosticKind.DP for d in reporter.diags),
    )
    diags = sorted({d.dedup_key(): d for d in reporter.diags}.values(), key=Diagnostic.sort_key)
    return diags, flags, pairs


# ---------------------------------------------------------------------------
# Whole-program driver
# ---------------------------------------------------------------------------


def call_order_topdown(program: Program) -> list[str]:
    """Defined functions, callers before callees where acyclic.

    First call sites then discover callees, so each distinct callee is
    computed exactly once at its first site and every later site is a cache
    hit.
    """
    calls: dict[str, list[str]] = {}
    for name, func in program.functions.items():
        out: list[str] = []
        for block in func.blocks:
            term = block.terminator
            if isinstance(term, Call) and term.callee in program.functions:
                out.append(term.callee)
        calls[name] = out

    post: list[str] = []
    visited: set[str] = set()
    for root in program.functions:
        if root in visited:
            continue
        stack: list[tuple[str, int]] = [(root, 0)]
        visited.add(root)
        while stack:
            n, i = stack[-1]
            advanced = False
            for j in range(i, len(calls[n])):
                c = calls[n][j]
                if c not in visited:
                    stack[-1] = (n, j + 1)
                    visited.add(c)
                    stack.append((c, 0))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                post.append(n)
    return list(reversed(post))


def summarize_function(
    name: str,
    program: Program,
    cache_or_analyzer: "Analyzer | None" = None,
    settings: AnalysisSettings | None = None,
) -> FunctionSummary:
    analyzer = cache_or_analyzer or Analyzer(program, settings)
    return analyzer.summarize(name)


def analyze_program(
    program: Program, settings: AnalysisSettings | None = None
) -> tuple[dict[str, FunctionResult], Analyzer]:
    """Summarize every defined function, callers first, with a shared cache."""
    analyzer = Analyzer(program, settings)
    for name in call_order_topdown(program):
        if name not in analyzer.results:
            analyzer.summarize(name)
    ordered = {name: analyzer.results[name] for name in sorted(analyzer.results)}
    return ordered, analyzer


def max_workers() -> int:
    cap = os.environ.get("DROPGUARD_THREADS")
    try:
        n = int(cap) if cap else 4
    except ValueError:
        n = 4
    return max(1, n)
