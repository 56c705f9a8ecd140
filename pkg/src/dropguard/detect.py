"""Detection of invalid deallocations along extracted paths.

A taint set records alias classes that were deallocated or never
initialized.  Walking a path, every read is checked against the taint set
(use-after-free / invalid access), every drop against prior drops (double
free), and the returned value at exit (dangling return).  Dropping a
composite taints its drop-relevant fields rather than the whole value.

One refinement keeps loops honest: when the taint source sits inside a
cycle and the dropped place is re-assigned on the cyclic stretch between
that drop and the branch leaving the cycle, the repeated drop is a safe
drop of the renewed value and is not reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .alias import (
    AliasState,
    apply_call,
    apply_statement,
    BugFlags,
    CallEffects,
    FunctionSummary,
    summary_layout,
    USE_EXEMPT_INTRINSICS,
)
from .ir import (
    AdtKind,
    AdtType,
    Assign,
    Call,
    Drop,
    FunctionBody,
    IntrinsicKind,
    needs_drop,
    Place,
    Program,
    PROJECTION_DEPTH_CAP,
    Return,
    rvalue_place,
    SourceSpan,
    Statement,
    StructuralError,
    SwitchInt,
    TupleType,
    TypeExpr,
    place_type,
    statement_span,
    terminator_span,
    type_is_filtered,
)
from .paths import Path, Scc, path_crosses_unwind_edge

_tag_counter = itertools.count()


class DiagnosticKind(str, Enum):
    UAF = "UAF"
    DF = "DF"
    IMA = "IMA"
    DP = "DP"


@dataclass(frozen=True)
class TaintTag:
    id: int
    origin: str  # dropped | uninitialized
    block: int
    statement: int


class TaintSet:
    """Tainted slots; membership is judged through the alias partition."""

    __slots__ = ("entries",)

    def __init__(self) -> None:
        self.entries: dict[int, TaintTag] = {}

    def clone(self) -> "TaintSet":
        t = TaintSet()
        t.entries = dict(self.entries)
        return t

    def add(self, slot: int | None, tag: TaintTag) -> None:
        if slot is not None:
            self.entries[slot] = tag

    def hits(self, state: AliasState, slots: list[int]) -> list[TaintTag]:
        """Tags polluting any of the given slots, in taint order."""
        roots = {state.find(s) for s in slots}
        out = []
        for s, tag in self.entries.items():
            if state.find(s) in roots:
                out.append(tag)
        out.sort(key=lambda t: t.id)
        return out

    def place_tags(self, state: AliasState, place: Place) -> list[TaintTag]:
        slot = state.existing_slot(place)
        if slot is None:
            return []
        return self.hits(state, [slot])


@dataclass
class DefinitionRecord:
    """Where each local (or a prefix place of it) is (re)assigned."""

    sites: dict[int, tuple[tuple[int, Place], ...]]

    @classmethod
    def build(cls, f: FunctionBody, program: Program) -> "DefinitionRecord":
        acc: dict[int, list[tuple[int, Place]]] = {}
        for bi, block in enumerate(f.blocks):
            for stmt in block.statements:
                if isinstance(stmt, Assign):
                    acc.setdefault(stmt.lhs.local, []).append((bi, stmt.lhs))
            term = block.terminator
            if isinstance(term, Call):
                decl = program.intrinsics.get(term.callee)
                if decl is not None and decl.kind is IntrinsicKind.UNINITIALIZED:
                    continue  # produces taint, not a fresh value
                acc.setdefault(term.destination.local, []).append((bi, term.destination))
        return cls({k: tuple(v) for k, v in acc.items()})

    def renewal_blocks(self, place: Place) -> set[int]:
        return {
            b
            for b, lhs in self.sites.get(place.local, ())
            if lhs.is_prefix_of(place)
        }


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    function: str
    block: int
    statement: int  # len(statements) denotes the terminator
    place: Place
    witness_path: tuple[int, ...]
    span: SourceSpan
    on_unwind_path: bool = False

    def dedup_key(self) -> tuple:
        return (self.kind, self.function, self.block, self.statement, self.place.sort_key())

    def sort_key(self) -> tuple:
        return (self.function, self.block, self.statement, self.kind.value, self.place.sort_key())

    def __str__(self) -> str:
        s = f"{self.kind.value} in {self.function} at bb{self.block}[{self.statement}] on {self.place}"
        if self.on_unwind_path:
            s += " (unwind path)"
        return s


# ---------------------------------------------------------------------------
# Place expansion helpers
# ---------------------------------------------------------------------------


def drop_relevant_places(f: FunctionBody, place: Place) -> list[Place]:
    """Places a drop of `place` deallocates, at field granularity.

    The dropped place itself plus every drop-relevant field chain under it,
    recursively to the depth cap.  Including the root lets whole-value
    aliases (raw pointers, reconstructed owners) see the taint; a partial
    drop of one field still leaves siblings clean.
    """
    try:
        ty = place_type(place, f)
    except StructuralError:
        return []
    if type_is_filtered(ty) or not needs_drop(ty):
        return []
    out: list[Place] = []

    def rec(pl: Place, t: TypeExpr) -> None:
        out.append(pl)
        if len(pl.projections) >= PROJECTION_DEPTH_CAP:
            return
        fields: list[TypeExpr] | None = None
        if isinstance(t, TupleType) and t.elements:
            fields = list(t.elements)
        elif isinstance(t, AdtType) and t.kind in (AdtKind.STRUCT, AdtKind.UNION) and t.fields:
            fields = [fty for _, fty in t.fields]
        if fields is not None:
            from .ir import FieldProj

            for i, ft in enumerate(fields):
                if needs_drop(ft):
                    rec(pl.extend(FieldProj(i)), ft)

    rec(place, ty)
    return out


def check_places(state: AliasState, f: FunctionBody, place: Place) -> list[Place]:
    """Places whose taint pollutes a use or drop of `place`.

    The place itself, its prefixes (freeing the whole poisons the part),
    its drop-relevant field expansion (freeing the part poisons the whole),
    and any already-tracked extension.
    """
    out: list[Place] = []
    seen: set[Place] = set()

    def add(p: Place) -> None:
        p = p.capped()
        if p not in seen:
            seen.add(p)
            out.append(p)

    add(place)
    for i in range(len(place.projections)):
        add(Place(place.local, place.projections[:i]))
    for p in drop_relevant_places(f, place):
        add(p)
    for suffix in state.registered_extensions(place):
        add(place.with_suffix(suffix))
    return out


def taint_hits(state: AliasState, taint: TaintSet, f: FunctionBody, place: Place) -> list[TaintTag]:
    slots = []
    for p in check_places(state, f, place):
        s = state.slot(p)
        if s is not None:
            slots.append(s)
    if not slots:
        return []
    return taint.hits(state, slots)


# ---------------------------------------------------------------------------
# Path scanning
# ---------------------------------------------------------------------------

Resolver = Callable[[str], tuple[Optional[FunctionSummary], Optional[IntrinsicKind]]]


@dataclass
class ScanContext:
    program: Program
    resolver: Resolver
    defs: DefinitionRecord
    sccs: list[Scc]
    opaque_alias_all: bool = True


@dataclass
class PathScanResult:
    diagnostics: list[Diagnostic]
    flags: BugFlags
    ret_arg_pairs: set[tuple[int, int]]
    final_partition: list[list[Place]]


class _Reporter:
    def __init__(self, func: FunctionBody, witness: tuple[int, ...], on_unwind: bool):
        self.func = func
        self.witness = witness
        self.on_unwind = on_unwind
        self.diags: list[Diagnostic] = []
        self._seen_tag_kind: set[tuple[int, str]] = set()

    def emit(
        self,
        kind: DiagnosticKind,
        block: int,
        statement: int,
        place: Place,
        span: SourceSpan,
        tags: list[TaintTag],
    ) -> None:
        # One report per taint source and kind along a path; later sites
        # hitting the same stale memory restate the same defect.
        fresh = [t for t in tags if (t.id, kind.value) not in self._seen_tag_kind]
        if not fresh:
            return
        for t in fresh:
            self._seen_tag_kind.add((t.id, kind.value))
        self.diags.append(
            Diagnostic(kind, self.func.name, block, statement, place, self.witness, span, self.on_unwind)
        )


def _classify(tags: list[TaintTag]) -> DiagnosticKind:
    if any(t.origin == "uninitialized" for t in tags):
        return DiagnosticKind.IMA
    return DiagnosticKind.UAF


def statement_reads(stmt: Statement) -> list[Place]:
    if isinstance(stmt, Assign):
        p = rvalue_place(stmt.rhs)
        return [p] if p is not None else []
    return []


def scan_block(
    state: AliasState,
    taint: TaintSet,
    func: FunctionBody,
    ctx: ScanContext,
    block_index: int,
    next_block: int | None,
    reporter: _Reporter,
    path: Path | None,
) -> None:
    """Check and apply one block's statements and terminator."""
    block = func.blocks[block_index]
    for si, stmt in enumerate(block.statements):
        for read in statement_reads(stmt):
            if state.is_filtered(read):
                continue
            tags = taint_hits(state, taint, func, read)
            if tags:
                reporter.emit(_classify(tags), block_index, si, read, statement_span(stmt), tags)
        apply_statement(state, stmt)

    term = block.terminator
    ti = len(block.statements)
    span = terminator_span(term)

    if isinstance(term, SwitchInt):
        disc = term.discriminant
        if not state.is_filtered(disc):
            tags = taint_hits(state, taint, func, disc)
            if tags:
                reporter.emit(_classify(tags), block_index, ti, disc, span, tags)
        return

    if isinstance(term, Drop):
        place = term.place
        if state.is_filtered(place) or state.is_moved(place):
            return
        try:
            if not needs_drop(place_type(place, func)):
                return
        except StructuralError:
            return
        tags = taint_hits(state, taint, func, place)
        if tags:
            if any(t.origin == "uninitialized" for t in tags):
                reporter.emit(DiagnosticKind.IMA, block_index, ti, place, span, tags)
            else:
                live = [
                    t
                    for t in tags
                    if not _renewal_suppresses(func, ctx, path, place, t, block_index)
                ]
                if live:
                    reporter.emit(DiagnosticKind.DF, block_index, ti, place, span, live)
        tag = TaintTag(next(_tag_counter), "dropped", block_index, ti)
        for target in drop_relevant_places(func, place):
            if state.is_moved(target):
                continue
            taint.add(state.slot(target), tag)
        return

    if isinstance(term, Call):
        summary, intrinsic = ctx.resolver(term.callee)
        exempt = intrinsic in USE_EXEMPT_INTRINSICS
        if not exempt:
            for arg in term.args:
                p = rvalue_place(arg)
                if p is None or state.is_filtered(p):
                    continue
                tags = taint_hits(state, taint, func, p)
                if tags:
                    reporter.emit(_classify(tags), block_index, ti, p, span, tags)
        on_ok = next_block is None or next_block == term.ok
        effects = apply_call(
            state,
            term,
            ctx.program,
            summary,
            intrinsic,
            on_ok_edge=on_ok,
            opaque_alias_all=ctx.opaque_alias_all,
        )
        if effects.dest_uninitialized:
            taint.add(
                state.slot(term.destination),
                TaintTag(next(_tag_counter), "uninitialized", block_index, ti),
            )
        if effects.dest_dangling:
            taint.add(
                state.slot(term.destination),
                TaintTag(next(_tag_counter), "dropped", block_index, ti),
            )
        return

    if isinstance(term, Return):
        ret = Place(0)
        if not state.is_filtered(ret):
            tags = taint_hits(state, taint, func, ret)
            if tags:
                reporter.emit(DiagnosticKind.DP, block_index, ti, ret, span, tags)
        return


def _renewal_suppresses(
    func: FunctionBody,
    ctx: ScanContext,
    path: Path | None,
    place: Place,
    tag: TaintTag,
    candidate_block: int,
) -> bool:
    """Safe-drop test for a double-free candidate seeded inside a cycle.

    True iff walking the cycle's internal order from the tainting drop,
    around the back edge, to the member that branches toward the candidate
    passes a re-assignment of the dropped place.
    """
    if path is None or tag.origin != "dropped":
        return False
    scc = next((s for s in ctx.sccs if tag.block in s.blocks and s.is_cycle), None)
    if scc is None:
        return False
    renew = ctx.defs.renewal_blocks(place) & scc.blocks
    if not renew:
        return False
    blocks = path.blocks
    if tag.block not in blocks:
        return False
    if candidate_block in scc.blocks:
        exits = {candidate_block}
    else:
        start = blocks.index(tag.block)
        end = start
        while end + 1 < len(blocks) and blocks[end + 1] in scc.blocks:
            end += 1
        while start - 1 >= 0 and blocks[start - 1] in scc.blocks:
            start -= 1
        if end + 1 >= len(blocks):
            return False
        after = blocks[end + 1]
        from .ir import successors as _succ

        exits = {
            m for m in scc.blocks if after in _succ(func.blocks[m].terminator)
        }
    order = scc.internal_order
    pos = {b: i for i, b in enumerate(order)}
    if tag.block not in pos:
        return False
    t = pos[tag.block]
    n = len(order)
    for x in sorted(exits):
        if x not in pos or x == tag.block:
            continue
        i = (t + 1) % n
        while True:
            if order[i] in renew:
                return True
            if order[i] == x:
                break
            i = (i + 1) % n
    return False


def scan_path(
    path: Path,
    func: FunctionBody,
    ctx: ScanContext,
) -> PathScanResult:
    """Run the interleaved alias/taint walk over one path."""
    state = AliasState(func)
    taint = TaintSet()
    rets, args = summary_layout(func)
    entry_slots: list[int | None] = []
    for param, suffix in args:
        entry_slots.append(state.slot(Place(param).with_suffix(suffix)))

    on_unwind = path_crosses_unwind_edge(func, path.blocks)
    reporter = _Reporter(func, path.blocks, on_unwind)
    for i, b in enumerate(path.blocks):
        nxt = path.blocks[i + 1] if i + 1 < len(path.blocks) else None
        scan_block(state, taint, func, ctx, b, nxt, reporter, path)

    pairs: set[tuple[int, int]] = set()
    last = func.blocks[path.blocks[-1]].terminator
    if isinstance(last, Return):
        for r, suffix in enumerate(rets):
            rslot = state.slot(Place(0).with_suffix(suffix))
            if rslot is None:
                continue
            rroot = state.find(rslot)
            for c, cslot in enumerate(entry_slots):
                if cslot is not None and state.find(cslot) == rroot:
                    pairs.add((r, c))

    flags = BugFlags(
        uaf=any(d.kind is DiagnosticKind.UAF for d in reporter.diags),
        df=any(d.kind is DiagnosticKind.DF for d in reporter.diags),
        ima=any(d.kind is DiagnosticKind.IMA for d in reporter.diags),
        dp=any(d.kind is DiagnosticKind.DP for d in reporter.diags),
    )
    return PathScanResult(reporter.diags, flags, pairs, state.partition())


def merge_path_results(results: list[PathScanResult]) -> tuple[list[Diagnostic], BugFlags, set[tuple[int, int]]]:
    """Union of per-path findings with deduplicated diagnostics.

    Duplicate sites keep the shortest witness path (ties break
    lexicographically by block indices).
    """
    best: dict[tuple, Diagnostic] = {}
    flags = BugFlags()
    pairs: set[tuple[int, int]] = set()
    for res in results:
        flags = flags | res.flags
        pairs |= res.ret_arg_pairs
        for d in res.diagnostics:
            key = d.dedup_key()
            cur = best.get(key)
            if cur is None or (len(d.witness_path), d.witness_path) < (
                len(cur.witness_path),
                cur.witness_path,
            ):
                best[key] = d
    diags = sorted(best.values(), key=Diagnostic.sort_key)
    return diags, flags, pairs
