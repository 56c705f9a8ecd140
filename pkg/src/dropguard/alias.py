"""Flow-sensitive, field-sensitive alias sets along one path.

The state is a union-find over *slots*.  Each live place name maps to its
current slot; overwriting a place gives it a fresh slot (strong update) while
the old slot stays behind as an unnamed ghost so the memory it denotes keeps
its set membership and taint.  Moves transfer the old slot's set to the new
owner and leave the source as a fresh, moved-out singleton.

Places of filtered (stack-only) type never get slots and so can never alias.

Field sensitivity: `a.0` and `a` are distinct nodes.  Two linking rules keep
fields of whole-value aliases connected without collapsing sibling fields:

* creating a dereference node unions it with its pointer (pointer and pointee
  share a set in this model);
* creating a field node `p.f` unions it with `m.f` for every existing node
  `m.f` where `m` is in `p`'s set, and whole-value copies/moves propagate to
  existing field nodes eagerly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

from .ir import (
    AddressOf,
    AdtKind,
    AdtType,
    Assign,
    Call,
    CastCopy,
    CastMove,
    Constant,
    DerefProj,
    FieldProj,
    FunctionBody,
    IntrinsicKind,
    Place,
    Program,
    PROJECTION_DEPTH_CAP,
    Ref,
    Statement,
    StorageDead,
    StorageLive,
    StructuralError,
    TupleType,
    TypeExpr,
    UseCopy,
    UseMove,
    place_type,
    project_type,
    rvalue_is_move,
    rvalue_place,
    type_is_filtered,
)


class AliasState:
    """Union-find alias partition for one function, branch-local."""

    __slots__ = ("func", "_parent", "_rank", "_slot_of", "_place_of", "_moved", "_next", "_filtered_cache")

    def __init__(self, func: FunctionBody):
        self.func = func
        self._parent: dict[int, int] = {}
        self._rank: dict[int, int] = {}
        self._slot_of: dict[Place, int] = {}
        self._place_of: dict[int, Place] = {}
        self._moved: set[Place] = set()
        self._next = 0
        self._filtered_cache: dict[Place, bool] = {}

    # -- structural helpers -------------------------------------------------

    def clone(self) -> "AliasState":
        other = AliasState.__new__(AliasState)
        other.func = self.func
        other._parent = dict(self._parent)
        other._rank = dict(self._rank)
        other._slot_of = dict(self._slot_of)
        other._place_of = dict(self._place_of)
        other._moved = set(self._moved)
        other._next = self._next
        other._filtered_cache = self._filtered_cache  # type-level, shared
        return other

    snapshot = clone

    def restore(self, snap: "AliasState") -> None:
        """Reset to a previously captured snapshot, in place."""
        self._parent = dict(snap._parent)
        self._rank = dict(snap._rank)
        self._slot_of = dict(snap._slot_of)
        self._place_of = dict(snap._place_of)
        self._moved = set(snap._moved)
        self._next = snap._next

    def is_filtered(self, place: Place) -> bool:
        place = place.capped()
        hit = self._filtered_cache.get(place)
        if hit is None:
            try:
                hit = type_is_filtered(place_type(place, self.func))
            except StructuralError:
                hit = True  # untypable places never become nodes
            self._filtered_cache[place] = hit
        return hit

    def place_ty(self, place: Place) -> TypeExpr | None:
        try:
            return place_type(place, self.func)
        except StructuralError:
            return None

    # -- union-find core ----------------------------------------------------

    def _fresh_slot(self, place: Place) -> int:
        s = self._next
        self._next += 1
        self._parent[s] = s
        self._rank[s] = 0
        self._slot_of[place] = s
        self._place_of[s] = place
        return s

    def find(self, slot: int) -> int:
        root = slot
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[slot] != root:
            self._parent[slot], slot = root, self._parent[slot]
        return root

    def _union_slots(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1

    def slot(self, place: Place) -> int | None:
        """Current slot of a place, creating and linking it if needed.

        Returns None for filtered places, which never participate.
        """
        place = place.capped()
        existing = self._slot_of.get(place)
        if existing is not None:
            return existing
        if self.is_filtered(place):
            return None
        if place.projections:
            parent_slot = self.slot(place.parent())
            s = self._fresh_slot(place)
            last = place.projections[-1]
            if isinstance(last, DerefProj):
                if parent_slot is not None:
                    self._union_slots(s, parent_slot)
            elif parent_slot is not None:
                for member in self._set_members(parent_slot):
                    if member == place.parent():
                        continue
                    sibling = self._slot_of.get(member.extend(last).capped())
                    if sibling is not None:
                        self._union_slots(s, sibling)
            return s
        return self._fresh_slot(place)

    def existing_slot(self, place: Place) -> int | None:
        return self._slot_of.get(place.capped())

    def _set_members(self, slot: int) -> list[Place]:
        root = self.find(slot)
        return [p for p, s in self._slot_of.items() if self.find(s) == root]

    def same_set(self, a: Place, b: Place) -> bool:
        sa, sb = self.slot(a), self.slot(b)
        if sa is None or sb is None:
            return False
        return self.find(sa) == self.find(sb)

    def slots_in_set_of(self, slot: int) -> list[int]:
        root = self.find(slot)
        return [s for s in self._parent if self.find(s) == root]

    # -- transfer primitives --------------------------------------------------

    def registered_extensions(self, place: Place) -> list[tuple]:
        """Projection suffixes of existing nodes strictly extending `place`."""
        place = place.capped()
        out = []
        for p in self._slot_of:
            if p != place and place.is_prefix_of(p):
                out.append(p.projections[len(place.projections) :])
        out.sort(key=lambda suf: (len(suf), tuple(str(x) for x in suf)))
        return out

    def sever(self, place: Place) -> None:
        """Strong update: `place` and every node under it become fresh singletons."""
        place = place.capped()
        if self.is_filtered(place):
            return
        for p in [q for q in self._slot_of if place.is_prefix_of(q)]:
            del self._slot_of[p]
            self._fresh_slot(p)
            self._moved.discard(p)
        if place not in self._slot_of:
            self._fresh_slot(place)
            self._moved.discard(place)

    def link(self, a: Place, b: Place) -> None:
        """Merge the sets of two places (no severing, no child propagation)."""
        sa, sb = self.slot(a), self.slot(b)
        if sa is None or sb is None:
            return
        self._union_slots(sa, sb)

    def assign_copy(self, lhs: Place, rhs: Place, propagate_fields: bool) -> None:
        lhs, rhs = lhs.capped(), rhs.capped()
        if self.is_filtered(lhs):
            return
        suffixes = self.registered_extensions(rhs) if propagate_fields else []
        rhs_slot = self.slot(rhs)
        self.sever(lhs)
        if rhs_slot is None:
            return
        lhs_slot = self.slot(lhs)
        assert lhs_slot is not None
        self._union_slots(lhs_slot, rhs_slot)
        for suf in suffixes:
            src = self._slot_of.get(rhs.with_suffix(suf).capped())
            dst = self.slot(lhs.with_suffix(suf))
            if src is not None and dst is not None:
                self._union_slots(dst, src)

    def assign_move(self, lhs: Place, rhs: Place) -> None:
        lhs, rhs = lhs.capped(), rhs.capped()
        suffixes = self.registered_extensions(rhs)
        rhs_slot = self.slot(rhs)
        ext_slots = {suf: self._slot_of.get(rhs.with_suffix(suf).capped()) for suf in suffixes}
        if not self.is_filtered(lhs):
            self.sever(lhs)
            lhs_slot = self.slot(lhs)
            if lhs_slot is not None and rhs_slot is not None:
                self._union_slots(lhs_slot, rhs_slot)
            for suf, src in ext_slots.items():
                if src is None:
                    continue
                dst = self.slot(lhs.with_suffix(suf))
                if dst is not None:
                    self._union_slots(dst, src)
        self.sever(rhs)
        self._moved.add(rhs)

    def mark_moved(self, place: Place) -> None:
        place = place.capped()
        self.sever(place)
        self._moved.add(place)

    def is_moved(self, place: Place) -> bool:
        place = place.capped()
        return any(q.is_prefix_of(place) for q in self._moved)

    # -- inspection -----------------------------------------------------------

    def partition(self) -> list[list[Place]]:
        """Live-place partition, deterministically ordered."""
        groups: dict[int, list[Place]] = {}
        for p, s in self._slot_of.items():
            groups.setdefault(self.find(s), []).append(p)
        out = [sorted(g, key=Place.sort_key) for g in groups.values()]
        out.sort(key=lambda g: g[0].sort_key())
        return out

    def check_filter_gate(self) -> None:
        """Assert no filtered-typed place holds a slot (debug invariant)."""
        for p in self._slot_of:
            if self.is_filtered(p):
                raise AssertionError(f"filtered place {p} has an alias node")


# ---------------------------------------------------------------------------
# Function summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BugFlags:
    uaf: bool = False
    df: bool = False
    ima: bool = False
    dp: bool = False

    def __or__(self, other: "BugFlags") -> "BugFlags":
        return BugFlags(
            self.uaf or other.uaf,
            self.df or other.df,
            self.ima or other.ima,
            self.dp or other.dp,
        )

    def any(self) -> bool:
        return self.uaf or self.df or self.ima or self.dp


def summary_projections(ty: TypeExpr, cap: int = PROJECTION_DEPTH_CAP) -> list[tuple]:
    """Field-projection suffixes a summary tracks for a value of `ty`.

    The whole value plus every unfiltered field chain through structs,
    unions, and tuples.  Enum payloads stay on the enum node itself.
    """
    out: list[tuple] = []

    def rec(t: TypeExpr, prefix: tuple) -> None:
        if type_is_filtered(t):
            return
        out.append(prefix)
        if len(prefix) >= cap:
            return
        if isinstance(t, TupleType):
            for i, e in enumerate(t.elements):
                rec(e, prefix + (FieldProj(i),))
        elif isinstance(t, AdtType) and t.kind in (AdtKind.STRUCT, AdtKind.UNION):
            for i, (_, fty) in enumerate(t.fields):
                rec(fty, prefix + (FieldProj(i),))

    rec(ty, ())
    return out


@dataclass(frozen=True)
class FunctionSummary:
    """Cached result of analyzing one function.

    `matrix` holds (return-node index, argument-node index) pairs that may
    alias on at least one path.  Flags record which bug kinds the function's
    own body exhibits.
    """

    name: str
    ret_nodes: tuple[tuple, ...]
    arg_nodes: tuple[tuple[int, tuple], ...]
    matrix: frozenset[tuple[int, int]]
    flags: BugFlags
    stable: bool = True
    iterations: int = 1

    def ret_aliases_arg(self, ret_suffix: tuple, param: int, param_suffix: tuple = ()) -> bool:
        try:
            r = self.ret_nodes.index(ret_suffix)
            c = self.arg_nodes.index((param, param_suffix))
        except ValueError:
            return False
        return (r, c) in self.matrix

    def merged_with(self, other: "FunctionSummary") -> "FunctionSummary":
        return replace(
            self,
            matrix=self.matrix | other.matrix,
            flags=self.flags | other.flags,
        )


def summary_layout(f: FunctionBody) -> tuple[tuple[tuple, ...], tuple[tuple[int, tuple], ...]]:
    rets = tuple(tuple(p) for p in summary_projections(f.return_type))
    args: list[tuple[int, tuple]] = []
    for i in f.param_locals:
        for suf in summary_projections(f.locals[i]):
            args.append((i, tuple(suf)))
    return rets, tuple(args)


def empty_summary(name: str, f: FunctionBody | None = None) -> FunctionSummary:
    if f is None:
        return FunctionSummary(name, (), (), frozenset(), BugFlags())
    rets, args = summary_layout(f)
    return FunctionSummary(name, rets, args, frozenset(), BugFlags())


class SummaryCache:
    """Thread-safe per-function summary cache with hit/miss accounting.

    Hits and misses count only call-site lookups, not direct orchestration.
    The in-progress stack carries the active analysis chain; a function name
    can appear on it at most once.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._summaries: dict[str, FunctionSummary] = {}
        self.in_progress: list[str] = []
        self.hits = 0
        self.misses = 0

    def get(self, name: str) -> FunctionSummary | None:
        with self._lock:
            return self._summaries.get(name)

    def put(self, name: str, summary: FunctionSummary) -> None:
        with self._lock:
            self._summaries[name] = summary

    def record_lookup(self, name: str, hit: bool) -> None:
        with self._lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1

    def __contains__(self, name: str) -> bool:
        with self._lock:
            return name in self._summaries

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._summaries)


# ---------------------------------------------------------------------------
# Transfer functions
# ---------------------------------------------------------------------------

# Intrinsics whose argument reads are ownership plumbing rather than memory
# accesses; passing a stale pointer to them is not itself a use.
USE_EXEMPT_INTRINSICS = frozenset(
    {
        IntrinsicKind.GET_PTR,
        IntrinsicKind.UNSAFE_CONSTRUCT,
        IntrinsicKind.BOX_FROM_RAW,
        IntrinsicKind.BOX_INTO_RAW,
        IntrinsicKind.FORGET,
        IntrinsicKind.UNINITIALIZED,
    }
)


def apply_statement(state: AliasState, stmt: Statement) -> AliasState:
    """Update the partition for one statement; returns the same state."""
    if isinstance(stmt, (StorageLive, StorageDead)):
        return state  # storage markers are inert for aliasing
    assert isinstance(stmt, Assign)
    lhs, rhs = stmt.lhs, stmt.rhs
    if isinstance(rhs, Constant):
        state.sever(lhs)
        return state
    src = rvalue_place(rhs)
    assert src is not None
    if rvalue_is_move(rhs):
        state.assign_move(lhs, src)
    elif isinstance(rhs, (Ref, AddressOf)):
        if not state.is_filtered(lhs):
            state.sever(lhs)
            if not state.is_filtered(src):
                state.link(lhs, src)
    else:
        assert isinstance(rhs, (UseCopy, CastCopy))
        propagate = isinstance(rhs, UseCopy)
        state.assign_copy(lhs, src, propagate_fields=propagate)
    return state


@dataclass(frozen=True)
class CallEffects:
    """Taint-relevant facts the detector applies after a call's alias update."""

    dest_uninitialized: bool = False
    dest_dangling: bool = False


def apply_call(
    state: AliasState,
    call: Call,
    program: Program,
    summary: FunctionSummary | None,
    intrinsic_kind: IntrinsicKind | None,
    on_ok_edge: bool,
    opaque_alias_all: bool = True,
) -> CallEffects:
    """Apply a call's aliasing effects for the edge actually taken.

    Argument moves happen on both edges (the callee consumed them); the
    destination is written only when the call returns normally.
    """
    arg_places: list[Place | None] = [rvalue_place(a) for a in call.args]
    arg_slots: list[int | None] = [
        state.slot(p) if p is not None and not state.is_filtered(p) else None
        for p in arg_places
    ]

    effects = CallEffects()
    dest = call.destination
    if on_ok_edge:
        if intrinsic_kind is not None:
            effects = _apply_intrinsic(state, call, intrinsic_kind, arg_places, arg_slots, opaque_alias_all)
        else:
            assert summary is not None
            state.sever(dest)
            if not state.is_filtered(dest):
                for r, c in sorted(summary.matrix):
                    ret_suffix = summary.ret_nodes[r]
                    param, param_suffix = summary.arg_nodes[c]
                    ai = param - 1
                    if not (0 <= ai < len(arg_places)) or arg_places[ai] is None:
                        continue
                    dplace = dest.with_suffix(ret_suffix)
                    aplace = arg_places[ai].with_suffix(param_suffix)
                    base = arg_slots[ai]
                    if base is None:
                        continue
                    if param_suffix:
                        src_slot = state.existing_slot(aplace)
                        if src_slot is None:
                            src_slot = state.slot(aplace)
                    else:
                        src_slot = base
                    dslot = state.slot(dplace)
                    if dslot is not None and src_slot is not None:
                        state._union_slots(dslot, src_slot)
            if summary.flags.dp and not state.is_filtered(dest):
                effects = CallEffects(dest_dangling=True)
    for arg, p in zip(call.args, arg_places):
        if p is not None and rvalue_is_move(arg):
            state.mark_moved(p)
    return effects


def _apply_intrinsic(
    state: AliasState,
    call: Call,
    kind: IntrinsicKind,
    arg_places: list[Place | None],
    arg_slots: list[int | None],
    opaque_alias_all: bool,
) -> CallEffects:
    dest = call.destination
    state.sever(dest)
    dest_filtered = state.is_filtered(dest)
    first = arg_slots[0] if arg_slots else None

    if kind in (IntrinsicKind.GET_PTR, IntrinsicKind.UNSAFE_CONSTRUCT, IntrinsicKind.BOX_FROM_RAW):
        if not dest_filtered and first is not None:
            d = state.slot(dest)
            if d is not None:
                state._union_slots(d, first)
        return CallEffects()
    if kind is IntrinsicKind.BOX_INTO_RAW:
        # The container is consumed but the memory stays reachable through
        # the result, taint included.
        if not dest_filtered and first is not None:
            d = state.slot(dest)
            if d is not None:
                state._union_slots(d, first)
        return CallEffects()
    if kind is IntrinsicKind.UNINITIALIZED:
        return CallEffects(dest_uninitialized=not dest_filtered)
    if kind in (IntrinsicKind.CLONE, IntrinsicKind.FORGET):
        return CallEffects()
    assert kind is IntrinsicKind.OPAQUE
    if opaque_alias_all and not dest_filtered:
        d = state.slot(dest)
        if d is not None:
            for s in arg_slots:
                if s is not None:
                    state._union_slots(d, s)
    return CallEffects()
