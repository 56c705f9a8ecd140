"""In-memory data model for the IR dialect.

Programs are maps of functions; a function is a list of typed locals plus
basic blocks, each holding statements and exactly one terminator.  Places
(local + projection chain) are the unit the alias and taint machinery tracks.

All values here are immutable after construction and safe to share between
concurrent analyses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

# Analysis-side bound on projection chains; deeper places are truncated to
# this prefix when they become alias nodes (coarser, never unsound for
# may-alias).  The parser accepts deeper chains as long as they type-check.
PROJECTION_DEPTH_CAP = 4


class StructuralError(Exception):
    """A place projection does not fit the projected type."""

    def __init__(self, message: str, place: "Place | None" = None, step: int | None = None):
        super().__init__(message)
        self.place = place
        self.step = step


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeExpr:
    """Base class for type expressions."""


@dataclass(frozen=True)
class BoolType(TypeExpr):
    pass


@dataclass(frozen=True)
class CharType(TypeExpr):
    pass


@dataclass(frozen=True)
class IntType(TypeExpr):
    pass


@dataclass(frozen=True)
class UIntType(TypeExpr):
    pass


@dataclass(frozen=True)
class FloatType(TypeExpr):
    pass


@dataclass(frozen=True)
class RawPointerType(TypeExpr):
    pointee: TypeExpr
    mutable: bool


@dataclass(frozen=True)
class ReferenceType(TypeExpr):
    pointee: TypeExpr
    mutable: bool


@dataclass(frozen=True)
class SliceType(TypeExpr):
    """An owning heap buffer of homogeneous elements."""

    element: TypeExpr


@dataclass(frozen=True)
class ArrayType(TypeExpr):
    element: TypeExpr
    length: int

    def __post_init__(self) -> None:
        if self.length < 0:
            raise ValueError("array length must be >= 0")


@dataclass(frozen=True)
class TupleType(TypeExpr):
    elements: tuple[TypeExpr, ...] = ()


class AdtKind(str, Enum):
    STRUCT = "struct"
    ENUM = "enum"
    UNION = "union"


@dataclass(frozen=True)
class AdtType(TypeExpr):
    """A named nominal type.

    Structs and unions carry `fields`; enums carry per-variant field lists in
    `variants` (and an empty `fields` tuple).  `copy_trait` marks stack-only
    data that is duplicated on assignment instead of moved.
    """

    name: str
    kind: AdtKind
    copy_trait: bool
    fields: tuple[tuple[str, TypeExpr], ...] = ()
    variants: tuple[tuple[str, tuple[tuple[str, TypeExpr], ...]], ...] = ()


BOOL = BoolType()
CHAR = CharType()
INT = IntType()
UINT = UIntType()
FLOAT = FloatType()
UNIT = TupleType(())


def _component_types(t: TypeExpr) -> list[TypeExpr]:
    if isinstance(t, ArrayType):
        return [t.element]
    if isinstance(t, TupleType):
        return list(t.elements)
    if isinstance(t, AdtType):
        if t.kind is AdtKind.ENUM:
            return [fty for _, vfields in t.variants for _, fty in vfields]
        return [fty for _, fty in t.fields]
    return []


def copy_eligible(t: TypeExpr) -> bool:
    """True for stack-only data that is duplicated on assignment.

    Raw pointers and shared references copy; mutable references, owning
    slices, and non-copy ADTs move.  Composites copy iff all components do.
    """
    if isinstance(t, (BoolType, CharType, IntType, UIntType, FloatType)):
        return True
    if isinstance(t, RawPointerType):
        return True
    if isinstance(t, ReferenceType):
        return not t.mutable
    if isinstance(t, SliceType):
        return False
    if isinstance(t, ArrayType):
        return copy_eligible(t.element)
    if isinstance(t, TupleType):
        return all(copy_eligible(e) for e in t.elements)
    if isinstance(t, AdtType):
        return t.copy_trait
    raise TypeError(f"unknown type expression: {t!r}")


def needs_drop(t: TypeExpr) -> bool:
    """True iff values of the type release heap resources when they die.

    Pointers and references never drop their pointee; an owning slice or any
    non-copy ADT does, as does any composite containing one.
    """
    if isinstance(t, (BoolType, CharType, IntType, UIntType, FloatType)):
        return False
    if isinstance(t, (RawPointerType, ReferenceType)):
        return False
    if isinstance(t, SliceType):
        return True
    if isinstance(t, ArrayType):
        return needs_drop(t.element)
    if isinstance(t, TupleType):
        return any(needs_drop(e) for e in t.elements)
    if isinstance(t, AdtType):
        return not t.copy_trait
    raise TypeError(f"unknown type expression: {t!r}")


def type_is_filtered(t: TypeExpr) -> bool:
    """True for types the alias analysis can safely ignore.

    Primitives are filtered.  Slices, references, and raw pointers are kept
    because they transmit aliasing precisely.  A composite is filtered iff
    every component is filtered and the composite itself is copy-eligible.
    """
    if isinstance(t, (BoolType, CharType, IntType, UIntType, FloatType)):
        return True
    if isinstance(t, (RawPointerType, ReferenceType, SliceType)):
        return False
    if isinstance(t, (ArrayType, TupleType, AdtType)):
        if not copy_eligible(t):
            return False
        return all(type_is_filtered(c) for c in _component_types(t))
    raise TypeError(f"unknown type expression: {t!r}")


def validate_adt(adt: AdtType) -> None:
    """Reject copy ADTs containing non-copy components."""
    if adt.copy_trait:
        for c in _component_types(adt):
            if not copy_eligible(c):
                raise ValueError(
                    f"type {adt.name}: copy is only legal when every field is copy-eligible"
                )
    if adt.kind is AdtKind.ENUM:
        names = [v for v, _ in adt.variants]
        if len(names) != len(set(names)):
            raise ValueError(f"type {adt.name}: duplicate variant names")


# ---------------------------------------------------------------------------
# Places
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldProj:
    index: int


@dataclass(frozen=True)
class DerefProj:
    pass


DEREF = DerefProj()
Projection = Union[FieldProj, DerefProj]


@dataclass(frozen=True)
class Place:
    local: int
    projections: tuple[Projection, ...] = ()

    def capped(self, depth: int = PROJECTION_DEPTH_CAP) -> "Place":
        if len(self.projections) <= depth:
            return self
        return Place(self.local, self.projections[:depth])

    def extend(self, proj: Projection) -> "Place":
        return Place(self.local, self.projections + (proj,))

    def with_suffix(self, suffix: tuple[Projection, ...]) -> "Place":
        return Place(self.local, self.projections + suffix)

    def parent(self) -> "Place":
        if not self.projections:
            raise ValueError("a bare local has no parent place")
        return Place(self.local, self.projections[:-1])

    def is_prefix_of(self, other: "Place") -> bool:
        return (
            self.local == other.local
            and len(self.projections) <= len(other.projections)
            and other.projections[: len(self.projections)] == self.projections
        )

    def overlaps(self, other: "Place") -> bool:
        return self.is_prefix_of(other) or other.is_prefix_of(self)

    def sort_key(self) -> tuple:
        return (
            self.local,
            tuple(
                (0, 0) if isinstance(p, DerefProj) else (1, p.index)
                for p in self.projections
            ),
        )

    def __str__(self) -> str:
        out = f"_{self.local}"
        for p in self.projections:
            if isinstance(p, DerefProj):
                out = f"(*{out})"
            else:
                out = f"{out}.{p.index}"
        return out


# ---------------------------------------------------------------------------
# Rvalues, statements, terminators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


_NO_SPAN = SourceSpan("<builtin>", 1, 1, 0)


@dataclass(frozen=True)
class RValue:
    """Base class for right-hand sides."""


@dataclass(frozen=True)
class UseCopy(RValue):
    place: Place


@dataclass(frozen=True)
class UseMove(RValue):
    place: Place


@dataclass(frozen=True)
class CastCopy(RValue):
    place: Place
    target: TypeExpr


@dataclass(frozen=True)
class CastMove(RValue):
    place: Place
    target: TypeExpr


@dataclass(frozen=True)
class Ref(RValue):
    place: Place
    mutable: bool


@dataclass(frozen=True)
class AddressOf(RValue):
    place: Place
    mutable: bool


@dataclass(frozen=True)
class Constant(RValue):
    kind: str  # int | float | bool | char | unit
    value: object = None


def rvalue_place(rv: RValue) -> Optional[Place]:
    if isinstance(rv, (UseCopy, UseMove)):
        return rv.place
    if isinstance(rv, (CastCopy, CastMove)):
        return rv.place
    if isinstance(rv, (Ref, AddressOf)):
        return rv.place
    return None


def rvalue_is_move(rv: RValue) -> bool:
    return isinstance(rv, (UseMove, CastMove))


@dataclass(frozen=True)
class Statement:
    """Base class for statements."""


@dataclass(frozen=True)
class Assign(Statement):
    lhs: Place
    rhs: RValue
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class StorageLive(Statement):
    local: int
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class StorageDead(Statement):
    local: int
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Terminator:
    """Base class for block terminators."""


@dataclass(frozen=True)
class Goto(Terminator):
    target: int
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Return(Terminator):
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Resume(Terminator):
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Abort(Terminator):
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Panic(Terminator):
    cleanup: int
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Call(Terminator):
    callee: str
    args: tuple[RValue, ...]
    destination: Place
    ok: int
    unwind: Optional[int] = None
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class Drop(Terminator):
    place: Place
    ok: int
    unwind: Optional[int] = None
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass(frozen=True)
class SwitchInt(Terminator):
    discriminant: Place
    arms: tuple[tuple[str, int], ...]
    otherwise: int
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


EXIT_TERMINATORS = (Return, Resume, Abort)


def successors(term: Terminator) -> tuple[int, ...]:
    """Successor block indices in deterministic order (ok edges first)."""
    if isinstance(term, Goto):
        return (term.target,)
    if isinstance(term, Panic):
        return (term.cleanup,)
    if isinstance(term, Call):
        return (term.ok,) if term.unwind is None else (term.ok, term.unwind)
    if isinstance(term, Drop):
        return (term.ok,) if term.unwind is None else (term.ok, term.unwind)
    if isinstance(term, SwitchInt):
        return tuple(t for _, t in term.arms) + (term.otherwise,)
    return ()


def unwind_targets(term: Terminator) -> tuple[int, ...]:
    """Targets reached only when the terminator panics."""
    if isinstance(term, Panic):
        return (term.cleanup,)
    if isinstance(term, (Call, Drop)) and term.unwind is not None:
        return (term.unwind,)
    return ()


def terminator_span(term: Terminator) -> SourceSpan:
    return term.span  # type: ignore[attr-defined]


def statement_span(stmt: Statement) -> SourceSpan:
    return stmt.span  # type: ignore[attr-defined]


# ---------------------------------------------------------------------------
# Functions and programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasicBlock:
    statements: tuple[Statement, ...]
    terminator: Terminator


@dataclass(frozen=True)
class FunctionBody:
    """A function: local 0 is the return slot, locals 1..=arity the params."""

    name: str
    arity: int
    locals: tuple[TypeExpr, ...]
    blocks: tuple[BasicBlock, ...]
    span: SourceSpan = field(default=_NO_SPAN, compare=False)
    body_lines: tuple[int, int] = field(default=(0, 0), compare=False)
    panic_hints: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    def local_type(self, index: int) -> TypeExpr:
        return self.locals[index]

    @property
    def param_locals(self) -> range:
        return range(1, self.arity + 1)

    @property
    def return_type(self) -> TypeExpr:
        return self.locals[0]


class IntrinsicKind(str, Enum):
    GET_PTR = "get_ptr"
    UNSAFE_CONSTRUCT = "unsafe_construct"
    FORGET = "forget"
    UNINITIALIZED = "uninitialized"
    CLONE = "clone"
    BOX_FROM_RAW = "box_from_raw"
    BOX_INTO_RAW = "box_into_raw"
    OPAQUE = "opaque"


@dataclass(frozen=True)
class IntrinsicDecl:
    name: str
    kind: IntrinsicKind
    params: tuple[TypeExpr, ...]
    ret: TypeExpr
    span: SourceSpan = field(default=_NO_SPAN, compare=False)


@dataclass
class Program:
    functions: dict[str, FunctionBody] = field(default_factory=dict)
    intrinsics: dict[str, IntrinsicDecl] = field(default_factory=dict)
    adts: dict[str, AdtType] = field(default_factory=dict)

    def callee_exists(self, name: str) -> bool:
        return name in self.functions or name in self.intrinsics


# ---------------------------------------------------------------------------
# Place/type queries
# ---------------------------------------------------------------------------


def project_type(t: TypeExpr, proj: Projection) -> TypeExpr:
    """Apply one projection step; raises StructuralError on mismatch."""
    if isinstance(proj, DerefProj):
        if isinstance(t, (ReferenceType, RawPointerType)):
            return t.pointee
        raise StructuralError(f"cannot dereference non-pointer type {format_type(t)}")
    if isinstance(t, TupleType):
        if 0 <= proj.index < len(t.elements):
            return t.elements[proj.index]
        raise StructuralError(f"tuple has no field {proj.index}")
    if isinstance(t, AdtType):
        if t.kind is AdtKind.ENUM:
            raise StructuralError(
                f"cannot project into enumeration {t.name}; variant payloads are tracked on the enum value"
            )
        if 0 <= proj.index < len(t.fields):
            return t.fields[proj.index][1]
        raise StructuralError(f"{t.kind.value} {t.name} has no field {proj.index}")
    raise StructuralError(f"type {format_type(t)} has no fields")


def place_type(p: Place, f: FunctionBody) -> TypeExpr:
    """Type of the place after applying all projections."""
    if not (0 <= p.local < len(f.locals)):
        raise StructuralError(f"local _{p.local} out of range", place=p)
    t = f.locals[p.local]
    for i, proj in enumerate(p.projections):
        try:
            t = project_type(t, proj)
        except StructuralError as exc:
            raise StructuralError(f"{p}: step {i}: {exc}", place=p, step=i) from None
    return t


def place_needs_drop(p: Place, f: FunctionBody) -> bool:
    return needs_drop(place_type(p, f))


def place_is_filtered(p: Place, f: FunctionBody) -> bool:
    return type_is_filtered(place_type(p, f))


def reachable_blocks(f: FunctionBody) -> list[int]:
    """Blocks reachable from the entry, in DFS preorder."""
    seen: set[int] = set()
    order: list[int] = []
    stack = [0]
    while stack:
        b = stack.pop()
        if b in seen or not (0 <= b < len(f.blocks)):
            continue
        seen.add(b)
        order.append(b)
        for s in reversed(successors(f.blocks[b].terminator)):
            stack.append(s)
    return order


def format_type(t: TypeExpr) -> str:
    if isinstance(t, BoolType):
        return "bool"
    if isinstance(t, CharType):
        return "char"
    if isinstance(t, IntType):
        return "int"
    if isinstance(t, UIntType):
        return "uint"
    if isinstance(t, FloatType):
        return "float"
    if isinstance(t, RawPointerType):
        return f"*{'mut' if t.mutable else 'const'} {format_type(t.pointee)}"
    if isinstance(t, ReferenceType):
        return f"&mut {format_type(t.pointee)}" if t.mutable else f"&{format_type(t.pointee)}"
    if isinstance(t, SliceType):
        return f"[{format_type(t.element)}]"
    if isinstance(t, ArrayType):
        return f"[{format_type(t.element)}; {t.length}]"
    if isinstance(t, TupleType):
        if not t.elements:
            return "()"
        if len(t.elements) == 1:
            return f"({format_type(t.elements[0])},)"
        return "(" + ", ".join(format_type(e) for e in t.elements) + ")"
    if isinstance(t, AdtType):
        return t.name
    raise TypeError(f"unknown type expression: {t!r}")
