"""Concrete interpreter with a shadow heap.

Values are symbolic handles: each heap resource is an allocation id with a
state (uninitialized, allocated, freed), and a value is the set of ids it
can reach.  Pointer-producing intrinsics share ids; drops free them.  Using
a freed id is a UAF event, freeing it again a DF event, touching or freeing
an uninitialized one an IMA event.  Branches are driven by a script, and a
panic can be injected at a chosen point to force unwinding, so analyzer
diagnostics can be confirmed by concrete replay.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .ir import (
    Abort,
    Assign,
    Call,
    Constant,
    Drop,
    FunctionBody,
    Goto,
    IntrinsicKind,
    needs_drop,
    Panic,
    Place,
    Program,
    RawPointerType,
    ReferenceType,
    Resume,
    Return,
    rvalue_is_move,
    rvalue_place,
    Statement,
    StorageDead,
    StorageLive,
    StructuralError,
    SwitchInt,
    place_type,
    unwind_targets,
)

DEFAULT_STEP_LIMIT = 100_000


@dataclass(frozen=True)
class ExecutionScript:
    """Branch choices (one label per switch executed, in order), an optional
    injected panic site in the entry function, and a step bound."""

    branch_choices: tuple[str, ...] = ()
    panic_site: tuple[int, int] | None = None  # (block, statement index)
    step_limit: int = DEFAULT_STEP_LIMIT

    def __post_init__(self) -> None:
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")


@dataclass(frozen=True)
class ExecutionEvent:
    kind: str  # UAF | DF | IMA
    function: str
    block: int
    statement: int
    place: Place

    def __str__(self) -> str:
        return f"{self.kind} in {self.function} at bb{self.block}[{self.statement}] on {self.place}"


@dataclass
class ExecutionReport:
    status: str  # returned | unwound | aborted | timeout | script-exhausted
    events: list[ExecutionEvent]
    steps: int
    choices_consumed: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("returned", "unwound", "aborted")


_UNINITIALIZED = "uninitialized"
_ALLOCATED = "allocated"
_FREED = "freed"


class ShadowHeap:
    """Allocation-id state machine; ids only move forward to `freed`."""

    def __init__(self) -> None:
        self._states: dict[int, str] = {}
        self._next = 0

    def allocate(self, state: str = _ALLOCATED) -> int:
        i = self._next
        self._next += 1
        self._states[i] = state
        return i

    def state(self, i: int) -> str:
        return self._states[i]

    def free(self, i: int) -> str | None:
        """Free one id; returns the violation kind, if any."""
        st = self._states[i]
        if st == _FREED:
            return "DF"
        self._states[i] = _FREED
        if st == _UNINITIALIZED:
            return "IMA"
        return None

    def read_violation(self, i: int) -> str | None:
        st = self._states[i]
        if st == _FREED:
            return "UAF"
        if st == _UNINITIALIZED:
            return "IMA"
        return None


Value = frozenset  # of allocation ids


@dataclass
class _Frame:
    func: FunctionBody
    locals: dict[int, Value]
    moved: list[Place] = field(default_factory=list)
    block: int = 0
    stmt: int = 0
    pending_call: Call | None = None


class _Interpreter:
    def __init__(self, program: Program, entry: str, script: ExecutionScript):
        if entry not in program.functions:
            raise ValueError(f"unknown entry function {entry!r}")
        self.program = program
        self.script = script
        self.heap = ShadowHeap()
        self.events: list[ExecutionEvent] = []
        self.steps = 0
        self.choice_idx = 0
        self.panic_armed = script.panic_site is not None
        func = program.functions[entry]
        frame = _Frame(func, {})
        for i in func.param_locals:
            frame.locals[i] = self._synthesize(func.locals[i])
        self.stack = [frame]

    # -- values ---------------------------------------------------------------

    def _synthesize(self, ty) -> Value:
        if needs_drop(ty) or isinstance(ty, (RawPointerType, ReferenceType)):
            return frozenset({self.heap.allocate()})
        return frozenset()

    def _value_of(self, frame: _Frame, place: Place) -> Value:
        if any(m.is_prefix_of(place) for m in frame.moved):
            return frozenset()
        return frame.locals.get(place.local, frozenset())

    def _write(self, frame: _Frame, place: Place, value: Value) -> None:
        frame.moved = [m for m in frame.moved if not m.overlaps(place)]
        if place.projections:
            old = frame.locals.get(place.local, frozenset())
            frame.locals[place.local] = old | value
        else:
            frame.locals[place.local] = value

    def _check_read(self, frame: _Frame, place: Place, stmt_index: int) -> Value:
        value = self._value_of(frame, place)
        worst: str | None = None
        for i in sorted(value):
            v = self.heap.read_violation(i)
            if v == "UAF" and worst is None:
                worst = v
            elif v == "IMA":
                worst = v
        if worst is not None:
            self.events.append(
                ExecutionEvent(worst, frame.func.name, frame.block, stmt_index, place)
            )
        return value

    # -- driver -----------------------------------------------------------------

    def run(self) -> ExecutionReport:
        while True:
            if self.steps >= self.script.step_limit:
                return self._report("timeout")
            self.steps += 1
            frame = self.stack[-1]
            block = frame.func.blocks[frame.block]
            at = (frame.block, frame.stmt)
            if (
                self.panic_armed
                and len(self.stack) == 1
                and self.script.panic_site == at
            ):
                self.panic_armed = False
                status = self._unwind_from(frame)
                if status is not None:
                    return self._report(status)
                continue
            if frame.stmt < len(block.statements):
                self._step_statement(frame, block.statements[frame.stmt], frame.stmt)
                frame.stmt += 1
                continue
            status = self._step_terminator(frame, block.terminator, len(block.statements))
            if status is not None:
                return self._report(status)

    def _report(self, status: str) -> ExecutionReport:
        return ExecutionReport(status, self.events, self.steps, self.choice_idx)

    # -- statements ---------------------------------------------------------------

    def _step_statement(self, frame: _Frame, stmt: Statement, index: int) -> None:
        if isinstance(stmt, (StorageLive, StorageDead)):
            return
        assert isinstance(stmt, Assign)
        rhs = stmt.rhs
        if isinstance(rhs, Constant):
            self._write(frame, stmt.lhs, frozenset())
            return
        src = rvalue_place(rhs)
        assert src is not None
        value = self._check_read(frame, src, index)
        if rvalue_is_move(rhs):
            frame.moved.append(src)
        self._write(frame, stmt.lhs, value)

    # -- terminators -----------------------------------------------------------------

    def _step_terminator(self, frame: _Frame, term, ti: int) -> str | None:
        if isinstance(term, Goto):
            self._jump(frame, term.target)
            return None
        if isinstance(term, Abort):
            return "aborted"
        if isinstance(term, Panic):
            self._jump(frame, term.cleanup)
            return None
        if isinstance(term, Resume):
            return self._propagate_unwind()
        if isinstance(term, Return):
            return self._do_return(frame)
        if isinstance(term, SwitchInt):
            self._check_read(frame, term.discriminant, ti)
            if self.choice_idx >= len(self.script.branch_choices):
                return "script-exhausted"
            label = self.script.branch_choices[self.choice_idx]
            self.choice_idx += 1
            target = term.otherwise
            for lab, t in term.arms:
                if lab == label:
                    target = t
                    break
            self._jump(frame, target)
            return None
        if isinstance(term, Drop):
            place = term.place
            moved = any(m.is_prefix_of(place) for m in frame.moved)
            if not moved and place.local in frame.locals:
                try:
                    dropped_ty = place_type(place, frame.func)
                except StructuralError:
                    dropped_ty = None
                if dropped_ty is not None and needs_drop(dropped_ty):
                    for i in sorted(self._value_of(frame, place)):
                        violation = self.heap.free(i)
                        if violation is not None:
                            self.events.append(
                                ExecutionEvent(violation, frame.func.name, frame.block, ti, place)
                            )
            self._jump(frame, term.ok)
            return None
        assert isinstance(term, Call)
        return self._do_call(frame, term, ti)

    def _jump(self, frame: _Frame, target: int) -> None:
        frame.block = target
        frame.stmt = 0

    def _do_return(self, frame: _Frame) -> str | None:
        ret = frame.locals.get(0, frozenset())
        self.stack.pop()
        if not self.stack:
            return "returned"
        caller = self.stack[-1]
        call = caller.pending_call
        assert call is not None
        caller.pending_call = None
        self._write(caller, call.destination, ret)
        self._jump(caller, call.ok)
        return None

    def _propagate_unwind(self) -> str | None:
        self.stack.pop()
        while self.stack:
            caller = self.stack[-1]
            call = caller.pending_call
            caller.pending_call = None
            if call is not None and call.unwind is not None:
                self._jump(caller, call.unwind)
                return None
            self.stack.pop()
        return "unwound"

    def _unwind_from(self, frame: _Frame) -> str | None:
        """Injected panic: statements before the site ran; divert along the
        enclosing terminator's unwind edge, or propagate outward."""
        term = frame.func.blocks[frame.block].terminator
        targets = unwind_targets(term)
        if targets:
            self._jump(frame, targets[0])
            return None
        return self._propagate_unwind()

    def _do_call(self, frame: _Frame, call: Call, ti: int) -> str | None:
        decl = self.program.intrinsics.get(call.callee)
        arg_values: list[Value] = []
        for arg in call.args:
            p = rvalue_place(arg)
            if p is None:
                arg_values.append(frozenset())
                continue
            if decl is not None and decl.kind is IntrinsicKind.FORGET:
                arg_values.append(self._value_of(frame, p))
            else:
                arg_values.append(self._check_read(frame, p, ti))
        for arg in call.args:
            p = rvalue_place(arg)
            if p is not None and rvalue_is_move(arg):
                frame.moved.append(p)

        if decl is not None:
            result = self._intrinsic_result(decl, arg_values)
            self._write(frame, call.destination, result)
            self._jump(frame, call.ok)
            return None

        callee = self.program.functions[call.callee]
        frame.pending_call = call
        sub = _Frame(callee, {})
        for i, value in zip(callee.param_locals, arg_values):
            sub.locals[i] = value
        for i in callee.param_locals:
            sub.locals.setdefault(i, frozenset())
        self.stack.append(sub)
        return None

    def _intrinsic_result(self, decl, arg_values: list[Value]) -> Value:
        kind = decl.kind
        if kind in (
            IntrinsicKind.GET_PTR,
            IntrinsicKind.UNSAFE_CONSTRUCT,
            IntrinsicKind.BOX_FROM_RAW,
            IntrinsicKind.BOX_INTO_RAW,
        ):
            shared: set[int] = set()
            for v in arg_values:
                shared |= v
            return frozenset(shared)
        if kind is IntrinsicKind.UNINITIALIZED:
            return frozenset({self.heap.allocate(_UNINITIALIZED)})
        if kind is IntrinsicKind.FORGET:
            return frozenset()
        if kind in (IntrinsicKind.CLONE, IntrinsicKind.OPAQUE):
            # Fresh storage: opaque callees and clones never share addresses
            # with their arguments at runtime.
            if needs_drop(decl.ret):
                return frozenset({self.heap.allocate()})
            if isinstance(decl.ret, (RawPointerType, ReferenceType)):
                return frozenset({self.heap.allocate()})
            return frozenset()
        raise AssertionError(f"unhandled intrinsic kind {kind}")


def execute(program: Program, entry: str, script: ExecutionScript) -> ExecutionReport:
    """Run `entry` under the given script; parameters are synthesized."""
    return _Interpreter(program, entry, script).run()


# ---------------------------------------------------------------------------
# Diagnostic confirmation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfirmBudget:
    max_choice_len: int = 16
    max_executions: int = 4096


def _switch_labels(program: Program, entry: str) -> list[str]:
    labels: set[str] = set()
    seen: set[str] = set()
    work = [entry]
    while work:
        name = work.pop()
        if name in seen or name not in program.functions:
            continue
        seen.add(name)
        for block in program.functions[name].blocks:
            term = block.terminator
            if isinstance(term, SwitchInt):
                labels.update(lab for lab, _ in term.arms)
            if isinstance(term, Call):
                work.append(term.callee)
    return sorted(labels)


def iter_scripts(
    program: Program,
    entry: str,
    panic_sites: list[tuple[int, int] | None],
    budget: ConfirmBudget,
):
    """Yield (script, report) pairs, deduplicating underspecified scripts.

    Choice vectors are enumerated in breadth-first length order; a vector
    longer than what the execution consumed duplicates a shorter run and is
    skipped."""
    labels = _switch_labels(program, entry)
    vectors: list[tuple[str, ...]] = [()]
    if labels:
        for n in range(1, budget.max_choice_len + 1):
            vectors.extend(itertools.product(labels, repeat=n))
            if len(vectors) >= budget.max_executions:
                break
    executions = 0
    for site in panic_sites:
        for choices in vectors:
            if executions >= budget.max_executions:
                return
            script = ExecutionScript(branch_choices=choices, panic_site=site)
            report = execute(program, entry, script)
            executions += 1
            if choices and report.choices_consumed < len(choices):
                continue  # a shorter vector already covered this run
            yield script, report


def confirm(
    diagnostic,
    program: Program,
    budget: ConfirmBudget | None = None,
) -> bool:
    """True iff some bounded execution reproduces the diagnostic's event
    at the same site (kind, function, block, statement)."""
    budget = budget or ConfirmBudget()
    entry = diagnostic.function
    if entry not in program.functions:
        return False
    func = program.functions[entry]
    sites: list[tuple[int, int] | None] = [None]
    for b in diagnostic.witness_path:
        if 0 <= b < len(func.blocks):
            for s in range(len(func.blocks[b].statements) + 1):
                sites.append((b, s))
    for hint in func.panic_hints:
        if hint not in sites:
            sites.append(hint)
    want = (
        diagnostic.kind.value,
        diagnostic.function,
        diagnostic.block,
        diagnostic.statement,
    )
    for _, report in iter_scripts(program, entry, sites, budget):
        for ev in report.events:
            if (ev.kind, ev.function, ev.block, ev.statement) == want:
                return True
    return False


def exhaustive_events(
    program: Program,
    entry: str,
    budget: ConfirmBudget | None = None,
    with_panics: bool = True,
) -> list[ExecutionEvent]:
    """All events observable from `entry` under the bounded script sweep."""
    budget = budget or ConfirmBudget(max_choice_len=6, max_executions=2000)
    func = program.functions[entry]
    sites: list[tuple[int, int] | None] = [None]
    if with_panics:
        for b in range(len(func.blocks)):
            for s in range(len(func.blocks[b].statements) + 1):
                sites.append((b, s))
    out: list[ExecutionEvent] = []
    for _, report in iter_scripts(program, entry, sites, budget):
        out.extend(report.events)
    return out
