"""Parser and canonical printer for the `.smir` dialect.

Grammar sketch (see README for the full reference):

    program    := { adt-decl | extern-decl | fn-decl }
    adt-decl   := ["copy"] ("struct"|"union") NAME "{" [field {"," field}] "}"
                | ["copy"] "enum" NAME "{" [variant {"," variant}] "}"
    extern-decl:= "extern" "fn" NAME "(" params ")" ["->" TYPE] "@intrinsic" "(" KIND ")" ";"
    fn-decl    := "fn" NAME "(" params ")" ["->" TYPE] "{" {let-decl} {block} "}"
    let-decl   := "let" LOCAL ":" TYPE ";"
    block      := BB ":" "{" {statement} terminator "}"

Comments run from `//` to end of line.  A `// @panic-at bbN:S` comment inside
a function body records a panic-injection hint for the interpreter; the
analyzer ignores it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field

from .ir import (
    Abort,
    AddressOf,
    AdtKind,
    AdtType,
    ArrayType,
    Assign,
    BasicBlock,
    BOOL,
    BoolType,
    Call,
    CharType,
    IntType,
    UIntType,
    CastCopy,
    CastMove,
    CHAR,
    Constant,
    copy_eligible,
    DEREF,
    Drop,
    FieldProj,
    FLOAT,
    format_type,
    FunctionBody,
    Goto,
    INT,
    IntrinsicDecl,
    IntrinsicKind,
    Panic,
    Place,
    Program,
    RawPointerType,
    Ref,
    ReferenceType,
    Resume,
    Return,
    RValue,
    SliceType,
    SourceSpan,
    Statement,
    StorageDead,
    StorageLive,
    StructuralError,
    SwitchInt,
    Terminator,
    TupleType,
    TypeExpr,
    UINT,
    UNIT,
    UseCopy,
    UseMove,
    place_type,
    rvalue_is_move,
    rvalue_place,
)

MAX_ERRORS = 50

KEYWORDS = {
    "fn", "let", "extern", "struct", "enum", "union", "copy", "call", "drop",
    "switchInt", "goto", "return", "resume", "abort", "panic", "move", "const",
    "StorageLive", "StorageDead", "as", "otherwise", "ok", "unwind", "mut",
    "raw", "bool", "char", "int", "uint", "float", "true", "false",
}

_PANIC_HINT_RE = re.compile(r"@panic-at\s+bb(\d+):(\d+)")


@dataclass(frozen=True)
class ParseDiagnostic:
    span: SourceSpan
    message: str
    severity: str = "error"  # error | warning

    def __str__(self) -> str:
        return f"{self.span}: {self.severity}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        head = "\n".join(str(d) for d in diagnostics[:10])
        more = "" if len(diagnostics) <= 10 else f"\n... and {len(diagnostics) - 10} more"
        super().__init__(f"parse failed:\n{head}{more}")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | local | int | float | char | punct | eof
    text: str
    span: SourceSpan


_PUNCT = [
    "->", "&", "*", "(", ")", "[", "]", "{", "}", ",", ";", ":", ".", "=", "@", "-",
]


class _Lexer:
    def __init__(self, filename: str, text: str):
        self.filename = filename
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens: list[Token] = []
        self.comment_lines: list[tuple[int, str]] = []
        self.errors: list[ParseDiagnostic] = []

    def _span(self, length: int) -> SourceSpan:
        return SourceSpan(self.filename, self.line, self.col, length)

    def _advance(self, n: int) -> None:
        for ch in self.text[self.pos : self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def run(self) -> list[Token]:
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch in " \t\r\n":
                self._advance(1)
                continue
            if text.startswith("//", self.pos):
                end = text.find("\n", self.pos)
                if end == -1:
                    end = len(text)
                self.comment_lines.append((self.line, text[self.pos : end]))
                self._advance(end - self.pos)
                continue
            m = re.match(r"_\d+", text[self.pos :])
            if m:
                self.tokens.append(Token("local", m.group(0), self._span(len(m.group(0)))))
                self._advance(len(m.group(0)))
                continue
            m = re.match(r"[A-Za-z][A-Za-z0-9_]*", text[self.pos :])
            if m:
                self.tokens.append(Token("ident", m.group(0), self._span(len(m.group(0)))))
                self._advance(len(m.group(0)))
                continue
            # Float literals appear only after `const`; elsewhere `1.2` must
            # lex as INT DOT INT so projection chains like `_1.0.1` work.
            prev = self.tokens[-1] if self.tokens else None
            allow_float = prev is not None and prev.kind == "ident" and prev.text == "const"
            if allow_float:
                m = re.match(r"\d+\.\d+", text[self.pos :])
                if m:
                    self.tokens.append(Token("float", m.group(0), self._span(len(m.group(0)))))
                    self._advance(len(m.group(0)))
                    continue
            m = re.match(r"\d+", text[self.pos :])
            if m:
                self.tokens.append(Token("int", m.group(0), self._span(len(m.group(0)))))
                self._advance(len(m.group(0)))
                continue
            m = re.match(r"'([^'\\])'", text[self.pos :])
            if m:
                self.tokens.append(Token("char", m.group(1), self._span(len(m.group(0)))))
                self._advance(len(m.group(0)))
                continue
            for p in _PUNCT:
                if text.startswith(p, self.pos):
                    self.tokens.append(Token("punct", p, self._span(len(p))))
                    self._advance(len(p))
                    break
            else:
                self.errors.append(
                    ParseDiagnostic(self._span(1), f"unexpected character {ch!r}")
                )
                self._advance(1)
                if len(self.errors) >= MAX_ERRORS:
                    break
        self.tokens.append(Token("eof", "", self._span(0)))
        return self.tokens


@dataclass
class _RawFunction:
    name: str
    arity: int
    locals: dict[int, TypeExpr]
    blocks: list[BasicBlock]
    span: SourceSpan
    body_lines: tuple[int, int]
    panic_hints: tuple[tuple[int, int], ...] = ()


class _Parser:
    """Single-file recursive-descent parser; one instance per source file."""

    def __init__(self, filename: str, text: str, program: Program, errors: list[ParseDiagnostic]):
        lexer = _Lexer(filename, text)
        self.tokens = lexer.run()
        self.comment_lines = lexer.comment_lines
        self.errors = errors
        self.errors.extend(lexer.errors)
        self.idx = 0
        self.program = program
        self.filename = filename

    # -- token helpers ----------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.idx]

    def next(self) -> Token:
        tok = self.tokens[self.idx]
        if tok.kind != "eof":
            self.idx += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.at(kind, text):
            return self.next()
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if self.at(kind, text):
            return self.next()
        want = text if text is not None else kind
        raise _SyntaxProblem(tok.span, f"expected {want!r}, found {tok.text or tok.kind!r}")

    def error(self, span: SourceSpan, message: str) -> None:
        if len(self.errors) < MAX_ERRORS:
            self.errors.append(ParseDiagnostic(span, message))

    # -- toplevel ----------------------------------------------------------

    def parse(self) -> None:
        while not self.at("eof"):
            if len(self.errors) >= MAX_ERRORS:
                return
            try:
                tok = self.peek()
                if tok.kind == "ident" and tok.text in ("struct", "enum", "union", "copy"):
                    self.parse_adt()
                elif tok.kind == "ident" and tok.text == "extern":
                    self.parse_extern()
                elif tok.kind == "ident" and tok.text == "fn":
                    self.parse_function()
                else:
                    raise _SyntaxProblem(tok.span, f"expected declaration, found {tok.text!r}")
            except _SyntaxProblem as p:
                self.error(p.span, p.message)
                self._recover_toplevel()

    def _recover_toplevel(self) -> None:
        depth = 0
        while not self.at("eof"):
            tok = self.peek()
            if tok.kind == "punct" and tok.text == "{":
                depth += 1
            elif tok.kind == "punct" and tok.text == "}":
                depth -= 1
                self.next()
                if depth <= 0:
                    return
                continue
            elif depth == 0 and tok.kind == "punct" and tok.text == ";":
                self.next()
                return
            elif depth == 0 and tok.kind == "ident" and tok.text in ("fn", "struct", "enum", "union", "extern", "copy"):
                return
            self.next()

    # -- declarations -------------------------------------------------------

    def parse_adt(self) -> None:
        is_copy = bool(self.accept("ident", "copy"))
        kw = self.expect("ident")
        if kw.text not in ("struct", "enum", "union"):
            raise _SyntaxProblem(kw.span, f"expected struct/enum/union, found {kw.text!r}")
        name_tok = self.expect("ident")
        name = name_tok.text
        if name in KEYWORDS:
            raise _SyntaxProblem(name_tok.span, f"{name!r} is a reserved word")
        if name in self.program.adts:
            self.error(name_tok.span, f"duplicate type name {name!r}")
        self.expect("punct", "{")
        if kw.text == "enum":
            variants: list[tuple[str, tuple[tuple[str, TypeExpr], ...]]] = []
            while not self.at("punct", "}"):
                vname = self.expect("ident").text
                self.expect("punct", "{")
                vfields = self.parse_field_list()
                self.expect("punct", "}")
                variants.append((vname, tuple(vfields)))
                if not self.accept("punct", ","):
                    break
            self.expect("punct", "}")
            adt = AdtType(name, AdtKind.ENUM, is_copy, (), tuple(variants))
        else:
            fields = self.parse_field_list()
            self.expect("punct", "}")
            kind = AdtKind.STRUCT if kw.text == "struct" else AdtKind.UNION
            adt = AdtType(name, kind, is_copy, tuple(fields), ())
        try:
            from .ir import validate_adt

            validate_adt(adt)
        except ValueError as exc:
            self.error(name_tok.span, str(exc))
        self.program.adts.setdefault(name, adt)

    def parse_field_list(self) -> list[tuple[str, TypeExpr]]:
        fields: list[tuple[str, TypeExpr]] = []
        while self.peek().kind == "ident" and not self.at("punct", "}"):
            fname = self.expect("ident").text
            self.expect("punct", ":")
            fty = self.parse_type()
            fields.append((fname, fty))
            if not self.accept("punct", ","):
                break
        return fields

    def parse_extern(self) -> None:
        self.expect("ident", "extern")
        self.expect("ident", "fn")
        name_tok = self.expect("ident")
        params = self.parse_param_list()
        ret: TypeExpr = UNIT
        if self.accept("punct", "->"):
            ret = self.parse_type()
        self.expect("punct", "@")
        kw = self.expect("ident")
        if kw.text != "intrinsic":
            raise _SyntaxProblem(kw.span, "expected '@intrinsic(KIND)'")
        self.expect("punct", "(")
        kind_tok = self.expect("ident")
        self.expect("punct", ")")
        self.expect("punct", ";")
        try:
            kind = IntrinsicKind(kind_tok.text)
        except ValueError:
            self.error(kind_tok.span, f"unknown intrinsic kind {kind_tok.text!r}")
            kind = IntrinsicKind.OPAQUE
        name = name_tok.text
        if self.program.callee_exists(name):
            self.error(name_tok.span, f"duplicate function name {name!r}")
        self.program.intrinsics[name] = IntrinsicDecl(
            name, kind, tuple(t for _, t in params), ret, name_tok.span
        )

    def parse_param_list(self) -> list[tuple[int, TypeExpr]]:
        self.expect("punct", "(")
        params: list[tuple[int, TypeExpr]] = []
        n = 1
        while not self.at("punct", ")"):
            tok = self.expect("local")
            idx = int(tok.text[1:])
            if idx != n:
                self.error(tok.span, f"parameters must be _1.._N in order; expected _{n}")
            self.expect("punct", ":")
            ty = self.parse_type()
            params.append((idx, ty))
            n += 1
            if not self.accept("punct", ","):
                break
        self.expect("punct", ")")
        return params

    def parse_function(self) -> None:
        fn_tok = self.expect("ident", "fn")
        name_tok = self.expect("ident")
        name = name_tok.text
        if name in KEYWORDS:
            raise _SyntaxProblem(name_tok.span, f"{name!r} is a reserved word")
        params = self.parse_param_list()
        header_ret: TypeExpr | None = None
        if self.accept("punct", "->"):
            header_ret = self.parse_type()
        open_tok = self.expect("punct", "{")
        first_line = fn_tok.span.line

        locals_map: dict[int, TypeExpr] = {i: t for i, t in params}
        if header_ret is not None:
            locals_map[0] = header_ret
        while self.at("ident", "let"):
            self.next()
            loc_tok = self.expect("local")
            idx = int(loc_tok.text[1:])
            self.expect("punct", ":")
            ty = self.parse_type()
            self.expect("punct", ";")
            if idx in locals_map:
                self.error(loc_tok.span, f"local _{idx} declared twice")
            else:
                locals_map[idx] = ty
        if 0 not in locals_map:
            locals_map[0] = UNIT

        blocks: list[tuple[int, BasicBlock, SourceSpan]] = []
        while not self.at("punct", "}"):
            blocks.append(self.parse_block())
        close_tok = self.expect("punct", "}")

        indices = [b[0] for b in blocks]
        if sorted(indices) != list(range(len(blocks))):
            self.error(open_tok.span, f"fn {name}: blocks must be bb0..bb{max(len(blocks) - 1, 0)} with no gaps or repeats")
            return
        by_index = {got: blk for got, blk, _ in blocks}
        block_list = [by_index[i] for i in range(len(blocks))]

        max_local = max(locals_map) if locals_map else 0
        missing = [i for i in range(max_local + 1) if i not in locals_map]
        if missing:
            self.error(open_tok.span, f"fn {name}: undeclared locals {missing}")
            return

        hints = []
        last_line = close_tok.span.line
        for line_no, comment in self.comment_lines:
            if first_line <= line_no <= last_line:
                m = _PANIC_HINT_RE.search(comment)
                if m:
                    hints.append((int(m.group(1)), int(m.group(2))))
                elif "@panic-at" in comment:
                    self.error(
                        SourceSpan(self.filename, line_no, 1, len(comment)),
                        "malformed @panic-at directive (expected '@panic-at bbN:S')",
                    )

        func = FunctionBody(
            name=name,
            arity=len(params),
            locals=tuple(locals_map[i] for i in range(max_local + 1)),
            blocks=tuple(block_list),
            span=name_tok.span,
            body_lines=(first_line, last_line),
            panic_hints=tuple(hints),
        )
        if self.program.callee_exists(name):
            self.error(name_tok.span, f"duplicate function name {name!r}")
        else:
            self.program.functions[name] = func

    # -- blocks -------------------------------------------------------------

    def parse_block(self) -> tuple[int, BasicBlock, SourceSpan]:
        label = self.expect("ident")
        m = re.fullmatch(r"bb(\d+)", label.text)
        if not m:
            raise _SyntaxProblem(label.span, f"expected block label 'bbN', found {label.text!r}")
        index = int(m.group(1))
        self.expect("punct", ":")
        self.expect("punct", "{")
        statements: list[Statement] = []
        terminator: Terminator | None = None
        while not self.at("punct", "}"):
            item = self.parse_block_item()
            if isinstance(item, Terminator):
                terminator = item
                break
            statements.append(item)
        self.expect("punct", "}")
        if terminator is None:
            raise _SyntaxProblem(label.span, f"block bb{index} has no terminator")
        return index, BasicBlock(tuple(statements), terminator), label.span

    def parse_block_item(self) -> Statement | Terminator:
        tok = self.peek()
        if tok.kind == "ident":
            if tok.text == "goto":
                self.next()
                self.expect("punct", "->")
                target = self.parse_bb_ref()
                self.expect("punct", ";")
                return Goto(target, span=tok.span)
            if tok.text == "return":
                self.next()
                self.expect("punct", ";")
                return Return(span=tok.span)
            if tok.text == "resume":
                self.next()
                self.expect("punct", ";")
                return Resume(span=tok.span)
            if tok.text == "abort":
                self.next()
                self.expect("punct", ";")
                return Abort(span=tok.span)
            if tok.text == "panic":
                self.next()
                self.expect("punct", "->")
                target = self.parse_bb_ref()
                self.expect("punct", ";")
                return Panic(target, span=tok.span)
            if tok.text == "drop":
                self.next()
                self.expect("punct", "(")
                place = self.parse_place()
                self.expect("punct", ")")
                self.expect("punct", "->")
                ok, unwind = self.parse_ok_unwind()
                self.expect("punct", ";")
                return Drop(place, ok, unwind, span=tok.span)
            if tok.text == "switchInt":
                self.next()
                self.expect("punct", "(")
                disc = self.parse_place()
                self.expect("punct", ")")
                self.expect("punct", "->")
                self.expect("punct", "[")
                arms: list[tuple[str, int]] = []
                otherwise: int | None = None
                while True:
                    if self.at("ident", "otherwise"):
                        self.next()
                        self.expect("punct", ":")
                        otherwise = self.parse_bb_ref()
                    else:
                        lab = self.next()
                        if lab.kind not in ("ident", "int"):
                            raise _SyntaxProblem(lab.span, "expected switch arm label")
                        self.expect("punct", ":")
                        arms.append((lab.text, self.parse_bb_ref()))
                    if not self.accept("punct", ","):
                        break
                self.expect("punct", "]")
                self.expect("punct", ";")
                if otherwise is None:
                    raise _SyntaxProblem(tok.span, "switchInt requires an 'otherwise' target")
                return SwitchInt(disc, tuple(arms), otherwise, span=tok.span)
            if tok.text in ("StorageLive", "StorageDead"):
                self.next()
                self.expect("punct", "(")
                loc = self.expect("local")
                self.expect("punct", ")")
                self.expect("punct", ";")
                cls = StorageLive if tok.text == "StorageLive" else StorageDead
                return cls(int(loc.text[1:]), span=tok.span)
        # assignment or call terminator
        lhs = self.parse_place()
        self.expect("punct", "=")
        if self.at("ident", "call"):
            self.next()
            callee = self.expect("ident").text
            self.expect("punct", "(")
            args: list[RValue] = []
            while not self.at("punct", ")"):
                args.append(self.parse_rvalue())
                if not self.accept("punct", ","):
                    break
            self.expect("punct", ")")
            self.expect("punct", "->")
            ok, unwind = self.parse_ok_unwind()
            self.expect("punct", ";")
            return Call(callee, tuple(args), lhs, ok, unwind, span=tok.span)
        rhs = self.parse_rvalue()
        self.expect("punct", ";")
        return Assign(lhs, rhs, span=tok.span)

    def parse_ok_unwind(self) -> tuple[int, int | None]:
        self.expect("punct", "[")
        self.expect("ident", "ok")
        self.expect("punct", ":")
        ok = self.parse_bb_ref()
        unwind: int | None = None
        if self.accept("punct", ","):
            self.expect("ident", "unwind")
            self.expect("punct", ":")
            unwind = self.parse_bb_ref()
        self.expect("punct", "]")
        return ok, unwind

    def parse_bb_ref(self) -> int:
        tok = self.expect("ident")
        m = re.fullmatch(r"bb(\d+)", tok.text)
        if not m:
            raise _SyntaxProblem(tok.span, f"expected block reference 'bbN', found {tok.text!r}")
        return int(m.group(1))

    # -- places, rvalues, types ---------------------------------------------

    def parse_place(self) -> Place:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            self.expect("punct", "*")
            inner = self.parse_place()
            self.expect("punct", ")")
            place = Place(inner.local, inner.projections + (DEREF,))
        else:
            loc = self.expect("local")
            place = Place(int(loc.text[1:]))
        while self.at("punct", "."):
            self.next()
            idx = self.expect("int")
            place = place.extend(FieldProj(int(idx.text)))
        return place

    def parse_rvalue(self) -> RValue:
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "move":
            self.next()
            place = self.parse_place()
            if self.accept("ident", "as"):
                return CastMove(place, self.parse_type())
            return UseMove(place)
        if tok.kind == "ident" and tok.text == "const":
            self.next()
            return self.parse_constant()
        if tok.kind == "punct" and tok.text == "&":
            self.next()
            if self.accept("ident", "raw"):
                if self.accept("ident", "mut"):
                    return AddressOf(self.parse_place(), True)
                self.expect("ident", "const")
                return AddressOf(self.parse_place(), False)
            if self.accept("ident", "mut"):
                return Ref(self.parse_place(), True)
            return Ref(self.parse_place(), False)
        place = self.parse_place()
        if self.accept("ident", "as"):
            return CastCopy(place, self.parse_type())
        return UseCopy(place)

    def parse_constant(self) -> Constant:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            self.expect("punct", ")")
            return Constant("unit")
        if tok.kind == "punct" and tok.text == "-":
            self.next()
            num = self.expect("int")
            return Constant("int", -int(num.text))
        if tok.kind == "int":
            self.next()
            return Constant("int", int(tok.text))
        if tok.kind == "float":
            self.next()
            return Constant("float", float(tok.text))
        if tok.kind == "char":
            self.next()
            return Constant("char", tok.text)
        if tok.kind == "ident" and tok.text in ("true", "false"):
            self.next()
            return Constant("bool", tok.text == "true")
        raise _SyntaxProblem(tok.span, f"expected literal, found {tok.text!r}")

    def parse_type(self) -> TypeExpr:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            if self.accept("punct", ")"):
                return UNIT
            elements = [self.parse_type()]
            if not self.at("punct", ","):
                raise _SyntaxProblem(self.peek().span, "1-tuples are written '(T,)'")
            while self.accept("punct", ","):
                if self.at("punct", ")"):
                    break
                elements.append(self.parse_type())
            self.expect("punct", ")")
            return TupleType(tuple(elements))
        if tok.kind == "punct" and tok.text == "&":
            self.next()
            if self.accept("ident", "mut"):
                return ReferenceType(self.parse_type(), True)
            return ReferenceType(self.parse_type(), False)
        if tok.kind == "punct" and tok.text == "*":
            self.next()
            if self.accept("ident", "mut"):
                return RawPointerType(self.parse_type(), True)
            self.expect("ident", "const")
            return RawPointerType(self.parse_type(), False)
        if tok.kind == "punct" and tok.text == "[":
            self.next()
            elem = self.parse_type()
            if self.accept("punct", ";"):
                n = self.expect("int")
                self.expect("punct", "]")
                return ArrayType(elem, int(n.text))
            self.expect("punct", "]")
            return SliceType(elem)
        if tok.kind == "ident":
            self.next()
            simple = {"bool": BOOL, "char": CHAR, "int": INT, "uint": UINT, "float": FLOAT}
            if tok.text in simple:
                return simple[tok.text]
            adt = self.program.adts.get(tok.text)
            if adt is None:
                raise _SyntaxProblem(tok.span, f"unknown type {tok.text!r} (types must be declared before use)")
            return adt
        raise _SyntaxProblem(tok.span, f"expected type, found {tok.text!r}")


class _SyntaxProblem(Exception):
    def __init__(self, span: SourceSpan, message: str):
        super().__init__(message)
        self.span = span
        self.message = message


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def rvalue_type(rv: RValue, f: FunctionBody) -> TypeExpr:
    if isinstance(rv, (UseCopy, UseMove)):
        return place_type(rv.place, f)
    if isinstance(rv, (CastCopy, CastMove)):
        return rv.target
    if isinstance(rv, Ref):
        return ReferenceType(place_type(rv.place, f), rv.mutable)
    if isinstance(rv, AddressOf):
        return RawPointerType(place_type(rv.place, f), rv.mutable)
    assert isinstance(rv, Constant)
    return {
        "int": INT,
        "float": FLOAT,
        "bool": BOOL,
        "char": CHAR,
        "unit": UNIT,
    }[rv.kind]


def _constant_compatible(c: Constant, expected: TypeExpr) -> bool:
    if c.kind == "int":
        if isinstance(expected, UIntType):
            return isinstance(c.value, int) and c.value >= 0
        return isinstance(expected, IntType)
    if c.kind == "float":
        return isinstance(expected, FloatType)
    if c.kind == "bool":
        return isinstance(expected, BoolType)
    if c.kind == "char":
        return isinstance(expected, CharType)
    return expected == UNIT


def _check_rvalue(rv: RValue, expected: TypeExpr, f: FunctionBody, where: SourceSpan, errors: list[ParseDiagnostic]) -> None:
    def err(msg: str) -> None:
        if len(errors) < MAX_ERRORS:
            errors.append(ParseDiagnostic(where, msg))

    if isinstance(rv, Constant):
        if not _constant_compatible(rv, expected):
            err(f"literal does not fit type {format_type(expected)}")
        return
    try:
        actual = rvalue_type(rv, f)
    except StructuralError as exc:
        err(str(exc))
        return
    if actual != expected:
        err(f"type mismatch: expected {format_type(expected)}, found {format_type(actual)}")
        return
    place = rvalue_place(rv)
    assert place is not None
    src_ty = place_type(place, f)
    if isinstance(rv, (UseMove, CastMove)) and copy_eligible(src_ty):
        err(f"cannot move {place}: type {format_type(src_ty)} is copy-eligible")
    if isinstance(rv, (UseCopy, CastCopy)):
        if not (copy_eligible(src_ty) or isinstance(src_ty, (ReferenceType, RawPointerType))):
            err(f"cannot copy {place}: type {format_type(src_ty)} must be moved")


def _validate_function(f: FunctionBody, program: Program, errors: list[ParseDiagnostic]) -> None:
    from .ir import AdtKind as _AdtKind, successors as _succ

    def err(span: SourceSpan, msg: str) -> None:
        if len(errors) < MAX_ERRORS:
            errors.append(ParseDiagnostic(span, f"fn {f.name}: {msg}"))

    nblocks = len(f.blocks)
    if nblocks == 0:
        err(f.span, "function has no blocks")
        return
    for bi, block in enumerate(f.blocks):
        term = block.terminator
        for target in _succ(term):
            if not (0 <= target < nblocks):
                err(term.span, f"bb{bi}: target bb{target} out of range")
        for stmt in block.statements:
            if isinstance(stmt, (StorageLive, StorageDead)):
                if not (0 <= stmt.local < len(f.locals)):
                    err(stmt.span, f"bb{bi}: unknown local _{stmt.local}")
                continue
            assert isinstance(stmt, Assign)
            try:
                lhs_ty = place_type(stmt.lhs, f)
            except StructuralError as exc:
                err(stmt.span, f"bb{bi}: {exc}")
                continue
            _check_rvalue(stmt.rhs, lhs_ty, f, stmt.span, errors)
        if isinstance(term, Drop):
            try:
                place_type(term.place, f)
            except StructuralError as exc:
                err(term.span, f"bb{bi}: {exc}")
        elif isinstance(term, SwitchInt):
            labels = [lab for lab, _ in term.arms]
            if len(labels) != len(set(labels)):
                err(term.span, f"bb{bi}: duplicate switch arm labels")
            try:
                disc_ty = place_type(term.discriminant, f)
            except StructuralError as exc:
                err(term.span, f"bb{bi}: {exc}")
                continue
            if isinstance(disc_ty, AdtType) and disc_ty.kind is _AdtKind.ENUM:
                variant_names = {v for v, _ in disc_ty.variants}
                for lab in labels:
                    if lab not in variant_names:
                        err(term.span, f"bb{bi}: {lab!r} is not a variant of {disc_ty.name}")
            elif not isinstance(disc_ty, (IntType, UIntType, BoolType, CharType)):
                err(term.span, f"bb{bi}: cannot switch on type {format_type(disc_ty)}")
        elif isinstance(term, Call):
            sig = _callee_signature(term.callee, program)
            if sig is None:
                err(term.span, f"bb{bi}: unresolved callee {term.callee!r}")
                continue
            params, ret = sig
            if len(term.args) != len(params):
                err(term.span, f"bb{bi}: {term.callee} expects {len(params)} arguments, got {len(term.args)}")
            else:
                for arg, pty in zip(term.args, params):
                    _check_rvalue(arg, pty, f, term.span, errors)
            try:
                dest_ty = place_type(term.destination, f)
            except StructuralError as exc:
                err(term.span, f"bb{bi}: {exc}")
                continue
            if dest_ty != ret:
                err(
                    term.span,
                    f"bb{bi}: {term.callee} returns {format_type(ret)}, destination has type {format_type(dest_ty)}",
                )


def _callee_signature(name: str, program: Program) -> tuple[tuple[TypeExpr, ...], TypeExpr] | None:
    if name in program.functions:
        g = program.functions[name]
        return tuple(g.locals[i] for i in g.param_locals), g.return_type
    if name in program.intrinsics:
        d = program.intrinsics[name]
        return d.params, d.ret
    return None


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def parse_program(sources: list[tuple[str, str]]) -> Program:
    """Parse and validate source files into one Program.

    `sources` is a list of (filename, text) pairs.  Raises ParseError with up
    to 50 diagnostics on failure.
    """
    program = Program()
    errors: list[ParseDiagnostic] = []
    for filename, text in sources:
        _Parser(filename, text, program, errors).parse()
        if len(errors) >= MAX_ERRORS:
            break
    if not errors:
        for func in program.functions.values():
            _validate_function(func, program, errors)
            if len(errors) >= MAX_ERRORS:
                break
    if errors:
        raise ParseError(errors[:MAX_ERRORS])
    return program


def parse_files(paths: list[str]) -> Program:
    sources = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            sources.append((path, fh.read()))
    return parse_program(sources)


def parse_text(text: str, filename: str = "<memory>") -> Program:
    return parse_program([(filename, text)])


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------


def _format_constant(c: Constant) -> str:
    if c.kind == "unit":
        return "const ()"
    if c.kind == "bool":
        return f"const {'true' if c.value else 'false'}"
    if c.kind == "char":
        return f"const '{c.value}'"
    return f"const {c.value}"


def _format_rvalue(rv: RValue) -> str:
    if isinstance(rv, UseCopy):
        return str(rv.place)
    if isinstance(rv, UseMove):
        return f"move {rv.place}"
    if isinstance(rv, CastCopy):
        return f"{rv.place} as {format_type(rv.target)}"
    if isinstance(rv, CastMove):
        return f"move {rv.place} as {format_type(rv.target)}"
    if isinstance(rv, Ref):
        return f"&mut {rv.place}" if rv.mutable else f"&{rv.place}"
    if isinstance(rv, AddressOf):
        return f"&raw mut {rv.place}" if rv.mutable else f"&raw const {rv.place}"
    assert isinstance(rv, Constant)
    return _format_constant(rv)


def _format_statement(stmt: Statement) -> str:
    if isinstance(stmt, Assign):
        return f"{stmt.lhs} = {_format_rvalue(stmt.rhs)};"
    if isinstance(stmt, StorageLive):
        return f"StorageLive(_{stmt.local});"
    assert isinstance(stmt, StorageDead)
    return f"StorageDead(_{stmt.local});"


def _format_terminator(term: Terminator) -> str:
    if isinstance(term, Goto):
        return f"goto -> bb{term.target};"
    if isinstance(term, Return):
        return "return;"
    if isinstance(term, Resume):
        return "resume;"
    if isinstance(term, Abort):
        return "abort;"
    if isinstance(term, Panic):
        return f"panic -> bb{term.cleanup};"
    if isinstance(term, Drop):
        if term.unwind is None:
            return f"drop({term.place}) -> [ok: bb{term.ok}];"
        return f"drop({term.place}) -> [ok: bb{term.ok}, unwind: bb{term.unwind}];"
    if isinstance(term, Call):
        args = ", ".join(_format_rvalue(a) for a in term.args)
        tail = f"[ok: bb{term.ok}]" if term.unwind is None else f"[ok: bb{term.ok}, unwind: bb{term.unwind}]"
        return f"{term.destination} = call {term.callee}({args}) -> {tail};"
    assert isinstance(term, SwitchInt)
    arms = ", ".join(f"{lab}: bb{t}" for lab, t in term.arms)
    sep = ", " if arms else ""
    return f"switchInt({term.discriminant}) -> [{arms}{sep}otherwise: bb{term.otherwise}];"


def pretty_print(program: Program) -> str:
    """Canonical, reparseable text form; stable across runs."""
    out: list[str] = []
    for adt in program.adts.values():
        prefix = "copy " if adt.copy_trait else ""
        if adt.kind is AdtKind.ENUM:
            variants = ", ".join(
                f"{v} {{ " + ", ".join(f"{n}: {format_type(t)}" for n, t in fs) + " }"
                if fs
                else f"{v} {{ }}"
                for v, fs in adt.variants
            )
            out.append(f"{prefix}enum {adt.name} {{ {variants} }}")
        else:
            fields = ", ".join(f"{n}: {format_type(t)}" for n, t in adt.fields)
            body = f"{{ {fields} }}" if fields else "{ }"
            out.append(f"{prefix}{adt.kind.value} {adt.name} {body}")
    for decl in program.intrinsics.values():
        params = ", ".join(f"_{i + 1}: {format_type(t)}" for i, t in enumerate(decl.params))
        out.append(
            f"extern fn {decl.name}({params}) -> {format_type(decl.ret)} @intrinsic({decl.kind.value});"
        )
    for func in program.functions.values():
        params = ", ".join(f"_{i}: {format_type(func.locals[i])}" for i in func.param_locals)
        out.append(f"fn {func.name}({params}) -> {format_type(func.return_type)} {{")
        for i in range(func.arity + 1, len(func.locals)):
            out.append(f"    let _{i}: {format_type(func.locals[i])};")
        for bi, block in enumerate(func.blocks):
            parts = [_format_statement(s) for s in block.statements]
            parts.append(_format_terminator(block.terminator))
            out.append(f"    bb{bi}: {{ " + " ".join(parts) + " }")
        out.append("}")
    return "\n".join(out) + "\n"
