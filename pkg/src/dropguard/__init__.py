"""dropguard: static detection of invalid automatic deallocations in a small
MIR-style IR, plus a concrete shadow-heap interpreter used to confirm findings.

The analysis is path-sensitive (CFG paths via SCC condensation and a spanning
tree), field-sensitive (union-find alias sets over projected places), and
inter-procedural (cached per-function summaries with fixed-point handling of
recursion).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .ir import (  # noqa: F401
    Place,
    Program,
    FunctionBody,
    place_type,
    place_needs_drop,
    type_is_filtered,
)
from .parser import parse_program, parse_files, pretty_print, ParseError  # noqa: F401
from .paths import tarjan_sccs, build_spanning_tree, enumerate_paths  # noqa: F401
from .engine import analyze_program, summarize_function, AnalysisSettings  # noqa: F401
from .interp import execute, confirm, ExecutionScript  # noqa: F401
