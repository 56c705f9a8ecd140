"""CFG path extraction.

Cycles are condensed to strongly connected components so each cycle's block
set is walked once, in a fixed internal order.  The condensation is unfolded
into a spanning tree whose root-to-leaf walks become the analyzed paths.
Chains of switches over one un-reassigned discriminant pin the chosen variant
once per branch, so n variants produce n subtrees instead of n^k combinations.
A path count above the configured threshold signals the caller to fall back
to a single merged-state pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    Abort,
    AdtKind,
    AdtType,
    Assign,
    Call,
    EXIT_TERMINATORS,
    FunctionBody,
    IntrinsicKind,
    Place,
    Program,
    Resume,
    Return,
    SwitchInt,
    place_type,
    reachable_blocks,
    successors,
    unwind_targets,
)


@dataclass(frozen=True)
class Scc:
    """One strongly connected component of the reachable CFG."""

    id: int
    blocks: frozenset[int]
    entry_blocks: frozenset[int]
    internal_order: tuple[int, ...]

    @property
    def is_cycle(self) -> bool:
        return len(self.blocks) > 1 or self._self_loop

    # Set during construction; a single block with an edge to itself cycles.
    _self_loop: bool = False


@dataclass
class TreeNode:
    scc_id: int
    context: tuple[tuple[Place, str], ...] = ()
    children: list["TreeNode"] = field(default_factory=list)


@dataclass
class SpanningTree:
    root: TreeNode
    sccs: list[Scc]
    exit_scc_ids: frozenset[int] = frozenset()
    truncated: bool = False
    node_count: int = 0


@dataclass(frozen=True)
class Path:
    """An entry-to-exit walk; cycle members appear once, in internal order."""

    blocks: tuple[int, ...]
    context: tuple[tuple[Place, str], ...] = ()

    @property
    def block_set(self) -> frozenset[int]:
        return frozenset(self.blocks)


def tarjan_sccs(f: FunctionBody) -> list[Scc]:
    """SCCs of the reachable CFG, in reverse topological order.

    Deterministic for a given function: the DFS follows terminator successor
    order and the internal order of each component is a reverse postorder
    from its first-reached entry block.
    """
    order = reachable_blocks(f)
    reachable = set(order)
    preorder_index = {b: i for i, b in enumerate(order)}
    succ = {
        b: tuple(s for s in successors(f.blocks[b].terminator) if s in reachable)
        for b in reachable
    }

    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = 0
    comps: list[frozenset[int]] = []

    for root in order:
        if root in index:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            advanced = False
            for j in range(pi, len(succ[v])):
                w = succ[v][j]
                if w not in index:
                    work[-1] = (v, j + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(frozenset(comp))
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])

    block_comp: dict[int, int] = {}
    for cid, comp in enumerate(comps):
        for b in comp:
            block_comp[b] = cid

    sccs: list[Scc] = []
    for cid, comp in enumerate(comps):
        entries = frozenset(
            b
            for b in comp
            if b == 0
            or any(block_comp[p] != cid for p in reachable if b in succ[p])
        )
        candidates = entries if entries else comp
        first_entry = min(candidates, key=lambda b: preorder_index[b])
        internal = _component_rpo(first_entry, comp, succ)
        self_loop = len(comp) == 1 and next(iter(comp)) in succ[next(iter(comp))]
        sccs.append(Scc(cid, comp, entries, internal, self_loop))
    return sccs


def _component_rpo(entry: int, comp: frozenset[int], succ: dict[int, tuple[int, ...]]) -> tuple[int, ...]:
    postorder: list[int] = []
    seen: set[int] = set()
    stack: list[tuple[int, int]] = [(entry, 0)]
    seen.add(entry)
    while stack:
        v, pi = stack[-1]
        nxt = [s for s in succ[v] if s in comp]
        advanced = False
        for j in range(pi, len(nxt)):
            w = nxt[j]
            if w not in seen:
                stack[-1] = (v, j + 1)
                seen.add(w)
                stack.append((w, 0))
                advanced = True
                break
        if not advanced:
            stack.pop()
            postorder.append(v)
    order = tuple(reversed(postorder))
    # Multi-entry components may have members unreachable from the chosen
    # entry inside the component; append them deterministically.
    rest = tuple(sorted(comp - set(order)))
    return order + rest


# ---------------------------------------------------------------------------
# Spanning tree with switch-variant pinning
# ---------------------------------------------------------------------------


def _assigned_places(f: FunctionBody, block: int, program: Program | None) -> list[Place]:
    out: list[Place] = []
    blk = f.blocks[block]
    for stmt in blk.statements:
        if isinstance(stmt, Assign):
            out.append(stmt.lhs)
    term = blk.terminator
    if isinstance(term, Call):
        out.append(term.destination)
    return out


def _enum_variants(place: Place, f: FunctionBody) -> tuple[str, ...] | None:
    try:
        ty = place_type(place, f)
    except Exception:
        return None
    if isinstance(ty, AdtType) and ty.kind is AdtKind.ENUM:
        return tuple(v for v, _ in ty.variants)
    return None


def build_spanning_tree(
    f: FunctionBody,
    sccs: list[Scc],
    program: Program | None = None,
    max_nodes: int | None = None,
) -> SpanningTree:
    """Unfold the condensation DAG into a tree, pruning contradicted arms.

    Each node carries the variant context pinned so far: a map from switch
    discriminant place to the variant taken.  An assignment to a pinned place
    (or one of its prefixes) kills the pin.
    """
    block_comp: dict[int, int] = {}
    for scc in sccs:
        for b in scc.blocks:
            block_comp[b] = scc.id
    by_id = {scc.id: scc for scc in sccs}
    root_scc = block_comp[0]
    exit_ids = frozenset(
        scc.id
        for scc in sccs
        if any(isinstance(f.blocks[b].terminator, EXIT_TERMINATORS) for b in scc.blocks)
    )

    tree = SpanningTree(TreeNode(root_scc, ()), sccs, exit_ids)
    count = 1
    work: list[TreeNode] = [tree.root]
    while work:
        node = work.pop()
        scc = by_id[node.scc_id]
        ctx = dict(node.context)
        # Kill pins for places assigned anywhere in this component.
        for b in scc.internal_order:
            for assigned in _assigned_places(f, b, program):
                for pinned in list(ctx):
                    if assigned.overlaps(pinned):
                        del ctx[pinned]
        children: list[TreeNode] = []
        for b in scc.internal_order:
            term = f.blocks[b].terminator
            if isinstance(term, SwitchInt):
                disc = term.discriminant
                pinned = ctx.get(disc)
                variants = _enum_variants(disc, f)
                arm_labels = [lab for lab, _ in term.arms]
                for lab, target in term.arms:
                    if block_comp.get(target) == scc.id:
                        continue
                    if pinned is not None and lab != pinned:
                        continue
                    child_ctx = dict(ctx)
                    child_ctx[disc] = lab
                    children.append(
                        TreeNode(block_comp[target], tuple(sorted(child_ctx.items(), key=lambda kv: kv[0].sort_key())))
                    )
                if block_comp.get(term.otherwise) != scc.id:
                    take_otherwise = True
                    other_ctx = dict(ctx)
                    if pinned is not None:
                        take_otherwise = pinned not in arm_labels
                    elif variants is not None:
                        leftover = [v for v in variants if v not in arm_labels]
                        if not leftover:
                            take_otherwise = False
                        elif len(leftover) == 1:
                            other_ctx[disc] = leftover[0]
                    if take_otherwise:
                        children.append(
                            TreeNode(
                                block_comp[term.otherwise],
                                tuple(sorted(other_ctx.items(), key=lambda kv: kv[0].sort_key())),
                            )
                        )
            else:
                frozen_ctx = tuple(sorted(ctx.items(), key=lambda kv: kv[0].sort_key()))
                for target in successors(term):
                    if block_comp.get(target) == scc.id:
                        continue
                    children.append(TreeNode(block_comp[target], frozen_ctx))
        node.children = children
        count += len(children)
        if max_nodes is not None and count > max_nodes:
            tree.truncated = True
            break
        # LIFO gives DFS expansion; reverse keeps declared order first.
        work.extend(reversed(children))
    tree.node_count = count
    return tree


def enumerate_paths(tree: SpanningTree, threshold: int) -> tuple[list[Path], bool]:
    """Root-to-leaf walks, subset-dominated sets removed.

    Returns (paths, fallback).  fallback=True (with an empty list) means the
    raw walk count exceeded the threshold and the caller should analyze with
    the merged-state scheme instead.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if tree.truncated:
        return [], True
    by_id = {scc.id: scc for scc in tree.sccs}
    raw: list[Path] = []
    stack: list[tuple[TreeNode, tuple[int, ...]]] = [(tree.root, ())]
    while stack:
        node, prefix = stack.pop()
        scc = by_id[node.scc_id]
        blocks = prefix + scc.internal_order
        if not node.children:
            # Dead-end leaves (every successor pruned, or a cycle with no
            # exit) yield no path; only exit-terminated walks count.
            if node.scc_id in tree.exit_scc_ids:
                raw.append(Path(blocks, node.context))
                if len(raw) > threshold:
                    return [], True
            continue
        for child in reversed(node.children):
            stack.append((child, blocks))
    return _dominate(raw), False


def _dominate(raw: list[Path]) -> list[Path]:
    seen_sets: dict[frozenset[int], int] = {}
    unique: list[Path] = []
    for p in raw:
        s = p.block_set
        if s in seen_sets:
            continue
        seen_sets[s] = len(unique)
        unique.append(p)
    keep: list[Path] = []
    for i, p in enumerate(unique):
        s = p.block_set
        dominated = any(
            j != i and s < q.block_set for j, q in enumerate(unique)
        )
        if not dominated:
            keep.append(p)
    return keep


def extract_paths(
    f: FunctionBody,
    threshold: int,
    program: Program | None = None,
    sccs: list[Scc] | None = None,
) -> tuple[list[Path], bool, list[Scc]]:
    """Convenience wrapper: SCCs, tree, then filtered paths."""
    if sccs is None:
        sccs = tarjan_sccs(f)
    tree = build_spanning_tree(f, sccs, program, max_nodes=max(threshold * 8, 4096))
    paths, fallback = enumerate_paths(tree, threshold)
    return paths, fallback, sccs


def path_crosses_unwind_edge(f: FunctionBody, blocks: tuple[int, ...]) -> bool:
    """True if some consecutive block pair traverses an unwind edge."""
    for a, b in zip(blocks, blocks[1:]):
        if b in unwind_targets(f.blocks[a].terminator):
            return True
    return False
