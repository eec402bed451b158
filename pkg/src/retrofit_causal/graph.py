"""Causal DAGs with typed nodes, mutilation, path enumeration and d-separation."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator, Mapping

OBSERVED = "observed"
LATENT = "latent"
SELECTION = "selection"
NODE_KINDS = (OBSERVED, LATENT, SELECTION)

RELATIONS = ("parents", "children", "ancestors", "descendants")

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class GraphError(Exception):
    pass


class GraphParseError(GraphError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class CycleError(GraphError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("graph contains the cycle " + " -> ".join(cycle))


class UnknownNodeError(GraphError, KeyError):
    def __init__(self, name: str, line: int | None = None, column: int | None = None):
        self.name = name
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}unknown node {name!r}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Path:
    """A simple path in the skeleton of a graph.

    ``forward[i]`` is True when the step ``nodes[i] -> nodes[i + 1]`` follows
    the edge direction and False when it walks an edge backwards.
    """

    nodes: tuple[str, ...]
    forward: tuple[bool, ...]

    def __post_init__(self):
        if len(self.forward) != max(len(self.nodes) - 1, 0):
            raise ValueError("need exactly one direction per step")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path visits a node twice")

    def __len__(self) -> int:
        return len(self.nodes)

    def __str__(self) -> str:
        if not self.nodes:
            return ""
        out = [self.nodes[0]]
        for node, fwd in zip(self.nodes[1:], self.forward):
            out.append("->" if fwd else "<-")
            out.append(node)
        return " ".join(out)

    def colliders(self) -> list[str]:
        """Interior nodes where both adjacent edges point into the node."""
        return [
            self.nodes[i]
            for i in range(1, len(self.nodes) - 1)
            if self.forward[i - 1] and not self.forward[i]
        ]

    def non_colliders(self) -> list[str]:
        cs = set(self.colliders())
        return [n for n in self.nodes[1:-1] if n not in cs]


class CausalGraph:
    """Immutable DAG whose nodes are observed, latent or selection variables."""

    __slots__ = ("_kinds", "_edges", "_parents", "_children")

    def __init__(self, nodes: Mapping[str, str] | Iterable[str], edges: Iterable[tuple[str, str]] = ()):
        if isinstance(nodes, Mapping):
            kinds = dict(nodes)
        else:
            kinds = {n: OBSERVED for n in nodes}
        for name, kind in kinds.items():
            if kind not in NODE_KINDS:
                raise GraphError(f"node {name!r} has invalid kind {kind!r}")
        edge_set = frozenset((str(p), str(c)) for p, c in edges)
        parents: dict[str, set[str]] = {n: set() for n in kinds}
        children: dict[str, set[str]] = {n: set() for n in kinds}
        for p, c in edge_set:
            for end in (p, c):
                if end not in kinds:
                    raise UnknownNodeError(end)
            parents[c].add(p)
            children[p].add(c)
        set_ = object.__setattr__
        set_(self, "_kinds", kinds)
        set_(self, "_edges", edge_set)
        set_(self, "_parents", {n: frozenset(s) for n, s in parents.items()})
        set_(self, "_children", {n: frozenset(s) for n, s in children.items()})
        self._validate()

    def __setattr__(self, name, value):
        raise AttributeError("CausalGraph is immutable")

    def __delattr__(self, name):
        raise AttributeError("CausalGraph is immutable")

    def __reduce__(self):
        return (CausalGraph, (dict(self._kinds), sorted(self._edges)))

    def _validate(self) -> None:
        cycle = _find_cycle(self)
        if cycle:
            raise CycleError(cycle)
        selection = [n for n, k in self._kinds.items() if k == SELECTION]
        if len(selection) > 1:
            raise GraphError("at most one selection node is allowed, got " + ", ".join(sorted(selection)))
        for n, k in self._kinds.items():
            if k == LATENT and self._parents[n]:
                raise GraphError(f"latent node {n!r} must not have parents")
            if k == SELECTION and self._children[n]:
                raise GraphError(f"selection node {n!r} must not have children")

    # -- basic accessors ---------------------------------------------------

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self._kinds)

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    @property
    def kinds(self) -> dict[str, str]:
        return dict(self._kinds)

    def kind(self, node: str) -> str:
        self._check(node)
        return self._kinds[node]

    def nodes_of_kind(self, kind: str) -> frozenset[str]:
        return frozenset(n for n, k in self._kinds.items() if k == kind)

    @property
    def observed(self) -> frozenset[str]:
        return self.nodes_of_kind(OBSERVED)

    @property
    def latent(self) -> frozenset[str]:
        return self.nodes_of_kind(LATENT)

    @property
    def selection_node(self) -> str | None:
        sel = self.nodes_of_kind(SELECTION)
        return next(iter(sel)) if sel else None

    def parents(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._parents[node]

    def children(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._children[node]

    def neighbors(self, node: str) -> frozenset[str]:
        return self.parents(node) | self.children(node)

    def ancestors(self, node: str) -> frozenset[str]:
        return self._closure(node, self._parents)

    def descendants(self, node: str) -> frozenset[str]:
        return self._closure(node, self._children)

    def ancestors_of_set(self, nodes: Iterable[str]) -> frozenset[str]:
        """Ancestors of any node in ``nodes``, including the nodes themselves."""
        out = set()
        for n in nodes:
            out.add(n)
            out |= self.ancestors(n)
        return frozenset(out)

    def _closure(self, node: str, step: dict[str, frozenset[str]]) -> frozenset[str]:
        self._check(node)
        seen: set[str] = set()
        stack = list(step[node])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(step[n])
        return frozenset(seen)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm, ties broken by name so the order is deterministic."""
        indeg = {n: len(self._parents[n]) for n in self._kinds}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in sorted(self._children[n]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        return order

    def _check(self, node: str) -> None:
        if node not in self._kinds:
            raise UnknownNodeError(node)

    def _check_all(self, nodes: Iterable[str]) -> None:
        for n in nodes:
            self._check(n)

    def __contains__(self, node: object) -> bool:
        return node in self._kinds

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self._kinds == other._kinds and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((frozenset(self._kinds.items()), self._edges))

    def __repr__(self) -> str:
        return f"CausalGraph({len(self._kinds)} nodes, {len(self._edges)} edges)"

    def with_edges(self, add: Iterable[tuple[str, str]] = (), remove: Iterable[tuple[str, str]] = ()) -> "CausalGraph":
        drop = set(remove)
        return CausalGraph(self._kinds, (self._edges - drop) | set(add))


def _find_cycle(g: CausalGraph) -> list[str] | None:
    white, grey, black = 0, 1, 2
    color = {n: white for n in g._kinds}
    parent: dict[str, str] = {}
    for root in sorted(g._kinds):
        if color[root] != white:
            continue
        stack = [(root, iter(sorted(g._children[root])))]
        color[root] = grey
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                color[node] = black
                stack.pop()
                continue
            if color[child] == grey:
                cycle = [child]
                cur = node
                while cur != child:
                    cycle.append(cur)
                    cur = parent[cur]
                cycle.append(child)
                return cycle[::-1]
            if color[child] == white:
                color[child] = grey
                parent[child] = node
                stack.append((child, iter(sorted(g._children[child]))))
    return None


# -- graph-spec text format ---------------------------------------------------


def load_graph_spec(text: str) -> CausalGraph:
    """Parse the line-oriented graph format.

    ``node <name> [latent|selection]`` declares a node and
    ``edge <parent> <child>`` an edge; ``#`` starts a comment.
    """
    kinds: dict[str, str] = {}
    edges: list[tuple[tuple[str, int], tuple[str, int], int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]
        if not tokens:
            continue
        keyword, kcol = tokens[0]
        if keyword == "node":
            if len(tokens) not in (2, 3):
                raise GraphParseError("expected 'node <name> [latent|selection]'", lineno, kcol)
            name, ncol = tokens[1]
            if not _NAME_RE.match(name):
                raise GraphParseError(f"invalid node name {name!r}", lineno, ncol)
            if name in kinds:
                raise GraphParseError(f"node {name!r} declared twice", lineno, ncol)
            kind = OBSERVED
            if len(tokens) == 3:
                kind, col = tokens[2]
                if kind not in (LATENT, SELECTION):
                    raise GraphParseError(f"unknown node kind {kind!r}", lineno, col)
            kinds[name] = kind
        elif keyword == "edge":
            if len(tokens) != 3:
                raise GraphParseError("expected 'edge <parent> <child>'", lineno, kcol)
            edges.append((tokens[1], tokens[2], lineno))
        else:
            raise GraphParseError(f"unknown keyword {keyword!r}", lineno, kcol)
    # edges may precede the node declarations they reference
    for ends in edges:
        for name, col in ends[:2]:
            if name not in kinds:
                raise UnknownNodeError(name, ends[2], col)
    return CausalGraph(kinds, [(p, c) for (p, _), (c, _), _ in edges])


def serialize(g: CausalGraph) -> str:
    lines = []
    for name in sorted(g.nodes):
        kind = g.kind(name)
        lines.append(f"node {name}" if kind == OBSERVED else f"node {name} {kind}")
    for p, c in sorted(g.edges):
        lines.append(f"edge {p} {c}")
    return "\n".join(lines) + "\n"


PRESETS = {"ehs-fp": "ehs_fp.graph"}


def load_preset(name: str) -> CausalGraph:
    try:
        fname = PRESETS[name]
    except KeyError:
        raise GraphError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    text = resources.files("retrofit_causal.presets").joinpath(fname).read_text()
    return load_graph_spec(text)


# -- graph surgery --------------------------------------------------------------


def _observed_targets(g: CausalGraph, targets: Iterable[str]) -> frozenset[str]:
    targets = frozenset(targets)
    g._check_all(targets)
    bad = sorted(t for t in targets if g.kind(t) != OBSERVED)
    if bad:
        raise GraphError("mutilation targets must be observed nodes: " + ", ".join(bad))
    return targets


def mutilate_incoming(g: CausalGraph, targets: Iterable[str]) -> CausalGraph:
    """Drop every edge pointing into a target (the graph for do(targets))."""
    t = _observed_targets(g, targets)
    return CausalGraph(g._kinds, [(p, c) for p, c in g.edges if c not in t])


def mutilate_outgoing(g: CausalGraph, targets: Iterable[str]) -> CausalGraph:
    """Drop every edge leaving a target."""
    t = _observed_targets(g, targets)
    return CausalGraph(g._kinds, [(p, c) for p, c in g.edges if p not in t])


def augment_selection(g: CausalGraph, parents: Iterable[str], name: str = "S") -> CausalGraph:
    if g.selection_node is not None:
        raise GraphError(f"graph already has selection node {g.selection_node!r}")
    if name in g:
        raise GraphError(f"node {name!r} already exists")
    parents = _observed_targets(g, parents)
    kinds = g.kinds
    kinds[name] = SELECTION
    return CausalGraph(kinds, set(g.edges) | {(p, name) for p in parents})


def relatives(g: CausalGraph, node: str, relation: str) -> frozenset[str]:
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}, got {relation!r}")
    return getattr(g, relation)(node)


# -- paths ------------------------------------------------------------------------


def iter_simple_paths(g: CausalGraph, source: str, target: str, first_into_source: bool = False) -> Iterator[Path]:
    """Depth-first walk over the skeleton yielding simple source-target paths.

    Neighbours are expanded in name order, so paths come out sorted by their
    node sequence. With ``first_into_source`` only paths whose first edge
    points into ``source`` are produced.
    """
    g._check(source)
    g._check(target)
    if source == target:
        return
    nodes = [source]
    fwd: list[bool] = []
    on_path = {source}

    def steps(node: str, first: bool):
        out = []
        if not first or not first_into_source:
            out.extend((c, True) for c in g._children[node])
        out.extend((p, False) for p in g._parents[node])
        return sorted(out)

    stack = [iter(steps(source, True))]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            if len(nodes) > 1:
                on_path.discard(nodes.pop())
                fwd.pop()
            continue
        node, direction = nxt
        if node in on_path:
            continue
        if node == target:
            yield Path(tuple(nodes) + (node,), tuple(fwd) + (direction,))
            continue
        nodes.append(node)
        fwd.append(direction)
        on_path.add(node)
        stack.append(iter(steps(node, False)))


def enumerate_paths(g: CausalGraph, x: str, y: str) -> list[Path]:
    """All simple paths between x and y in the skeleton."""
    return list(iter_simple_paths(g, x, y))


def enumerate_backdoor_paths(g: CausalGraph, x: str, y: str) -> list[Path]:
    """Simple x-y paths whose first edge points into x."""
    if x == y:
        raise GraphError("backdoor paths need two distinct endpoints")
    return list(iter_simple_paths(g, x, y, first_into_source=True))


def path_is_blocked(g: CausalGraph, path: Path, z: Iterable[str]) -> bool:
    """Whether conditioning on z blocks this path."""
    z = frozenset(z)
    active_colliders = g.ancestors_of_set(z)
    if any(n in z for n in path.non_colliders()):
        return True
    return any(c not in active_colliders for c in path.colliders())


# -- d-separation -----------------------------------------------------------------


def _as_set(g: CausalGraph, nodes: Iterable[str] | str) -> frozenset[str]:
    s = frozenset([nodes]) if isinstance(nodes, str) else frozenset(nodes)
    g._check_all(s)
    return s


def _check_disjoint(a: frozenset, b: frozenset, z: frozenset) -> None:
    overlap = (a & b) | (a & z) | (b & z)
    if overlap:
        raise ValueError("node sets must be pairwise disjoint; shared: " + ", ".join(sorted(overlap)))


def reachable(g: CausalGraph, sources: Iterable[str], z: Iterable[str]) -> frozenset[str]:
    """Nodes connected to any source by a path that is active given z.

    Reachability over (node, direction) states: "up" means we arrived from a
    child, "down" from a parent.
    """
    z = frozenset(z)
    anc_z = g.ancestors_of_set(z)
    queue = deque((s, "up") for s in sources)
    visited: set[tuple[str, str]] = set()
    found: set[str] = set()
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node not in z:
            found.add(node)
        if direction == "up" and node not in z:
            for p in g._parents[node]:
                queue.append((p, "up"))
            for c in g._children[node]:
                queue.append((c, "down"))
        elif direction == "down":
            if node not in z:
                for c in g._children[node]:
                    queue.append((c, "down"))
            if node in anc_z:
                for p in g._parents[node]:
                    queue.append((p, "up"))
    return frozenset(found)


def d_separated(g: CausalGraph, a: Iterable[str] | str, b: Iterable[str] | str, z: Iterable[str] | str = ()) -> bool:
    a, b, z = _as_set(g, a), _as_set(g, b), _as_set(g, z)
    _check_disjoint(a, b, z)
    if not a or not b:
        return True
    return not (reachable(g, a, z) & b)


def find_active_path(g: CausalGraph, a: Iterable[str] | str, b: Iterable[str] | str, z: Iterable[str] | str = ()) -> Path | None:
    """Return one simple path between a and b that is open given z, or None.

    Depth-first with pruning on locally blocked triples; only meant for
    producing witnesses, d_separated is the fast test.
    """
    a, b, z = _as_set(g, a), _as_set(g, b), _as_set(g, z)
    _check_disjoint(a, b, z)
    anc_z = g.ancestors_of_set(z)

    def open_at(prev_fwd: bool, node: str, next_fwd: bool) -> bool:
        collider = prev_fwd and not next_fwd
        if collider:
            return node in anc_z
        return node not in z

    for src in sorted(a):
        nodes = [src]
        fwd: list[bool] = []
        on_path = {src}

        def dfs(node: str) -> Path | None:
            steps = sorted([(c, True) for c in g._children[node]] + [(p, False) for p in g._parents[node]])
            for nxt, direction in steps:
                if nxt in on_path or nxt in a:
                    continue
                if fwd and not open_at(fwd[-1], node, direction):
                    continue
                if nxt in b:
                    return Path(tuple(nodes) + (nxt,), tuple(fwd) + (direction,))
                nodes.append(nxt)
                fwd.append(direction)
                on_path.add(nxt)
                found = dfs(nxt)
                if found is not None:
                    return found
                on_path.discard(nodes.pop())
                fwd.pop()
            return None

        found = dfs(src)
        if found is not None:
            return found
    return None
