"""Collection trees: structure, node roles, generators and link diagnosis.

A :class:`Topology` is a child -> parent map rooted at the data collector
(id 0 by default, never a meter).  Roles depend on the compression factor
``M``: a meter with at most ``M - 1`` descendants forwards plaintext, one with
``M`` or more aggregates.  Descendants (not just direct children) are what
count, since a node relays everything from its whole subtree.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

COLLECTOR_ID = 0


class TopologyError(ValueError):
    pass


class Role(str, enum.Enum):
    FORWARDER = "forwarder"
    AGGREGATOR = "aggregator"
    COLLECTOR = "collector"


@dataclass(frozen=True)
class NodeRecord:
    id: int
    role: Role
    descendant_count: int


@dataclass(frozen=True)
class Topology:
    """Rooted collection tree.

    Attributes
    ----------
    parent : mapping
        Primary link of every meter, ``child -> parent``.
    root : int
        Collector id.
    candidates : mapping
        Ordered alternative parents per meter, used by :func:`diagnose_links`.
    unreachable : tuple
        Meters that lost every usable link; they are not part of ``parent``.
    """

    parent: Mapping[int, int]
    root: int = COLLECTOR_ID
    candidates: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    unreachable: tuple[int, ...] = ()

    def __post_init__(self):
        parent = {int(c): int(p) for c, p in self.parent.items()}
        cands = {int(c): tuple(int(x) for x in v) for c, v in self.candidates.items()}
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "unreachable", tuple(sorted(int(u) for u in self.unreachable)))
        self._check()

    def _check(self) -> None:
        if self.root in self.parent:
            raise TopologyError("collector cannot have a parent")
        nodes = set(self.parent)
        for child, par in self.parent.items():
            if par != self.root and par not in nodes:
                raise TopologyError(f"node {child} has unknown parent {par}")
        # every node must reach the root without revisiting
        status: dict[int, bool] = {}
        for start in self.parent:
            path, cur = [], start
            while cur != self.root and cur not in status:
                if cur in path:
                    raise TopologyError(f"cycle through node {cur}")
                path.append(cur)
                cur = self.parent[cur]
            for p in path:
                status[p] = True

    # -- structure --------------------------------------------------------

    @property
    def meter_ids(self) -> list[int]:
        return sorted(self.parent)

    @property
    def n(self) -> int:
        return len(self.parent)

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {self.root: []}
        for c in self.parent:
            out.setdefault(c, [])
        for c in sorted(self.parent):
            out[self.parent[c]].append(c)
        return out

    def postorder(self) -> list[int]:
        """Meters ordered so every node comes after all of its descendants."""
        kids = self.children()
        order: list[int] = []
        stack = [(self.root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                if node != self.root:
                    order.append(node)
                continue
            stack.append((node, True))
            for c in reversed(kids[node]):
                stack.append((c, False))
        return order

    def descendant_counts(self) -> dict[int, int]:
        kids = self.children()
        counts: dict[int, int] = {}
        for node in self.postorder():
            counts[node] = sum(counts[c] + 1 for c in kids[node])
        return counts

    def subtree(self, node: int) -> list[int]:
        kids = self.children()
        out, stack = [], [node]
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(kids[cur])
        return sorted(out)

    def depth(self) -> dict[int, int]:
        kids = self.children()
        depth = {self.root: 0}
        stack = [self.root]
        while stack:
            cur = stack.pop()
            for c in kids[cur]:
                depth[c] = depth[cur] + 1
                stack.append(c)
        return depth

    def is_valid_tree(self) -> bool:
        try:
            self._check()
        except TopologyError:
            return False
        return True

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = [
            {"id": i, "parent": self.parent[i], "candidates": list(self.candidates.get(i, ()))}
            for i in self.meter_ids
        ]
        out = {"root": self.root, "nodes": nodes}
        if self.unreachable:
            out["unreachable"] = list(self.unreachable)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Topology":
        try:
            nodes = data["nodes"]
            parent = {int(n["id"]): int(n["parent"]) for n in nodes}
            cands = {int(n["id"]): tuple(n.get("candidates", ())) for n in nodes}
            if len(parent) != len(nodes):
                raise TopologyError("duplicate node ids")
            return cls(parent, int(data.get("root", COLLECTOR_ID)), cands,
                       tuple(data.get("unreachable", ())))
        except (KeyError, TypeError) as exc:
            raise TopologyError(f"malformed topology: {exc}") from exc


def save_topology(topo: Topology, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(topo.to_dict(), fh, indent=1)
        fh.write("\n")


def load_topology(path: str | os.PathLike) -> Topology:
    with open(path) as fh:
        return Topology.from_dict(json.load(fh))


# -- roles --------------------------------------------------------------------


def classify_roles(topo: Topology, M: int) -> dict[int, NodeRecord]:
    if M < 2:
        raise ValueError(f"compression factor M must be >= 2, got {M}")
    counts = topo.descendant_counts()
    out = {
        i: NodeRecord(i, Role.FORWARDER if c <= M - 1 else Role.AGGREGATOR, c)
        for i, c in counts.items()
    }
    out[topo.root] = NodeRecord(topo.root, Role.COLLECTOR, topo.n)
    return out


# -- generators ---------------------------------------------------------------


def gen_random_tree(n: int, seed: int, max_candidates: int = 2) -> Topology:
    """Random recursive tree on meters ``1..n``.

    Meter ``i`` attaches to a uniformly chosen member of ``{collector, 1..i-1}``
    and records up to ``max_candidates`` other members of that set as backup
    parents.  Backups always point to earlier nodes, so any promotion keeps
    the graph acyclic.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    parent: dict[int, int] = {}
    cands: dict[int, tuple[int, ...]] = {}
    for i in range(1, n + 1):
        pool = [COLLECTOR_ID] + list(range(1, i))
        pick = pool[int(rng.integers(len(pool)))]
        parent[i] = pick
        others = [p for p in pool if p != pick]
        k = min(max_candidates, len(others))
        cands[i] = tuple(int(c) for c in rng.choice(others, size=k, replace=False)) if k else ()
    return Topology(parent, COLLECTOR_ID, cands)


def gen_pary_tree(p: int, L: int) -> Topology:
    """Complete ``p``-ary tree with meter layers ``1..L`` below the collector.

    Ids are assigned breadth-first from 1.
    """
    if p < 2 or L < 1:
        raise ValueError("need p >= 2 and L >= 1")
    parent: dict[int, int] = {}
    layer = [COLLECTOR_ID]
    nxt_id = 1
    for _ in range(L):
        new_layer = []
        for par in layer:
            for _ in range(p):
                parent[nxt_id] = par
                new_layer.append(nxt_id)
                nxt_id += 1
        layer = new_layer
    return Topology(parent, COLLECTOR_ID)


def gen_chain(n: int) -> Topology:
    """Meter 1 next to the collector, meter ``n`` the single leaf."""
    return Topology({i: i - 1 for i in range(1, n + 1)}, COLLECTOR_ID)


def gen_star(n: int) -> Topology:
    return Topology({i: COLLECTOR_ID for i in range(1, n + 1)}, COLLECTOR_ID)


# -- reliability diagnostic ---------------------------------------------------


class LatencyClass(str, enum.Enum):
    OK = "ok"
    DELAYED = "delayed"
    DEAD = "dead"


@dataclass(frozen=True)
class LinkState:
    link: tuple[int, int]
    alive: bool = True
    latency_class: LatencyClass = LatencyClass.OK

    @property
    def usable(self) -> bool:
        return self.alive and self.latency_class == LatencyClass.OK


def _failed_links(failures) -> set[tuple[int, int]]:
    out = set()
    for f in failures:
        if isinstance(f, LinkState):
            if not f.usable:
                out.add(tuple(f.link))
        else:
            out.add((int(f[0]), int(f[1])))
    return out


def diagnose_links(candidate: Topology, failures: Iterable = ()) -> Topology:
    """Turn a candidate topology into a ready one whose primaries all work.

    Runs test rounds: every meter whose primary link is dead or delayed, or
    whose parent became unreachable, promotes its next stored candidate.
    Candidates that would close a cycle are skipped.  A meter with nothing
    left to promote is reported unreachable and left out of the result.
    """
    failed = _failed_links(failures)
    parent = dict(candidate.parent)
    remaining = {i: list(candidate.candidates.get(i, ())) for i in parent}
    unreachable: set[int] = set(candidate.unreachable)

    def reaches(node: int, target: int) -> bool:
        cur, seen = node, set()
        while cur != candidate.root and cur not in seen:
            if cur == target:
                return True
            seen.add(cur)
            cur = parent.get(cur, candidate.root)
        return False

    changed = True
    while changed:
        changed = False
        for node in sorted(parent):
            if node in unreachable:
                continue
            p = parent[node]
            if (node, p) not in failed and p not in unreachable:
                continue
            changed = True
            while remaining[node]:
                c = remaining[node].pop(0)
                if c in unreachable or c == node:
                    continue
                if c != candidate.root and reaches(c, node):
                    continue
                parent[node] = c
                break
            else:
                unreachable.add(node)

    ready = {c: p for c, p in parent.items() if c not in unreachable}
    cands = {c: tuple(remaining[c]) for c in ready}
    return Topology(ready, candidate.root, cands, tuple(unreachable))
