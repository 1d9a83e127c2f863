"""Directed acyclic causal graphs over schema features.

Loaded from JSON of the form ``{"nodes": [...], "edges": [[parent,
child], ...]}``.  The node set must coincide exactly with the feature
schema wherever the graph is used; interventions on a coalition cut the
incoming edges of its members, and only their descendants respond.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Tuple

from .errors import (DataIoError, GraphCycleError, GraphFormatError,
                     GraphSchemaMismatchError)
from .schema import FeatureSchema


@dataclass(frozen=True)
class CausalGraph:
    nodes: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self, "edges", tuple((p, c) for p, c in self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphFormatError("duplicate node names")
        known = set(self.nodes)
        seen = set()
        for p, c in self.edges:
            if p not in known or c not in known:
                raise GraphFormatError(f"edge ({p!r}, {c!r}) references "
                                       "an unknown node")
            if p == c:
                raise GraphFormatError(f"self-loop on {p!r}")
            if (p, c) in seen:
                raise GraphFormatError(f"duplicate edge ({p!r}, {c!r})")
            seen.add((p, c))
        self.topological_order  # cycle check happens here

    @classmethod
    def from_mapping(cls, obj) -> "CausalGraph":
        if not isinstance(obj, dict) or set(obj) != {"nodes", "edges"}:
            raise GraphFormatError(
                'graph must be {"nodes": [...], "edges": [[parent, child], '
                "...]}")
        nodes = obj["nodes"]
        edges = obj["edges"]
        if (not isinstance(nodes, list)
                or not all(isinstance(n, str) for n in nodes)):
            raise GraphFormatError("nodes must be a list of strings")
        if not isinstance(edges, list) or not all(
                isinstance(e, (list, tuple)) and len(e) == 2
                and all(isinstance(v, str) for v in e) for e in edges):
            raise GraphFormatError("edges must be [parent, child] pairs")
        return cls(tuple(nodes), tuple((p, c) for p, c in edges))

    @classmethod
    def load(cls, path) -> "CausalGraph":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise DataIoError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_mapping(obj)

    @classmethod
    def empty(cls, schema: FeatureSchema) -> "CausalGraph":
        return cls(schema.names, ())

    @cached_property
    def _parents(self) -> dict:
        out = {n: [] for n in self.nodes}
        for p, c in self.edges:
            out[c].append(p)
        return {n: tuple(v) for n, v in out.items()}

    @cached_property
    def _children(self) -> dict:
        out = {n: [] for n in self.nodes}
        for p, c in self.edges:
            out[p].append(c)
        return {n: tuple(v) for n, v in out.items()}

    def parents(self, node: str) -> Tuple[str, ...]:
        return self._parents[node]

    def children(self, node: str) -> Tuple[str, ...]:
        return self._children[node]

    @cached_property
    def topological_order(self) -> Tuple[str, ...]:
        """Kahn's algorithm; ties broken by node declaration order."""
        indeg = {n: len(self._parents[n]) for n in self.nodes}
        ready = [n for n in self.nodes if indeg[n] == 0]
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            added = []
            for c in self._children[node]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    added.append(c)
            # keep declaration order among newly ready nodes
            ready = sorted(set(ready) | set(added),
                           key=self.nodes.index)
        if len(order) != len(self.nodes):
            stuck = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphCycleError(f"cycle through {', '.join(stuck)}")
        return tuple(order)

    def descendants(self, names: Iterable[str]) -> frozenset:
        """Strict descendants of a node set (members excluded)."""
        start = set(names)
        seen = set()
        frontier = list(start)
        while frontier:
            node = frontier.pop()
            for c in self._children[node]:
                if c not in seen:
                    seen.add(c)
                    frontier.append(c)
        return frozenset(seen - start)

    def check_schema(self, schema: FeatureSchema):
        if set(self.nodes) != set(schema.names):
            missing = sorted(set(schema.names) - set(self.nodes))
            extra = sorted(set(self.nodes) - set(schema.names))
            parts = []
            if missing:
                parts.append(f"missing from graph: {', '.join(missing)}")
            if extra:
                parts.append(f"not in schema: {', '.join(extra)}")
            raise GraphSchemaMismatchError("; ".join(parts))
