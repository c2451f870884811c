"""Radial network model, damage components and DER candidate selection."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    """Invalid network description."""


@dataclass(frozen=True)
class Bus:
    id: int
    load: tuple[float, ...]
    priority: float = 1.0
    max_gen: float = 0.0
    substation: bool = False
    der_candidate: bool = False

    def load_profile(self, horizon: int) -> np.ndarray:
        """Per-step demand for steps 1..horizon (a scalar load is broadcast)."""
        if len(self.load) == 1:
            return np.full(horizon, self.load[0])
        if len(self.load) < horizon:
            raise NetworkError(f"bus {self.id}: load profile has {len(self.load)} steps, need {horizon}")
        return np.asarray(self.load[:horizon], float)


@dataclass(frozen=True)
class Line:
    src: int
    dst: int
    max_flow: float
    damaged: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.dst)

    @property
    def label(self) -> str:
        return f"{self.src}-{self.dst}"


@dataclass
class NetworkModel:
    nodes: list[Bus]
    edges: list[Line]
    substation_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.substation_ids:
            self.substation_ids = frozenset(b.id for b in self.nodes if b.substation)
        self._by_id = {b.id: b for b in self.nodes}
        self._edge_by_key = {}
        for e in self.edges:
            self._edge_by_key[e.key] = e
            self._edge_by_key[(e.dst, e.src)] = e

    @property
    def node_ids(self) -> list[int]:
        return sorted(self._by_id)

    def bus(self, node_id: int) -> Bus:
        return self._by_id[node_id]

    def edge(self, key) -> Line:
        return self._edge_by_key[tuple(key)]

    @property
    def damaged(self) -> list[Line]:
        return [e for e in self.edges if e.damaged]

    def canonical(self, keys) -> set[tuple[int, int]]:
        """Map (a, b) / (b, a) pairs onto the stored edge orientation."""
        out = set()
        for k in keys:
            k = tuple(k)
            if k not in self._edge_by_key:
                raise NetworkError(f"unknown line {k}")
            out.add(self._edge_by_key[k].key)
        return out

    def with_candidates(self, candidates) -> "NetworkModel":
        cand = set(candidates)
        nodes = [Bus(b.id, b.load, b.priority, b.max_gen, b.substation, b.id in cand) for b in self.nodes]
        return NetworkModel(nodes, list(self.edges), self.substation_ids)

    @property
    def candidates(self) -> list[int]:
        return sorted(b.id for b in self.nodes if b.der_candidate)

    def adjacency(self, removed=()) -> dict[int, list[int]]:
        removed = self.canonical(removed) if removed else set()
        adj: dict[int, list[int]] = {i: [] for i in self.node_ids}
        for e in self.edges:
            if e.key in removed:
                continue
            adj[e.src].append(e.dst)
            adj[e.dst].append(e.src)
        for v in adj.values():
            v.sort()
        return adj

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "nodes": [
                {
                    "id": b.id,
                    "load": b.load[0] if len(b.load) == 1 else list(b.load),
                    "priority": b.priority,
                    "max_gen": b.max_gen,
                    "substation": b.substation,
                }
                for b in self.nodes
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "max_flow": e.max_flow, "damaged": e.damaged}
                for e in self.edges
            ],
        }


def network_from_dict(data: dict) -> NetworkModel:
    nodes_raw = data.get("nodes") or []
    if not nodes_raw:
        raise NetworkError("empty network")
    nodes = []
    seen = set()
    for rec in nodes_raw:
        nid = int(rec["id"])
        if nid in seen:
            raise NetworkError(f"duplicate node id {nid}")
        seen.add(nid)
        load = rec.get("load", 0.0)
        load = tuple(float(v) for v in load) if isinstance(load, (list, tuple)) else (float(load),)
        if any(v < 0 for v in load):
            raise NetworkError(f"node {nid}: negative load")
        max_gen = float(rec.get("max_gen", 0.0))
        if max_gen < 0:
            raise NetworkError(f"node {nid}: negative max_gen")
        prio = float(rec.get("priority", 1.0))
        if prio < 0:
            raise NetworkError(f"node {nid}: negative priority")
        nodes.append(Bus(nid, load, prio, max_gen, bool(rec.get("substation", False))))
    edges = []
    pairs = set()
    for rec in data.get("edges", []):
        a, b = int(rec["from"]), int(rec["to"])
        for end in (a, b):
            if end not in seen:
                raise NetworkError(f"dangling edge ({a},{b}): node {end} does not exist")
        if a == b:
            raise NetworkError(f"self-loop on node {a}")
        if (a, b) in pairs or (b, a) in pairs:
            raise NetworkError(f"parallel edge ({a},{b})")
        pairs.add((a, b))
        cap = float(rec.get("max_flow", 1.0))
        if cap <= 0:
            raise NetworkError(f"edge ({a},{b}): max_flow must be positive")
        edges.append(Line(a, b, cap, bool(rec.get("damaged", False))))
    net = NetworkModel(nodes, edges)
    if not net.substation_ids:
        raise NetworkError("network has no substation")
    all_keys = [e.key for e in edges]
    if not is_forest(net, all_keys):
        cyc = _cycle_edge(net)
        raise NetworkError(f"undamaged network is not radial: edge {cyc} closes a cycle")
    for comp in connected_components(net, ()):
        if not comp & net.substation_ids:
            raise NetworkError(f"component {sorted(comp)} has no substation")
    return net


def load_network(path) -> NetworkModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: {exc}") from exc
    return network_from_dict(data)


def connected_components(net: NetworkModel, damaged) -> list[set[int]]:
    """BFS components after removing ``damaged`` lines, ordered by smallest id."""
    adj = net.adjacency(damaged)
    seen: set[int] = set()
    comps = []
    for start in net.node_ids:
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def preassign_ders(net: NetworkModel, damaged, size_threshold: int = 10) -> set[int]:
    """Pick DER host nodes for every island without a substation.

    The host is the node with the most neighbours inside its island, ties to
    the smaller id. Islands with at least ``size_threshold`` nodes also get
    the runner-up.
    """
    adj = net.adjacency(damaged)
    chosen: set[int] = set()
    for comp in connected_components(net, damaged):
        if comp & net.substation_ids:
            continue
        ranked = sorted(comp, key=lambda v: (-len(adj[v]), v))
        chosen.add(ranked[0])
        if len(comp) >= size_threshold and len(ranked) > 1:
            chosen.add(ranked[1])
    return chosen


def degrees(net: NetworkModel, damaged) -> dict[int, int]:
    adj = net.adjacency(damaged)
    return {v: len(n) for v, n in adj.items()}


def is_forest(net: NetworkModel, on_edges) -> bool:
    parent = {v: v for v in net.node_ids}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in on_edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def _cycle_edge(net: NetworkModel):
    parent = {v: v for v in net.node_ids}

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    for e in net.edges:
        ra, rb = find(e.src), find(e.dst)
        if ra == rb:
            return e.key
        parent[ra] = rb
    return None
