"""General tensor networks on graphs.

A :class:`TensorNetwork` stores named dense tensors, the contracted links
between them as ``(node, index, node, index)`` tuples and the open
(physical) links as ``(node, index, label)`` tuples.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import networkx as nx
import numpy as np

from .tensor import load_tensor, save_tensor

STATISTICS = ("spin", "fermion", "anyon")
GAUGE_COND_LIMIT = 1e12


class CycleError(ValueError):
    """Raised when a loop-free algorithm meets a closed loop."""


@dataclass
class TensorNetwork:
    nodes: dict
    edges: list = field(default_factory=list)
    open_links: list = field(default_factory=list)
    statistics: str = "spin"
    phase: float = 0.0

    def __post_init__(self):
        self.nodes = {k: np.array(v, dtype=np.complex128) for k, v in self.nodes.items()}
        self.edges = [tuple(e) for e in self.edges]
        self.open_links = [tuple(o) for o in self.open_links]
        if self.statistics not in STATISTICS:
            raise ValueError(f"unknown statistics {self.statistics!r}")
        self.validate()

    def validate(self) -> None:
        seen: dict = {}
        for k, (n1, i1, n2, i2) in enumerate(self.edges):
            if n1 == n2:
                raise ValueError(f"edge {k} is a self-loop")
            for n, i in ((n1, i1), (n2, i2)):
                self._slot(n, i, seen, f"edge {k}")
            if self.nodes[n1].shape[i1] != self.nodes[n2].shape[i2]:
                raise ValueError(f"edge {k} joins indices of different dimension")
        labels = set()
        for n, i, label in self.open_links:
            self._slot(n, i, seen, f"open link {label!r}")
            if label in labels:
                raise ValueError(f"duplicate open label {label!r}")
            labels.add(label)
        for n, t in self.nodes.items():
            for i in range(t.ndim):
                if (n, i) not in seen:
                    raise ValueError(f"index {i} of node {n!r} is not attached")

    def _slot(self, n, i, seen, what):
        if n not in self.nodes:
            raise ValueError(f"{what} references unknown node {n!r}")
        if not 0 <= i < self.nodes[n].ndim:
            raise ValueError(f"{what} references index {i} of node {n!r} out of range")
        if (n, i) in seen:
            raise ValueError(f"index {i} of node {n!r} is used by {seen[(n, i)]} and {what}")
        seen[(n, i)] = what

    def copy(self) -> "TensorNetwork":
        return TensorNetwork(
            {k: v.copy() for k, v in self.nodes.items()}, list(self.edges), list(self.open_links), self.statistics, self.phase
        )

    def link_dim(self, k: int) -> int:
        n1, i1, _, _ = self.edges[k]
        return self.nodes[n1].shape[i1]

    def graph(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        g.add_nodes_from(self.nodes)
        for k, (n1, _, n2, _) in enumerate(self.edges):
            g.add_edge(n1, n2, key=k)
        return g

    @property
    def labels(self) -> list:
        return [o[2] for o in self.open_links]

    # -- serialization -----------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        names = {}
        for k, (n, t) in enumerate(sorted(self.nodes.items(), key=lambda kv: str(kv[0]))):
            names[str(n)] = f"node{k:04d}.tnet"
            save_tensor(os.path.join(directory, names[str(n)]), t)
        doc = {
            "nodes": names,
            "edges": [[str(a), i, str(b), j] for a, i, b, j in self.edges],
            "open": [[str(n), i, label] for n, i, label in self.open_links],
            "statistics": self.statistics,
            "phase": self.phase,
        }
        with open(os.path.join(directory, "network.json"), "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "TensorNetwork":
        with open(os.path.join(directory, "network.json")) as fh:
            doc = json.load(fh)
        nodes = {n: load_tensor(os.path.join(directory, f)) for n, f in doc["nodes"].items()}
        return cls(nodes, doc["edges"], doc["open"], doc.get("statistics", "spin"), doc.get("phase", 0.0))


# -- builders ----------------------------------------------------------------


def from_mps_tensors(tensors: Sequence[np.ndarray], periodic: bool = False) -> TensorNetwork:
    """Network of an MPS; open chains drop their dimension-1 outer bonds."""
    L = len(tensors)
    nodes, edges, opens = {}, [], []
    for l, a in enumerate(tensors):
        a = np.asarray(a)
        if not periodic:
            if l == 0:
                a = a[0]  # (s, b)
            if l == L - 1:
                a = a[..., 0]
        nodes[l] = a
    for l in range(L):
        phys = 0 if (not periodic and l == 0) else 1
        opens.append((l, phys, f"s{l}"))
    for l in range(L - 1):
        right = nodes[l].ndim - 1
        left = 0
        edges.append((l, right, l + 1, left))
    if periodic:
        edges.append((L - 1, 2, 0, 0))
    return TensorNetwork(nodes, edges, opens)


# -- contraction -------------------------------------------------------------


class _Cluster:
    __slots__ = ("tensor", "legs")

    def __init__(self, tensor, legs):
        self.tensor = tensor
        self.legs = legs


def _leg_table(net: TensorNetwork):
    legs = {n: [None] * t.ndim for n, t in net.nodes.items()}
    for k, (n1, i1, n2, i2) in enumerate(net.edges):
        legs[n1][i1] = ("e", k)
        legs[n2][i2] = ("e", k)
    for n, i, label in net.open_links:
        legs[n][i] = ("o", label)
    return legs


def _merge(a: _Cluster, b: _Cluster) -> tuple[_Cluster, int]:
    common = [x for x in a.legs if x[0] == "e" and x in b.legs]
    ia = [a.legs.index(x) for x in common]
    ib = [b.legs.index(x) for x in common]
    t = np.tensordot(a.tensor, b.tensor, axes=(ia, ib))
    legs = [x for x in a.legs if x not in common] + [x for x in b.legs if x not in common]
    cost = int(a.tensor.size) * int(b.tensor.size) // max(1, int(np.prod([a.tensor.shape[i] for i in ia])))
    return _Cluster(t, legs), cost


def _finish(c: _Cluster, net: TensorNetwork) -> np.ndarray:
    order = [c.legs.index(("o", label)) for label in net.labels]
    return np.transpose(c.tensor, order) if order else c.tensor


def contract_in_order(net: TensorNetwork, order: Sequence[Hashable] | None = None) -> np.ndarray:
    """Contract node by node in ``order`` (any graph, loops allowed).

    Open indices of the result follow ``net.open_links``.
    """
    legs = _leg_table(net)
    order = list(net.nodes) if order is None else list(order)
    if sorted(map(str, order)) != sorted(map(str, net.nodes)):
        raise ValueError("order must list every node once")
    acc = None
    for n in order:
        c = _Cluster(net.nodes[n], list(legs[n]))
        acc = c if acc is None else _merge(acc, c)[0]
    return _finish(acc, net)


def find_cycle_edge(net: TensorNetwork):
    """Index of an edge lying on a closed loop, or ``None`` for a forest."""
    try:
        cyc = nx.find_cycle(net.graph())
    except nx.NetworkXNoCycle:
        return None
    return cyc[0][2]


def contract_loop_free(net: TensorNetwork, return_cost: bool = False):
    """Contract a loop-free network by repeatedly absorbing terminal nodes.

    Leaves are eliminated in order of their node id, so the cost stays
    polynomial: every step merges a node into its single neighbour. Raises
    :class:`CycleError` naming an edge on a loop.
    """
    k = find_cycle_edge(net)
    if k is not None:
        raise CycleError(f"network has a closed loop through edge {k} {net.edges[k]}")
    legs = _leg_table(net)
    clusters = {n: _Cluster(net.nodes[n], list(legs[n])) for n in net.nodes}
    g = nx.Graph(net.graph())
    cost = 0
    pieces = []
    for comp in sorted(nx.connected_components(g), key=lambda c: sorted(map(str, c))):
        sub = g.subgraph(comp).copy()
        while sub.number_of_nodes() > 1:
            leaf = min((n for n in sub if sub.degree(n) == 1), key=str)
            (nb,) = list(sub.neighbors(leaf))
            merged, c = _merge(clusters[nb], clusters.pop(leaf))
            clusters[nb] = merged
            cost += c
            sub.remove_node(leaf)
        (root,) = list(sub.nodes)
        pieces.append(clusters.pop(root))
    acc = pieces[0]
    for p in pieces[1:]:
        acc, c = _merge(acc, p)
        cost += c
    out = _finish(acc, net)
    return (out, cost) if return_cost else out


# -- gauge -------------------------------------------------------------------


def gauge_insert(net: TensorNetwork, edge: int, x) -> TensorNetwork:
    """Insert ``X X^{-1}`` on a link: ``X`` goes to the first endpoint, ``X^{-1}`` to the second."""
    x = np.asarray(x, dtype=np.complex128)
    D = net.link_dim(edge)
    if x.shape != (D, D):
        raise ValueError(f"gauge matrix must be {D}x{D}")
    cond = np.linalg.cond(x)
    if not np.isfinite(cond) or cond > GAUGE_COND_LIMIT:
        raise ValueError(f"gauge matrix is singular (condition number {cond:.2e})")
    xi = np.linalg.inv(x)
    out = net.copy()
    n1, i1, n2, i2 = net.edges[edge]
    out.nodes[n1] = np.moveaxis(np.tensordot(net.nodes[n1], x, axes=(i1, 0)), -1, i1)
    out.nodes[n2] = np.moveaxis(np.tensordot(xi, net.nodes[n2], axes=(1, i2)), 0, i2)
    return out


def _collapsed(net: TensorNetwork, nucleus: set) -> nx.MultiGraph:
    g = nx.MultiGraph()
    hub = ("nucleus",)
    for n in net.nodes:
        g.add_node(hub if n in nucleus else n)
    for k, (n1, _, n2, _) in enumerate(net.edges):
        a = hub if n1 in nucleus else n1
        b = hub if n2 in nucleus else n2
        if a == hub and b == hub:
            continue
        g.add_edge(a, b, key=k)
    return g


def peripheral_gauge(net: TensorNetwork, nucleus: Iterable[Hashable]) -> TensorNetwork:
    """Make every node outside ``nucleus`` an isometry pointing toward it.

    Nodes are processed from the farthest BFS distance inward (ties by
    node id); each is QR-decomposed with its inward link as the column
    index and the triangular factor is pushed into the inward neighbour.
    Link dimensions can shrink when a node has fewer outward degrees of
    freedom than its inward link.
    """
    nucleus = set(nucleus)
    if not nucleus or not nucleus <= set(net.nodes):
        raise ValueError("nucleus must be a nonempty set of nodes")
    if not nx.is_connected(net.graph().subgraph(nucleus)):
        raise ValueError("nucleus must be connected")
    g = _collapsed(net, nucleus)
    if not nx.is_forest(g):
        raise CycleError("network has a closed loop outside the nucleus")
    hub = ("nucleus",)
    dist = nx.single_source_shortest_path_length(g, hub)
    out = net.copy()
    edges = list(out.edges)
    outside = [n for n in net.nodes if n not in nucleus]
    if any(n not in dist for n in outside):
        raise ValueError("every node must be connected to the nucleus")
    for n in sorted(outside, key=lambda n: (-dist[n], str(n))):
        k_in = None
        for k, (n1, _, n2, _) in enumerate(edges):
            if n in (n1, n2):
                other = n2 if n1 == n else n1
                o = hub if other in nucleus else other
                if dist.get(o, math.inf) == dist[n] - 1:
                    k_in = k
        n1, i1, n2, i2 = edges[k_in]
        i_in, nb, j_nb = (i1, n2, i2) if n1 == n else (i2, n1, i1)
        t = np.moveaxis(out.nodes[n], i_in, -1)
        shp = t.shape
        q, r = np.linalg.qr(t.reshape(-1, shp[-1]))
        out.nodes[n] = np.moveaxis(q.reshape(shp[:-1] + (q.shape[1],)), -1, i_in)
        out.nodes[nb] = np.moveaxis(np.tensordot(r, out.nodes[nb], axes=(1, j_nb)), 0, j_nb)
    out.edges = edges
    out.validate()
    return out


def isometry_residual(t: np.ndarray, index: int) -> float:
    """``max |T^dag T - 1|`` with all indices but ``index`` contracted."""
    m = np.moveaxis(t, index, -1)
    m = m.reshape(-1, m.shape[-1])
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[1]))))


# -- entanglement bound ------------------------------------------------------


def mincut_entropy_bound(net: TensorNetwork, region: Iterable) -> float:
    """Upper bound (bits) on the entropy of ``region`` from a minimum cut.

    Links carry capacity ``log2 D``. Open links in the region attach to a
    source and the others to a sink, so cutting a physical leg is allowed
    at cost ``log2 d``.
    """
    region = set(region)
    labels = set(net.labels)
    if not region or not region < labels:
        raise ValueError("region must be a nonempty proper subset of the open labels")
    g = nx.DiGraph()
    src, snk = ("source",), ("sink",)
    g.add_nodes_from([src, snk])

    def add(a, b, cap):
        for u, v in ((a, b), (b, a)):
            if g.has_edge(u, v):
                g[u][v]["capacity"] += cap
            else:
                g.add_edge(u, v, capacity=cap)

    for n in net.nodes:
        g.add_node(n)
    for k, (n1, _, n2, _) in enumerate(net.edges):
        add(n1, n2, math.log2(net.link_dim(k)))
    for n, i, label in net.open_links:
        cap = math.log2(net.nodes[n].shape[i])
        add(n, src if label in region else snk, cap)
    value, _ = nx.minimum_cut(g, src, snk)
    return float(value)


# -- link statistics ---------------------------------------------------------


def exchange_gate(statistics: str, d: int, phase: float = 0.0) -> np.ndarray:
    """Swap of two links, ``|i j> -> sign |j i>``, as a ``d^2 x d^2`` matrix.

    Fermions pick up ``-1`` on ``|11>`` and abelian anyons ``exp(i phase)``.
    """
    if statistics not in STATISTICS:
        raise ValueError(f"unknown statistics {statistics!r}")
    if statistics != "spin" and d != 2:
        raise ValueError("fermionic and anyonic swaps need d = 2")
    g = np.zeros((d * d, d * d), dtype=np.complex128)
    for i in range(d):
        for j in range(d):
            g[j * d + i, i * d + j] = 1.0
    if statistics == "fermion":
        g[3, 3] = -1.0
    elif statistics == "anyon":
        g[3, 3] = np.exp(1j * phase)
    return g
