"""Network, flow, and interference-structure model.

A wireless network is a directed link graph with per-link reliability and
rate, plus an undirected conflict ("interference") graph over the links.
Everything here is immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GraphTooLarge(Exception):
    """Raised when independent-set enumeration would be too expensive."""


MAX_ENUMERATION_LINKS = 24


@dataclass(frozen=True)
class LinkSpec:
    """Directed link src -> dst.

    reliability: per-attempt success probability.
    rate: packets deliverable per slot per unit of bandwidth (>= 1).
    """

    src: object
    dst: object
    reliability: float
    rate: int = 1

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"link ({self.src},{self.dst}): self loops not allowed")
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError(
                f"link ({self.src},{self.dst}): reliability {self.reliability} not in [0,1]"
            )
        if int(self.rate) != self.rate or self.rate < 1:
            raise ValueError(f"link ({self.src},{self.dst}): rate {self.rate} must be a positive integer")


@dataclass(frozen=True)
class FlowSpec:
    """A source/destination pair with objective weight and arrival intensity.

    arrival_rate is the Bernoulli success probability per slot at scale 1;
    at scale N the per-slot arrivals are Binomial(N, arrival_rate).
    """

    source: object
    destination: object
    weight: float = 1.0
    arrival_rate: float = 1.0

    def __post_init__(self):
        if self.source == self.destination:
            raise ValueError(f"flow ({self.source},{self.destination}): source equals destination")
        if self.weight < 0:
            raise ValueError(f"flow ({self.source},{self.destination}): weight {self.weight} < 0")
        if not 0.0 <= self.arrival_rate <= 1.0:
            raise ValueError(
                f"flow ({self.source},{self.destination}): arrival_rate {self.arrival_rate} not in [0,1]"
            )


class NetworkSpec:
    """Nodes, directed links, and the link interference adjacency.

    `interference[e]` is the frozenset of link indices that conflict with
    link e.  The adjacency must be symmetric and irreflexive; links are
    addressed by their dense index 0..len(links)-1.
    """

    def __init__(self, nodes: Sequence, links: Sequence[LinkSpec],
                 interference: Sequence[Iterable[int]] | None = None):
        self.nodes = tuple(nodes)
        self.links = tuple(links)
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")
        node_set = set(self.nodes)
        for e, ln in enumerate(self.links):
            if ln.src not in node_set:
                raise ValueError(f"links[{e}].src {ln.src!r} is not a declared node")
            if ln.dst not in node_set:
                raise ValueError(f"links[{e}].dst {ln.dst!r} is not a declared node")

        if interference is None:
            interference = [frozenset() for _ in self.links]
        adj = [frozenset(int(x) for x in nbrs) for nbrs in interference]
        if len(adj) != len(self.links):
            raise ValueError("interference adjacency length does not match link count")
        for e, nbrs in enumerate(adj):
            if e in nbrs:
                raise ValueError(f"interference[{e}] contains link {e} itself")
            for h in nbrs:
                if not 0 <= h < len(self.links):
                    raise ValueError(f"interference[{e}] references unknown link {h}")
                if e not in adj[h]:
                    raise ValueError(f"interference not symmetric between links {e} and {h}")
        self.interference = tuple(adj)

        self.node_index = {v: i for i, v in enumerate(self.nodes)}
        self._out_links: dict = {v: [] for v in self.nodes}
        for e, ln in enumerate(self.links):
            self._out_links[ln.src].append(e)
        for v in self._out_links:
            self._out_links[v] = tuple(self._out_links[v])

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def out_links(self, node) -> tuple:
        """Indices of links leaving `node`, in link-index order."""
        return self._out_links[node]

    def interference_edges(self) -> list[tuple[int, int]]:
        """The conflict adjacency as a sorted list of (e1 < e2) pairs."""
        return sorted(
            (e, h) for e, nbrs in enumerate(self.interference) for h in nbrs if e < h
        )

    def __eq__(self, other):
        return (isinstance(other, NetworkSpec)
                and self.nodes == other.nodes
                and self.links == other.links
                and self.interference == other.interference)

    def __repr__(self):
        return (f"NetworkSpec({self.n_nodes} nodes, {self.n_links} links, "
                f"{len(self.interference_edges())} conflicts)")


def build_interference_from_node_sharing(net: NetworkSpec) -> NetworkSpec:
    """Conflict rule used in the simulation setups: two distinct links
    interfere iff they share an endpoint.  Idempotent (the adjacency is a
    pure function of the link list)."""
    adj = [set() for _ in net.links]
    for e1, l1 in enumerate(net.links):
        ends1 = {l1.src, l1.dst}
        for e2 in range(e1 + 1, net.n_links):
            l2 = net.links[e2]
            if ends1 & {l2.src, l2.dst}:
                adj[e1].add(e2)
                adj[e2].add(e1)
    return NetworkSpec(net.nodes, net.links, adj)


@dataclass(frozen=True)
class IndependentSetFamily:
    """All maximal independent sets of a conflict graph.

    sets: each a sorted tuple of link indices, ordered lexicographically.
    index: for each link, the tuple of set ids containing it.
    """

    sets: tuple
    index: tuple = field(default=())

    @staticmethod
    def from_sets(sets: Iterable[Iterable[int]], n_links: int) -> "IndependentSetFamily":
        ordered = sorted(tuple(sorted(s)) for s in sets)
        idx = [[] for _ in range(n_links)]
        for m, s in enumerate(ordered):
            for e in s:
                idx[e].append(m)
        return IndependentSetFamily(tuple(ordered), tuple(tuple(i) for i in idx))

    def __len__(self):
        return len(self.sets)


def enumerate_maximal_independent_sets(
    net: NetworkSpec, max_links: int = MAX_ENUMERATION_LINKS
) -> IndependentSetFamily:
    """Enumerate every maximal independent set of the link conflict graph.

    Branch-and-bound with pivoting over the complement graph (a maximal
    independent set of G is a maximal clique of G's complement), which is
    exact but exponential in the worst case; refuses graphs above
    `max_links`.
    """
    n = net.n_links
    if n > max_links:
        raise GraphTooLarge(f"{n} links exceeds enumeration cap {max_links}")
    if n == 0:
        return IndependentSetFamily.from_sets([()], 0)

    # Complement-graph neighbourhoods: links that do NOT conflict with e.
    compat = [frozenset(h for h in range(n) if h != e and h not in net.interference[e])
              for e in range(n)]

    out: list[tuple[int, ...]] = []

    def expand(clique: list[int], cand: set[int], excl: set[int]):
        if not cand and not excl:
            out.append(tuple(sorted(clique)))
            return
        pivot = max(sorted(cand | excl), key=lambda u: len(cand & compat[u]))
        for v in sorted(cand - compat[pivot]):
            expand(clique + [v], cand & compat[v], excl & compat[v])
            cand.remove(v)
            excl.add(v)

    expand([], set(range(n)), set())
    return IndependentSetFamily.from_sets(out, n)
