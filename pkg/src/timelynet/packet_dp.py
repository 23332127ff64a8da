"""Single-packet routing DP under link prices.

Given per-link prices, the best way to move one packet from its source
toward its destination before its deadline is a finite-horizon MDP over
(node, age).  Solving it per flow yields the decentralized policy used
everywhere else, and a forward pass over the policy yields expected
per-link bandwidth consumption and delivered mass.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .network import FlowSpec, NetworkSpec

IDLE = -1

# A transmit action must beat the alternative by more than this to win a tie.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class PriceVector:
    """Nonnegative per-link prices (cost per unit bandwidth per slot)."""

    mu: np.ndarray
    mu_max: float = math.inf

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if mu.ndim != 1:
            raise ValueError("mu must be a 1-d array")
        if np.any(mu < 0) or np.any(mu > self.mu_max):
            raise ValueError(f"prices must lie in [0, {self.mu_max}]")

    @staticmethod
    def zeros(n_links: int, mu_max: float = math.inf) -> "PriceVector":
        return PriceVector(np.zeros(n_links), mu_max)


def default_mu_max(flows, deadline: int) -> float:
    """Box bound for price iterates: above this no packet ever transmits."""
    return sum(f.weight for f in flows) * max(1, deadline)


@dataclass
class ValueTable:
    """V[node_index, age] for ages 0..deadline."""

    flow: FlowSpec
    deadline: int
    values: np.ndarray

    def value(self, net: NetworkSpec, node, age: int) -> float:
        return float(self.values[net.node_index[node], age])


@dataclass
class PacketPolicy:
    """actions[node_index, age] = outgoing link index, or IDLE.

    Ages run 0..deadline-1 (a packet of age == deadline is dead); the
    destination row is all IDLE.
    """

    flow: FlowSpec
    deadline: int
    actions: np.ndarray

    def action(self, net: NetworkSpec, node, age: int) -> int:
        if age >= self.deadline:
            return IDLE
        return int(self.actions[net.node_index[node], age])


@dataclass
class OccupancyTable:
    """Expected per-slot packet mass and bandwidth footprint of one flow."""

    flow: FlowSpec
    mass: np.ndarray            # (n_nodes, deadline+1), destination row zero
    link_usage: np.ndarray      # per link, bandwidth units (packets / rate)
    delivered: float            # mass reaching the destination in time
    expired: float              # mass alive at age == deadline


def solve_single_packet_dp(
    net: NetworkSpec, flow: FlowSpec, prices: PriceVector, deadline: int
) -> tuple[ValueTable, PacketPolicy]:
    """Backward induction over (node, age).

    Being at the destination with age <= deadline is worth the flow weight;
    transmitting a packet on link e costs mu[e]/rate[e] (one packet uses
    1/rate of a subchannel-slot) and succeeds with the link reliability.
    Ties go to idling first, then to the lowest link index.
    """
    if deadline < 1:
        raise ValueError("deadline must be >= 1")
    mu = prices.mu
    if mu.shape[0] != net.n_links:
        raise ValueError("price vector length does not match link count")

    n = net.n_nodes
    d = net.node_index[flow.destination]
    V = np.zeros((n, deadline + 1))
    V[d, :] = flow.weight
    actions = np.full((n, deadline), IDLE, dtype=np.int64)

    # Per node: (link index, dst node index, reliability, price per packet).
    choices = []
    for v in net.nodes:
        i = net.node_index[v]
        row = []
        if i != d:
            for e in net.out_links(v):
                ln = net.links[e]
                row.append((e, net.node_index[ln.dst], ln.reliability, mu[e] / ln.rate))
        choices.append(row)

    for s in range(deadline - 1, -1, -1):
        nxt = V[:, s + 1]
        for i in range(n):
            if i == d:
                continue
            idle = nxt[i]
            qs = [(-cost + p * nxt[j] + (1.0 - p) * idle, e)
                  for e, j, p, cost in choices[i]]
            best = max((q for q, _ in qs), default=idle)
            if best > idle + TIE_TOL:
                # lowest link index among near-ties at the max
                act = next(e for q, e in qs if q >= best - TIE_TOL)
            else:
                best = max(best, idle)
                act = IDLE
            V[i, s] = best
            actions[i, s] = act

    return (ValueTable(flow, deadline, V), PacketPolicy(flow, deadline, actions))


def compute_occupancy(
    net: NetworkSpec, flow: FlowSpec, policy: PacketPolicy, deadline: int
) -> OccupancyTable:
    """Forward pass: propagate expected packet mass through the policy.

    Mass enters at (source, age 0) with rate arrival_rate, moves one hop
    (or idles) per slot, is absorbed on reaching the destination, and
    expires at age == deadline anywhere else.
    """
    if deadline != policy.deadline:
        raise ValueError("deadline does not match the policy horizon")
    n = net.n_nodes
    d = net.node_index[flow.destination]
    mass = np.zeros((n, deadline + 1))
    mass[net.node_index[flow.source], 0] = flow.arrival_rate
    usage_packets = np.zeros(net.n_links)
    delivered = 0.0

    dst_idx = [net.node_index[ln.dst] for ln in net.links]
    for s in range(deadline):
        for i in range(n):
            m = mass[i, s]
            if m <= 0.0 or i == d:
                continue
            e = policy.actions[i, s]
            if e == IDLE:
                mass[i, s + 1] += m
                continue
            p = net.links[e].reliability
            usage_packets[e] += m
            j = dst_idx[e]
            if j == d:
                delivered += p * m
            else:
                mass[j, s + 1] += p * m
            mass[i, s + 1] += (1.0 - p) * m

    expired = float(mass[:, deadline].sum())
    rates = np.array([ln.rate for ln in net.links], dtype=float)
    return OccupancyTable(flow, mass, usage_packets / rates, delivered, expired)


def write_policy_csv(path, entries, net: NetworkSpec) -> None:
    """Dump (label, ValueTable, PacketPolicy) triples as
    flow,node,age,action,value rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow", "node", "age", "action", "value"])
        for label, table, policy in entries:
            for v in net.nodes:
                i = net.node_index[v]
                for s in range(table.deadline + 1):
                    if s < policy.deadline:
                        a = policy.actions[i, s]
                        act = "idle" if a == IDLE else f"tx:{a}"
                    else:
                        act = "idle"
                    w.writerow([label, v, s, act, repr(float(table.values[i, s]))])


def read_policy_csv(path, net: NetworkSpec, flows_by_label: dict) -> dict:
    """Rebuild {label: (ValueTable, PacketPolicy)} from a policy CSV.

    flows_by_label maps the labels stored in the file to FlowSpec objects.
    Node ids are matched by their string form.
    """
    by_str = {str(v): v for v in net.nodes}
    raw: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = row["flow"]
            node = by_str[row["node"]]
            age = int(row["age"])
            raw.setdefault(label, []).append((node, age, row["action"], float(row["value"])))
    out = {}
    for label, rows in raw.items():
        flow = flows_by_label[label]
        deadline = max(age for _, age, _, _ in rows)
        V = np.zeros((net.n_nodes, deadline + 1))
        actions = np.full((net.n_nodes, deadline), IDLE, dtype=np.int64)
        for node, age, act, val in rows:
            i = net.node_index[node]
            V[i, age] = val
            if age < deadline and act.startswith("tx:"):
                actions[i, age] = int(act[3:])
        out[label] = (ValueTable(flow, deadline, V), PacketPolicy(flow, deadline, actions))
    return out
