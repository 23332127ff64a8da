"""Slotted-time simulation of the scaled network.

Per slot: arrivals -> channel grants -> scheduling -> transmission outcomes
-> aging/expiry, in that order.  Packets with identical (flow, node, age)
are exchangeable, so the engine tracks cohort counts rather than individual
records; binomial draws replace per-packet Bernoulli coins without changing
the law.  A run is fully determined by (config, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .csma import AggressionVector, CsmaSampler
from .network import FlowSpec, NetworkSpec
from .packet_dp import IDLE, PacketPolicy


@dataclass(frozen=True)
class ScaleConfig:
    """Scale N (subchannels and arrival scaling), horizon, and RNG seed."""

    n: int
    horizon: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.horizon < 1:
            raise ValueError("scale and horizon must be >= 1")


@dataclass(frozen=True)
class PacketRecord:
    """Unit-level view of one packet; the engine stores cohorts of these."""

    flow: int
    birth_slot: int
    node: object
    age: int
    packet_id: int


@dataclass
class SimReport:
    """Per-flow delivery counts plus per-link bandwidth statistics."""

    scale: ScaleConfig
    deadline: int
    arrivals: np.ndarray        # per flow
    delivered: np.ndarray
    expired: np.ndarray
    live_end: np.ndarray
    weights: np.ndarray
    grant_mean: np.ndarray      # per link, granted subchannels per slot
    grant_mad: np.ndarray       # mean absolute deviation of the grant series
    used_mean: np.ndarray       # per link, attempted packets per slot
    deliveries_series: np.ndarray = field(repr=False)   # (T, F)
    grants_series: np.ndarray = field(repr=False)       # (T, E) or empty
    contract_violations: int = 0
    opt_normalized: float | None = None
    live_cohorts: list = field(repr=False, default_factory=list)

    @property
    def timely_throughput(self) -> np.ndarray:
        return self.delivered / self.scale.horizon

    @property
    def normalized_throughput(self) -> np.ndarray:
        return self.timely_throughput / self.scale.n

    @property
    def objective(self) -> float:
        return float(self.weights @ self.timely_throughput)

    @property
    def normalized_objective(self) -> float:
        return self.objective / self.scale.n

    @property
    def gap(self) -> float | None:
        if self.opt_normalized is None or self.opt_normalized == 0:
            return None
        return (self.opt_normalized - self.normalized_objective) / self.opt_normalized

    def objective_stderr(self, batches: int = 10) -> float:
        """Batch-means standard error of the normalized objective."""
        t = self.deliveries_series.shape[0]
        b = min(batches, t)
        per_slot = self.deliveries_series @ self.weights / self.scale.n
        chunks = np.array_split(per_slot, b)
        means = np.array([c.mean() for c in chunks])
        return float(means.std(ddof=1) / np.sqrt(b)) if b > 1 else 0.0

    def live_packets(self) -> list[PacketRecord]:
        """Expand the live cohorts at the end of the run into unit records."""
        out = []
        pid = 0
        for f, node, age, count, birth in self.live_cohorts:
            for _ in range(count):
                out.append(PacketRecord(f, birth, node, age, pid))
                pid += 1
        return out


class SlotPolicy:
    """Per-slot decision interface: channel access plus packet scheduling.

    Subclasses may keep internal queue state, updated through the
    notification hooks; the engine remains authoritative for conservation
    and delivery accounting.
    """

    def bind(self, net: NetworkSpec, flows: list[FlowSpec], deadline: int,
             scale: ScaleConfig, rng: np.random.Generator) -> None:
        self.net, self.flows, self.deadline, self.scale = net, flows, deadline, scale
        self.rng = rng

    def on_arrivals(self, slot: int, arrivals: np.ndarray) -> None:
        pass

    def channel_access(self, slot: int, rng: np.random.Generator):
        """Per-link granted subchannel counts, or None for unlimited."""
        raise NotImplementedError

    def schedule(self, slot: int, counts: np.ndarray, capacity: np.ndarray | None):
        """Return [(flow, link, age, count)] transmissions to attempt."""
        raise NotImplementedError

    def on_outcomes(self, slot: int, results: list) -> None:
        """results: [(flow, link, age, attempted, succeeded)]."""

    def on_slot_end(self, slot: int) -> None:
        pass


def _edf_fill(cells, capacity: int):
    """Allocate up to `capacity` packets over (flow, age, count) cells,
    earliest deadline (largest age) first, lower flow index on ties."""
    take = []
    left = capacity
    for f, age, count in sorted(cells, key=lambda c: (-c[1], c[0])):
        if left <= 0:
            break
        m = min(count, left)
        take.append((f, age, m))
        left -= m
    return take


class TruncatedOptimalPolicy(SlotPolicy):
    """The relaxed-optimal per-packet policy cut down to CSMA grants.

    Every packet looks up its (node, age) action; per link, demand beyond
    the granted capacity is dropped for the slot in ascending-slack order
    (oldest packets keep their grant, ties to the lower flow index).
    """

    def __init__(self, policies: list[PacketPolicy], r: AggressionVector):
        self.policies = policies
        self.r = r

    def bind(self, net, flows, deadline, scale, rng):
        super().bind(net, flows, deadline, scale, rng)
        self.sampler = CsmaSampler(net, self.r)
        self.actions = [p.actions for p in self.policies]

    def channel_access(self, slot, rng):
        grants, _ = self.sampler.sample(self.scale.n, rng)
        return grants

    def schedule(self, slot, counts, capacity):
        by_link: dict[int, list] = {}
        for f, i, a in zip(*np.nonzero(counts)):
            if a >= self.deadline:
                continue
            e = self.actions[f][i, a]
            if e != IDLE:
                by_link.setdefault(int(e), []).append((int(f), int(a), int(counts[f, i, a])))
        out = []
        for e in sorted(by_link):
            cap = int(capacity[e]) if capacity is not None else sum(c for _, _, c in by_link[e])
            for f, age, m in _edf_fill(by_link[e], cap):
                out.append((f, e, age, m))
        return out


class UnconstrainedPolicy(TruncatedOptimalPolicy):
    """Same per-packet actions with unlimited channel capacity (the relaxed
    operating mode: every demanded transmission is attempted)."""

    def __init__(self, policies: list[PacketPolicy]):
        super().__init__(policies, AggressionVector.uniform(1))

    def bind(self, net, flows, deadline, scale, rng):
        SlotPolicy.bind(self, net, flows, deadline, scale, rng)
        self.actions = [p.actions for p in self.policies]

    def channel_access(self, slot, rng):
        return None


class IdlePolicy(SlotPolicy):
    def channel_access(self, slot, rng):
        return None

    def schedule(self, slot, counts, capacity):
        return []


def run_policy(
    net: NetworkSpec,
    flows: list[FlowSpec],
    policy: SlotPolicy,
    scale: ScaleConfig,
    deadline: int,
    opt_normalized: float | None = None,
    keep_grant_series: bool = True,
    trace_path=None,
) -> SimReport:
    """Drive the slot loop for `scale.horizon` slots and summarize."""
    nf = len(flows)
    ne = net.n_links
    tau = deadline
    counts = np.zeros((nf, net.n_nodes, tau + 1), dtype=np.int64)
    birth = {}  # cohorts carry their birth slot implicitly: birth = slot - age

    root = np.random.SeedSequence(scale.seed)
    traffic_rng, policy_rng = [np.random.default_rng(s) for s in root.spawn(2)]
    chan_key = int(root.generate_state(1)[0])

    policy.bind(net, flows, deadline, scale, policy_rng)

    src_idx = np.array([net.node_index[f.source] for f in flows])
    dst_idx = np.array([net.node_index[f.destination] for f in flows])
    link_dst = np.array([net.node_index[ln.dst] for ln in net.links])
    link_src = np.array([net.node_index[ln.src] for ln in net.links])
    p_link = np.array([ln.reliability for ln in net.links])
    rates = np.array([ln.rate for ln in net.links], dtype=np.int64)
    arrival_p = np.array([f.arrival_rate for f in flows])

    arrivals_tot = np.zeros(nf, dtype=np.int64)
    delivered = np.zeros(nf, dtype=np.int64)
    expired = np.zeros(nf, dtype=np.int64)
    deliveries_series = np.zeros((scale.horizon, nf), dtype=np.int32)
    grants_series = (np.zeros((scale.horizon, ne), dtype=np.int32)
                     if keep_grant_series else np.zeros((0, ne), dtype=np.int32))
    used_tot = np.zeros(ne, dtype=np.int64)
    grant_tot = np.zeros(ne, dtype=np.float64)
    violations = 0

    trace = None
    if trace_path is not None:
        trace_fh = open(trace_path, "w", newline="")
        trace = csv.writer(trace_fh)
        trace.writerow(["slot", "link", "grants", "transmissions", "deliveries"])

    for t in range(scale.horizon):
        # 1. arrivals
        arr = traffic_rng.binomial(scale.n, arrival_p)
        for f in range(nf):
            if arr[f]:
                counts[f, src_idx[f], 0] += arr[f]
        arrivals_tot += arr
        policy.on_arrivals(t, arr)

        # 2. channel access
        chan_rng = np.random.default_rng(np.random.SeedSequence(entropy=(chan_key, t)))
        grants = policy.channel_access(t, chan_rng)
        capacity = None
        if grants is not None:
            grants = np.asarray(grants, dtype=np.int64)
            capacity = grants * rates
            if keep_grant_series:
                grants_series[t] = grants
            grant_tot += grants

        # 3. scheduling (engine enforces capacity; overshoot is truncated
        #    with the same slack ordering and flagged)
        requests = policy.schedule(t, counts, capacity)
        if capacity is not None:
            per_link: dict[int, list] = {}
            for f, e, age, m in requests:
                per_link.setdefault(e, []).append((f, age, m))
            checked = []
            for e, cells in sorted(per_link.items()):
                total = sum(m for _, _, m in cells)
                if total > capacity[e]:
                    violations += 1
                    for f, age, m in _edf_fill(cells, int(capacity[e])):
                        checked.append((f, e, age, m))
                else:
                    checked.extend((f, e, age, m) for f, age, m in cells)
            requests = checked

        # 4. transmission outcomes
        slot_tx = np.zeros(ne, dtype=np.int64)
        slot_del = np.zeros(ne, dtype=np.int64)
        results = []
        for f, e, age, m in sorted(requests, key=lambda q: (q[1], -q[2], q[0])):
            i = link_src[e]
            if m <= 0:
                continue
            if counts[f, i, age] < m or age >= tau:
                raise ValueError(f"policy scheduled nonexistent packets on link {e}")
            counts[f, i, age] -= m
            succ = int(traffic_rng.binomial(m, p_link[e]))
            j = link_dst[e]
            slot_tx[e] += m
            if j == dst_idx[f]:
                delivered[f] += succ
                deliveries_series[t, f] += succ
                slot_del[e] += succ
            elif succ:
                counts[f, j, age + 1] += succ
            if m - succ:
                counts[f, i, age + 1] += m - succ
            results.append((f, e, age, m, succ))
        used_tot += slot_tx
        policy.on_outcomes(t, results)

        # 5. aging and expiry
        counts[:, :, 1:tau + 1] += counts[:, :, 0:tau]
        counts[:, :, 0:tau] = 0
        # the shift above moved ages 0..tau-1 up by one; ages already
        # advanced by a transmission were placed directly at age+1
        exp_now = counts[:, :, tau].sum(axis=1)
        expired += exp_now
        counts[:, :, tau] = 0
        policy.on_slot_end(t)

        if trace is not None:
            g = grants if grants is not None else np.zeros(ne, dtype=np.int64)
            for e in range(ne):
                trace.writerow([t, e, int(g[e]), int(slot_tx[e]), int(slot_del[e])])

    if trace is not None:
        trace_fh.close()

    live_cohorts = []
    for f, i, a in zip(*np.nonzero(counts)):
        live_cohorts.append((int(f), net.nodes[i], int(a),
                             int(counts[f, i, a]), scale.horizon - int(a)))

    t_eff = float(scale.horizon)
    if keep_grant_series and grants_series.size:
        gmean = grants_series.mean(axis=0)
        gmad = np.abs(grants_series - gmean).mean(axis=0)
    else:
        gmean = grant_tot / t_eff
        gmad = np.zeros(ne)
    return SimReport(
        scale=scale,
        deadline=deadline,
        arrivals=arrivals_tot,
        delivered=delivered,
        expired=expired,
        live_end=counts.sum(axis=(1, 2)),
        weights=np.array([f.weight for f in flows]),
        grant_mean=gmean,
        grant_mad=gmad,
        used_mean=used_tot / t_eff,
        deliveries_series=deliveries_series,
        grants_series=grants_series,
        contract_violations=violations,
        opt_normalized=opt_normalized,
        live_cohorts=live_cohorts,
    )


def run_truncated_policy(
    net: NetworkSpec,
    flows: list[FlowSpec],
    policies: list[PacketPolicy],
    r: AggressionVector,
    scale: ScaleConfig,
    deadline: int,
    opt_normalized: float | None = None,
    **kwargs,
) -> SimReport:
    """Run the relaxed-optimal policy truncated to CSMA-granted capacity."""
    return run_policy(net, flows, TruncatedOptimalPolicy(policies, r), scale,
                      deadline, opt_normalized=opt_normalized, **kwargs)


def report_to_rows(report: SimReport, flows: list[FlowSpec], label: str) -> list[dict]:
    """Flatten a SimReport into CSV-friendly row dicts (one per flow plus a
    summary row)."""
    rows = []
    for f, flow in enumerate(flows):
        rows.append({
            "policy": label,
            "row": f"flow{f}",
            "source": str(flow.source),
            "destination": str(flow.destination),
            "scale": report.scale.n,
            "horizon": report.scale.horizon,
            "seed": report.scale.seed,
            "arrivals": int(report.arrivals[f]),
            "delivered": int(report.delivered[f]),
            "expired": int(report.expired[f]),
            "timely_throughput": repr(float(report.timely_throughput[f])),
            "normalized_throughput": repr(float(report.normalized_throughput[f])),
        })
    rows.append({
        "policy": label,
        "row": "summary",
        "source": "", "destination": "",
        "scale": report.scale.n,
        "horizon": report.scale.horizon,
        "seed": report.scale.seed,
        "arrivals": int(report.arrivals.sum()),
        "delivered": int(report.delivered.sum()),
        "expired": int(report.expired.sum()),
        "timely_throughput": repr(report.objective),
        "normalized_throughput": repr(report.normalized_objective),
    })
    return rows
