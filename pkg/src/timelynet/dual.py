"""Lagrangian dual of the average-bandwidth-constrained scheduling problem.

The dual function at prices mu decomposes into independent single-packet
problems, so evaluating it is cheap.  Projected subgradient iterations on
mu converge to the optimal prices; the primal estimate is recovered from
the ergodic average of the per-iterate policies, scaled back onto the
feasible set when the average slightly overshoots a cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import FlowSpec, NetworkSpec
from .packet_dp import (PacketPolicy, PriceVector, ValueTable, compute_occupancy,
                        default_mu_max, solve_single_packet_dp)


@dataclass
class DualSchedule:
    """Step sizes a0/k and stopping tolerances for the price iteration."""

    a0: float = 1.0
    max_iters: int = 5000
    min_iters: int = 300
    window: int = 50
    tol_cs: float = 1e-2
    tol_feas: float = 1e-2
    tol_dmu: float = 1e-3
    mu_max: float | None = None


@dataclass
class DualEvaluation:
    d_value: float
    policies: list
    tables: list
    usage: np.ndarray          # per-link bandwidth consumption
    primal_value: float        # sum_f weight * delivered mass (unpenalized)
    delivered: np.ndarray      # per flow


@dataclass
class RelaxedSolution:
    prices: np.ndarray         # tail-averaged prices
    policies: list             # per-flow PacketPolicy (best feasible iterate)
    tables: list
    objective: float           # primal estimate (feasible ergodic mixture)
    usage: np.ndarray          # feasible ergodic usage
    slack: np.ndarray          # caps - usage
    dual_bound: float          # min_k D(mu_k)
    converged: bool
    iterations: int
    duality_gap_flagged: bool
    history: dict = field(repr=False, default_factory=dict)


def evaluate_dual(
    net: NetworkSpec,
    flows: list[FlowSpec],
    prices: PriceVector,
    deadline: int,
    caps: np.ndarray,
) -> DualEvaluation:
    """D(mu) = sum_f A_f * V_f(s_f, 0) + mu . caps, plus the per-flow
    policies attaining it and their expected bandwidth usage."""
    caps = np.asarray(caps, dtype=float)
    if np.any(caps < 0):
        raise ValueError("caps must be nonnegative")
    usage = np.zeros(net.n_links)
    policies, tables = [], []
    packet_term = 0.0
    delivered = np.zeros(len(flows))
    for k, flow in enumerate(flows):
        table, policy = solve_single_packet_dp(net, flow, prices, deadline)
        occ = compute_occupancy(net, flow, policy, deadline)
        usage += occ.link_usage
        packet_term += flow.arrival_rate * table.values[net.node_index[flow.source], 0]
        delivered[k] = occ.delivered
        policies.append(policy)
        tables.append(table)
    primal = float(sum(f.weight * delivered[k] for k, f in enumerate(flows)))
    d_value = packet_term + float(prices.mu @ caps)
    return DualEvaluation(d_value, policies, tables, usage, primal, delivered)


def _feasibility_scale(usage: np.ndarray, caps: np.ndarray) -> float:
    """Largest theta in [0,1] with theta*usage <= caps (1 if already feasible)."""
    theta = 1.0
    for u, c in zip(usage, caps):
        if u > c + 1e-15:
            theta = min(theta, c / u if u > 0 else 0.0)
    return max(theta, 0.0)


def solve_relaxed(
    net: NetworkSpec,
    flows: list[FlowSpec],
    caps: np.ndarray,
    deadline: int,
    schedule: DualSchedule | None = None,
    mu0: np.ndarray | None = None,
) -> RelaxedSolution:
    """Projected subgradient descent on the dual prices.

    mu <- clip(mu + a_k (usage - caps), 0, mu_max).  Stops once, over the
    recent window, price movement is small, the window-average usage is
    within tolerance of the caps, and complementary slackness approximately
    holds; otherwise runs to max_iters and reports converged=False.
    """
    sched = schedule or DualSchedule()
    caps = np.asarray(caps, dtype=float)
    mu_max = sched.mu_max if sched.mu_max is not None else default_mu_max(flows, deadline)
    mu = np.zeros(net.n_links) if mu0 is None else np.clip(np.asarray(mu0, float), 0, mu_max)

    obj_scale = max(1.0, sum(f.weight * f.arrival_rate for f in flows))
    cap_scale = np.maximum(1.0, caps)

    mus, usages, values, d_values, dmus = [], [], [], [], []
    best_score = -np.inf
    best_eval: DualEvaluation | None = None
    converged = False
    k = 0
    while k < sched.max_iters:
        k += 1
        ev = evaluate_dual(net, flows, PriceVector(mu, mu_max), deadline, caps)
        mus.append(mu.copy())
        usages.append(ev.usage)
        values.append(ev.primal_value)
        d_values.append(ev.d_value)

        score = _feasibility_scale(ev.usage, caps) * ev.primal_value
        if score > best_score + 1e-15:
            best_score = score
            best_eval = ev

        step = sched.a0 / k
        new_mu = np.clip(mu + step * (ev.usage - caps), 0.0, mu_max)
        dmus.append(np.max(np.abs(new_mu - mu)))
        mu = new_mu

        if k >= max(sched.min_iters, sched.window):
            w = sched.window
            u_bar = np.mean(usages[-w:], axis=0)
            mu_bar = np.mean(mus[-w:], axis=0)
            cs = np.max(np.abs(mu_bar * (u_bar - caps)))
            feas = np.max(u_bar - caps - sched.tol_feas * cap_scale)
            if (max(dmus[-w:]) <= sched.tol_dmu * max(1.0, np.max(mu_bar))
                    and cs <= sched.tol_cs * obj_scale
                    and feas <= 0.0):
                converged = True
                break

    # Ergodic primal recovery over the last half of the run, scaled onto the
    # feasible set (mixtures of deterministic policies scale linearly).
    tail = max(1, k // 2)
    u_bar = np.mean(usages[-tail:], axis=0)
    v_bar = float(np.mean(values[-tail:]))
    mu_bar = np.mean(mus[-tail:], axis=0)
    theta = _feasibility_scale(u_bar, caps)
    objective = theta * v_bar
    usage_rep = theta * u_bar
    dual_bound = float(min(d_values))

    if best_eval is None:
        best_eval = evaluate_dual(net, flows, PriceVector(mu_bar, mu_max), deadline, caps)
    gap_flagged = dual_bound - objective > sched.tol_cs * obj_scale + 1e-9

    history = {
        "k": np.arange(1, k + 1),
        "d_value": np.array(d_values),
        "mu": np.array(mus),
        "usage": np.array(usages),
        "primal_value": np.array(values),
    }
    return RelaxedSolution(
        prices=mu_bar,
        policies=best_eval.policies,
        tables=best_eval.tables,
        objective=objective,
        usage=usage_rep,
        slack=caps - usage_rep,
        dual_bound=dual_bound,
        converged=converged,
        iterations=k,
        duality_gap_flagged=gap_flagged,
        history=history,
    )
