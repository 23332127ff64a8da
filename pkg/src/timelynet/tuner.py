"""Optimization of the CSMA aggression vector and, for small conflict
graphs, of the per-independent-set bandwidth allocation.

Both use the same machinery: the dual prices of the bandwidth-constrained
scheduling problem are shadow prices of the caps, so moving aggression (or
allocation mass) along the priced gradient increases the attainable timely
throughput.  Only local optimality is claimed; multi-start is the hedge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .csma import AggressionVector, access_probability, cumulative_aggression
from .dual import DualSchedule, RelaxedSolution, solve_relaxed
from .network import FlowSpec, IndependentSetFamily, NetworkSpec


@dataclass
class TunerSchedule:
    g0: float = 4.0                 # gradient step gamma_k = g0 / k
    max_iters: int = 60
    conv_window: int = 10
    conv_tol: float = 1e-4
    r_min: float = 1e-3
    r_max: float = 1e3
    multi_start: int = 4
    start_spread: float = 0.25      # log-uniform perturbation of extra starts
    polish_iters: int = 60
    grad_tol: float = 1e-3
    dual: DualSchedule = field(default_factory=lambda: DualSchedule(
        max_iters=600, min_iters=150))
    dual_final: DualSchedule = field(default_factory=lambda: DualSchedule(
        max_iters=2500, min_iters=400))


@dataclass
class TunerState:
    r: AggressionVector
    iterations: int
    converged: bool
    objective_trace: list
    shadow_prices: np.ndarray
    gradient: np.ndarray
    projected_grad_norm: float
    access_probs: np.ndarray
    caps: np.ndarray
    solution: RelaxedSolution
    trace: list = field(repr=False, default_factory=list)


def aggression_gradient(net: NetworkSpec, r: AggressionVector,
                        shadow_prices: np.ndarray) -> np.ndarray:
    """Priced sensitivity of the attainable throughput to each backoff rate:
    g[e] = sum_{h conflicting with e} -mu[h]/R[h]^2 + (R[e]-r[e]) mu[e]/R[e]^2.
    """
    mu = np.asarray(shadow_prices, dtype=float)
    R = cumulative_aggression(net, r)
    rv = r.r
    g = np.empty(net.n_links)
    for e in range(net.n_links):
        g[e] = sum(-mu[h] / R[h] ** 2 for h in net.interference[e])
        g[e] += (R[e] - rv[e]) * mu[e] / R[e] ** 2
    return g


def _projected_grad_norm(rv: np.ndarray, g: np.ndarray, r_min: float, r_max: float) -> float:
    """Sup norm of the gradient restricted to feasible box directions."""
    eff = g.copy()
    eff[(rv <= r_min * (1 + 1e-12)) & (g < 0)] = 0.0
    eff[(rv >= r_max * (1 - 1e-12)) & (g > 0)] = 0.0
    return float(np.max(np.abs(eff))) if eff.size else 0.0


def _caps_for(net: NetworkSpec, r: AggressionVector) -> np.ndarray:
    rates = np.array([ln.rate for ln in net.links], dtype=float)
    return rates * access_probability(net, r)


def _tune_one(net, flows, deadline, sched: TunerSchedule, r0: np.ndarray) -> TunerState:
    rv = np.clip(np.asarray(r0, dtype=float), sched.r_min, sched.r_max)
    mu_warm = None
    trace, f_trace, deltas = [], [], []
    converged = False
    k = 0
    sol = None
    g = np.zeros(net.n_links)
    while k < sched.max_iters:
        k += 1
        r = AggressionVector(rv)
        sol = solve_relaxed(net, flows, _caps_for(net, r), deadline,
                            sched.dual, mu0=mu_warm)
        mu_warm = sol.prices
        g = aggression_gradient(net, r, sol.prices)
        new_rv = np.clip(rv + (sched.g0 / k) * g, sched.r_min, sched.r_max)
        deltas.append(np.max(np.abs(new_rv - rv)))
        f_trace.append(sol.objective)
        trace.append((k, rv.copy(), access_probability(net, AggressionVector(rv)),
                      sol.objective, float(np.max(np.abs(g)))))
        rv = new_rv
        if k >= sched.conv_window and max(deltas[-sched.conv_window:]) < sched.conv_tol:
            converged = True
            break

    # Polish: accurate dual solves, keep stepping on the diminishing schedule
    # until the projected gradient is small enough or the budget runs out.
    j = 0
    while True:
        r = AggressionVector(rv)
        sol = solve_relaxed(net, flows, _caps_for(net, r), deadline,
                            sched.dual_final, mu0=mu_warm)
        mu_warm = sol.prices
        g = aggression_gradient(net, r, sol.prices)
        norm = _projected_grad_norm(rv, g, sched.r_min, sched.r_max)
        if norm <= sched.grad_tol or j >= sched.polish_iters:
            break
        j += 1
        rv = np.clip(rv + (sched.g0 / (k + j)) * g, sched.r_min, sched.r_max)
        f_trace.append(sol.objective)

    r = AggressionVector(rv)
    return TunerState(
        r=r,
        iterations=k + j,
        converged=converged or norm <= sched.grad_tol,
        objective_trace=f_trace,
        shadow_prices=sol.prices,
        gradient=g,
        projected_grad_norm=norm,
        access_probs=access_probability(net, r),
        caps=_caps_for(net, r),
        solution=sol,
        trace=trace,
    )


def tune_aggression(
    net: NetworkSpec,
    flows: list[FlowSpec],
    deadline: int,
    schedule: TunerSchedule | None = None,
    seed: int = 0,
) -> TunerState:
    """Locally optimize the backoff rates by projected gradient ascent on
    the priced throughput surrogate, multi-started around r = 1."""
    sched = schedule or TunerSchedule()
    if not any(net.interference[e] for e in range(net.n_links)):
        # No conflicts: every link always wins, the objective is flat in r.
        r = AggressionVector.uniform(net.n_links)
        sol = solve_relaxed(net, flows, _caps_for(net, r), deadline, sched.dual_final)
        return TunerState(r, 0, True, [sol.objective], sol.prices,
                          np.zeros(net.n_links), 0.0,
                          access_probability(net, r), _caps_for(net, r), sol)

    rng = np.random.default_rng(seed)
    starts = [np.ones(net.n_links)]
    for _ in range(max(0, sched.multi_start - 1)):
        starts.append(np.exp(rng.uniform(-sched.start_spread, sched.start_spread,
                                         net.n_links)))
    best = None
    for r0 in starts:
        state = _tune_one(net, flows, deadline, sched, r0)
        if best is None or state.solution.objective > best.solution.objective + 1e-12:
            best = state
    return best


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = total} (sort method)."""
    if total < 0:
        raise ValueError("total must be nonnegative")
    v = np.asarray(v, dtype=float)
    if total == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, len(v) + 1)
    rho = np.nonzero(u + (total - css) / j > 0)[0][-1]
    lam = (total - css[rho]) / (rho + 1.0)
    return np.maximum(v + lam, 0.0)


@dataclass(frozen=True)
class AllocationVector:
    """Bandwidth shares per maximal independent set, summing to the budget."""

    i_bar: np.ndarray
    budget: float

    def __post_init__(self):
        x = np.asarray(self.i_bar, dtype=float)
        object.__setattr__(self, "i_bar", x)
        if np.any(x < -1e-9):
            raise ValueError("allocation entries must be nonnegative")
        if abs(x.sum() - self.budget) > 1e-6 * max(1.0, self.budget):
            raise ValueError("allocation must sum to the budget")


def allocation_gradient(family: IndependentSetFamily,
                        shadow_prices: np.ndarray) -> np.ndarray:
    """d(throughput)/d(set share) = sum of member-link shadow prices."""
    mu = np.asarray(shadow_prices, dtype=float)
    return np.array([sum(mu[e] for e in s) for s in family.sets])


def implied_caps(net: NetworkSpec, family: IndependentSetFamily,
                 alloc: np.ndarray) -> np.ndarray:
    """Per-link bandwidth implied by set shares: rate * sum of shares of
    sets containing the link."""
    caps = np.zeros(net.n_links)
    for m, s in enumerate(family.sets):
        for e in s:
            caps[e] += alloc[m]
    rates = np.array([ln.rate for ln in net.links], dtype=float)
    return rates * caps


def tune_allocation(
    net: NetworkSpec,
    family: IndependentSetFamily,
    flows: list[FlowSpec],
    deadline: int,
    budget: float,
    schedule: TunerSchedule | None = None,
) -> tuple[AllocationVector, RelaxedSolution]:
    """Projected gradient ascent over the simplex of set shares."""
    sched = schedule or TunerSchedule()
    m = len(family.sets)
    if m == 0:
        raise ValueError("empty independent-set family")
    alloc = np.full(m, budget / m)
    if budget == 0:
        sol = solve_relaxed(net, flows, np.zeros(net.n_links), deadline, sched.dual_final)
        return AllocationVector(alloc, budget), sol

    mu_warm = None
    deltas = []
    for k in range(1, sched.max_iters + 1):
        sol = solve_relaxed(net, flows, implied_caps(net, family, alloc), deadline,
                            sched.dual, mu0=mu_warm)
        mu_warm = sol.prices
        g = allocation_gradient(family, sol.prices)
        new_alloc = project_simplex(alloc + (sched.g0 / k) * g, budget)
        deltas.append(np.max(np.abs(new_alloc - alloc)))
        alloc = new_alloc
        if k >= sched.conv_window and max(deltas[-sched.conv_window:]) < sched.conv_tol:
            break
    sol = solve_relaxed(net, flows, implied_caps(net, family, alloc), deadline,
                        sched.dual_final, mu0=mu_warm)
    return AllocationVector(alloc, budget), sol
