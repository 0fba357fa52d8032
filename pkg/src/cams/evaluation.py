"""Playout simulation, brute-force oracles, and solution-quality metrics.

The simulator runs one full game under a pair of stage policies and keeps
the bookkeeping needed to audit it afterwards.  Policies are plain
callables so bundle-driven, analytic, and degenerate players compose:

    p1_policy(t, x, p, type_i, rng) -> (u, p_next)
    p2_policy(t, x, p, carry, rng) -> (v, carry_next)

P1 owns the public belief: whatever posterior it returns is what both
sides see at the next stage.  P2 drags an opaque `carry` through the game
instead (the dual vector for conjugate play, nothing for the rest); it is
never shown the realized type.

The quality metrics deliberately avoid the solver's own machinery where
they can: the one-shot matrix-game oracle discretizes the action boxes and
solves the resulting finite game with one-sided information as a linear
program, exploitability plays grid best responses against a frozen bundle,
and the Isaacs diagnostic is a direct minmax-vs-maxmin grid scan.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import CamsError, ConfigError, NumericalDomainError
from .game import DualInfoState, GameSpec, InfoState, euler_step
from .runtime import dual_sample, p1_act, p2_act_dual, split_sample
from .solver import (
    SolveConfig,
    cams_solve,
    check_bundle,
    next_value_slice,
    solve_stage_dual,
    solve_stage_primal,
)

__all__ = [
    "Trajectory",
    "simulate",
    "zero_p1",
    "zero_p2",
    "bundle_p1_policy",
    "bundle_p2_policy",
    "oracle_p1_policy",
    "oracle_p2_policy",
    "action_grid",
    "matrix_game_oracle",
    "matrix_game_refinement",
    "ExploitReport",
    "exploitability",
    "action_error",
    "isaacs_gap",
    "scaling_benchmark",
    "write_scaling_csv",
    "trajectory_plot_data",
    "scaling_plot_data",
    "write_plot_json",
]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """One realized playout with full cost bookkeeping."""

    times: np.ndarray  # (n+1,)
    states: np.ndarray  # (n+1, d_x)
    u: np.ndarray  # (n, d_u)
    v: np.ndarray  # (n, d_v)
    beliefs: np.ndarray  # (n+1, I) public belief path
    p2_carries: list  # (n+1) P2-side state (dual vectors or None)
    atoms_p1: np.ndarray  # (n,) sampled split atom, -1 if not atom-based
    running: np.ndarray  # (n,) stage cost l_i(u, v) for the realized type
    type_i: int
    terminal: float
    total: float

    def cost_residual(self, spec: GameSpec) -> float:
        """|total - (sum tau*l_i + g_i(x_T))| recomputed from raw actions."""
        tot = 0.0
        for k in range(len(self.u)):
            tot += spec.step * float(
                np.asarray(spec.running_cost(self.u[k], self.v[k]))[self.type_i]
            )
        tot += float(np.asarray(spec.terminal_cost(self.states[-1]))[self.type_i])
        return abs(self.total - tot)


def simulate(
    spec: GameSpec,
    p1_policy,
    p2_policy,
    type_i=None,
    seed=0,
    x0=None,
    p0=None,
    p2_carry0=None,
) -> Trajectory:
    """Play one game; deterministic given the seed.

    type_i=None draws the type from the prior.  x0 defaults to the state
    box center, p0 to the prior.  Policy exceptions propagate with the
    failing stage attached.
    """
    rng = np.random.default_rng(seed)
    p = np.array(spec.prior if p0 is None else p0, dtype=float)
    x = (
        spec.state_box.mean(axis=1)
        if x0 is None
        else np.array(x0, dtype=float)
    )
    if type_i is None:
        type_i = int(rng.choice(p.size, p=p))
    times = spec.time_grid
    n = spec.num_stages
    states = np.empty((n + 1, spec.state_dim))
    us = np.empty((n, spec.u_dim))
    vs = np.empty((n, spec.v_dim))
    beliefs = np.empty((n + 1, spec.num_types))
    carries = [p2_carry0]
    atoms = np.full(n, -1, dtype=int)
    running = np.empty(n)
    states[0] = x
    beliefs[0] = p
    carry = p2_carry0
    total = 0.0
    for k in range(n):
        t = times[k]
        try:
            u, p_next = p1_policy(t, x, p, type_i, rng)
            v, carry = p2_policy(t, x, p, carry, rng)
        except CamsError as e:
            raise type(e)(f"{e} (during stage t={t:g})") from e
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        l = float(np.asarray(spec.running_cost(u, v))[type_i])
        x = euler_step(x, u, v, spec.step, spec)
        p = np.asarray(p_next, dtype=float)
        us[k], vs[k], running[k] = u, v, l
        atoms[k] = getattr(p1_policy, "last_atom", -1)
        total += spec.step * l
        states[k + 1] = x
        beliefs[k + 1] = p
        carries.append(carry)
    terminal = float(np.asarray(spec.terminal_cost(x))[type_i])
    total += terminal
    return Trajectory(
        times=times,
        states=states,
        u=us,
        v=vs,
        beliefs=beliefs,
        p2_carries=carries,
        atoms_p1=atoms,
        running=running,
        type_i=int(type_i),
        terminal=terminal,
        total=total,
    )


def zero_p1(spec: GameSpec):
    u = np.zeros(spec.u_dim)
    return lambda t, x, p, i, rng: (u, p)


def zero_p2(spec: GameSpec):
    v = np.zeros(spec.v_dim)
    return lambda t, x, p, carry, rng: (v, carry)


class bundle_p1_policy:
    """Informed play from a primal bundle: re-solve, split, reveal."""

    def __init__(self, bundle, spec: GameSpec, cfg: SolveConfig | None = None):
        check_bundle(bundle, spec, kind="primal")
        self.bundle, self.spec, self.cfg = bundle, spec, cfg
        self.last_atom = -1

    def __call__(self, t, x, p, type_i, rng):
        u, k, p_next = p1_act(
            InfoState(t, x, p), type_i, self.bundle, self.spec, rng, cfg=self.cfg
        )
        self.last_atom = int(k)
        return u, p_next


class bundle_p2_policy:
    """Uninformed play from a dual bundle; carry is the dual vector."""

    def __init__(self, bundle, spec: GameSpec, cfg: SolveConfig | None = None):
        check_bundle(bundle, spec, kind="dual")
        self.bundle, self.spec, self.cfg = bundle, spec, cfg

    def __call__(self, t, x, p, carry, rng):
        if carry is None:
            raise NumericalDomainError(
                "dual play needs an initial dual vector (see init_dual)"
            )
        v, ph_next = p2_act_dual(
            DualInfoState(t, x, np.asarray(carry, dtype=float)),
            self.bundle,
            self.spec,
            rng,
            cfg=self.cfg,
        )
        return v, ph_next


class oracle_p1_policy:
    """Analytic homing-game play: mean-target tracking until the revelation
    time, then per-type tracking; the posterior jumps to the vertex at the
    reveal.  Uses the discrete-time gains so the policy is exact on the
    stage grid."""

    def __init__(self, params, t_r=None):
        from .oracle import revelation_time

        self.params = params
        self.t_r = revelation_time(params) if t_r is None else float(t_r)

    def __call__(self, t, x, p, type_i, rng):
        pr = self.params
        s1, _ = pr.split_state(x)
        if t < self.t_r:
            return pr.discrete_tracking_action(1, t, s1, pr.mean_target(p)), p
        e = np.zeros(len(p))
        e[type_i] = 1.0
        return pr.discrete_tracking_action(1, t, s1, pr.targets[type_i]), e


class oracle_p2_policy:
    """Analytic uninformed play: track the belief-mean target.  The public
    belief already encodes the reveal (it jumps to a vertex), so the same
    rule covers both phases."""

    def __init__(self, params):
        self.params = params

    def __call__(self, t, x, p, carry, rng):
        pr = self.params
        _, s2 = pr.split_state(x)
        return pr.discrete_tracking_action(2, t, s2, pr.mean_target(p)), carry


# ---------------------------------------------------------------------------
# One-shot matrix-game oracle
# ---------------------------------------------------------------------------


def action_grid(box, per_axis: int) -> np.ndarray:
    """Uniform joint grid over a box, shape (per_axis**d, d)."""
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in np.asarray(box, dtype=float)]
    return np.array(list(itertools.product(*axes)))


def _stage_cost_tables(spec: GameSpec, x0, U, V):
    """M[i, a, b] = tau l_i(u_a, v_b) + g_i(x'(x0, u_a, v_b))."""
    tau = spec.step
    I = spec.num_types
    m, n = len(U), len(V)
    # ~1e4 joint actions per side is the intended desk scale; the product
    # cap keeps the dense stage-cost block under ~1.6 GB either way
    if max(m, n) > 2e4 or I * m * n > 2e8:
        raise ConfigError(
            f"matrix oracle grid too large ({I}x{m}x{n} stage-cost entries)"
        )
    x0 = np.asarray(x0, dtype=float)
    lq = spec.lq
    if lq is not None:
        # affine step; l(u,v) separates additively in (u, v) for the LQ
        # structure, so row/column probes recover it exactly
        base = x0 + tau * (lq.A @ x0)
        XU = tau * U @ lq.Bu.T  # (m, d_x)
        XV = tau * V @ lq.Bv.T  # (n, d_x)
        LA = np.array([spec.running_cost(u, V[0]) for u in U], dtype=float)
        LB = np.array([spec.running_cost(U[0], v) for v in V], dtype=float)
        L00 = np.asarray(spec.running_cost(U[0], V[0]), dtype=float)
        M = np.empty((I, m, n))
        for b in range(n):
            Xp = base[None, :] + XU + XV[b][None, :]
            G = lq.terminal_all(Xp)  # (m, I)
            L = LA + LB[b][None, :] - L00[None, :]
            M[:, :, b] = (G + tau * L).T
        return M
    M = np.empty((I, m, n))
    for a in range(m):
        for b in range(n):
            xp = euler_step(x0, U[a], V[b], tau, spec)
            l = np.asarray(spec.running_cost(U[a], V[b]), dtype=float)
            M[:, a, b] = tau * l + np.asarray(spec.terminal_cost(xp), dtype=float)
    return M


def matrix_game_oracle(spec: GameSpec, x0, p0, grid_n: int):
    """Ground-truth value of the one-shot game on action grids.

    Discretizes both action boxes with grid_n points per axis and solves
    the finite zero-sum game with one-sided information exactly: a linear
    program over P1's type-conditioned mixtures against every P2 grid
    response.  Returns (value, sigma) with sigma[i] the type-i mixture
    over action_grid(spec.u_box, grid_n) rows.
    """
    if spec.num_stages != 1:
        raise ConfigError("matrix oracle is defined for one-shot games")
    p0 = np.asarray(p0, dtype=float)
    U = action_grid(spec.u_box, grid_n)
    V = action_grid(spec.v_box, grid_n)
    M = _stage_cost_tables(spec, x0, U, V)
    I, m, n = M.shape
    # variables: [z, sigma_0(.), ..., sigma_{I-1}(.)]
    c = np.zeros(1 + I * m)
    c[0] = 1.0
    A_ub = np.empty((n, 1 + I * m))
    A_ub[:, 0] = -1.0
    for i in range(I):
        A_ub[:, 1 + i * m : 1 + (i + 1) * m] = p0[i] * M[i].T
    A_eq = np.zeros((I, 1 + I * m))
    for i in range(I):
        A_eq[i, 1 + i * m : 1 + (i + 1) * m] = 1.0
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(n),
        A_eq=A_eq,
        b_eq=np.ones(I),
        bounds=[(None, None)] + [(0, None)] * (I * m),
        method="highs",
    )
    if not res.success:
        raise NumericalDomainError(f"matrix-game LP failed: {res.message}")
    sigma = res.x[1:].reshape(I, m)
    return float(res.fun), sigma


def matrix_game_refinement(spec: GameSpec, x0, p0, grid_sizes) -> np.ndarray:
    """Oracle values across a refinement ladder of per-axis grid sizes."""
    return np.array([matrix_game_oracle(spec, x0, p0, g)[0] for g in grid_sizes])


# ---------------------------------------------------------------------------
# Exploitability
# ---------------------------------------------------------------------------


@dataclass
class ExploitReport:
    delta: float
    stderr: float
    side: str
    n_grid: int
    n_rollouts: int
    grid_step: float  # coarsest deviation-grid spacing, for the bound
    per_type: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _br_rollout_p1(spec, continuation, stage_law, x0, p0, type_i, Vg, rng):
    """One playout: P1 plays its stage law, P2 the grid best response."""
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    total = 0.0
    for t in spec.time_grid[:-1]:
        plan = stage_law(t, x, p, rng)
        K = len(plan.lam)
        # score every deviation against the announced mixture
        Xp = np.empty((K * len(Vg), spec.state_dim))
        Pn = np.empty((K * len(Vg), spec.num_types))
        run = np.empty((K, len(Vg)))
        for k in range(K):
            for b, v in enumerate(Vg):
                Xp[k * len(Vg) + b] = euler_step(x, plan.u_atoms[k], v, spec.step, spec)
                run[k, b] = plan.posteriors[k] @ np.asarray(
                    spec.running_cost(plan.u_atoms[k], v), dtype=float
                )
            Pn[k * len(Vg) : (k + 1) * len(Vg)] = plan.posteriors[k]
        W = continuation(t, Xp, Pn).reshape(K, len(Vg))
        scores = plan.lam @ (spec.step * run + W)
        v_star = Vg[int(np.argmax(scores))]
        k, u, p_next = split_sample(plan, p, type_i, rng)
        total += spec.step * float(
            np.asarray(spec.running_cost(u, v_star))[type_i]
        )
        x = euler_step(x, u, v_star, spec.step, spec)
        p = p_next
    return total + float(np.asarray(spec.terminal_cost(x))[type_i])


def _br_rollout_p2(spec, bundle, x0, ph0, type_i, Ug, cfg, rng):
    """One playout: P2 plays dual, P1 the grid best response knowing its type."""
    x = np.array(x0, dtype=float)
    ph = np.array(ph0, dtype=float)
    total = 0.0
    for t in spec.time_grid[:-1]:
        nv = next_value_slice(spec, bundle, t)
        plan, _ = solve_stage_dual(DualInfoState(t, x, ph), nv, spec, cfg, rng=rng)
        K = len(plan.lam)
        adv = np.array(
            [
                plan.dual_atoms[k]
                - spec.step
                * np.asarray(spec.running_cost(plan.u_atoms[k], plan.v_atoms[k]))
                for k in range(K)
            ]
        )
        Xp = np.empty((K * len(Ug), spec.state_dim))
        Ph = np.empty((K * len(Ug), spec.num_types))
        run = np.empty((K, len(Ug)))
        for k in range(K):
            for a, u in enumerate(Ug):
                Xp[k * len(Ug) + a] = euler_step(x, u, plan.v_atoms[k], spec.step, spec)
                run[k, a] = np.asarray(
                    spec.running_cost(u, plan.v_atoms[k]), dtype=float
                )[type_i]
            Ph[k * len(Ug) : (k + 1) * len(Ug)] = adv[k]
        W = nv.value_batch(Xp, Ph).reshape(K, len(Ug))
        # per-type continuation lower bound from the dual surface
        cont = adv[:, type_i][:, None] - W
        scores = plan.lam @ (spec.step * run + cont)
        u_star = Ug[int(np.argmin(scores))]
        k, v, ph = dual_sample(plan, spec, rng)
        total += spec.step * float(np.asarray(spec.running_cost(u_star, v))[type_i])
        x = euler_step(x, u_star, v, spec.step, spec)
    return total + float(np.asarray(spec.terminal_cost(x))[type_i])


def exploitability(
    spec: GameSpec,
    bundle,
    side="p1",
    n_grid=9,
    n_rollouts=32,
    seed=0,
    x0=None,
    p0=None,
    cfg: SolveConfig | None = None,
    stage_law=None,
    continuation=None,
    anchor=None,
) -> ExploitReport:
    """Best-response gap estimate for one side's bundle policy.

    side="p1": P1 plays the primal bundle's stage law, P2 deviates to the
    grid action maximizing stage cost plus the bundle's continuation value;
    delta = E[playout cost] - V_hat(0, x0, p0).  side="p2": P2 plays the
    dual bundle, P1 (knowing its type) deviates against the dual lower
    envelope; here p0 is the starting dual vector and
    delta = prior . p_hat0 - V_hat*(0, x0, p_hat0) - E[playout cost].
    Types are enumerated with prior weights; randomness is averaged over
    n_rollouts playouts per type with the standard error reported.

    Three side="p1" overrides decouple the metric from the bundle, so an
    analytic policy can be measured on its own terms: stage_law is any
    (t, x, p, rng) -> SplitPlan-like callable (e.g. a random baseline),
    continuation(t, X, P) -> values replaces the bundle surface that grid
    deviations are scored against, and anchor replaces the value the mean
    playout cost is compared to.  With all three given, bundle may be None.
    """
    x0 = spec.state_box.mean(axis=1) if x0 is None else np.asarray(x0, dtype=float)
    cfg = cfg or SolveConfig()
    if side == "p1":
        if bundle is None and (stage_law is None or continuation is None or anchor is None):
            raise ConfigError(
                "side='p1' without a bundle needs stage_law, continuation, and anchor"
            )
        if bundle is not None:
            check_bundle(bundle, spec, kind="primal")
        p0 = np.asarray(spec.prior if p0 is None else p0, dtype=float)
        weights = p0
        Vg = action_grid(spec.v_box, n_grid)
        step = float(np.max((spec.v_box[:, 1] - spec.v_box[:, 0]) / (n_grid - 1)))
        if anchor is None:
            anchor = bundle.slices[0].value(x0, p0)
        if continuation is None:
            def continuation(t, X, P):
                return next_value_slice(spec, bundle, t).value_batch(X, P)
        if stage_law is None:
            def stage_law(t, x, p, rng):
                nv = next_value_slice(spec, bundle, t)
                plan, _ = solve_stage_primal(
                    InfoState(t, x, p), nv, spec, cfg, rng=rng
                )
                return plan
        def one(type_i, rng):
            return _br_rollout_p1(spec, continuation, stage_law, x0, p0, type_i, Vg, rng)
        sign = 1.0
    elif side == "p2":
        check_bundle(bundle, spec, kind="dual")
        if p0 is None:
            raise ConfigError("side='p2' needs p0 = the starting dual vector")
        ph0 = np.asarray(p0, dtype=float)
        weights = spec.prior
        Ug = action_grid(spec.u_box, n_grid)
        step = float(np.max((spec.u_box[:, 1] - spec.u_box[:, 0]) / (n_grid - 1)))
        anchor = float(spec.prior @ ph0) - bundle.slices[0].value(x0, ph0)
        def one(type_i, rng):
            return _br_rollout_p2(spec, bundle, x0, ph0, type_i, Ug, cfg, rng)
        sign = -1.0
    else:
        raise ConfigError(f"unknown side {side!r}")

    ss = np.random.SeedSequence(seed)
    means = np.zeros(spec.num_types)
    variances = np.zeros(spec.num_types)
    for i in range(spec.num_types):
        if weights[i] <= 0.0:
            continue
        child = np.random.SeedSequence(entropy=ss.entropy, spawn_key=(i,))
        totals = np.array(
            [one(i, np.random.default_rng(s)) for s in child.spawn(n_rollouts)]
        )
        means[i] = totals.mean()
        variances[i] = totals.var(ddof=1) / n_rollouts if n_rollouts > 1 else 0.0
    value = float(weights @ means)
    delta = sign * (value - anchor)
    stderr = float(np.sqrt(np.sum(weights**2 * variances)))
    return ExploitReport(
        delta=float(delta),
        stderr=stderr,
        side=side,
        n_grid=n_grid,
        n_rollouts=n_rollouts,
        grid_step=step,
        per_type=means,
    )


# ---------------------------------------------------------------------------
# Action error vs the analytic strategy
# ---------------------------------------------------------------------------


def action_error(
    bundle,
    oracle,
    test_states,
    norm=2,
    cfg: SolveConfig | None = None,
    seed=0,
    t_r=None,
    mean_actions=None,
):
    """Expected distance between the solved type-conditioned mean actions
    and the analytic strategy, over (t, x, p) test states.

    The solved strategy is a distribution per type; the metric compares its
    mean action to the oracle's point action (the analytic strategy is pure
    in both phases), weighted by p.  Returns (overall, per_stage) with
    per_stage keyed by grid time.  mean_actions(t, x, p) -> (I, d_u)
    replaces the bundle-driven stage solve with any other strategy (with
    it, bundle may be None).
    """
    from .oracle import analytic_p1_strategy, revelation_time

    spec = oracle.spec
    if mean_actions is None:
        check_bundle(bundle, spec, kind="primal")
    if t_r is None:
        t_r = revelation_time(oracle)
    cfg = cfg or SolveConfig()
    rng = np.random.default_rng(seed)
    errs = {}
    for t, x, p in test_states:
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if mean_actions is None:
            nv = next_value_slice(spec, bundle, t)
            plan, _ = solve_stage_primal(InfoState(t, x, p), nv, spec, cfg, rng=rng)
            means = plan.alpha.T @ plan.u_atoms  # (I, d_u)
        else:
            means = np.asarray(mean_actions(t, x, p), dtype=float)
        e = 0.0
        for i in range(spec.num_types):
            if p[i] <= 0.0:
                continue
            u_ref = analytic_p1_strategy(t, x, p, i, oracle, t_r=t_r)
            e += p[i] * float(np.linalg.norm(means[i] - u_ref, ord=norm))
        errs.setdefault(float(t), []).append(e)
    per_stage = {t: float(np.mean(v)) for t, v in sorted(errs.items())}
    overall = float(np.mean([e for v in errs.values() for e in v]))
    return overall, per_stage


# ---------------------------------------------------------------------------
# Isaacs diagnostic
# ---------------------------------------------------------------------------


def isaacs_gap(spec: GameSpec, x, xi, grid_n=21) -> float:
    """minmax - maxmin of f(x,u,v).xi - l(u,v) over action grids.

    Zero (to grid resolution) when dynamics and running cost separate in
    (u, v), strictly positive for genuinely coupled Hamiltonians.  Uses
    the first running-cost component (type-symmetric for the homing game).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    U = action_grid(spec.u_box, grid_n)
    V = action_grid(spec.v_box, grid_n)
    if spec.lq is not None:
        # affine dynamics and additively separable l: build phi from probes
        lq = spec.lq
        su = U @ (lq.Bu.T @ xi) + (lq.A @ x) @ xi
        sv = V @ (lq.Bv.T @ xi)
        la = np.array([spec.running_cost(u, V[0])[0] for u in U])
        lb = np.array([spec.running_cost(U[0], v)[0] for v in V])
        l00 = float(np.asarray(spec.running_cost(U[0], V[0]))[0])
        phi = su[:, None] + sv[None, :] - (la[:, None] + lb[None, :] - l00)
    else:
        if len(U) * len(V) > 3e5:
            raise ConfigError("isaacs grid too large; lower grid_n")
        phi = np.empty((len(U), len(V)))
        for a, u in enumerate(U):
            for b, v in enumerate(V):
                f = np.asarray(spec.dynamics(x, u, v), dtype=float)
                l = float(np.asarray(spec.running_cost(u, v))[0])
                phi[a, b] = f @ xi - l
    minmax = phi.max(axis=1).min()
    maxmin = phi.min(axis=0).max()
    return float(minmax - maxmin)


# ---------------------------------------------------------------------------
# |A|-scaling benchmark
# ---------------------------------------------------------------------------


def scaling_benchmark(
    spec: GameSpec,
    grid_sizes=(16, 36, 64, 144),
    cfg: SolveConfig | None = None,
    seed=0,
    x0=None,
    p0=None,
    repeats=3,
):
    """Wall-time table: grid matrix-game oracle across joint-action counts
    vs the solver, which has no action-grid axis at all.

    grid_sizes are joint action counts |A| per side; each is mapped to the
    nearest per-axis grid (|A| = per_axis**d_u).  Oracle rows report the
    best of `repeats` runs (scheduler noise swamps millisecond LPs); the
    solver is re-run once per row so its jitter band is measured rather
    than assumed.  Returns a list of row dicts (method, actions,
    wall_seconds, value).
    """
    if spec.num_stages != 1:
        raise ConfigError("the scaling benchmark runs on one-shot games")
    x0 = spec.state_box.mean(axis=1) if x0 is None else np.asarray(x0, dtype=float)
    p0 = np.asarray(spec.prior if p0 is None else p0, dtype=float)
    rows = []
    for size in grid_sizes:
        per_axis = max(2, int(round(size ** (1.0 / spec.u_dim))))
        wall = np.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            value, _ = matrix_game_oracle(spec, x0, p0, per_axis)
            wall = min(wall, time.perf_counter() - t0)
        rows.append(
            {
                "method": "matrix_oracle",
                "actions": per_axis**spec.u_dim,
                "wall_seconds": wall,
                "value": value,
            }
        )
    for _ in grid_sizes:
        t0 = time.perf_counter()
        bundle = cams_solve(spec, "primal", cfg=cfg, seed=seed)
        value = float(bundle.slices[0].value(x0, p0))
        rows.append(
            {
                "method": "cams",
                "actions": None,
                "wall_seconds": time.perf_counter() - t0,
                "value": value,
            }
        )
    return rows


def write_scaling_csv(rows, path):
    """CSV with header method,actions,wall_seconds,value ('' for no |A|)."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "actions", "wall_seconds", "value"])
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in w.fieldnames})


def trajectory_plot_data(traj: Trajectory) -> dict:
    """JSON-ready dict of one playout (states, actions, beliefs, costs)."""
    return {
        "times": traj.times.tolist(),
        "states": traj.states.tolist(),
        "u": traj.u.tolist(),
        "v": traj.v.tolist(),
        "beliefs": traj.beliefs.tolist(),
        "atoms_p1": traj.atoms_p1.tolist(),
        "running": traj.running.tolist(),
        "type": traj.type_i,
        "terminal": traj.terminal,
        "total": traj.total,
    }


def scaling_plot_data(rows) -> dict:
    """JSON-ready dict of the scaling table, one series per method."""
    out = {}
    for r in rows:
        s = out.setdefault(r["method"], {"actions": [], "wall_seconds": [], "value": []})
        for k in s:
            s[k].append(r[k])
    return out


def write_plot_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
