"""Executable behavioral strategies from solved value bundles.

A solved bundle only stores value surfaces; the equilibrium behavior at an
encountered infostate comes from re-solving the one-stage problem there
against the bundle's next slice (states met in play are off the collocation
sample, so cached stage solutions would not apply).  This module wraps that
re-solve into the two runtime policies:

* P1 (informed) solves the splitting problem at (t, x, p), samples atom k
  with the type-conditional law Pr(u^k | i) = lambda^k p^k[i] / p[i], plays
  u^k and updates the public belief to the posterior p^k.
* P2 (uninformed) plays from the conjugate variable instead of a belief: it
  solves the dual stage at (t, x, p_hat), samples k ~ lambda, plays v^k and
  advances the dual vector to p_hat^k - tau * l.  The running-cost advance
  uses the stage's own equilibrium u^k; P2 moves simultaneously and never
  observes u, so this is a modeling choice (for the homing game l is
  type-symmetric in u anyway).

The dual vector starts at a subgradient of the primal value in p, which is
what `init_dual` computes; from then on P2's play never touches the true
type, the belief, or P1's randomization device.
"""

from __future__ import annotations

import numpy as np

from .errors import IncompatibleBundleError, NumericalDomainError
from .game import DualInfoState, GameSpec, InfoState
from .simplex import LAMBDA_MIN
from .solver import (
    DualPlan,
    SolveConfig,
    SplitPlan,
    check_bundle,
    next_value_slice,
    solve_stage_dual,
    solve_stage_primal,
)
from .value import ValueBundle, value_subgradient_p

__all__ = [
    "atom_conditionals",
    "split_sample",
    "dual_sample",
    "p1_act",
    "p2_act_dual",
    "init_dual",
]


def atom_conditionals(plan: SplitPlan, p, type_i: int) -> np.ndarray:
    """Type-conditional atom law Pr(k | i) = lambda^k p^k[i] / p[i].

    Zero-weight atoms (lambda^k < LAMBDA_MIN) are excluded from sampling;
    their posterior is p by convention and they carry no mass in play.
    """
    p = np.asarray(p, dtype=float)
    if not 0 <= type_i < p.size:
        raise NumericalDomainError(f"type index {type_i} out of range")
    if p[type_i] <= 0.0:
        raise NumericalDomainError(
            f"type {type_i} has zero probability at this infostate"
        )
    w = plan.lam * plan.posteriors[:, type_i] / p[type_i]
    w[plan.lam < LAMBDA_MIN] = 0.0
    return w


def _sample_index(w, rng) -> int:
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise NumericalDomainError("atom law has no mass")
    edges = np.cumsum(w)
    return int(min(np.searchsorted(edges, rng.random() * total), w.size - 1))


def split_sample(plan: SplitPlan, p, type_i: int, rng):
    """Sample (k, u, p_next) from a solved splitting plan for one type."""
    w = atom_conditionals(plan, p, type_i)
    k = _sample_index(w, rng)
    return k, plan.u_atoms[k].copy(), plan.posteriors[k].copy()


def dual_sample(plan: DualPlan, spec: GameSpec, rng):
    """Sample (k, v, p_hat_next) from a solved dual plan.

    The dual vector advance subtracts the per-type running cost evaluated at
    the sampled atom's equilibrium controls.
    """
    lam = plan.lam.copy()
    lam[lam < LAMBDA_MIN] = 0.0
    k = _sample_index(lam, rng)
    cost = np.asarray(spec.running_cost(plan.u_atoms[k], plan.v_atoms[k]), dtype=float)
    p_hat_next = plan.dual_atoms[k] - spec.step * cost
    return k, plan.v_atoms[k].copy(), p_hat_next


def p1_act(
    s: InfoState,
    type_i: int,
    bundle: ValueBundle,
    spec: GameSpec,
    rng,
    cfg: SolveConfig | None = None,
):
    """Informed player's move at infostate s given the realized type.

    Re-solves the stage at (t, x, p) against the bundle's next slice, then
    samples an atom from the type-conditional law.  Returns
    (u, k, p_next): the action, the sampled atom index, and the Bayes
    posterior the public belief moves to.
    """
    check_bundle(bundle, spec, kind="primal")
    p = np.asarray(s.p, dtype=float)
    if p[type_i] <= 0.0:
        raise NumericalDomainError(
            f"type {type_i} has zero probability at this infostate"
        )
    nv = next_value_slice(spec, bundle, s.t)
    plan, _ = solve_stage_primal(s, nv, spec, cfg, rng=rng)
    k, u, p_next = split_sample(plan, p, type_i, rng)
    return u, k, p_next


def p2_act_dual(
    s: DualInfoState,
    bundle_dual: ValueBundle,
    spec: GameSpec,
    rng,
    cfg: SolveConfig | None = None,
):
    """Uninformed player's move at dual infostate s.

    Takes no belief and no type: P2's whole interface to the game is
    (t, x, p_hat).  Returns (v, p_hat_next).
    """
    check_bundle(bundle_dual, spec, kind="dual")
    nv = next_value_slice(spec, bundle_dual, s.t)
    plan, _ = solve_stage_dual(s, nv, spec, cfg, rng=rng)
    _, v, p_hat_next = dual_sample(plan, spec, rng)
    return v, p_hat_next


def init_dual(t0, x0, p, bundle_primal: ValueBundle, spec: GameSpec) -> np.ndarray:
    """Equilibrium dual vector: a subgradient of the primal value in p.

    The value extends positively homogeneously off the simplex, so any of
    its subgradients at p satisfies the tangency identity p . p_hat = V.  A
    fitted slice is not exactly homogeneous; its raw input-gradient is
    shifted along the all-ones direction to restore that identity, which
    costs nothing at the touching point and pins the single-type case to
    p_hat = V up to rounding.  At t0 = T the value is linear in p and the result is
    exactly the terminal cost vector g(x0).
    """
    if bundle_primal.kind != "primal":
        raise IncompatibleBundleError(
            "init_dual needs a primal bundle, got " + bundle_primal.kind
        )
    x0 = np.asarray(x0, dtype=float)
    p = np.asarray(p, dtype=float)
    if abs(t0 - spec.horizon) <= 1e-9 * max(1.0, spec.horizon):
        return np.asarray(spec.terminal_cost(x0), dtype=float)
    check_bundle(bundle_primal, spec, kind="primal")
    sl = bundle_primal.slice_at(t0)
    gp = value_subgradient_p(sl, x0, p)
    return gp + (sl.value(x0, p) - p @ gp) / p.sum()
