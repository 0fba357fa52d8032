"""Stage minimax problems for the convexified backward recursion.

One backup step at infostate (t, x, p) has the informed player choose I
candidate actions plus a column-stochastic splitting matrix against I
responses (primal game).  In the dual game the uninformed player chooses
I+1 actions, simplex weights, and dual-vector atoms subject to the exact
barycenter constraint, against I+1 responses.  Every atom advances the
state one Euler step and reads the next slice's value; the assembled
problem is handed to the DS-GDA solver as a flat MinimaxProblem.

Flat variable packing (block order):
  primal min: [u^1 .. u^I | alpha[:,0] .. alpha[:,I-1]]
  primal max: [v^1 .. v^I]
  dual   min: [v^1 .. v^{I+1} | lambda | p_hat^1 .. p_hat^I]
  dual   max: [u^1 .. u^{I+1}]

The dual's (I+1)-th atom is not a free variable: it is reconstructed from
sum_k lambda^k p_hat^k = p_hat, so the constraint holds exactly whenever
lambda^{I+1} is above the clamp.  If the reconstructed atom escapes the
dual box the objective picks up a quadratic penalty instead of failing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsgda import Domain, MinimaxProblem
from .errors import ConfigError
from .game import DualInfoState, GameSpec, InfoState, euler_step
from .simplex import LAMBDA_MIN, split_from_alpha

__all__ = [
    "StageConfig",
    "PrimalStageVars",
    "DualStageVars",
    "primal_stage_objective",
    "dual_stage_objective",
    "primal_domains",
    "dual_domains",
    "build_primal_stage",
    "build_dual_stage",
]


@dataclass
class StageConfig:
    """Knobs shared by both stage builders."""

    penalty_weight: float = 100.0

    def __post_init__(self):
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be nonnegative")


@dataclass
class PrimalStageVars:
    """Decision variables of the primal stage problem."""

    u_atoms: np.ndarray  # (I, d_u)
    alpha: np.ndarray  # (I, I), columns on the simplex
    v_atoms: np.ndarray  # (I, d_v)

    @classmethod
    def from_flat(cls, zmin, zmax, spec: GameSpec) -> "PrimalStageVars":
        nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
        zmin = np.asarray(zmin, dtype=float)
        zmax = np.asarray(zmax, dtype=float)
        if zmin.shape != (nt * du + nt * nt,):
            raise ConfigError(
                f"primal min block must have {nt * du + nt * nt} entries, "
                f"got shape {zmin.shape}"
            )
        if zmax.shape != (nt * dv,):
            raise ConfigError(
                f"primal max block must have {nt * dv} entries, got shape {zmax.shape}"
            )
        # alpha is stored column-major so each simplex block is one column
        return cls(
            u_atoms=zmin[: nt * du].reshape(nt, du),
            alpha=zmin[nt * du :].reshape(nt, nt).T,
            v_atoms=zmax.reshape(nt, dv),
        )

    def flat_min(self) -> np.ndarray:
        return np.concatenate([self.u_atoms.ravel(), self.alpha.T.ravel()])

    def flat_max(self) -> np.ndarray:
        return np.asarray(self.v_atoms, dtype=float).ravel()


@dataclass
class DualStageVars:
    """Decision variables of the dual stage problem.

    dual_atoms holds all I+1 rows; the last one is reconstructed from the
    barycenter constraint and is exact whenever lam[-1] >= LAMBDA_MIN.
    """

    v_atoms: np.ndarray  # (I+1, d_v)
    lam: np.ndarray  # (I+1,)
    dual_atoms: np.ndarray  # (I+1, I)
    u_atoms: np.ndarray  # (I+1, d_u)

    @classmethod
    def from_flat(cls, zmin, zmax, s: "DualInfoState", spec: GameSpec) -> "DualStageVars":
        nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
        na = nt + 1
        zmin = np.asarray(zmin, dtype=float)
        zmax = np.asarray(zmax, dtype=float)
        if zmin.shape != (na * dv + na + nt * nt,):
            raise ConfigError(
                f"dual min block must have {na * dv + na + nt * nt} entries, "
                f"got shape {zmin.shape}"
            )
        if zmax.shape != (na * du,):
            raise ConfigError(
                f"dual max block must have {na * du} entries, got shape {zmax.shape}"
            )
        v_atoms = zmin[: na * dv].reshape(na, dv)
        lam = zmin[na * dv : na * dv + na]
        free = zmin[na * dv + na :].reshape(nt, nt)
        p_hat = np.asarray(s.p_hat, dtype=float)
        last = (p_hat - lam[:nt] @ free) / max(lam[-1], LAMBDA_MIN)
        return cls(
            v_atoms=v_atoms,
            lam=lam,
            dual_atoms=np.vstack([free, last]),
            u_atoms=zmax.reshape(na, du),
        )

    def flat_min(self) -> np.ndarray:
        return np.concatenate(
            [self.v_atoms.ravel(), self.lam, self.dual_atoms[:-1].ravel()]
        )

    def flat_max(self) -> np.ndarray:
        return np.asarray(self.u_atoms, dtype=float).ravel()


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def primal_stage_objective(
    s: InfoState, pvars: PrimalStageVars, next_value, spec: GameSpec
) -> float:
    """Weighted one-step backup over the split atoms.

    sum_k lam^k ( V(t+tau, x^k, p^k) + tau E_{i~p^k}[ l_i(u^k, v^k) ] ),
    with the expected running cost in the cross-multiplied form
    sum_i alpha[k,i] p[i] l_i so no division by lam^k appears; atoms with
    lam^k = 0 then contribute exactly 0.
    """
    tau = spec.step
    w = split_from_alpha(pvars.alpha, s.p)
    X = np.stack(
        [
            euler_step(s.x, u, v, tau, spec)
            for u, v in zip(pvars.u_atoms, pvars.v_atoms)
        ]
    )
    vals = next_value.value_batch(X, w.posteriors)
    L = np.stack(
        [
            np.asarray(spec.running_cost(u, v), dtype=float)
            for u, v in zip(pvars.u_atoms, pvars.v_atoms)
        ]
    )
    run = tau * np.einsum("ki,i,ki->", pvars.alpha, s.p, L)
    return float(w.lam @ vals + run)


def dual_stage_objective(
    s: DualInfoState,
    dvars: DualStageVars,
    next_dual_value,
    spec: GameSpec,
    penalty_weight: float = 100.0,
) -> float:
    """Weighted dual backup sum_k lam^k V*(t+tau, x^k, p_hat^k - tau l(u^k,v^k))
    plus the box penalty on the reconstructed atom."""
    tau = spec.step
    X = np.stack(
        [
            euler_step(s.x, u, v, tau, spec)
            for u, v in zip(dvars.u_atoms, dvars.v_atoms)
        ]
    )
    L = np.stack(
        [
            np.asarray(spec.running_cost(u, v), dtype=float)
            for u, v in zip(dvars.u_atoms, dvars.v_atoms)
        ]
    )
    vals = next_dual_value.value_batch(X, dvars.dual_atoms - tau * L)
    pen = penalty_weight * _box_violation_sq(dvars.dual_atoms[-1], spec.dual_box())
    return float(dvars.lam @ vals + pen)


def _box_violation_sq(z, box) -> float:
    below = np.maximum(box[:, 0] - z, 0.0)
    above = np.maximum(z - box[:, 1], 0.0)
    return float(below @ below + above @ above)


def _box_violation_grad(z, box) -> np.ndarray:
    return 2.0 * (np.maximum(z - box[:, 1], 0.0) - np.maximum(box[:, 0] - z, 0.0))


def _slice_grads(value_slice, X, P):
    """(dV/dx, dV/dp) rows for a batch; falls back to per-point grad."""
    batch = getattr(value_slice, "grad_batch", None)
    if batch is not None:
        return batch(X, P)
    pairs = [value_slice.grad(x, q) for x, q in zip(X, P)]
    return np.stack([g for g, _ in pairs]), np.stack([g for _, g in pairs])


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def primal_domains(spec: GameSpec) -> tuple[Domain, Domain]:
    """(min, max) domains of the primal stage; identical for every infostate."""
    nt = spec.num_types
    min_domain = Domain()
    min_domain.add_box(np.tile(spec.u_box, (nt, 1)))
    for _ in range(nt):
        min_domain.add_simplex(nt)
    max_domain = Domain.box(np.tile(spec.v_box, (nt, 1)))
    return min_domain, max_domain


def dual_domains(spec: GameSpec) -> tuple[Domain, Domain]:
    """(min, max) domains of the dual stage; identical for every infostate."""
    nt = spec.num_types
    na = nt + 1
    min_domain = Domain()
    min_domain.add_box(np.tile(spec.v_box, (na, 1)))
    min_domain.add_simplex(na)
    min_domain.add_box(np.tile(spec.dual_box(), (nt, 1)))
    max_domain = Domain.box(np.tile(spec.u_box, (na, 1)))
    return min_domain, max_domain


def build_primal_stage(
    s: InfoState, next_value, spec: GameSpec, cfg: StageConfig | None = None
) -> MinimaxProblem:
    """Flat minimax problem for the primal stage at infostate s.

    Min block: I action atoms in u_box plus I simplex columns of alpha
    (I*d_u + I^2 variables).  Max block: I response atoms in v_box.
    Analytic gradients are attached when the game carries its linear
    quadratic structure; otherwise the solver falls back to differences.
    """
    _check_stage_time(s.t, spec)
    min_domain, max_domain = primal_domains(spec)

    def objective(z, y):
        return primal_stage_objective(
            s, PrimalStageVars.from_flat(z, y, spec), next_value, spec
        )

    grad_min = grad_max = None
    if spec.lq is not None:
        grad_min, grad_max = _primal_lq_grads(s, next_value, spec)
    return MinimaxProblem(
        objective,
        min_domain,
        max_domain,
        grad_min=grad_min,
        grad_max=grad_max,
        name=f"primal@t={s.t:.6g}",
    )


def build_dual_stage(
    s: DualInfoState, next_dual_value, spec: GameSpec, cfg: StageConfig | None = None
) -> MinimaxProblem:
    """Flat minimax problem for the dual stage at dual infostate s.

    Min block: I+1 response atoms in v_box, lambda on the (I+1)-simplex,
    and I free dual atoms in the dual box (the last atom is eliminated).
    Max block: I+1 action atoms in u_box.
    """
    _check_stage_time(s.t, spec)
    cfg = cfg or StageConfig()
    min_domain, max_domain = dual_domains(spec)

    def objective(z, y):
        return dual_stage_objective(
            s,
            DualStageVars.from_flat(z, y, s, spec),
            next_dual_value,
            spec,
            penalty_weight=cfg.penalty_weight,
        )

    grad_min = grad_max = None
    if spec.lq is not None:
        grad_min, grad_max = _dual_lq_grads(s, next_dual_value, spec, cfg.penalty_weight)
    return MinimaxProblem(
        objective,
        min_domain,
        max_domain,
        grad_min=grad_min,
        grad_max=grad_max,
        name=f"dual@t={s.t:.6g}",
    )


def _check_stage_time(t, spec: GameSpec):
    if not spec.on_grid(t):
        raise ConfigError(f"stage time {t} is not on the time grid")
    if t >= spec.horizon - 1e-12:
        raise ConfigError("stage problems are only defined strictly before the horizon")


# ---------------------------------------------------------------------------
# Analytic gradients (linear dynamics, quadratic running cost)
# ---------------------------------------------------------------------------


def _primal_lq_grads(s: InfoState, next_value, spec: GameSpec):
    lq = spec.lq
    tau = spec.step
    nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
    p = np.asarray(s.p, dtype=float)
    x0 = np.asarray(s.x, dtype=float)
    base = x0 + tau * (lq.A @ x0)
    tBu = tau * lq.Bu
    tBv = tau * lq.Bv
    Rs1 = lq.R1 + lq.R1.T
    Rs2 = lq.R2 + lq.R2.T

    def pieces(z, y):
        u = z[: nt * du].reshape(nt, du)
        alpha = z[nt * du :].reshape(nt, nt).T
        v = y.reshape(nt, dv)
        w = split_from_alpha(alpha, p)
        X = base + u @ tBu.T + v @ tBv.T
        vals = next_value.value_batch(X, w.posteriors)
        gx, gp = _slice_grads(next_value, X, w.posteriors)
        return u, v, w, vals, gx, gp

    def grad_min(z, y):
        u, v, w, vals, gx, gp = pieces(z, y)
        d_u = w.lam[:, None] * (gx @ tBu + tau * (u @ Rs1))
        lruns = tau * (
            np.einsum("kd,de,ke->k", u, lq.R1, u) - np.einsum("kd,de,ke->k", v, lq.R2, v)
        )
        # dead atoms keep posterior p, so the posterior chain term drops out
        live = (w.lam >= LAMBDA_MIN)[:, None]
        centered = np.where(
            live, gp - np.einsum("ki,ki->k", gp, w.posteriors)[:, None], 0.0
        )
        d_alpha = p[None, :] * (vals[:, None] + centered + lruns[:, None])
        return np.concatenate([d_u.ravel(), d_alpha.T.ravel()])

    def grad_max(z, y):
        u, v, w, vals, gx, gp = pieces(z, y)
        d_v = w.lam[:, None] * (gx @ tBv - tau * (v @ Rs2))
        return d_v.ravel()

    return grad_min, grad_max


def _dual_lq_grads(s: DualInfoState, next_dual_value, spec: GameSpec, weight: float):
    lq = spec.lq
    tau = spec.step
    nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
    na = nt + 1
    box = spec.dual_box()
    p_hat = np.asarray(s.p_hat, dtype=float)
    x0 = np.asarray(s.x, dtype=float)
    base = x0 + tau * (lq.A @ x0)
    tBu = tau * lq.Bu
    tBv = tau * lq.Bv
    Rs1 = lq.R1 + lq.R1.T
    Rs2 = lq.R2 + lq.R2.T

    def pieces(z, y):
        v = z[: na * dv].reshape(na, dv)
        lam = z[na * dv : na * dv + na]
        free = z[na * dv + na :].reshape(nt, nt)
        lam_t = max(lam[-1], LAMBDA_MIN)
        last = (p_hat - lam[:nt] @ free) / lam_t
        u = y.reshape(na, du)
        X = base + u @ tBu.T + v @ tBv.T
        lruns = np.einsum("kd,de,ke->k", u, lq.R1, u) - np.einsum(
            "kd,de,ke->k", v, lq.R2, v
        )
        Q = np.vstack([free, last]) - tau * lruns[:, None]
        vals = next_dual_value.value_batch(X, Q)
        gx, gq = _slice_grads(next_dual_value, X, Q)
        # d objective / d last: value term of the eliminated atom plus penalty
        t_last = lam[-1] * gq[-1] + weight * _box_violation_grad(last, box)
        return v, lam, lam_t, free, last, u, vals, gx, gq, lruns, t_last

    def grad_min(z, y):
        v, lam, lam_t, free, last, u, vals, gx, gq, lruns, t_last = pieces(z, y)
        srow = gq.sum(axis=1)  # running cost shifts every dual coordinate
        d_v = lam[:, None] * (gx @ tBv + (tau * srow)[:, None] * (v @ Rs2))
        d_lam = np.concatenate([vals[:nt] - (free @ t_last) / lam_t, vals[-1:]])
        if lam[-1] > LAMBDA_MIN:
            d_lam[-1] -= (last @ t_last) / lam_t
        d_free = lam[:nt, None] * gq[:nt] - (lam[:nt, None] / lam_t) * t_last[None, :]
        return np.concatenate([d_v.ravel(), d_lam, d_free.ravel()])

    def grad_max(z, y):
        v, lam, lam_t, free, last, u, vals, gx, gq, lruns, t_last = pieces(z, y)
        srow = gq.sum(axis=1)
        d_u = lam[:, None] * (gx @ tBu - (tau * srow)[:, None] * (u @ Rs1))
        return d_u.ravel()

    return grad_min, grad_max
