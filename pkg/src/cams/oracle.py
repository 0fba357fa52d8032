"""Analytical ground truth for the homing game.

Because the two players' dynamics are decoupled and the cost separates, the
complete-information game per type reduces to two independent finite-horizon
LQR tracking problems; the game value at a vertex belief is the difference of
the two tracking values.  Everything here is built on that structure:

* continuous-time Riccati solutions (RK4, backward) and their feedback gains;
* discrete-time Riccati recursions for the stage game actually induced by a
  forward-Euler transition with stage cost tau*l (and, optionally, the
  zero-order-hold discretization used to validate the continuous solution);
* the mean-target certainty-equivalent strategy for an uninformed player;
* a reveal-time scan: the expected cost of "track the mean target until s,
  then track the true target" against the uninformed opponent's best
  response, which is the same family delayed by a reaction lag.  The scan's
  minimizer is the revelation time, and its minimum is the game value of the
  family.

The lag defaults to one stage: with simultaneous moves the opponent can react
to a revealing action only one step later.  With zero lag and symmetric
penalties the scan is exactly flat (the two tracking terms cancel), so no
interior reveal time exists; the one-stage lag is what the time-discretized
game actually imposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError
from .game import GameSpec

__all__ = [
    "RiccatiSolution",
    "solve_riccati",
    "discrete_riccati",
    "HexnerOracle",
    "complete_info_value",
    "complete_info_action",
    "nonrevealing_action",
    "revelation_time",
    "analytic_game_value",
    "analytic_p1_strategy",
    "analytic_p2_strategy",
]


@dataclass
class RiccatiSolution:
    """Backward Riccati solution on a uniform time grid with gains
    L(t) = R^{-1} B' P(t); the optimal feedback is a = -L (s - s_ref)."""

    times: np.ndarray  # (n,) ascending, 0 .. T
    P: np.ndarray  # (n, d, d)
    L: np.ndarray  # (n, m, d)

    def P_at(self, t: float) -> np.ndarray:
        return _interp_stack(self.times, self.P, t)

    def L_at(self, t: float) -> np.ndarray:
        return _interp_stack(self.times, self.L, t)


def _interp_stack(times, stack, t):
    t = float(t)
    if t <= times[0]:
        return stack[0]
    if t >= times[-1]:
        return stack[-1]
    j = int(np.searchsorted(times, t)) - 1
    w = (t - times[j]) / (times[j + 1] - times[j])
    return (1 - w) * stack[j] + w * stack[j + 1]


def solve_riccati(A, B, R, K, T, dt) -> RiccatiSolution:
    """Integrate Pdot = P B R^-1 B' P - A'P - PA backward from P(T) = K.

    RK4 with fixed step; each stage result is symmetrized to suppress drift.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    R = np.asarray(R, dtype=float)
    K = np.asarray(K, dtype=float)
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise ConfigError("control penalty R must be positive definite")
    if dt <= 0:
        raise ConfigError("riccati dt must be positive")
    BRB = B @ np.linalg.solve(R, B.T)

    def pdot(P):
        return P @ BRB @ P - A.T @ P - P @ A

    n = int(np.ceil(T / dt - 1e-12))
    times = np.linspace(0.0, T, n + 1)
    P = np.empty((n + 1, K.shape[0], K.shape[1]))
    P[n] = 0.5 * (K + K.T)
    for j in range(n, 0, -1):
        h = times[j] - times[j - 1]
        p = P[j]
        k1 = pdot(p)
        k2 = pdot(p - 0.5 * h * k1)
        k3 = pdot(p - 0.5 * h * k2)
        k4 = pdot(p - h * k3)
        nxt = p - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        P[j - 1] = 0.5 * (nxt + nxt.T)
    L = np.einsum("ij,njk->nik", np.linalg.solve(R, B.T), P)
    return RiccatiSolution(times=times, P=P, L=L)


def discrete_riccati(A, B, R, K, T, tau, zoh=False):
    """Backward recursion for the discrete tracking game.

    zoh=False matches the forward-Euler stage transition x + tau(Ax + Bu)
    with stage cost tau u'Ru (the game the solver discretizes); zoh=True uses
    the exact zero-order-hold discretization, converging to the continuous
    value at O(tau^2) for validation.  Returns (times, P, F) with the control
    at stage k being -F[k] (s - s_ref).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    R = np.asarray(R, dtype=float)
    K = np.asarray(K, dtype=float)
    d, m = B.shape
    n = int(round(T / tau))
    if abs(n * tau - T) > 1e-9 or n < 1:
        raise ConfigError("T must be an integer multiple of tau")
    if zoh:
        blk = np.zeros((d + m, d + m))
        blk[:d, :d] = A
        blk[:d, d:] = B
        M = expm(blk * tau)
        Ad, Bd = M[:d, :d], M[:d, d:]
    else:
        Ad = np.eye(d) + tau * A
        Bd = tau * B
    Rd = tau * R
    times = np.linspace(0.0, T, n + 1)
    P = np.empty((n + 1, d, d))
    F = np.empty((n, m, d))
    P[n] = 0.5 * (K + K.T)
    for k in range(n - 1, -1, -1):
        S = Rd + Bd.T @ P[k + 1] @ Bd
        F[k] = np.linalg.solve(S, Bd.T @ P[k + 1] @ Ad)
        Pk = Ad.T @ P[k + 1] @ (Ad - Bd @ F[k])
        P[k] = 0.5 * (Pk + Pk.T)
    return times, P, F


class HexnerOracle:
    """Precomputed Riccati data for one homing-game instance.

    Passed as the `params` argument of the free oracle functions.
    """

    def __init__(self, spec: GameSpec, dt=None, lag=None):
        cfg = spec.config
        if not cfg or cfg.get("game") != "hexner" or spec.lq is None:
            raise ConfigError("oracle needs a homing-game spec")
        if cfg.get("flow", "euler") != "euler":
            # exact-flow variants change Bu/Bv; these formulas assume the
            # plain Euler discretization of the double integrator
            raise ConfigError("oracle formulas cover the euler-flow instance only")
        self.spec = spec
        self.m = spec.u_dim
        self.targets = np.asarray(cfg["targets"], dtype=float)
        self.T = spec.horizon
        self.tau = spec.step
        self.prior = spec.prior
        self.lag = self.tau if lag is None else float(lag)
        m = self.m
        lq = spec.lq
        # per-player blocks of the joint system
        self.A1 = lq.A[: 2 * m, : 2 * m]
        self.B1 = lq.Bu[: 2 * m]
        self.A2 = lq.A[2 * m :, 2 * m :]
        self.B2 = lq.Bv[2 * m :]
        self.R1 = lq.R1
        self.R2 = lq.R2
        K1 = lq.G[0][:m, :m]
        K2 = -lq.G[0][2 * m : 3 * m, 2 * m : 3 * m]
        self.K1_tilde = np.zeros((2 * m, 2 * m))
        self.K1_tilde[:m, :m] = K1
        self.K2_tilde = np.zeros((2 * m, 2 * m))
        self.K2_tilde[:m, :m] = K2
        dt = self.tau / 100.0 if dt is None else float(dt)
        if dt > self.tau / 10.0 + 1e-12:
            raise ConfigError("riccati dt must be at most tau/10")
        self.ric1 = solve_riccati(self.A1, self.B1, self.R1, self.K1_tilde, self.T, dt)
        self.ric2 = solve_riccati(self.A2, self.B2, self.R2, self.K2_tilde, self.T, dt)
        self.dsc1 = discrete_riccati(self.A1, self.B1, self.R1, self.K1_tilde, self.T, self.tau)
        self.dsc2 = discrete_riccati(self.A2, self.B2, self.R2, self.K2_tilde, self.T, self.tau)

    # -- geometry helpers ---------------------------------------------------

    def embed(self, theta) -> np.ndarray:
        """Position target as a full (pos, vel) reference with zero velocity."""
        return np.concatenate([np.asarray(theta, dtype=float), np.zeros(self.m)])

    def split_state(self, x):
        x = np.asarray(x, dtype=float)
        return x[: 2 * self.m], x[2 * self.m :]

    def mean_target(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.targets

    # -- per-player tracking values ------------------------------------------

    def tracking_value(self, player: int, t, s, theta) -> float:
        ric = self.ric1 if player == 1 else self.ric2
        e = np.asarray(s, dtype=float) - self.embed(theta)
        return float(e @ ric.P_at(t) @ e)

    def tracking_action(self, player: int, t, s, theta) -> np.ndarray:
        ric = self.ric1 if player == 1 else self.ric2
        e = np.asarray(s, dtype=float) - self.embed(theta)
        return -ric.L_at(t) @ e

    def stage_index(self, t) -> int:
        k = int(round(t / self.tau))
        if abs(k * self.tau - t) > 1e-9 or not (0 <= k <= len(self.dsc1[0]) - 1):
            raise ConfigError(f"t={t} is not on the stage grid")
        return k

    def discrete_tracking_value(self, player: int, t, s, theta) -> float:
        times, P, _ = self.dsc1 if player == 1 else self.dsc2
        e = np.asarray(s, dtype=float) - self.embed(theta)
        return float(e @ P[self.stage_index(t)] @ e)

    def discrete_vertex_value(self, t, x, type_i: int) -> float:
        """Exact value of the discrete-stage complete-information game."""
        s1, s2 = self.split_state(x)
        th = self.targets[type_i]
        return self.discrete_tracking_value(1, t, s1, th) - self.discrete_tracking_value(
            2, t, s2, th
        )

    def discrete_tracking_action(self, player: int, t, s, theta) -> np.ndarray:
        times, P, F = self.dsc1 if player == 1 else self.dsc2
        k = self.stage_index(t)
        e = np.asarray(s, dtype=float) - self.embed(theta)
        return -F[k] @ e


def complete_info_value(t, x, type_i, params: HexnerOracle) -> float:
    """Game value when the type is common knowledge (continuous time)."""
    s1, s2 = params.split_state(x)
    th = params.targets[type_i]
    return params.tracking_value(1, t, s1, th) - params.tracking_value(2, t, s2, th)


def complete_info_action(t, x, type_i, player, params: HexnerOracle) -> np.ndarray:
    s1, s2 = params.split_state(x)
    th = params.targets[type_i]
    return params.tracking_action(player, t, s1 if player == 1 else s2, th)


def nonrevealing_action(t, x, p, player, params: HexnerOracle) -> np.ndarray:
    """Certainty-equivalent feedback toward the belief-mean target."""
    s1, s2 = params.split_state(x)
    th = params.mean_target(p)
    return params.tracking_action(player, t, s1 if player == 1 else s2, th)


def revelation_scan(params: HexnerOracle, p=None, lag=None, resolution=1e-3):
    """Expected family cost J(s) over candidate reveal times s.

    J(s) = h1(s) - h2(min(s + lag, T)) up to an s-independent constant; the
    informed player reveals at s and the opponent corrects `lag` later.
    """
    p = params.prior if p is None else np.asarray(p, dtype=float)
    lag = params.lag if lag is None else float(lag)
    T = params.T
    s_grid = np.linspace(0.0, T, int(round(1.0 / resolution)) + 1)
    mean = p @ params.targets
    offs = np.array([params.embed(mean - th) for th in params.targets])

    def h(ric, times):
        out = np.empty(len(times))
        for a, s in enumerate(times):
            P = ric.P_at(s)
            out[a] = float(np.einsum("id,de,ie,i->", offs, P, offs, p))
        return out

    h1 = h(params.ric1, s_grid)
    h2 = h(params.ric2, np.minimum(s_grid + lag, T))
    return s_grid, h1 - h2


def revelation_time(params: HexnerOracle, p=None, lag=None, resolution=1e-3) -> float:
    """Smallest minimizer of the reveal-time scan (ties within 1e-12 of the
    minimum collapse to the earliest time)."""
    s_grid, J = revelation_scan(params, p=p, lag=lag, resolution=resolution)
    scale = max(np.ptp(J), 1.0)
    winners = np.flatnonzero(J <= J.min() + 1e-12 * scale)
    return float(s_grid[winners[0]])


def analytic_game_value(t, x, p, params: HexnerOracle, mode="euler", lag=None) -> float:
    """Value of the reveal-at-the-best-time family from infostate (t, x, p).

    mode="euler" prices the discrete stage game (what the numerical solver
    discretizes); mode="continuous" uses the continuous-time Riccati data.
    """
    p = np.asarray(p, dtype=float)
    mean = p @ params.targets
    s1, s2 = params.split_state(x)
    lag = params.lag if lag is None else float(lag)
    if mode == "euler":
        base = params.discrete_tracking_value(1, t, s1, mean) - params.discrete_tracking_value(
            2, t, s2, mean
        )
        k0 = params.stage_index(t)
        times = params.dsc1[0]
        s_grid = times[k0:]
        offs = np.array([params.embed(mean - th) for th in params.targets])
        lag_steps = int(round(lag / params.tau))
        best = np.inf
        for j, s in enumerate(s_grid):
            k = k0 + j
            k_resp = min(k + lag_steps, len(times) - 1)
            h1 = float(np.einsum("id,de,ie,i->", offs, params.dsc1[1][k], offs, p))
            h2 = float(np.einsum("id,de,ie,i->", offs, params.dsc2[1][k_resp], offs, p))
            best = min(best, h1 - h2)
        return base + best
    if mode == "continuous":
        base = params.tracking_value(1, t, s1, mean) - params.tracking_value(2, t, s2, mean)
        s_grid, J = revelation_scan(params, p=p, lag=lag)
        keep = s_grid >= t - 1e-12
        return base + float(J[keep].min())
    raise ConfigError(f"unknown oracle mode {mode!r}")


def analytic_p1_strategy(t, x, p, type_i, params: HexnerOracle, t_r=None) -> np.ndarray:
    """Mean-target feedback before the revelation time, true-target after."""
    if t_r is None:
        t_r = revelation_time(params, p=p)
    if t < t_r:
        return nonrevealing_action(t, x, p, 1, params)
    return complete_info_action(t, x, type_i, 1, params)


def analytic_p2_strategy(t, x, p, type_i, params: HexnerOracle, t_r=None, lag=None) -> np.ndarray:
    """Opponent best response to the reveal-at-t_r family: mean tracking until
    the reveal becomes observable (one lag later), then true-target tracking."""
    if t_r is None:
        t_r = revelation_time(params, p=p)
    lag = params.lag if lag is None else float(lag)
    if t < t_r + lag:
        return nonrevealing_action(t, x, p, 2, params)
    return complete_info_action(t, x, type_i, 2, params)
