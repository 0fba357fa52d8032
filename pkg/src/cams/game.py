"""Game definitions: dynamics, costs, stage transition, terminal values.

A game couples a controlled ODE ``xdot = f(x, u, v)`` with per-type running
costs ``l_i(u, v)`` and terminal costs ``g_i(x)``.  Player 1 knows the
realized type i, Player 2 only the prior.  Stages advance by a single
forward-Euler step of length `step`; the terminal value of the primal game
is linear in the belief, and the terminal value of the dual game is its
pointwise Fenchel conjugate (a max over types).

The homing-game instance (`make_hexner`) has two decoupled double
integrators, quadratic control costs and quadratic terminal tracking
penalties toward per-type targets.  Its linear-quadratic structure is
recorded on the spec so that oracles and the compiled stage kernel can
exploit it; everything also works through the generic callables.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalDomainError

__all__ = [
    "GameSpec",
    "InfoState",
    "DualInfoState",
    "LinearQuadratic",
    "euler_step",
    "terminal_value",
    "terminal_dual_value",
    "make_hexner",
    "hexner_config",
    "spec_from_config",
    "config_hash",
]


@dataclass
class LinearQuadratic:
    """Structured form for games with linear dynamics and quadratic costs.

    dynamics:      f(x,u,v) = A x + Bu u + Bv v
    running cost:  l_i(u,v) = u' R1 u - v' R2 v   (same for every type)
    terminal cost: g_i(x)   = x' G_i x + b_i' x + c_i
    """

    A: np.ndarray
    Bu: np.ndarray
    Bv: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    G: np.ndarray  # (I, d_x, d_x)
    b: np.ndarray  # (I, d_x)
    c: np.ndarray  # (I,)

    def terminal_all(self, x):
        """g_i(x) for all types; x may be (d_x,) or (n, d_x)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.einsum("idj,d,j->i", self.G, x, x) + self.b @ x + self.c
        quad = np.einsum("nd,idj,nj->ni", x, self.G, x)
        return quad + x @ self.b.T + self.c[None, :]

    def terminal_grad(self, x):
        """d g_i / dx, shape (I, d_x)."""
        x = np.asarray(x, dtype=float)
        return np.einsum("idj,j->id", self.G + np.swapaxes(self.G, 1, 2), x) + self.b


@dataclass
class GameSpec:
    """Full game definition.  All callables must be pure."""

    num_types: int
    horizon: float
    step: float
    state_dim: int
    u_dim: int
    v_dim: int
    u_box: np.ndarray  # (d_u, 2) rows [lo, hi]
    v_box: np.ndarray
    state_box: np.ndarray  # (d_x, 2)
    dynamics: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    running_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]  # -> (I,)
    terminal_cost: Callable[[np.ndarray], np.ndarray]  # -> (I,)
    prior: np.ndarray
    lq: LinearQuadratic | None = None
    config: dict | None = None  # source document, when built from JSON

    def __post_init__(self):
        self.u_box = _as_box(self.u_box, self.u_dim, "u_box")
        self.v_box = _as_box(self.v_box, self.v_dim, "v_box")
        self.state_box = _as_box(self.state_box, self.state_dim, "state_box")
        self.prior = np.asarray(self.prior, dtype=float)
        if self.num_types < 1:
            raise ConfigError("num_types must be a positive integer")
        if self.prior.shape != (self.num_types,):
            raise ConfigError("prior length must equal num_types")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > 1e-9:
            raise ConfigError("prior must be a probability vector")
        n = self.horizon / self.step
        if self.horizon <= 0 or self.step <= 0 or abs(n - round(n)) > 1e-9:
            raise ConfigError(
                f"horizon/step must be a positive integer, got {self.horizon}/{self.step}"
            )

    @property
    def num_stages(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def time_grid(self) -> np.ndarray:
        """Decision time stamps {0, tau, ..., T - tau} plus the terminal T."""
        return np.linspace(0.0, self.horizon, self.num_stages + 1)

    def on_grid(self, t: float, tol: float = 1e-9) -> bool:
        k = t / self.step
        return -tol <= t <= self.horizon + tol and abs(k - round(k)) <= tol

    def running_bound(self) -> float:
        """Crude bound c_l on |l_i| over the action boxes."""
        if self.lq is not None:
            u_max = np.max(np.abs(self.u_box), axis=1)
            v_max = np.max(np.abs(self.v_box), axis=1)
            return float(
                u_max @ np.abs(self.lq.R1) @ u_max + v_max @ np.abs(self.lq.R2) @ v_max
            )
        rng = np.random.default_rng(0)
        best = 0.0
        for _ in range(256):
            u = rng.uniform(self.u_box[:, 0], self.u_box[:, 1])
            v = rng.uniform(self.v_box[:, 0], self.v_box[:, 1])
            best = max(best, float(np.max(np.abs(self.running_cost(u, v)))))
        return best

    def terminal_range(self) -> tuple[float, float]:
        """Range of g_i over the state box (exact for quadratic g, sampled
        otherwise)."""
        lo, hi = self.state_box[:, 0], self.state_box[:, 1]
        if self.lq is not None:
            gmin, gmax = np.inf, -np.inf
            corners_1d = np.stack([lo, hi], axis=1)
            # coordinate-separable bound: evaluate per-type quadratic over the
            # box via interval arithmetic on x_d * x_j terms
            rng = np.random.default_rng(1)
            xs = rng.uniform(lo, hi, size=(4096, self.state_dim))
            xs = np.vstack([xs, corners_sample(corners_1d)])
            vals = self.lq.terminal_all(xs)
            gmin = float(vals.min())
            gmax = float(vals.max())
            return gmin, gmax
        rng = np.random.default_rng(1)
        xs = rng.uniform(lo, hi, size=(4096, self.state_dim))
        vals = np.array([self.terminal_cost(x) for x in xs])
        return float(vals.min()), float(vals.max())

    def dual_box(self) -> np.ndarray:
        """Containment box for dual vectors: achievable terminal payoffs
        widened by the accumulated running-cost range.  Cached; stage
        objectives read it on every evaluation."""
        cached = getattr(self, "_dual_box", None)
        if cached is None:
            gmin, gmax = self.terminal_range()
            slack = self.running_bound() * self.horizon
            lo, hi = gmin - slack, gmax + slack
            cached = np.tile([lo, hi], (self.num_types, 1)).astype(float)
            self._dual_box = cached
        return cached


def corners_sample(corners_1d: np.ndarray, limit: int = 4096) -> np.ndarray:
    """All (or up to `limit`) corner points of a box given per-dim [lo, hi]."""
    d = corners_1d.shape[0]
    if 2**d <= limit:
        idx = np.indices((2,) * d).reshape(d, -1).T
    else:
        rng = np.random.default_rng(2)
        idx = rng.integers(0, 2, size=(limit, d))
    return corners_1d[np.arange(d), idx]


@dataclass(frozen=True)
class InfoState:
    """Primal infostate (t, x, p): grid time, joint state, public belief."""

    t: float
    x: np.ndarray
    p: np.ndarray

    def validate(self, spec: GameSpec, tol: float = 1e-12):
        if not spec.on_grid(self.t):
            raise NumericalDomainError(f"t={self.t} is not on the time grid")
        if np.any(self.p < -tol) or abs(self.p.sum() - 1.0) > 1e-12:
            raise NumericalDomainError("belief p must lie on the simplex")


@dataclass(frozen=True)
class DualInfoState:
    """Dual infostate (t, x, p_hat); the dual vector is unconstrained."""

    t: float
    x: np.ndarray
    p_hat: np.ndarray

    def validate(self, spec: GameSpec):
        if not spec.on_grid(self.t):
            raise NumericalDomainError(f"t={self.t} is not on the time grid")


def euler_step(x, u, v, tau, spec: GameSpec) -> np.ndarray:
    """One forward-Euler stage transition x + tau * f(x, u, v)."""
    x = np.asarray(x, dtype=float)
    out = x + tau * np.asarray(spec.dynamics(x, u, v), dtype=float)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NumericalDomainError(
            f"euler_step produced a non-finite value at state coordinate {bad}"
        )
    return out


def terminal_value(x, p, spec: GameSpec) -> float:
    """Primal terminal value: sum_i p[i] g_i(x); linear in p."""
    g = np.asarray(spec.terminal_cost(np.asarray(x, dtype=float)), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericalDomainError("terminal_cost returned a non-finite value")
    return float(np.dot(np.asarray(p, dtype=float), g))


def terminal_dual_value(x, p_hat, spec: GameSpec) -> tuple[float, int]:
    """Dual terminal value max_i (p_hat[i] - g_i(x)) and the achieving index
    (ties broken toward the lowest index)."""
    g = np.asarray(spec.terminal_cost(np.asarray(x, dtype=float)), dtype=float)
    vals = np.asarray(p_hat, dtype=float) - g
    k = int(np.argmax(vals))  # np.argmax returns the first maximizer
    return float(vals[k]), k


# ---------------------------------------------------------------------------
# Homing game instance
# ---------------------------------------------------------------------------


class _HexnerDynamics:
    """Two decoupled double integrators (picklable callable)."""

    def __init__(self, A, Bu, Bv):
        self.A, self.Bu, self.Bv = A, Bu, Bv

    def __call__(self, x, u, v):
        return self.A @ x + self.Bu @ u + self.Bv @ v


class _HexnerRunningCost:
    def __init__(self, R1, R2, num_types, scale):
        self.R1, self.R2 = R1, R2
        self.num_types = num_types
        self.scale = scale

    def __call__(self, u, v):
        val = self.scale * (u @ self.R1 @ u - v @ self.R2 @ v)
        return np.full(self.num_types, val)


class _HexnerTerminalCost:
    def __init__(self, lq: LinearQuadratic):
        self.lq = lq

    def __call__(self, x):
        return self.lq.terminal_all(x)


def _check_psd(M, name, strict):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
        raise ConfigError(f"{name} must be a symmetric square matrix")
    eig = np.linalg.eigvalsh(M)
    if strict and eig.min() <= 0:
        raise ConfigError(f"{name} must be positive definite")
    if not strict and eig.min() < -1e-12:
        raise ConfigError(f"{name} must be positive semidefinite")
    return M


def make_hexner(
    targets=((1.0, 0.0), (-1.0, 0.0)),
    R1=None,
    R2=None,
    K1=None,
    K2=None,
    horizon=1.0,
    step=0.25,
    prior=None,
    pos_dim=2,
    u_box=None,
    v_box=None,
    pos_range=(-2.0, 2.0),
    vel_range=(-2.0, 2.0),
    dynamics_scale=1.0,
    running_scale=1.0,
    flow="euler",
    config=None,
) -> GameSpec:
    """Homing game: P1 steers toward a target unknown to P2 while keeping
    P2 away from it.

    Each player's state is position + velocity in `pos_dim` dimensions; the
    joint state stacks [pos1, vel1, pos2, vel2].  Per-type terminal cost is
    (pos1 - theta_i)' K1 (pos1 - theta_i) - (pos2 - theta_i)' K2 (pos2 - theta_i)
    and the running cost u'R1u - v'R2v is type-independent.  `dynamics_scale`
    and `running_scale` exist so degenerate variants (f = 0 or l = 0) reuse
    this construction.

    flow="exact" replaces the input matrices so that one forward-Euler step
    of length `step` reproduces the constant-control flow of the double
    integrator over that interval (position picks up step^2/2 * u).  Use it
    for one-shot instances (step = horizon), where a plain Euler step would
    never propagate control into position and the game degenerates.
    """
    m = int(pos_dim)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[1] != m:
        raise ConfigError(f"targets must be points in R^{m}")
    num_types = targets.shape[0]
    eye = np.eye(m)
    R1 = eye.copy() if R1 is None else _check_psd(R1, "R1", strict=True)
    R2 = eye.copy() if R2 is None else _check_psd(R2, "R2", strict=True)
    K1 = eye.copy() if K1 is None else _check_psd(K1, "K1", strict=False)
    K2 = eye.copy() if K2 is None else _check_psd(K2, "K2", strict=False)

    d_x = 4 * m
    A = np.zeros((d_x, d_x))
    A[0:m, m : 2 * m] = eye  # pos1' = vel1
    A[2 * m : 3 * m, 3 * m : 4 * m] = eye  # pos2' = vel2
    Bu = np.zeros((d_x, m))
    Bu[m : 2 * m] = eye
    Bv = np.zeros((d_x, m))
    Bv[3 * m : 4 * m] = eye
    A *= dynamics_scale
    Bu *= dynamics_scale
    Bv *= dynamics_scale
    if flow == "exact":
        # exp(A s) = I + A s here (velocity feeds position, nothing feeds
        # velocity), so the averaged input matrix has a closed form
        if np.any(A @ A):
            raise ConfigError("exact flow requires the drift to be nilpotent")
        Bu = Bu + 0.5 * step * (A @ Bu)
        Bv = Bv + 0.5 * step * (A @ Bv)
    elif flow != "euler":
        raise ConfigError(f"unknown flow {flow!r}")

    G = np.zeros((num_types, d_x, d_x))
    b = np.zeros((num_types, d_x))
    c = np.zeros(num_types)
    for i, th in enumerate(targets):
        G[i, 0:m, 0:m] = K1
        G[i, 2 * m : 3 * m, 2 * m : 3 * m] = -K2
        b[i, 0:m] = -2.0 * K1 @ th
        b[i, 2 * m : 3 * m] = 2.0 * K2 @ th
        c[i] = th @ K1 @ th - th @ K2 @ th

    lq = LinearQuadratic(
        A=A,
        Bu=Bu,
        Bv=Bv,
        R1=running_scale * R1,
        R2=running_scale * R2,
        G=G,
        b=b,
        c=c,
    )

    if prior is None:
        prior = np.full(num_types, 1.0 / num_types)
    prior = np.asarray(prior, dtype=float)
    u_box = np.tile([-3.0, 3.0], (m, 1)) if u_box is None else np.asarray(u_box, float)
    v_box = np.tile([-3.0, 3.0], (m, 1)) if v_box is None else np.asarray(v_box, float)
    if config is None:
        config = {
            "game": "hexner",
            "pos_dim": m,
            "targets": targets.tolist(),
            "R1": R1.tolist(),
            "R2": R2.tolist(),
            "K1": K1.tolist(),
            "K2": K2.tolist(),
            "horizon": float(horizon),
            "step": float(step),
            "prior": prior.tolist(),
            "u_box": u_box.tolist(),
            "v_box": v_box.tolist(),
            "pos_range": list(map(float, pos_range)),
            "vel_range": list(map(float, vel_range)),
            "dynamics_scale": float(dynamics_scale),
            "running_scale": float(running_scale),
            "flow": str(flow),
        }
    state_box = np.empty((d_x, 2))
    state_box[0:m] = pos_range
    state_box[m : 2 * m] = vel_range
    state_box[2 * m : 3 * m] = pos_range
    state_box[3 * m : 4 * m] = vel_range

    return GameSpec(
        num_types=num_types,
        horizon=float(horizon),
        step=float(step),
        state_dim=d_x,
        u_dim=m,
        v_dim=m,
        u_box=u_box,
        v_box=v_box,
        state_box=state_box,
        dynamics=_HexnerDynamics(A, Bu, Bv),
        running_cost=_HexnerRunningCost(running_scale * R1, running_scale * R2, num_types, 1.0),
        terminal_cost=_HexnerTerminalCost(lq),
        prior=prior,
        lq=lq,
        config=config,
    )


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------


def hexner_config(**overrides) -> dict:
    """Default homing-game config document (see configs/schema.json)."""
    cfg = {
        "game": "hexner",
        "pos_dim": 2,
        "targets": [[1.0, 0.0], [-1.0, 0.0]],
        "R1": [[1.0, 0.0], [0.0, 1.0]],
        "R2": [[1.0, 0.0], [0.0, 1.0]],
        "K1": [[1.0, 0.0], [0.0, 1.0]],
        "K2": [[1.0, 0.0], [0.0, 1.0]],
        "horizon": 1.0,
        "step": 0.25,
        "prior": [0.5, 0.5],
        "u_box": [[-3.0, 3.0], [-3.0, 3.0]],
        "v_box": [[-3.0, 3.0], [-3.0, 3.0]],
        "pos_range": [-2.0, 2.0],
        "vel_range": [-2.0, 2.0],
        "dynamics_scale": 1.0,
        "running_scale": 1.0,
        "flow": "euler",
    }
    cfg.update(overrides)
    return cfg


def spec_from_config(cfg: dict) -> GameSpec:
    """Build a GameSpec from a validated config document."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = cfg.get("game", "hexner")
    if kind != "hexner":
        raise ConfigError(f"unknown game kind {kind!r}")
    known = {
        "pos_dim",
        "targets",
        "R1",
        "R2",
        "K1",
        "K2",
        "horizon",
        "step",
        "prior",
        "u_box",
        "v_box",
        "pos_range",
        "vel_range",
        "dynamics_scale",
        "running_scale",
        "flow",
    }
    extra = set(cfg) - known - {"game", "dsgda", "value_fit", "solve"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    kwargs = {k: cfg[k] for k in known if k in cfg}
    try:
        return make_hexner(config=cfg, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad game config: {exc}") from exc


def config_hash(cfg: dict | None) -> str:
    """Stable hash of a config document (canonical JSON, sorted keys)."""
    doc = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _as_box(box, dim, name):
    box = np.asarray(box, dtype=float)
    if box.shape != (dim, 2):
        raise ConfigError(f"{name} must have shape ({dim}, 2)")
    if np.any(box[:, 0] > box[:, 1]):
        raise ConfigError(f"{name} has lower > upper in some coordinate")
    return box
