"""Constrained minimax solving by doubly smoothed gradient descent-ascent.

Solves min_{x in X} max_{y in Y} F(x, y) where X and Y are products of boxes
and probability simplices and F may be nonconvex-nonconcave.  Both sides take
projected gradient steps augmented with a proximal pull toward slowly moving
anchor points (the double smoothing); the anchors track the iterates with
averaging rates beta and mu.  The stationarity residual
||x_{t+1}-x_t||/c + ||y_{t+1}-y_t||/a drives the stopping rule.

Because only stationarity is guaranteed, the solver runs from several starts
and keeps the candidate whose worst case, re-measured by a post-hoc projected
gradient ascent over y from multiple starts, is smallest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, SolverFailureError
from .simplex import project_simplex, sample_simplex

__all__ = [
    "Domain",
    "MinimaxProblem",
    "DsgdaConfig",
    "DsgdaResult",
    "dsgda_solve",
    "dsgda_run",
    "draw_starts",
    "check_gradients",
]

_FD_H = 1e-5


class Domain:
    """Product of box and simplex blocks; projection acts blockwise.

    Blocks are appended with add_box / add_simplex, which return the slice of
    the flat variable vector the block occupies (stage builders use these to
    unpack solutions).
    """

    def __init__(self):
        self._blocks: list[tuple[str, slice, object]] = []
        self.dim = 0

    @classmethod
    def box(cls, box) -> "Domain":
        d = cls()
        d.add_box(box)
        return d

    def add_box(self, box) -> slice:
        box = np.asarray(box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
            raise ConfigError("box block must be rows of [lo, hi] with lo <= hi")
        sl = slice(self.dim, self.dim + box.shape[0])
        self._blocks.append(("box", sl, box))
        self.dim += box.shape[0]
        return sl

    def add_simplex(self, n: int) -> slice:
        if n < 1:
            raise ConfigError("simplex block needs n >= 1")
        sl = slice(self.dim, self.dim + n)
        self._blocks.append(("simplex", sl, n))
        self.dim += n
        return sl

    @property
    def blocks(self):
        return tuple(self._blocks)

    def project(self, vec) -> np.ndarray:
        out = np.array(vec, dtype=float)
        for kind, sl, payload in self._blocks:
            if kind == "box":
                np.clip(out[sl], payload[:, 0], payload[:, 1], out=out[sl])
            else:
                out[sl] = project_simplex(out[sl])
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(self.dim)
        for kind, sl, payload in self._blocks:
            if kind == "box":
                out[sl] = rng.uniform(payload[:, 0], payload[:, 1])
            else:
                out[sl] = sample_simplex(rng, payload)
        return out

    def center(self) -> np.ndarray:
        out = np.empty(self.dim)
        for kind, sl, payload in self._blocks:
            if kind == "box":
                out[sl] = 0.5 * (payload[:, 0] + payload[:, 1])
            else:
                out[sl] = 1.0 / payload
        return out

    def contains(self, vec, tol=1e-9) -> bool:
        vec = np.asarray(vec, dtype=float)
        for kind, sl, payload in self._blocks:
            part = vec[sl]
            if kind == "box":
                if np.any(part < payload[:, 0] - tol) or np.any(part > payload[:, 1] + tol):
                    return False
            else:
                if np.any(part < -tol) or abs(part.sum() - 1.0) > tol:
                    return False
        return True


@dataclass
class MinimaxProblem:
    """min over min_domain, max over max_domain of a pure objective.

    Gradients are optional; central finite differences (h=1e-5) fill in when
    absent.  Supplied gradients must agree with finite differences to 1e-4
    relative error on interior points.
    """

    objective: Callable[[np.ndarray, np.ndarray], float]
    min_domain: Domain
    max_domain: Domain
    grad_min: Callable | None = None
    grad_max: Callable | None = None
    name: str = ""

    def value(self, x, y) -> float:
        return float(self.objective(x, y))

    def gx(self, x, y) -> np.ndarray:
        if self.grad_min is not None:
            return np.asarray(self.grad_min(x, y), dtype=float)
        return _fd_grad(lambda q: self.objective(q, y), x)

    def gy(self, x, y) -> np.ndarray:
        if self.grad_max is not None:
            return np.asarray(self.grad_max(x, y), dtype=float)
        return _fd_grad(lambda q: self.objective(x, q), y)


def _fd_grad(f, at, h=_FD_H):
    at = np.asarray(at, dtype=float)
    g = np.empty_like(at)
    for d in range(at.size):
        e = np.zeros_like(at)
        e[d] = h
        g[d] = (f(at + e) - f(at - e)) / (2.0 * h)
    return g


@dataclass
class DsgdaConfig:
    """Hyperparameters.  Projection onto the feasible blocks bounds every
    step, so the fixed step sizes stay usable even where the objective is
    locally stiff (the dual stage's barycenter penalty)."""

    c: float = 0.05
    a: float = 0.05
    r1: float = 1.0
    r2: float = 1.0
    beta: float = 0.9
    mu: float = 0.9
    max_iters: int = 2000
    eps_stat: float = 1e-5
    restarts: int = 4
    seed: int = 0
    refine_starts: int = 4
    refine_iters: int = 400

    def __post_init__(self):
        if min(self.c, self.a, self.r1, self.r2) <= 0:
            raise ConfigError("dsgda steps and smoothing strengths must be positive")
        if not (0 < self.beta <= 1 and 0 < self.mu <= 1):
            raise ConfigError("dsgda averaging rates must lie in (0, 1]")
        if self.max_iters < 1 or self.restarts < 1 or self.eps_stat <= 0:
            raise ConfigError("dsgda iteration/restart/tolerance settings invalid")

    @classmethod
    def from_dict(cls, doc: dict) -> "DsgdaConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown dsgda keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            k: (bool(v) if isinstance(v, (bool, np.bool_)) else type(v)(v))
            for k, v in self.__dict__.items()
        }


@dataclass
class DsgdaResult:
    x: np.ndarray
    y: np.ndarray
    value: float
    diagnostics: dict


def draw_starts(min_domain, max_domain, cfg: DsgdaConfig, rng, warm=None, extra_starts=()):
    """Assemble the start list and refinement y-draws for one solve.

    Start order: warm (projected) or the domain center, then any given
    extras (projected), then random fills up to cfg.restarts.  The refine
    draws come after all starts so aborted restarts do not shift the
    stream.  Split out so batch front ends can pre-draw identical starts
    for every backend.
    """
    starts: list[tuple[str, np.ndarray, np.ndarray]] = []
    if warm is not None:
        starts.append(("warm", min_domain.project(warm[0]), max_domain.project(warm[1])))
    else:
        starts.append(("center", min_domain.center(), max_domain.center()))
    for x0, y0 in extra_starts:
        starts.append(("given", min_domain.project(x0), max_domain.project(y0)))
    while len(starts) < max(cfg.restarts, len(starts)):
        starts.append(("random", min_domain.sample(rng), max_domain.sample(rng)))
    refine_rand = [max_domain.sample(rng) for _ in range(max(cfg.refine_starts - 1, 0))]
    return starts, refine_rand


def dsgda_solve(prob: MinimaxProblem, cfg: DsgdaConfig, warm=None, extra_starts=()) -> DsgdaResult:
    """Run DS-GDA from several starts and return the best refined candidate.

    warm, when given, replaces the neutral center start; extra_starts are
    additional (x0, y0) pairs tried before random ones.  Same seed and config
    give a bit-identical iterate sequence.
    """
    rng = np.random.default_rng(cfg.seed)
    starts, refine_rand = draw_starts(
        prob.min_domain, prob.max_domain, cfg, rng, warm, extra_starts
    )
    return dsgda_run(prob, cfg, starts, refine_rand)


def dsgda_run(prob: MinimaxProblem, cfg: DsgdaConfig, starts, refine_rand) -> DsgdaResult:
    """Deterministic part of the solve: iterate every start, refine, pick."""
    c = cfg.c
    a = cfg.a
    candidates = []
    restart_info = []
    for kind, x0, y0 in starts:
        out = _run_restart(prob, cfg, c, a, x0, y0)
        info = {"start": kind, "iters": out["iters"], "residual": out["residual"],
                "aborted": out["aborted"], "value": out["value"]}
        restart_info.append(info)
        if not out["aborted"]:
            candidates.append((out["x"], out["y"]))

    if not candidates:
        raise SolverFailureError(
            f"all {len(starts)} restarts aborted on non-finite values"
            + (f" in {prob.name}" if prob.name else "")
        )

    best = None
    refined_vals = []
    for x_c, y_c in candidates:
        val, y_ref = _refine_max(prob, x_c, [y_c] + refine_rand, a, cfg)
        refined_vals.append(val)
        if best is None or val < best[0]:
            best = (val, x_c, y_ref)

    value, x_star, y_star = best
    diagnostics = {
        "restarts": restart_info,
        "refined_values": [float(v) for v in refined_vals],
        "chosen": int(np.argmin(refined_vals)),
    }
    return DsgdaResult(x=x_star, y=y_star, value=float(value), diagnostics=diagnostics)


def _run_restart(prob, cfg, c, a, x0, y0):
    x = np.array(x0, dtype=float)
    y = np.array(y0, dtype=float)
    z = x.copy()
    w = y.copy()
    resid = np.inf
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        gx = prob.gx(x, y)
        if not np.all(np.isfinite(gx)):
            return {"aborted": True, "iters": iters, "residual": float("nan"),
                    "value": float("nan"), "x": x, "y": y}
        x_new = prob.min_domain.project(x - c * (gx + cfg.r1 * (x - z)))
        gy = prob.gy(x_new, y)
        if not np.all(np.isfinite(gy)):
            return {"aborted": True, "iters": iters, "residual": float("nan"),
                    "value": float("nan"), "x": x, "y": y}
        y_new = prob.max_domain.project(y + a * (gy - cfg.r2 * (y - w)))
        z += cfg.beta * (x_new - z)
        w += cfg.mu * (y_new - w)
        resid = np.linalg.norm(x_new - x) / c + np.linalg.norm(y_new - y) / a
        x, y = x_new, y_new
        if resid <= cfg.eps_stat:
            break
    val = prob.value(x, y)
    if not np.isfinite(val):
        return {"aborted": True, "iters": iters, "residual": float(resid),
                "value": float("nan"), "x": x, "y": y}
    return {"aborted": False, "iters": iters, "residual": float(resid),
            "value": float(val), "x": x, "y": y}


def _refine_max(prob, x, y_starts, step, cfg):
    """Projected gradient ascent over y with x fixed; returns the best value
    seen along all trajectories and the y achieving it."""
    best_v = -np.inf
    best_y = None
    for y0 in y_starts:
        y = prob.max_domain.project(y0)
        v = prob.value(x, y)
        if np.isfinite(v) and v > best_v:
            best_v, best_y = v, y.copy()
        for _ in range(cfg.refine_iters):
            g = prob.gy(x, y)
            if not np.all(np.isfinite(g)):
                break
            y_new = prob.max_domain.project(y + step * g)
            moved = np.linalg.norm(y_new - y)
            y = y_new
            v = prob.value(x, y)
            if np.isfinite(v) and v > best_v:
                best_v, best_y = v, y.copy()
            if moved / step <= cfg.eps_stat:
                break
    if best_y is None:
        # every start was immediately non-finite; keep the first raw start
        best_y = prob.max_domain.project(y_starts[0])
        best_v = prob.value(x, best_y)
    return float(best_v), best_y


def check_gradients(prob: MinimaxProblem, rng: np.random.Generator, n: int = 20) -> float:
    """Max relative error of supplied gradients vs central differences at
    random interior points.  Used by tests to enforce the 1e-4 contract."""
    worst = 0.0
    for _ in range(n):
        x = prob.min_domain.sample(rng)
        y = prob.max_domain.sample(rng)
        gx = prob.gx(x, y)
        gy = prob.gy(x, y)
        fx = _fd_grad(lambda q: prob.objective(q, y), x)
        fy = _fd_grad(lambda q: prob.objective(x, q), y)
        den = max(np.linalg.norm(fx), np.linalg.norm(fy), 1.0)
        worst = max(
            worst,
            float(np.linalg.norm(gx - fx) / den),
            float(np.linalg.norm(gy - fy) / den),
        )
    return worst
