"""Stage-solve kernels: a compiled core with a pure-python fallback.

The hot path of a solve is thousands of independent stage minimax
problems per time slice.  The compiled extension runs the full DS-GDA
loop in C for the linear quadratic stage family (terminal or
two-hidden-layer fitted next values) and sweeps the collocation points
in parallel with OpenMP.  The python backend feeds the same pre-drawn
starts through the generic solver, so the two backends produce the same
candidates up to floating-point round-off; parity is test-enforced.

Backend selection, checked once per batch call:

    CAMS_KERNEL=auto      compiled when available and applicable (default)
    CAMS_KERNEL=compiled  require the extension; error when it cannot run
    CAMS_KERNEL=python    force the fallback
"""

from __future__ import annotations

import os

import numpy as np

from ..dsgda import DsgdaConfig
from ..errors import ConfigError
from ..stages import StageConfig, _check_stage_time, dual_domains, primal_domains
from ..value import TerminalDualSlice, TerminalPrimalSlice, ValueSlice

__all__ = [
    "compiled_available",
    "compiled_import_error",
    "compilable",
    "resolve_backend",
    "stage_dims",
    "solve_stage_batch",
]

try:
    from . import _core

    _IMPORT_ERROR = None
except ImportError as exc:  # pragma: no cover - depends on the build
    _core = None
    _IMPORT_ERROR = exc


def compiled_available() -> bool:
    return _core is not None


def compiled_import_error():
    return _IMPORT_ERROR


def compilable(spec, next_value):
    """(ok, reason) - whether the compiled core covers this stage family."""
    if spec.lq is None:
        return False, "game has no linear quadratic structure"
    if isinstance(next_value, (TerminalPrimalSlice, TerminalDualSlice)):
        return True, ""
    if isinstance(next_value, ValueSlice):
        if len(next_value.mlp.weights) != 3:
            return False, "compiled core covers exactly two hidden layers"
        return True, ""
    return False, f"unsupported next-value type {type(next_value).__name__}"


def resolve_backend(spec, next_value, requested: str | None = None) -> str:
    """Pick 'compiled' or 'python' for one batch call."""
    req = requested or os.environ.get("CAMS_KERNEL", "auto")
    if req not in ("auto", "compiled", "python"):
        raise ConfigError(f"unknown kernel backend {req!r}")
    if req == "python":
        return "python"
    ok, reason = compilable(spec, next_value)
    if req == "compiled":
        if not compiled_available():
            raise ConfigError(f"compiled kernel unavailable: {_IMPORT_ERROR}")
        if not ok:
            raise ConfigError(f"compiled kernel not applicable: {reason}")
        return "compiled"
    return "compiled" if (compiled_available() and ok) else "python"


def stage_dims(spec, kind: str):
    """(dim_min, dim_max) of the flat stage variables."""
    nt, du, dv = spec.num_types, spec.u_dim, spec.v_dim
    if kind == "primal":
        return nt * du + nt * nt, nt * dv
    if kind == "dual":
        na = nt + 1
        return na * dv + na + nt * nt, na * du
    raise ConfigError(f"stage kind must be primal or dual, got {kind!r}")


def _domain_tables(domain):
    blk = []
    lo = np.zeros(domain.dim)
    hi = np.ones(domain.dim)
    for kind, sl, payload in domain.blocks:
        if kind == "box":
            blk.append((0, sl.start, sl.stop - sl.start))
            lo[sl] = payload[:, 0]
            hi[sl] = payload[:, 1]
        else:
            blk.append((1, sl.start, sl.stop - sl.start))
    return (
        np.ascontiguousarray(np.asarray(blk, dtype=np.int32).ravel()),
        np.ascontiguousarray(lo),
        np.ascontiguousarray(hi),
    )


def _c(a):
    return np.ascontiguousarray(np.asarray(a, dtype=float))


def make_pack(spec, next_value, kind: str, stage_cfg: StageConfig | None = None) -> dict:
    """Flat array view of one stage family for the compiled core."""
    ok, reason = compilable(spec, next_value)
    if not ok:
        raise ConfigError(f"cannot pack stage for the compiled core: {reason}")
    lq = spec.lq
    tau = spec.step
    if kind == "primal":
        dom_min, dom_max = primal_domains(spec)
        na = spec.num_types
    else:
        dom_min, dom_max = dual_domains(spec)
        na = spec.num_types + 1
    blk_min, lo_min, hi_min = _domain_tables(dom_min)
    blk_max, lo_max, hi_max = _domain_tables(dom_max)
    db = spec.dual_box()
    pack = {
        "kind": 0 if kind == "primal" else 1,
        "nt": spec.num_types,
        "dx": spec.state_dim,
        "du": spec.u_dim,
        "dv": spec.v_dim,
        "na": na,
        "dmin": dom_min.dim,
        "dmax": dom_max.dim,
        "tau": float(tau),
        "weight": float((stage_cfg or StageConfig()).penalty_weight),
        "A": _c(lq.A).ravel(),
        "tBu": _c(tau * lq.Bu).ravel(),
        "tBv": _c(tau * lq.Bv).ravel(),
        "R1": _c(lq.R1).ravel(),
        "R2": _c(lq.R2).ravel(),
        "R1s": _c(lq.R1 + lq.R1.T).ravel(),
        "R2s": _c(lq.R2 + lq.R2.T).ravel(),
        "G": _c(lq.G).ravel(),
        "gb": _c(lq.b).ravel(),
        "gc": _c(lq.c).ravel(),
        "db_lo": _c(db[:, 0]),
        "db_hi": _c(db[:, 1]),
        "blk_min": blk_min,
        "lo_min": lo_min,
        "hi_min": hi_min,
        "blk_max": blk_max,
        "lo_max": lo_max,
        "hi_max": hi_max,
    }
    if isinstance(next_value, ValueSlice):
        mlp = next_value.mlp
        pack.update(
            vkind=1,
            din=mlp.sizes[0],
            h1=mlp.sizes[1],
            h2=mlp.sizes[2],
            W1=_c(mlp.weights[0]).ravel(),
            b1=_c(mlp.biases[0]),
            W2=_c(mlp.weights[1]).ravel(),
            b2=_c(mlp.biases[1]),
            W3=_c(mlp.weights[2]).ravel(),
            b3=_c(mlp.biases[2]),
            in_shift=_c(next_value.in_shift),
            in_scale=_c(next_value.in_scale),
            out_shift=float(next_value.out_shift),
            out_scale=float(next_value.out_scale),
        )
    else:
        one = np.zeros(1)
        pack.update(
            vkind=0, din=0, h1=0, h2=0,
            W1=one, b1=one, W2=one, b2=one, W3=one, b3=one,
            in_shift=one, in_scale=np.ones(1), out_shift=0.0, out_scale=1.0,
        )
    return pack


def solve_stage_batch(
    kind: str,
    spec,
    next_value,
    t: float,
    X,
    P,
    starts_min,
    starts_max,
    refine_y,
    cfg: DsgdaConfig,
    stage_cfg: StageConfig | None = None,
    jobs: int = 1,
    backend: str | None = None,
) -> dict:
    """Solve one stage problem per collocation point from pre-drawn starts.

    X (N, d_x) and P (N, I) carry the points (beliefs for the primal stage,
    dual vectors for the dual one).  starts_min (N, S, dim_min) and
    starts_max (N, S, dim_max) hold S feasible starts per point, and
    refine_y (N, R, dim_max) the extra ascent starts for the post-hoc
    refinement; draw them with dsgda.draw_starts so both backends see the
    same candidates.  Returns per-point arrays: x, y, value, iters (total
    over restarts), aborted (count), failed (no surviving candidate),
    chosen (candidate index), plus the backend that actually ran.
    """
    _check_stage_time(t, spec)
    dmin, dmax = stage_dims(spec, kind)
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(P, dtype=float)))
    starts_min = np.ascontiguousarray(np.asarray(starts_min, dtype=float))
    starts_max = np.ascontiguousarray(np.asarray(starts_max, dtype=float))
    refine_y = np.ascontiguousarray(np.asarray(refine_y, dtype=float))
    n = X.shape[0]
    if X.shape != (n, spec.state_dim) or P.shape != (n, spec.num_types):
        raise ConfigError(f"bad point shapes X{X.shape} P{P.shape}")
    if starts_min.ndim != 3 or starts_min.shape[0] != n or starts_min.shape[2] != dmin:
        raise ConfigError(f"starts_min must be (N, S, {dmin}), got {starts_min.shape}")
    s = starts_min.shape[1]
    if starts_max.shape != (n, s, dmax):
        raise ConfigError(f"starts_max must be ({n}, {s}, {dmax}), got {starts_max.shape}")
    if refine_y.ndim != 3 or refine_y.shape[0] != n or refine_y.shape[2] != dmax:
        raise ConfigError(f"refine_y must be (N, R, {dmax}), got {refine_y.shape}")

    chosen_backend = resolve_backend(spec, next_value, backend)
    if chosen_backend == "compiled":
        pack = make_pack(spec, next_value, kind, stage_cfg)
        out = _core.solve_batch(
            pack, X, P, starts_min, starts_max, refine_y,
            cfg.c, cfg.a, cfg.r1, cfg.r2, cfg.beta, cfg.mu,
            int(cfg.max_iters), cfg.eps_stat, int(cfg.refine_iters),
            max(1, int(jobs)),
        )
    else:
        from . import py_backend

        out = py_backend.solve_stage_batch(
            kind, spec, next_value, t, X, P, starts_min, starts_max,
            refine_y, cfg, stage_cfg,
        )
    out["backend"] = chosen_backend
    return out
