"""Pure-python stage batch backend.

Builds each collocation point's minimax problem and runs the generic
DS-GDA routine on the caller's pre-drawn starts.  Functionally identical
to the compiled core, just slow: the sweep runs sequentially, one python
solve per point.  Exists as the no-compiler fallback and as the reference
the compiled backend is parity-tested against.
"""

from __future__ import annotations

import numpy as np

from ..dsgda import dsgda_run
from ..errors import SolverFailureError
from ..game import DualInfoState, InfoState
from ..stages import build_dual_stage, build_primal_stage

__all__ = ["solve_stage_batch"]


def solve_stage_batch(
    kind, spec, next_value, t, X, P, starts_min, starts_max, refine_y, cfg, stage_cfg=None
) -> dict:
    n, n_starts = starts_min.shape[0], starts_min.shape[1]
    dmin, dmax = starts_min.shape[2], starts_max.shape[2]
    xs = np.full((n, dmin), np.nan)
    ys = np.full((n, dmax), np.nan)
    vals = np.full(n, np.nan)
    iters = np.zeros(n, dtype=np.int64)
    aborted = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=np.uint8)
    chosen = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        if kind == "primal":
            s = InfoState(t, X[k], P[k])
            prob = build_primal_stage(s, next_value, spec, stage_cfg)
        else:
            s = DualInfoState(t, X[k], P[k])
            prob = build_dual_stage(s, next_value, spec, stage_cfg)
        starts = [("given", starts_min[k, j], starts_max[k, j]) for j in range(n_starts)]
        refine = [refine_y[k, j] for j in range(refine_y.shape[1])]
        try:
            res = dsgda_run(prob, cfg, starts, refine)
        except SolverFailureError:
            failed[k] = 1
            aborted[k] = n_starts
            continue
        xs[k] = res.x
        ys[k] = res.y
        vals[k] = res.value
        iters[k] = sum(r["iters"] for r in res.diagnostics["restarts"])
        aborted[k] = sum(r["aborted"] for r in res.diagnostics["restarts"])
        chosen[k] = res.diagnostics["chosen"]
    return {
        "x": xs, "y": ys, "value": vals, "iters": iters,
        "aborted": aborted, "failed": failed, "chosen": chosen,
    }
